import math

import numpy as np
import pytest

from seqdecode import (
    ConfigError,
    EmissionMatrix,
    MaskCtcConfig,
    TableMLM,
    ctc_confidence_collapse,
    ctc_greedy,
    mask_ctc_decode,
    mlm_call_count,
)

from conftest import make_vocab, random_emission


def peaked_emission(frame_specs, vocab_size):
    """Each spec is (token_id, prob); remaining mass spread uniformly."""
    rows = []
    for tok, p in frame_specs:
        row = np.full(vocab_size, (1.0 - p) / (vocab_size - 1))
        row[tok] = p
        rows.append(row)
    return EmissionMatrix(np.log(np.array(rows)))


class TestConfidenceCollapse:
    def test_blank_split_keeps_repeats(self):
        vocab_size = 3
        em = peaked_emission([(1, 0.9), (0, 0.9), (1, 0.9)], vocab_size)
        tokens, conf = ctc_confidence_collapse(em, 0)
        assert tokens == (1, 1)
        assert conf == pytest.approx((0.9, 0.9))

    def test_all_blank_empty(self):
        em = peaked_emission([(0, 0.9), (0, 0.8)], 3)
        tokens, conf = ctc_confidence_collapse(em, 0)
        assert tokens == ()
        assert conf == ()

    def test_confidence_is_max_over_run(self):
        em = peaked_emission([(1, 0.6), (1, 0.95), (1, 0.7)], 3)
        tokens, conf = ctc_confidence_collapse(em, 0)
        assert tokens == (1,)
        assert conf == pytest.approx((0.95,))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_ctc_greedy(self, seed):
        rng = np.random.default_rng(26000 + seed)
        em = random_emission(rng, 5, 4)
        tokens, conf = ctc_confidence_collapse(em, 0)
        assert tokens == ctc_greedy(em, 0)
        assert len(conf) == len(tokens)
        # naive reimplementation: group the argmax path by runs
        path = [int(i) for i in np.argmax(em.data, axis=1)]
        probs = np.exp(np.max(em.data, axis=1))
        expected = []
        prev = -1
        for t, tok in enumerate(path):
            if tok != 0 and tok != prev:
                expected.append(probs[t])
            elif tok != 0:
                expected[-1] = max(expected[-1], probs[t])
            prev = tok
        assert conf == pytest.approx(tuple(expected))


class TestMaskCtcDecode:
    def test_threshold_zero_keeps_collapse_without_calls(self, rng):
        vocab = make_vocab(3, with_mask=True)
        # realistic acoustic output never peaks at mask or sos
        logits = rng.normal(size=(6, vocab.size))
        logits[:, vocab.mask_id] = -30.0
        logits[:, vocab.sos_id] = -30.0
        em = EmissionMatrix.from_logits(logits)
        mlm = TableMLM(vocab.size, vocab.mask_id)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.0, iterations=3))
        assert result.tokens == ctc_greedy(em, vocab.blank_id)
        assert mlm_call_count(result) == 0
        assert result.masked_counts == ()

    def test_all_masked_single_iteration_fills_argmax(self):
        vocab = make_vocab(2, with_mask=True)
        # weak collapse: every token barely over uniform
        em = peaked_emission([(1, 0.4), (2, 0.4)], vocab.size)
        rows = {
            (None, None): {
                0: self._peak_row(vocab.size, 2),
                1: self._peak_row(vocab.size, 1),
            }
        }
        mlm = TableMLM(vocab.size, vocab.mask_id, rows)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.99, iterations=1))
        assert result.tokens == (2, 1)
        assert result.mlm_calls == 1

    @staticmethod
    def _peak_row(vocab_size, tok, p=0.9):
        row = np.full(vocab_size, (1.0 - p) / (vocab_size - 1))
        row[tok] = p
        return np.log(row)

    def test_ground_truth_table_recovers_sequence(self):
        """An oracle masked LM that knows the truth repairs the low-confidence
        positions over two iterations."""
        vocab = make_vocab(3, with_mask=True)
        truth = (1, 2, 3)
        # middle token confident, flanks uncertain (collapse still = truth)
        em = peaked_emission([(1, 0.55), (2, 0.95), (3, 0.52)], vocab.size)
        mask = None
        patterns = {
            (mask, 2, mask): {
                0: self._peak_row(vocab.size, 1, 0.95),
                2: self._peak_row(vocab.size, 3, 0.8),
            },
            (1, 2, mask): {2: self._peak_row(vocab.size, 3, 0.9)},
            (mask, 2, 3): {0: self._peak_row(vocab.size, 1, 0.9)},
        }
        mlm = TableMLM(vocab.size, vocab.mask_id, patterns)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.6, iterations=2))
        assert result.tokens == truth
        assert result.mlm_calls == 2
        assert result.masked_counts == (2, 1)

    def test_high_confidence_is_idempotent(self, rng):
        vocab = make_vocab(3, with_mask=True)
        em = peaked_emission([(1, 0.9), (2, 0.92), (4, 0.95)], vocab.size)
        mlm = TableMLM(vocab.size, vocab.mask_id)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.8, iterations=4))
        tokens, _ = ctc_confidence_collapse(em, vocab.blank_id)
        assert result.tokens == tokens
        assert result.mlm_calls == 0

    def test_progress_strictly_decreases(self):
        vocab = make_vocab(2, with_mask=True)
        # six alternating uncertain tokens
        specs = [(1 + (i % 2), 0.4) for i in range(6)]
        em = peaked_emission(specs, vocab.size)
        mlm = TableMLM(vocab.size, vocab.mask_id)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.9, iterations=3))
        counts = result.masked_counts
        assert counts[0] == 6
        assert all(a > b for a, b in zip(counts, counts[1:]))
        assert result.mlm_calls <= 3
        assert vocab.mask_id not in result.tokens

    @pytest.mark.parametrize("length", [2, 4, 8, 16])
    def test_call_count_independent_of_length(self, length):
        # fully masked input with K <= masked count: the ceil schedule spends
        # exactly K calls whatever the sequence length
        vocab = make_vocab(2, with_mask=True)
        specs = [(1 + (i % 2), 0.4) for i in range(length)]
        em = peaked_emission(specs, vocab.size)
        mlm = TableMLM(vocab.size, vocab.mask_id)
        result = mask_ctc_decode(em, mlm, vocab, MaskCtcConfig(threshold=0.9, iterations=2))
        assert result.mlm_calls == 2

    def test_requires_mask_id(self, rng):
        vocab = make_vocab(2)
        em = random_emission(rng, 3, vocab.size)
        mlm = TableMLM(vocab.size, mask_id=99)
        with pytest.raises(ConfigError):
            mask_ctc_decode(em, mlm, vocab, MaskCtcConfig())


class TestTableMLM:
    def test_predicts_exactly_masked_positions(self):
        mlm = TableMLM(4, mask_id=3)
        preds = mlm.predict((0, 3, 1, 3))
        assert sorted(preds) == [1, 3]
        for row in preds.values():
            assert abs(float(np.logaddexp.reduce(row))) < 1e-9

    def test_unknown_pattern_uniform_fallback(self):
        mlm = TableMLM(4, mask_id=3)
        preds = mlm.predict((3,))
        assert preds[0] == pytest.approx(np.full(4, -math.log(4)))

    def test_json_round_trip(self, tmp_path):
        row = np.log(np.array([0.7, 0.1, 0.1, 0.1]))
        mlm = TableMLM(4, mask_id=3, patterns={(None, 2): {0: row}})
        path = tmp_path / "mlm.json"
        mlm.save(str(path))
        again = TableMLM.load(str(path), mask_id=3)
        assert np.array_equal(again.patterns[(None, 2)][0], row)
