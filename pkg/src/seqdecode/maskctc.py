"""Non-autoregressive Mask-CTC decoding: greedy CTC output is refined by a
conditional masked LM with the mask-predict schedule, in a fixed number of
iterations regardless of sequence length."""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConfigError, EmissionMatrix, FormatError, ROW_TOL_EXACT, Vocabulary


class MLMScorer(abc.ABC):
    """Conditional masked LM contract: given tokens with mask_id at unknown
    positions, predict a normalised V-vector for each masked position."""

    @abc.abstractmethod
    def predict(self, tokens: Sequence[int]) -> Dict[int, np.ndarray]:
        """Map each masked position (exactly those) to V log-probs."""


class TableMLM(MLMScorer):
    """Pattern table stand-in for a trained masked LM.

    Patterns key on the masked sequence (mask positions as None); unknown
    patterns fall back to uniform predictions.
    """

    def __init__(
        self,
        vocab_size: int,
        mask_id: int,
        patterns: Optional[Dict[Tuple[Optional[int], ...], Dict[int, np.ndarray]]] = None,
    ):
        if vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self.mask_id = mask_id
        self.patterns: Dict[Tuple[Optional[int], ...], Dict[int, np.ndarray]] = {}
        for pattern, dists in (patterns or {}).items():
            checked: Dict[int, np.ndarray] = {}
            for pos, row in dists.items():
                arr = np.asarray(row, dtype=np.float64)
                if arr.shape != (vocab_size,):
                    raise ConfigError(
                        f"pattern {pattern} position {pos}: row shape {arr.shape}"
                    )
                dev = abs(np.logaddexp.reduce(arr))
                if not dev <= ROW_TOL_EXACT:
                    raise ConfigError(
                        f"pattern {pattern} position {pos}: row not normalised ({dev!r})"
                    )
                checked[int(pos)] = arr
            self.patterns[tuple(pattern)] = checked

    def predict(self, tokens: Sequence[int]) -> Dict[int, np.ndarray]:
        key = tuple(None if t == self.mask_id else int(t) for t in tokens)
        masked = [i for i, t in enumerate(key) if t is None]
        table = self.patterns.get(key)
        uniform = np.full(self.vocab_size, -math.log(self.vocab_size))
        out: Dict[int, np.ndarray] = {}
        for pos in masked:
            if table is not None and pos in table:
                out[pos] = table[pos]
            else:
                out[pos] = uniform
        return out

    def to_json(self) -> Dict[str, object]:
        return {
            "vocab_size": self.vocab_size,
            "patterns": {
                ",".join("_" if t is None else str(t) for t in pattern): {
                    str(pos): [float(v) for v in row] for pos, row in dists.items()
                }
                for pattern, dists in self.patterns.items()
            },
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path: str, mask_id: int) -> "TableMLM":
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"masked-LM JSON parse error: {e}") from None
        try:
            patterns = {
                tuple(None if p == "_" else int(p) for p in key.split(",")): {
                    int(pos): np.array(row, dtype=np.float64)
                    for pos, row in dists.items()
                }
                for key, dists in payload["patterns"].items()
            }
            return cls(
                vocab_size=int(payload["vocab_size"]), mask_id=mask_id, patterns=patterns
            )
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            raise FormatError(f"bad masked-LM JSON: {e}") from None


@dataclass(frozen=True)
class MaskCtcConfig:
    threshold: float = 0.5  # confidences below this are masked
    iterations: int = 1  # mask-predict iteration budget K

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must be in [0, 1]")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


def ctc_confidence_collapse(
    emission: EmissionMatrix, blank_id: int
) -> Tuple[Tuple[int, ...], Tuple[float, ...]]:
    """Greedy per-frame argmax collapsed to tokens, each with the max
    linear-domain posterior over its contributing frames."""
    ids = np.argmax(emission.data, axis=1)
    probs = np.exp(np.max(emission.data, axis=1))
    tokens: List[int] = []
    confidences: List[float] = []
    prev = -1
    for t, tok in enumerate(ids):
        tok = int(tok)
        if tok == blank_id:
            prev = tok
            continue
        if tok != prev:
            tokens.append(tok)
            confidences.append(float(probs[t]))
        else:
            confidences[-1] = max(confidences[-1], float(probs[t]))
        prev = tok
    return tuple(tokens), tuple(confidences)


@dataclass(frozen=True)
class MaskCtcResult:
    """Decode output plus the trace needed to audit the NAR contract."""

    tokens: Tuple[int, ...]
    initial_tokens: Tuple[int, ...]  # post-collapse, pre-masking
    mlm_calls: int
    masked_counts: Tuple[int, ...]  # masked positions before each iteration


def mlm_call_count(result: MaskCtcResult) -> int:
    """Number of masked-LM invocations recorded in a decode trace."""
    return result.mlm_calls


def mask_ctc_decode(
    emission: EmissionMatrix,
    mlm: MLMScorer,
    vocab: Vocabulary,
    config: MaskCtcConfig,
) -> MaskCtcResult:
    """Collapse CTC output, mask low-confidence tokens, then fill masks over
    at most K masked-LM calls: each iteration fills the
    ceil(remaining / (K - iteration)) positions with the most confident
    predictions, substituting their argmax tokens."""
    if vocab.mask_id is None:
        raise ConfigError("mask_ctc_decode needs a vocabulary with mask_id")
    mask_id = vocab.mask_id
    initial, confidences = ctc_confidence_collapse(emission, vocab.blank_id)
    # a literal mask token in the collapse is unknown content by definition
    masked = [
        i for i, (tok, conf) in enumerate(zip(initial, confidences))
        if conf < config.threshold or tok == mask_id
    ]
    seq = list(initial)
    for i in masked:
        seq[i] = mask_id

    calls = 0
    masked_counts: List[int] = []
    K = config.iterations
    for it in range(K):
        if not masked:
            break
        masked_counts.append(len(masked))
        preds = mlm.predict(seq)
        calls += 1
        if set(preds) != set(masked):
            raise ConfigError(
                "masked LM must predict exactly the masked positions: "
                f"expected {sorted(masked)}, got {sorted(preds)}"
            )
        n_fill = math.ceil(len(masked) / (K - it))
        fill: Dict[int, np.ndarray] = {}
        for pos in masked:
            row = np.array(preds[pos], dtype=np.float64, copy=True)
            row[mask_id] = -np.inf  # a fill must resolve the position
            fill[pos] = row
        ranked = sorted(
            masked, key=lambda pos: (-float(np.max(fill[pos])), pos)
        )[:n_fill]
        for pos in ranked:
            seq[pos] = int(np.argmax(fill[pos]))
        filled = set(ranked)
        masked = [i for i in masked if i not in filled]
    assert not masked, "mask-predict schedule must clear all masks within K"
    return MaskCtcResult(
        tokens=tuple(seq),
        initial_tokens=initial,
        mlm_calls=calls,
        masked_counts=tuple(masked_counts),
    )
