"""Label-synchronous beam search combining weighted full and partial scorers.

Two variants share every selection rule: ``beam_search`` scores hypotheses
one at a time, ``batch_beam_search`` runs each scorer once per step over the
whole beam as vector-matrix work. Their outputs are identical by contract
(same token sequences, scores within 1e-9, same deterministic tie-break:
score descending, then lexicographically smaller token sequence).

Per step: full scorers rate all V extensions of every live hypothesis; the
top-P candidates per hypothesis by weighted full-scorer total form the
pre-beam; partial scorers rate only those; the global top-B successors
survive. Hypotheses emitting eos move to the finished pool with per-scorer
final adjustments added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigError,
    EmissionMatrix,
    Hypothesis,
    NBestEntry,
    NBestList,
    Vocabulary,
    hypothesis_sort_key,
)
from .scorers import FullScorer, PartialScorer


@dataclass(frozen=True)
class BeamConfig:
    """Search-wide knobs.

    pre_beam_size defaults to min(V, ceil(1.5 * beam_size)) at search time.
    max_steps, when set, overrides the max_len_ratio-derived step cap (tests
    and oracle comparisons need exact caps). length_penalty is an optional
    additive per-token bonus, off by default so joint totals stay comparable
    to brute-force sequence scores.
    """

    weights: Dict[str, float]
    beam_size: int = 8
    pre_beam_size: Optional[int] = None
    max_len_ratio: float = 1.0
    min_len_ratio: float = 0.0
    end_detect_window: int = 3
    end_detect_margin: float = -10.0
    max_steps: Optional[int] = None
    length_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.pre_beam_size is not None and self.pre_beam_size < self.beam_size:
            raise ConfigError("pre_beam_size must be >= beam_size")
        if not 0.0 < self.max_len_ratio <= 1.0:
            raise ConfigError("max_len_ratio must be in (0, 1]")
        if not 0.0 <= self.min_len_ratio < 1.0:
            raise ConfigError("min_len_ratio must be in [0, 1)")
        if self.end_detect_window < 1:
            raise ConfigError("end_detect_window must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        for name, w in self.weights.items():
            if w < 0:
                raise ConfigError(f"weight for scorer {name!r} must be >= 0")

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "BeamConfig":
        end = payload.get("end_detect", {})
        known = {
            "beam_size", "pre_beam_size", "weights", "max_len_ratio",
            "min_len_ratio", "end_detect", "max_steps", "length_penalty",
        }
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown beam config keys: {sorted(unknown)}")
        return cls(
            weights={str(k): float(v) for k, v in payload.get("weights", {}).items()},
            beam_size=int(payload.get("beam_size", 8)),
            pre_beam_size=(
                None if payload.get("pre_beam_size") is None else int(payload["pre_beam_size"])
            ),
            max_len_ratio=float(payload.get("max_len_ratio", 1.0)),
            min_len_ratio=float(payload.get("min_len_ratio", 0.0)),
            end_detect_window=int(end.get("window", 3)),
            end_detect_margin=float(end.get("margin", -10.0)),
            max_steps=None if payload.get("max_steps") is None else int(payload["max_steps"]),
            length_penalty=float(payload.get("length_penalty", 0.0)),
        )


@dataclass
class BeamState:
    """Search bookkeeping: step index, equal-length live hypotheses (at most
    B), and the finished pool."""

    step: int
    live: List[Hypothesis]
    finished: List[Hypothesis] = field(default_factory=list)


def end_detect(
    finished: Sequence[Hypothesis],
    step_best_scores: Sequence[float],
    window: int = 3,
    margin: float = -10.0,
) -> bool:
    """Stop when, for each of the last ``window`` steps, the best score
    produced at that step stayed below best-finished + margin."""
    if not finished or len(step_best_scores) < window:
        return False
    best = max(h.score for h in finished)
    threshold = best + margin
    return all(s < threshold for s in step_best_scores[-window:])


def top_candidate_ids(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Top-k ids by score descending, ties broken by smaller id."""
    order = np.lexsort((ids, -scores))
    return ids[order[:k]]


class _SearchContext:
    """Validated scorer/weight wiring shared by both search variants."""

    def __init__(
        self,
        vocab: Vocabulary,
        full_scorers: Dict[str, FullScorer],
        partial_scorers: Dict[str, PartialScorer],
        config: BeamConfig,
        vocab_size: int,
    ):
        names = set(full_scorers) | set(partial_scorers)
        if len(names) != len(full_scorers) + len(partial_scorers):
            raise ConfigError("scorer names must be unique across full and partial scorers")
        missing = names - set(config.weights)
        if missing:
            raise ConfigError(f"weights missing for scorers: {sorted(missing)}")
        unknown = set(config.weights) - names
        if unknown:
            raise ConfigError(f"weight given for unknown scorer: {sorted(unknown)}")
        # zero-weight scorers contribute nothing; drop them so 0 * -inf can
        # never poison a total and neutrality is exact
        self.full = {
            k: v for k, v in sorted(full_scorers.items()) if config.weights[k] > 0.0
        }
        self.partial = {
            k: v for k, v in sorted(partial_scorers.items()) if config.weights[k] > 0.0
        }
        if not self.full:
            raise ConfigError("at least one full scorer must have weight > 0")
        self.weights = config.weights
        self.vocab = vocab
        self.config = config
        self.vocab_size = vocab_size

        banned = {vocab.sos_id, vocab.blank_id}
        if vocab.mask_id is not None:
            banned.add(vocab.mask_id)
        allowed = [i for i in range(vocab_size) if i not in banned]
        self.allowed_with_eos = np.array(allowed, dtype=np.int64)
        self.allowed_without_eos = np.array(
            [i for i in allowed if i != vocab.eos_id], dtype=np.int64
        )
        base = config.pre_beam_size
        if base is None:
            base = min(vocab_size, math.ceil(1.5 * config.beam_size))
        self.pre_beam_size = max(1, min(base, vocab_size))

    def allowed(self, eos_ok: bool) -> np.ndarray:
        return self.allowed_with_eos if eos_ok else self.allowed_without_eos

    def all_names(self) -> List[str]:
        return sorted(set(self.full) | set(self.partial))

    def check_width(self, name: str, vec: np.ndarray) -> None:
        if vec.shape[-1] != self.vocab_size:
            raise ConfigError(
                f"scorer {name!r} returned {vec.shape[-1]} scores for vocabulary "
                f"size {self.vocab_size}"
            )


def _initial_hypothesis(ctx: _SearchContext, emission: EmissionMatrix) -> Hypothesis:
    names = ctx.all_names()
    states = {}
    for name in names:
        scorer = ctx.full.get(name) or ctx.partial[name]
        states[name] = scorer.init_state(emission)
    return Hypothesis(
        yseq=(ctx.vocab.sos_id,),
        score=0.0,
        scores={name: 0.0 for name in names},
        states=states,
    )


def _successor(
    ctx: _SearchContext,
    hyp: Hypothesis,
    token: int,
    total: float,
    full_vecs: Dict[str, np.ndarray],
    full_scored: Dict[str, Any],
    part_vals: Dict[str, float],
    part_scored: Dict[str, Any],
) -> Hypothesis:
    scores = dict(hyp.scores)
    states = dict(hyp.states)
    for name, vec in full_vecs.items():
        scores[name] = scores[name] + float(vec[token])
        states[name] = ctx.full[name].select_state(full_scored[name], token)
    for name, val in part_vals.items():
        scores[name] = scores[name] + val
        states[name] = ctx.partial[name].select_state(part_scored[name], token)
    return Hypothesis(yseq=hyp.yseq + (token,), score=total, scores=scores, states=states)


def _finalize(ctx: _SearchContext, hyp: Hypothesis, emission: EmissionMatrix) -> Hypothesis:
    score = hyp.score
    scores = dict(hyp.scores)
    for name in ctx.all_names():
        scorer = ctx.full.get(name) or ctx.partial[name]
        adj = float(scorer.final_score(hyp.yseq, hyp.states[name], emission))
        if adj != 0.0:
            scores[name] = scores[name] + adj
            score = score + ctx.weights[name] * adj
    return Hypothesis(
        yseq=hyp.yseq, score=score, scores=scores, states=hyp.states, finished=True
    )


def _prune_and_split(
    ctx: _SearchContext,
    successors: List[Hypothesis],
    state: BeamState,
    emission: EmissionMatrix,
    step_best: List[float],
) -> None:
    successors.sort(key=hypothesis_sort_key)
    top = successors[: ctx.config.beam_size]
    step_best.append(top[0].score)
    live: List[Hypothesis] = []
    for hyp in top:
        if hyp.yseq[-1] == ctx.vocab.eos_id:
            state.finished.append(_finalize(ctx, hyp, emission))
        else:
            live.append(hyp)
    state.live = live


def _collect_nbest(ctx: _SearchContext, state: BeamState) -> NBestList:
    vocab = ctx.vocab
    pool = state.finished
    if not pool:
        # nothing ever emitted eos: fall back to the best live hypothesis
        pool = sorted(state.live, key=hypothesis_sort_key)[:1]
    entries = []
    for hyp in pool:
        yseq = hyp.yseq[1:]
        if yseq and yseq[-1] == vocab.eos_id:
            yseq = yseq[:-1]
        entries.append(NBestEntry(yseq=yseq, score=hyp.score, scores=dict(hyp.scores)))
    return NBestList.from_entries(entries)


def _resolve_lengths(config: BeamConfig, frames: int) -> Tuple[int, int]:
    if config.max_steps is not None:
        max_steps = config.max_steps
    else:
        max_steps = max(1, int(config.max_len_ratio * frames))
    min_len = int(config.min_len_ratio * frames)
    return max_steps, min_len


def beam_search(
    emission: EmissionMatrix,
    vocab: Vocabulary,
    full_scorers: Dict[str, FullScorer],
    config: BeamConfig,
    partial_scorers: Optional[Dict[str, PartialScorer]] = None,
) -> NBestList:
    """Sequential label-synchronous beam search; returns the finished pool as
    an n-best list (best live hypothesis if nothing finished)."""
    ctx = _SearchContext(
        vocab, full_scorers, partial_scorers or {}, config, emission.vocab_size
    )
    max_steps, min_len = _resolve_lengths(config, emission.frames)
    state = BeamState(step=0, live=[_initial_hypothesis(ctx, emission)])
    step_best: List[float] = []

    for step in range(max_steps):
        state.step = step
        allowed = ctx.allowed(eos_ok=step >= min_len)
        n_cand = min(ctx.pre_beam_size, len(allowed))
        successors: List[Hypothesis] = []
        for hyp in state.live:
            weighted = np.zeros(ctx.vocab_size)
            full_vecs: Dict[str, np.ndarray] = {}
            full_scored: Dict[str, Any] = {}
            for name, scorer in ctx.full.items():
                vec, scored = scorer.score(hyp.yseq, hyp.states[name], emission)
                ctx.check_width(name, vec)
                weighted += ctx.weights[name] * vec
                full_vecs[name] = vec
                full_scored[name] = scored

            cands = top_candidate_ids(weighted[allowed], allowed, n_cand)
            cand_scores = weighted[cands]
            part_vecs: Dict[str, np.ndarray] = {}
            part_scored: Dict[str, Any] = {}
            for name, scorer in ctx.partial.items():
                pvec, scored = scorer.score_partial(hyp.yseq, cands, hyp.states[name], emission)
                cand_scores = cand_scores + ctx.weights[name] * pvec
                part_vecs[name] = pvec
                part_scored[name] = scored
            if ctx.config.length_penalty:
                cand_scores = cand_scores + ctx.config.length_penalty
            cand_scores = cand_scores + hyp.score

            for j, token in enumerate(cands):
                successors.append(
                    _successor(
                        ctx, hyp, int(token), float(cand_scores[j]),
                        full_vecs, full_scored,
                        {name: float(vec[j]) for name, vec in part_vecs.items()},
                        part_scored,
                    )
                )
        if not successors:
            break
        _prune_and_split(ctx, successors, state, emission, step_best)
        if end_detect(
            state.finished, step_best, config.end_detect_window, config.end_detect_margin
        ):
            break
        if not state.live:
            break
    return _collect_nbest(ctx, state)


def batch_beam_search(
    emission: EmissionMatrix,
    vocab: Vocabulary,
    full_scorers: Dict[str, FullScorer],
    config: BeamConfig,
    partial_scorers: Optional[Dict[str, PartialScorer]] = None,
) -> NBestList:
    """Vectorized beam search: per step each scorer runs once over the whole
    beam and scores accumulate as (B x V) matrix operations. Output is
    identical to ``beam_search`` (same sequences, scores within 1e-9)."""
    ctx = _SearchContext(
        vocab, full_scorers, partial_scorers or {}, config, emission.vocab_size
    )
    max_steps, min_len = _resolve_lengths(config, emission.frames)
    state = BeamState(step=0, live=[_initial_hypothesis(ctx, emission)])
    step_best: List[float] = []

    for step in range(max_steps):
        state.step = step
        allowed = ctx.allowed(eos_ok=step >= min_len)
        n_cand = min(ctx.pre_beam_size, len(allowed))
        live = state.live
        B = len(live)
        prefixes = [h.yseq for h in live]

        weighted = np.zeros((B, ctx.vocab_size))
        full_mats: Dict[str, np.ndarray] = {}
        full_scored: Dict[str, List[Any]] = {}
        for name, scorer in ctx.full.items():
            mat, scored = scorer.batch_score(prefixes, [h.states[name] for h in live], emission)
            ctx.check_width(name, mat)
            weighted += ctx.weights[name] * mat
            full_mats[name] = mat
            full_scored[name] = scored

        sub = weighted[:, allowed]
        cand_mat = np.stack(
            [top_candidate_ids(sub[i], allowed, n_cand) for i in range(B)], axis=0
        )
        cand_scores = np.take_along_axis(weighted, cand_mat, axis=1)
        part_mats: Dict[str, np.ndarray] = {}
        part_scored: Dict[str, List[Any]] = {}
        for name, scorer in ctx.partial.items():
            pmat, scored = scorer.batch_score_partial(
                prefixes, cand_mat, [h.states[name] for h in live], emission
            )
            cand_scores = cand_scores + ctx.weights[name] * pmat
            part_mats[name] = pmat
            part_scored[name] = scored
        if ctx.config.length_penalty:
            cand_scores = cand_scores + ctx.config.length_penalty
        cand_scores = cand_scores + np.array([h.score for h in live])[:, None]

        successors: List[Hypothesis] = []
        for i, hyp in enumerate(live):
            for j in range(n_cand):
                token = int(cand_mat[i, j])
                successors.append(
                    _successor(
                        ctx, hyp, token, float(cand_scores[i, j]),
                        {name: full_mats[name][i] for name in full_mats},
                        {name: full_scored[name][i] for name in full_scored},
                        {name: float(part_mats[name][i, j]) for name in part_mats},
                        {name: part_scored[name][i] for name in part_scored},
                    )
                )
        if not successors:
            break
        _prune_and_split(ctx, successors, state, emission, step_best)
        if end_detect(
            state.finished, step_best, config.end_detect_window, config.end_detect_margin
        ):
            break
        if not state.live:
            break
    return _collect_nbest(ctx, state)
