"""Transducer decoding: greedy plus four beam procedures (Graves-style beam
without prefix search, time-synchronous, alignment-length-synchronous, and
n-step constrained), all over a joint-network contract.

Sequence probability is the sum over monotonic alignments, so hypotheses
with identical label sequences are merged by log-sum-exp wherever they meet;
that makes merged beam scores directly comparable to brute-force alignment
sums. Optional shallow fusion adds a weighted LM score to label expansions
(blank expansions are never LM-scored).
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    NEG_INF,
    ConfigError,
    FormatError,
    NBestEntry,
    NBestList,
    ROW_TOL_EXACT,
)
from .scorers import FullScorer


class TransducerModel(abc.ABC):
    """Joint-network contract: maps (frame, prediction state) to a
    (V+1)-vector of log-probs over labels plus blank (blank is index V)."""

    @property
    @abc.abstractmethod
    def num_labels(self) -> int:
        ...

    @abc.abstractmethod
    def pred_init(self) -> Any:
        ...

    @abc.abstractmethod
    def pred_step(self, state: Any, label: int) -> Any:
        ...

    @abc.abstractmethod
    def joint(self, t: int, state: Any) -> np.ndarray:
        ...

    def joint_batch(self, t: int, states: Sequence[Any]) -> np.ndarray:
        """(len(states), V+1) joint outputs; default loops over states."""
        return np.stack([self.joint(t, s) for s in states], axis=0)

    @property
    def blank_id(self) -> int:
        return self.num_labels


class TableTransducer(TransducerModel):
    """Reference model: per-frame (V+1)-rows keyed by the last-k emitted
    labels. Exercises prediction-state threading without neural inference."""

    def __init__(self, context_order: int, frames: int, num_labels: int,
                 rows: Dict[Tuple[int, ...], np.ndarray]):
        if context_order < 0:
            raise ConfigError("context_order must be >= 0")
        if frames < 1 or num_labels < 1:
            raise ConfigError("need frames >= 1 and num_labels >= 1")
        self.context_order = context_order
        self.frames = frames
        self._num_labels = num_labels
        self.rows: Dict[Tuple[int, ...], np.ndarray] = {}
        for ctx, mat in rows.items():
            arr = np.asarray(mat, dtype=np.float64)
            if arr.shape != (frames, num_labels + 1):
                raise ConfigError(
                    f"rows for context {ctx} have shape {arr.shape}, expected "
                    f"({frames}, {num_labels + 1})"
                )
            dev = np.abs(np.logaddexp.reduce(arr, axis=1))
            if not (dev <= ROW_TOL_EXACT).all():
                t = int(np.argmax(dev))
                raise ConfigError(
                    f"context {ctx} frame {t} row not normalised (deviation {dev[t]!r})"
                )
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            self.rows[tuple(ctx)] = arr

    @property
    def num_labels(self) -> int:
        return self._num_labels

    def pred_init(self) -> Tuple[int, ...]:
        return ()

    def pred_step(self, state: Tuple[int, ...], label: int) -> Tuple[int, ...]:
        if self.context_order == 0:
            return ()
        return (tuple(state) + (label,))[-self.context_order:]

    def joint(self, t: int, state: Tuple[int, ...]) -> np.ndarray:
        key = tuple(state)
        if key not in self.rows:
            raise ConfigError(f"transducer table has no row for context {key}")
        return self.rows[key][t]

    def to_json(self) -> Dict[str, Any]:
        return {
            "context_order": self.context_order,
            "T": self.frames,
            "vocab_size": self._num_labels,
            "rows": {
                ",".join(str(i) for i in ctx): [[float(v) for v in row] for row in mat]
                for ctx, mat in self.rows.items()
            },
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "TableTransducer":
        try:
            rows = {
                tuple(int(p) for p in key.split(",")) if key else ():
                    np.array(mat, dtype=np.float64)
                for key, mat in payload["rows"].items()
            }
            return cls(
                context_order=int(payload["context_order"]),
                frames=int(payload["T"]),
                num_labels=int(payload["vocab_size"]),
                rows=rows,
            )
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            raise FormatError(f"bad transducer JSON: {e}") from None

    @classmethod
    def load(cls, path: str) -> "TableTransducer":
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"transducer JSON parse error: {e}") from None
        return cls.from_json(payload)


@dataclass
class TransducerHypothesis:
    """Label sequence (blank excluded) with its merged alignment-sum score."""

    yseq: Tuple[int, ...]
    score: float
    pred_state: Any
    lm_state: Any = None
    lm_score: float = 0.0  # raw (unweighted) accumulated LM part


ALGORITHMS = ("greedy", "beam", "tsd", "alsd", "nsc")


@dataclass(frozen=True)
class TransducerBeamConfig:
    beam_size: int = 4
    algorithm: str = "beam"
    max_exp_per_step: int = 2  # tsd: label-expansion rounds before blank
    u_max_ratio: float = 1.0  # alsd: U_max = ceil(ratio * T)
    n_steps: int = 2  # nsc: label emissions per frame
    lm: Optional[FullScorer] = None
    lm_weight: float = 0.0
    u_max: Optional[int] = None  # explicit ALSD cap, overrides the ratio
    max_pops_per_frame: int = 100_000  # beam-search safety valve

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.max_exp_per_step < 1:
            raise ConfigError("max_exp_per_step must be >= 1")
        if self.u_max_ratio <= 0:
            raise ConfigError("u_max_ratio must be > 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if self.u_max is not None and self.u_max < 0:
            raise ConfigError("u_max must be >= 0")
        if self.lm_weight < 0:
            raise ConfigError("lm_weight must be >= 0")


def fuse_lm_scores(joint_logp: np.ndarray, lm_scores: np.ndarray, weight: float) -> np.ndarray:
    """Shallow fusion: label entries gain weight * lm score, blank unchanged."""
    n = len(joint_logp) - 1
    if len(lm_scores) != n:
        raise ConfigError(
            f"LM scores {len(lm_scores)} labels but the model has {n}"
        )
    out = np.array(joint_logp, dtype=np.float64, copy=True)
    out[:n] = out[:n] + weight * lm_scores
    return out


class _LMFusion:
    """Threads a FullScorer over the label vocabulary through a search."""

    def __init__(self, model: TransducerModel, lm: FullScorer, weight: float):
        self.lm = lm
        self.weight = weight
        self.num_labels = model.num_labels

    def init_state(self):
        return self.lm.init_state(None)

    def label_scores(self, hyp: TransducerHypothesis) -> Tuple[np.ndarray, Any]:
        prefix = (self.num_labels,) + hyp.yseq  # sos stand-in outside label range
        vec, scored = self.lm.score(prefix, hyp.lm_state, None)
        if len(vec) != self.num_labels:
            raise ConfigError(
                f"fusion LM scores {len(vec)} tokens but the model has "
                f"{self.num_labels} labels"
            )
        return vec, scored

    def advance(self, scored, label: int):
        return self.lm.select_state(scored, label)


def _hyp_sort_key(item: Tuple[Tuple[int, ...], TransducerHypothesis]):
    yseq, hyp = item
    return (-hyp.score, yseq)


def _prune(pool: Dict[Tuple[int, ...], TransducerHypothesis], beam: int
           ) -> Dict[Tuple[int, ...], TransducerHypothesis]:
    ranked = sorted(pool.items(), key=_hyp_sort_key)[:beam]
    return dict(ranked)


def _merge(pool: Dict[Tuple[int, ...], TransducerHypothesis],
           hyp: TransducerHypothesis) -> None:
    """Insert hyp, log-sum-exp-merging with an existing identical yseq."""
    old = pool.get(hyp.yseq)
    if old is None:
        pool[hyp.yseq] = hyp
    else:
        pool[hyp.yseq] = replace(old, score=float(np.logaddexp(old.score, hyp.score)))


def transducer_greedy(model: TransducerModel, frames: int) -> TransducerHypothesis:
    """Decoding constrained to one expansion step per frame: emit the argmax
    if it is a label, then move to the next frame.

    Moving to frame t+1 is the blank transition, so after an emission the
    post-label blank is charged as well; the score is then the probability of
    one complete alignment and can never exceed a merged beam score for the
    same model."""
    state = model.pred_init()
    yseq: Tuple[int, ...] = ()
    score = 0.0
    for t in range(frames):
        logp = model.joint(t, state)
        k = int(np.argmax(logp))
        score += float(logp[k])
        if k != model.blank_id:
            yseq = yseq + (k,)
            state = model.pred_step(state, k)
            score += float(model.joint(t, state)[model.blank_id])
    return TransducerHypothesis(yseq=yseq, score=score, pred_state=state)


def _init_pool(model: TransducerModel, fusion: Optional[_LMFusion]
               ) -> Dict[Tuple[int, ...], TransducerHypothesis]:
    hyp = TransducerHypothesis(
        yseq=(), score=0.0, pred_state=model.pred_init(),
        lm_state=fusion.init_state() if fusion else None,
    )
    return {(): hyp}


def _label_child(
    model: TransducerModel,
    fusion: Optional[_LMFusion],
    hyp: TransducerHypothesis,
    label: int,
    joint_row: np.ndarray,
    lm_vec: Optional[np.ndarray],
    lm_scored: Any,
) -> Optional[TransducerHypothesis]:
    score = hyp.score + float(joint_row[label])
    lm_raw = hyp.lm_score
    lm_state = hyp.lm_state
    if fusion is not None:
        lm_term = float(lm_vec[label])
        score = score + fusion.weight * lm_term
        lm_raw = lm_raw + lm_term
        lm_state = fusion.advance(lm_scored, label)
    if score == NEG_INF:
        return None
    return TransducerHypothesis(
        yseq=hyp.yseq + (label,),
        score=score,
        pred_state=model.pred_step(hyp.pred_state, label),
        lm_state=lm_state,
        lm_score=lm_raw,
    )


def transducer_beam(model: TransducerModel, frames: int,
                    config: TransducerBeamConfig) -> NBestList:
    """Breadth-first beam over output labels (Graves 2012, arXiv:1211.3711,
    without prefix search): blank completes a hypothesis for the frame,
    labels expand it within the frame, identical sequences merge by
    log-sum-exp. Returns the top-B hypotheses completed at t = T."""
    beam = config.beam_size
    fusion = _LMFusion(model, config.lm, config.lm_weight) if config.lm else None
    pool = _init_pool(model, fusion)
    blank = model.blank_id

    for t in range(frames):
        active = dict(pool)
        completed: Dict[Tuple[int, ...], TransducerHypothesis] = {}
        pops = 0
        while active and pops < config.max_pops_per_frame:
            done = sum(
                1 for h in completed.values()
                if h.score > max(a.score for a in active.values())
            )
            if done >= beam:
                break
            yseq, hyp = min(active.items(), key=_hyp_sort_key)
            del active[yseq]
            pops += 1

            joint_row = model.joint(t, hyp.pred_state)
            _merge(completed, replace(hyp, score=hyp.score + float(joint_row[blank])))
            lm_vec, lm_scored = fusion.label_scores(hyp) if fusion else (None, None)
            for label in range(model.num_labels):
                child = _label_child(model, fusion, hyp, label, joint_row, lm_vec, lm_scored)
                if child is not None:
                    _merge(active, child)
        pool = _prune(completed, beam)
        if not pool:
            break
    return _nbest_from_pool(pool, fusion)


def transducer_tsd(model: TransducerModel, frames: int,
                   config: TransducerBeamConfig) -> NBestList:
    """Time-synchronous decoding (Saon et al. 2020): within each frame up to
    max_exp_per_step label-expansion rounds, a blank completion is available
    after every round, duplicates merge by log-sum-exp, top-B kept per
    frame."""
    beam = config.beam_size
    fusion = _LMFusion(model, config.lm, config.lm_weight) if config.lm else None
    pool = _init_pool(model, fusion)
    blank = model.blank_id

    for t in range(frames):
        completed: Dict[Tuple[int, ...], TransducerHypothesis] = {}
        current = pool
        for round_idx in range(config.max_exp_per_step + 1):
            items = sorted(current.items(), key=_hyp_sort_key)
            rows = model.joint_batch(t, [h.pred_state for _, h in items])
            expansions: Dict[Tuple[int, ...], TransducerHypothesis] = {}
            for (yseq, hyp), joint_row in zip(items, rows):
                _merge(completed, replace(hyp, score=hyp.score + float(joint_row[blank])))
                if round_idx < config.max_exp_per_step:
                    lm_vec, lm_scored = fusion.label_scores(hyp) if fusion else (None, None)
                    for label in range(model.num_labels):
                        child = _label_child(
                            model, fusion, hyp, label, joint_row, lm_vec, lm_scored
                        )
                        if child is not None:
                            _merge(expansions, child)
            if round_idx == config.max_exp_per_step or not expansions:
                break
            current = _prune(expansions, beam)
        pool = _prune(completed, beam)
        if not pool:
            break
    return _nbest_from_pool(pool, fusion)


def transducer_alsd(model: TransducerModel, frames: int,
                    config: TransducerBeamConfig) -> NBestList:
    """Alignment-length-synchronous decoding (Saon et al. 2020): hypotheses
    advance in i = t + u; blanks advance time, labels grow the sequence up to
    U_max = ceil(u_max_ratio * T) (or the explicit u_max override).
    Hypotheses are final once every frame is consumed."""
    beam = config.beam_size
    fusion = _LMFusion(model, config.lm, config.lm_weight) if config.lm else None
    blank = model.blank_id
    if config.u_max is not None:
        u_max = config.u_max
    else:
        u_max = math.ceil(config.u_max_ratio * frames)

    current = _init_pool(model, fusion)  # all entries satisfy t + u == i
    final: Dict[Tuple[int, ...], TransducerHypothesis] = {}
    for i in range(frames + u_max):
        nxt: Dict[Tuple[int, ...], TransducerHypothesis] = {}
        items = sorted(current.items(), key=_hyp_sort_key)
        for yseq, hyp in items:
            u = len(yseq)
            t = i - u
            if t >= frames:
                continue
            joint_row = model.joint(t, hyp.pred_state)
            blank_hyp = replace(hyp, score=hyp.score + float(joint_row[blank]))
            if t == frames - 1:
                _merge(final, blank_hyp)
            else:
                _merge(nxt, blank_hyp)
            if u < u_max:
                lm_vec, lm_scored = fusion.label_scores(hyp) if fusion else (None, None)
                for label in range(model.num_labels):
                    child = _label_child(
                        model, fusion, hyp, label, joint_row, lm_vec, lm_scored
                    )
                    if child is not None:
                        _merge(nxt, child)
        current = _prune(nxt, beam)
        if not current:
            break
    return _nbest_from_pool(_prune(final, beam), fusion)


def transducer_nsc(model: TransducerModel, frames: int,
                   config: TransducerBeamConfig) -> NBestList:
    """N-step constrained beam search (after Kim et al. 2020, modified): per
    frame at most n_steps label emissions; prediction-network scoring is
    batched across the beam; the final round force-completes expansions with
    the frame-advancing blank so merged scores stay alignment sums."""
    beam = config.beam_size
    fusion = _LMFusion(model, config.lm, config.lm_weight) if config.lm else None
    pool = _init_pool(model, fusion)
    blank = model.blank_id

    for t in range(frames):
        completed: Dict[Tuple[int, ...], TransducerHypothesis] = {}
        current = pool
        for step in range(1, config.n_steps + 1):
            items = sorted(current.items(), key=_hyp_sort_key)
            rows = model.joint_batch(t, [h.pred_state for _, h in items])
            expansions: Dict[Tuple[int, ...], TransducerHypothesis] = {}
            for (yseq, hyp), joint_row in zip(items, rows):
                _merge(completed, replace(hyp, score=hyp.score + float(joint_row[blank])))
                lm_vec, lm_scored = fusion.label_scores(hyp) if fusion else (None, None)
                for label in range(model.num_labels):
                    child = _label_child(
                        model, fusion, hyp, label, joint_row, lm_vec, lm_scored
                    )
                    if child is not None:
                        _merge(expansions, child)
            if not expansions:
                break
            expansions = _prune(expansions, beam)
            if step == config.n_steps:
                # out of expansion budget: force-complete with the blank
                items = sorted(expansions.items(), key=_hyp_sort_key)
                rows = model.joint_batch(t, [h.pred_state for _, h in items])
                for (yseq, hyp), joint_row in zip(items, rows):
                    _merge(completed, replace(hyp, score=hyp.score + float(joint_row[blank])))
            else:
                current = expansions
        pool = _prune(completed, beam)
        if not pool:
            break
    return _nbest_from_pool(pool, fusion)


def _nbest_from_pool(pool: Dict[Tuple[int, ...], TransducerHypothesis],
                     fusion: Optional[_LMFusion]) -> NBestList:
    entries = []
    for yseq, hyp in pool.items():
        scores = {"transducer": hyp.score}
        if fusion is not None:
            scores = {
                "transducer": hyp.score - fusion.weight * hyp.lm_score,
                "lm": hyp.lm_score,
            }
        entries.append(NBestEntry(yseq=yseq, score=hyp.score, scores=scores))
    return NBestList.from_entries(entries)


def transducer_decode(model: TransducerModel, frames: int,
                      config: TransducerBeamConfig) -> NBestList:
    """Dispatch on config.algorithm; greedy is wrapped as a 1-best list."""
    if config.algorithm == "greedy":
        hyp = transducer_greedy(model, frames)
        return NBestList.from_entries(
            [NBestEntry(yseq=hyp.yseq, score=hyp.score, scores={"transducer": hyp.score})]
        )
    if config.algorithm == "beam":
        return transducer_beam(model, frames, config)
    if config.algorithm == "tsd":
        return transducer_tsd(model, frames, config)
    if config.algorithm == "alsd":
        return transducer_alsd(model, frames, config)
    if config.algorithm == "nsc":
        return transducer_nsc(model, frames, config)
    raise ConfigError(f"unknown transducer algorithm {config.algorithm!r}")
