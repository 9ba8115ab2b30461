"""Scorer contracts for label-synchronous search, plus two reference
implementations: a table-driven context scorer (attention-decoder stand-in)
and the CTC prefix scorer.

A full scorer rates every vocabulary extension of a prefix per step; a
partial scorer rates only a pre-selected candidate subset, which is how the
comparatively expensive CTC prefix computation joins the search. Scorer
states are per-hypothesis values threaded by the search: ``score`` returns a
"scored state" from which ``select_state`` extracts the successor state for
the token actually chosen.
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import NEG_INF, ConfigError, EmissionMatrix, FormatError, ROW_TOL_EXACT


class FullScorer(abc.ABC):
    """Scores all V extensions of a prefix in one call."""

    @abc.abstractmethod
    def init_state(self, emission: Optional[EmissionMatrix]) -> Any:
        """State for the bare (sos,) prefix."""

    @abc.abstractmethod
    def score(
        self, prefix: Tuple[int, ...], state: Any, emission: Optional[EmissionMatrix]
    ) -> Tuple[np.ndarray, Any]:
        """Return (V-vector of log-prob scores, scored state).

        Entries may be -inf but never nan. The scored state is resolved to a
        per-token successor state via ``select_state``.
        """

    def select_state(self, scored_state: Any, token: int) -> Any:
        return scored_state

    def final_score(
        self, prefix: Tuple[int, ...], state: Any, emission: Optional[EmissionMatrix]
    ) -> float:
        """Additive adjustment applied once when a hypothesis finishes."""
        return 0.0

    def batch_score(
        self,
        prefixes: Sequence[Tuple[int, ...]],
        states: Sequence[Any],
        emission: Optional[EmissionMatrix],
    ) -> Tuple[np.ndarray, List[Any]]:
        """Score a batch of hypotheses at once; returns (B x V, scored states).

        The default falls back to per-hypothesis calls; vectorising
        implementations must stay bit-identical to the sequential path.
        """
        rows = []
        scored = []
        for prefix, state in zip(prefixes, states):
            vec, st = self.score(prefix, state, emission)
            rows.append(vec)
            scored.append(st)
        return np.stack(rows, axis=0), scored


class PartialScorer(abc.ABC):
    """Scores only the requested candidate ids of a prefix."""

    @abc.abstractmethod
    def init_state(self, emission: Optional[EmissionMatrix]) -> Any:
        ...

    @abc.abstractmethod
    def score_partial(
        self,
        prefix: Tuple[int, ...],
        candidates: np.ndarray,
        state: Any,
        emission: Optional[EmissionMatrix],
    ) -> Tuple[np.ndarray, Any]:
        """Return (scores for exactly the requested ids, in request order,
        scored state)."""

    def select_state(self, scored_state: Any, token: int) -> Any:
        return scored_state

    def final_score(
        self, prefix: Tuple[int, ...], state: Any, emission: Optional[EmissionMatrix]
    ) -> float:
        return 0.0

    def batch_score_partial(
        self,
        prefixes: Sequence[Tuple[int, ...]],
        candidates: np.ndarray,
        states: Sequence[Any],
        emission: Optional[EmissionMatrix],
    ) -> Tuple[np.ndarray, List[Any]]:
        """Batched scoring over a (B x P) candidate matrix."""
        rows = []
        scored = []
        for i, (prefix, state) in enumerate(zip(prefixes, states)):
            vec, st = self.score_partial(prefix, candidates[i], state, emission)
            rows.append(vec)
            scored.append(st)
        return np.stack(rows, axis=0), scored


def _context_key(ids: Sequence[int]) -> str:
    return ",".join(str(i) for i in ids)


def _parse_context_key(key: str) -> Tuple[int, ...]:
    if key == "":
        return ()
    return tuple(int(p) for p in key.split(","))


class TableScorer(FullScorer):
    """Order-k Markov scorer over token ids, backed by an explicit table.

    Each row is a normalised V-vector of log-probs keyed by the last-k
    emitted token ids (shorter contexts occur near the start of a prefix).
    Unknown contexts fall back to a configurable row, uniform by default, so
    toy models stay total without full context coverage.
    """

    def __init__(
        self,
        context_order: int,
        vocab_size: int,
        rows: Dict[Tuple[int, ...], np.ndarray],
        fallback: Optional[np.ndarray] = None,
    ):
        if context_order < 0:
            raise ConfigError("context_order must be >= 0")
        if vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        self.context_order = context_order
        self.vocab_size = vocab_size
        self.rows: Dict[Tuple[int, ...], np.ndarray] = {}
        for ctx, row in rows.items():
            self.rows[tuple(ctx)] = self._freeze_row(np.asarray(row, dtype=np.float64))
        if fallback is None:
            fallback = np.full(vocab_size, -math.log(vocab_size))
        self.fallback = self._freeze_row(np.asarray(fallback, dtype=np.float64))

    def _freeze_row(self, row: np.ndarray) -> np.ndarray:
        if row.shape != (self.vocab_size,):
            raise ConfigError(
                f"table row has shape {row.shape}, expected ({self.vocab_size},)"
            )
        dev = abs(np.logaddexp.reduce(row))
        if not dev <= ROW_TOL_EXACT:
            raise ConfigError(f"table row not normalised: logsumexp deviation {dev!r}")
        row = np.ascontiguousarray(row)
        row.setflags(write=False)
        return row

    def _context(self, emitted: Tuple[int, ...]) -> Tuple[int, ...]:
        if self.context_order == 0:
            return ()
        return emitted[-self.context_order:]

    def init_state(self, emission: Optional[EmissionMatrix]) -> Tuple[int, ...]:
        return ()

    def score(self, prefix, state, emission):
        row = self.rows.get(tuple(state), self.fallback)
        return row, state

    def select_state(self, scored_state, token):
        return self._context(tuple(scored_state) + (token,))

    def batch_score(self, prefixes, states, emission):
        rows = [self.rows.get(tuple(s), self.fallback) for s in states]
        return np.stack(rows, axis=0), list(states)

    def to_json(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "context_order": self.context_order,
            "vocab_size": self.vocab_size,
            "rows": {_context_key(ctx): [float(v) for v in row] for ctx, row in self.rows.items()},
            "fallback": [float(v) for v in self.fallback],
        }
        return payload

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "TableScorer":
        try:
            rows = {
                _parse_context_key(k): np.array(v, dtype=np.float64)
                for k, v in payload["rows"].items()
            }
            fallback = payload.get("fallback")
            return cls(
                context_order=int(payload["context_order"]),
                vocab_size=int(payload["vocab_size"]),
                rows=rows,
                fallback=None if fallback is None else np.array(fallback, dtype=np.float64),
            )
        except (KeyError, ValueError, TypeError, AttributeError) as e:
            raise FormatError(f"bad table scorer JSON: {e}") from None

    @classmethod
    def load(cls, path: str) -> "TableScorer":
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"table scorer JSON parse error: {e}") from None
        return cls.from_json(payload)


@dataclass(eq=False)
class CTCPrefixState:
    """Per-hypothesis CTC forward variables.

    r_nb[t] / r_b[t] are the log-probabilities that the prefix is realised by
    frame t with the last emission being non-blank / blank respectively.
    prefix_score is the accumulated log prefix probability (0.0 for the empty
    prefix, whose prefix set is everything).
    """

    r_nb: np.ndarray
    r_b: np.ndarray
    prefix_score: float
    prefix_len: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, CTCPrefixState):
            return NotImplemented
        return (
            self.prefix_len == other.prefix_len
            and (self.prefix_score == other.prefix_score
                 or (math.isnan(self.prefix_score) and math.isnan(other.prefix_score)))
            and np.array_equal(self.r_nb, other.r_nb)
            and np.array_equal(self.r_b, other.r_b)
        )


@dataclass
class _CTCScoredState:
    """Candidate-indexed forward variables produced by one scoring call."""

    r: np.ndarray  # (T, 2, C): [:, 0] non-blank, [:, 1] blank
    psi: np.ndarray  # (C,) log prefix probability of prefix + candidate
    candidates: np.ndarray  # (C,)
    prefix_len: int


class CTCPrefixScorer(PartialScorer):
    """Joint-scoring CTC prefix scorer.

    Implements the two-variable (blank / non-blank) forward recursion over
    frames; extending with a repeat of the last label connects only through
    the blank variable. The score of candidate c is
    ``log p(prefix+c...) - log p(prefix...)``; for eos it is the full-sequence
    CTC probability of the prefix minus the accumulated prefix score, which
    makes finished totals comparable to plain CTC forward probabilities.
    """

    def __init__(self, blank_id: int, eos_id: int):
        if blank_id == eos_id:
            raise ConfigError("blank_id and eos_id must differ")
        self.blank_id = blank_id
        self.eos_id = eos_id

    def init_state(self, emission: EmissionMatrix) -> CTCPrefixState:
        x = emission.data
        r_b = np.cumsum(x[:, self.blank_id])
        r_nb = np.full(emission.frames, NEG_INF)
        return CTCPrefixState(r_nb=r_nb, r_b=r_b, prefix_score=0.0, prefix_len=0)

    def _validate_candidates(self, candidates: np.ndarray) -> np.ndarray:
        cands = np.asarray(candidates, dtype=np.int64)
        if (cands == self.blank_id).any():
            raise ValueError("blank is not a label and cannot be a CTC candidate")
        return cands

    def score_partial(self, prefix, candidates, state, emission):
        cands = self._validate_candidates(candidates)
        x = emission.data
        T = emission.frames
        C = len(cands)

        n = state.prefix_len
        xs = x[:, cands]  # (T, C)
        r = np.full((T, 2, C), NEG_INF)
        if n == 0:
            r[0, 0] = xs[0]
        r_sum = np.logaddexp(state.r_nb, state.r_b)  # (T,)

        if n > 0:
            last = prefix[-1]
            log_phi = np.where(cands[None, :] == last, state.r_b[:, None], r_sum[:, None])
        else:
            log_phi = np.broadcast_to(r_sum[:, None], (T, C)).copy()

        x_blank = x[:, self.blank_id]
        psi = r[0, 0].copy()
        for t in range(1, T):
            r[t, 0] = np.logaddexp(r[t - 1, 0], log_phi[t - 1]) + xs[t]
            r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + x_blank[t]
            psi = np.logaddexp(psi, log_phi[t - 1] + xs[t])

        eos_mask = cands == self.eos_id
        if eos_mask.any():
            psi = psi.copy()
            psi[eos_mask] = r_sum[T - 1]

        if state.prefix_score == NEG_INF:
            scores = np.full(C, NEG_INF)
        else:
            scores = psi - state.prefix_score
        scored = _CTCScoredState(r=r, psi=psi, candidates=cands, prefix_len=n + 1)
        return scores, scored

    def select_state(self, scored_state: _CTCScoredState, token: int) -> CTCPrefixState:
        idx = int(np.nonzero(scored_state.candidates == token)[0][0])
        return CTCPrefixState(
            r_nb=scored_state.r[:, 0, idx].copy(),
            r_b=scored_state.r[:, 1, idx].copy(),
            prefix_score=float(scored_state.psi[idx]),
            prefix_len=scored_state.prefix_len,
        )

    def batch_score_partial(self, prefixes, candidates, states, emission):
        cands = np.asarray(candidates, dtype=np.int64)
        if cands.ndim != 2:
            raise ValueError("batched candidates must be a (B, P) matrix")
        if (cands == self.blank_id).any():
            raise ValueError("blank is not a label and cannot be a CTC candidate")
        x = emission.data
        T = emission.frames
        B, C = cands.shape

        prefix_lens = np.array([s.prefix_len for s in states])
        r_nb_prev = np.stack([s.r_nb for s in states], axis=1)  # (T, B)
        r_b_prev = np.stack([s.r_b for s in states], axis=1)  # (T, B)
        prefix_scores = np.array([s.prefix_score for s in states])

        xs = x[:, cands]  # (T, B, C)
        r = np.full((T, 2, B, C), NEG_INF)
        empty = prefix_lens == 0
        if empty.any():
            r[0, 0, empty] = xs[0, empty]
        r_sum = np.logaddexp(r_nb_prev, r_b_prev)  # (T, B)

        last = np.array(
            [p[-1] if s.prefix_len > 0 else -1 for p, s in zip(prefixes, states)]
        )
        repeat = cands == last[:, None]  # (B, C)
        log_phi = np.where(repeat[None, :, :], r_b_prev[:, :, None], r_sum[:, :, None])

        x_blank = x[:, self.blank_id]
        psi = r[0, 0].copy()  # (B, C)
        for t in range(1, T):
            r[t, 0] = np.logaddexp(r[t - 1, 0], log_phi[t - 1]) + xs[t]
            r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + x_blank[t]
            psi = np.logaddexp(psi, log_phi[t - 1] + xs[t])

        eos_mask = cands == self.eos_id
        if eos_mask.any():
            psi[eos_mask] = np.broadcast_to(r_sum[T - 1][:, None], (B, C))[eos_mask]

        with np.errstate(invalid="ignore"):
            scores = np.where(
                prefix_scores[:, None] == NEG_INF, NEG_INF, psi - prefix_scores[:, None]
            )
        scored = [
            _CTCScoredState(r=r[:, :, i, :], psi=psi[i], candidates=cands[i],
                            prefix_len=int(prefix_lens[i]) + 1)
            for i in range(B)
        ]
        return scores, scored


class WrappedPartialScorer(PartialScorer):
    """Adapter presenting a full scorer through the partial-scoring contract.

    score_partial gathers the requested indices from the full V-vector, so it
    is bit-identical to the wrapped scorer on those indices.
    """

    def __init__(self, full: FullScorer):
        self.full = full

    def init_state(self, emission):
        return self.full.init_state(emission)

    def score_partial(self, prefix, candidates, state, emission):
        vec, scored = self.full.score(prefix, state, emission)
        cands = np.asarray(candidates, dtype=np.int64)
        return vec[cands], scored

    def select_state(self, scored_state, token):
        return self.full.select_state(scored_state, token)

    def final_score(self, prefix, state, emission):
        return self.full.final_score(prefix, state, emission)

    def batch_score_partial(self, prefixes, candidates, states, emission):
        mat, scored = self.full.batch_score(prefixes, states, emission)
        cands = np.asarray(candidates, dtype=np.int64)
        gathered = np.take_along_axis(mat, cands, axis=1)
        return gathered, scored


def wrap_full_as_partial(scorer: FullScorer) -> WrappedPartialScorer:
    return WrappedPartialScorer(scorer)
