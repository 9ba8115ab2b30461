"""Shared generators for randomized tests.

Everything here is seeded; tests derive instance seeds from a base so runs
are reproducible.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from seqdecode import EmissionMatrix, TableScorer, Vocabulary
from seqdecode.transducer import TableTransducer


def make_vocab(n_labels: int, with_mask: bool = False, extra: Sequence[str] = ()) -> Vocabulary:
    """<blank> l0 l1 ... <eos> <sos> [<mask>] [extra]."""
    tokens = ["<blank>"] + [f"l{i}" for i in range(n_labels)] + ["<eos>", "<sos>"]
    mask_id = None
    if with_mask:
        mask_id = len(tokens)
        tokens.append("<mask>")
    tokens.extend(extra)
    return Vocabulary(
        tokens=tuple(tokens),
        blank_id=0,
        sos_id=n_labels + 2,
        eos_id=n_labels + 1,
        mask_id=mask_id,
    )


def random_emission(rng: np.random.Generator, frames: int, vocab_size: int,
                    scale: float = 1.5) -> EmissionMatrix:
    return EmissionMatrix.from_logits(scale * rng.normal(size=(frames, vocab_size)))


def random_table_scorer(rng: np.random.Generator, context_order: int,
                        vocab_size: int, n_contexts: Optional[int] = None) -> TableScorer:
    """Random normalised rows for every context up to the given order (or a
    random subset, leaving the rest to the uniform fallback)."""
    contexts: List[Tuple[int, ...]] = [()]
    for k in range(1, context_order + 1):
        contexts.extend(itertools.product(range(vocab_size), repeat=k))
    if n_contexts is not None and n_contexts < len(contexts):
        keep = rng.choice(len(contexts), size=n_contexts, replace=False)
        contexts = [contexts[i] for i in sorted(keep)] + [()]
    rows = {ctx: np.log(rng.dirichlet(np.ones(vocab_size))) for ctx in set(contexts)}
    return TableScorer(context_order, vocab_size, rows)


def collapse(path: Sequence[int], blank_id: int) -> Tuple[int, ...]:
    out: List[int] = []
    prev = -1
    for p in path:
        if p != prev and p != blank_id:
            out.append(int(p))
        prev = p
    return tuple(out)


def brute_prefix_prob(emission: EmissionMatrix, prefix: Sequence[int], blank_id: int) -> float:
    """Linear-domain probability that the collapsed label sequence starts
    with ``prefix``, by exhaustive path enumeration."""
    prefix = tuple(prefix)
    x = np.exp(emission.data)
    total = 0.0
    for path in itertools.product(range(emission.vocab_size), repeat=emission.frames):
        seq = collapse(path, blank_id)
        if seq[: len(prefix)] == prefix:
            p = 1.0
            for t, tok in enumerate(path):
                p *= x[t, tok]
            total += p
    return total


def brute_ctc_prob(emission: EmissionMatrix, labels: Sequence[int], blank_id: int) -> float:
    labels = tuple(labels)
    x = np.exp(emission.data)
    total = 0.0
    for path in itertools.product(range(emission.vocab_size), repeat=emission.frames):
        if collapse(path, blank_id) != labels:
            continue
        p = 1.0
        for t, tok in enumerate(path):
            p *= x[t, tok]
        total += p
    return total


def dag_transducer(rng: np.random.Generator, n_labels: int, frames: int) -> TableTransducer:
    """Finite-support transducer: with k=1 contexts, label j may only follow
    contexts of strictly smaller rank, so reachable sequences are strictly
    increasing label sequences (a finite set) and beam sums are exactly
    checkable against enumeration."""
    contexts: List[Tuple[int, ...]] = [()] + [(j,) for j in range(n_labels)]
    rows: Dict[Tuple[int, ...], np.ndarray] = {}
    for ctx in contexts:
        rank = ctx[0] if ctx else -1
        mat = np.full((frames, n_labels + 1), -np.inf)
        for t in range(frames):
            allowed = [j for j in range(n_labels) if j > rank]
            weights = rng.dirichlet(np.ones(len(allowed) + 1))
            blank_share = 0.25 + 0.5 * rng.random()
            mat[t, n_labels] = math.log(blank_share)
            rest = 1.0 - blank_share
            for j, w in zip(allowed, weights[:-1]):
                mat[t, j] = math.log(rest * (w + 1e-3) / (1.0 + 1e-3 * len(allowed)))
            # renormalise exactly
            mat[t] -= np.logaddexp.reduce(mat[t])
        rows[ctx] = mat
    return TableTransducer(context_order=1, frames=frames, num_labels=n_labels, rows=rows)


def increasing_sequences(n_labels: int) -> List[Tuple[int, ...]]:
    """All strictly increasing label sequences (the dag_transducer support)."""
    seqs: List[Tuple[int, ...]] = [()]
    for r in range(1, n_labels + 1):
        seqs.extend(itertools.combinations(range(n_labels), r))
    return seqs


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
