"""The five transducer decoding procedures on one small model.

The model is a table over (frame, last-label context); sequence probability
is the sum over monotonic alignments, which the searches track by merging
identical label sequences with log-sum-exp. On this finite-support model the
merged scores match brute-force alignment enumeration exactly and all four
beam variants agree on the top-1.
"""

import math

import numpy as np

from seqdecode import (
    TableScorer,
    TransducerBeamConfig,
    oracle_transducer_prob,
    transducer_alsd,
    transducer_beam,
    transducer_greedy,
    transducer_nsc,
    transducer_tsd,
)
from seqdecode.transducer import TableTransducer

FRAMES = 3


def normalised(rows):
    with np.errstate(divide="ignore"):  # exact zeros become -inf
        mat = np.log(np.array(rows, dtype=np.float64))
    return mat - np.logaddexp.reduce(mat, axis=1, keepdims=True)


# labels: 0="hi", 1="yo"; blank is the last column. "yo" can only follow "hi",
# nothing can repeat, so the reachable sequences are (), (hi), (yo), (hi, yo).
model = TableTransducer(
    context_order=1, frames=FRAMES, num_labels=2,
    rows={
        (): normalised([[0.5, 0.15, 0.35]] * FRAMES),
        (0,): normalised([[0.0, 0.4, 0.6]] * FRAMES),
        (1,): normalised([[0.0, 0.0, 1.0]] * FRAMES),
    },
)
names = {0: "hi", 1: "yo"}

greedy = transducer_greedy(model, FRAMES)
print("greedy :", [names[t] for t in greedy.yseq], f"score {greedy.score:.4f}")

config = TransducerBeamConfig(beam_size=16)
nbest = transducer_beam(model, FRAMES, config)
print("\nbeam (merged alignment sums) vs brute-force enumeration:")
for entry in nbest.entries:
    brute = oracle_transducer_prob(model, FRAMES, entry.yseq)
    text = " ".join(names[t] for t in entry.yseq) or "<empty>"
    print(f"  {text:8s} beam {entry.score:9.4f}   enumerated {brute:9.4f}")
    assert abs(math.exp(entry.score) - math.exp(brute)) < 1e-9

variants = {
    "beam": nbest,
    "tsd": transducer_tsd(model, FRAMES, TransducerBeamConfig(
        beam_size=16, algorithm="tsd", max_exp_per_step=3)),
    "alsd": transducer_alsd(model, FRAMES, TransducerBeamConfig(
        beam_size=16, algorithm="alsd", u_max=3)),
    "nsc": transducer_nsc(model, FRAMES, TransducerBeamConfig(
        beam_size=16, algorithm="nsc", n_steps=3)),
}
print("\ntop-1 per algorithm:")
for name, result in variants.items():
    text = " ".join(names[t] for t in result.best().yseq) or "<empty>"
    print(f"  {name:5s} {text:8s} @ {result.best().score:.6f}")
assert len({result.best().yseq for result in variants.values()}) == 1
assert nbest.best().score >= greedy.score

# shallow fusion: a label LM leaning hard toward "yo" flips the winner
lm = TableScorer(0, 2, {(): np.log(np.array([0.02, 0.98]))})
fused = transducer_beam(model, FRAMES, TransducerBeamConfig(
    beam_size=16, lm=lm, lm_weight=3.0))
text = " ".join(names[t] for t in fused.best().yseq) or "<empty>"
print(f"\nwith a 'yo'-heavy LM fused in: top-1 becomes {text!r}")
