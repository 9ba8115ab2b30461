"""Joint beam search over a toy emission lattice.

Builds a five-token vocabulary, a random emission matrix, a table-driven
"attention" scorer and the CTC prefix scorer, then decodes with both the
sequential and the vectorized-batch search and checks the result against the
brute-force oracle.
"""

import numpy as np

from seqdecode import (
    BeamConfig,
    CTCPrefixScorer,
    EmissionMatrix,
    TableScorer,
    Vocabulary,
    batch_beam_search,
    beam_search,
    oracle_best_sequence,
)

rng = np.random.default_rng(7)

vocab = Vocabulary(
    tokens=("<blank>", "cat", "dog", "<eos>", "<sos>"),
    blank_id=0, sos_id=4, eos_id=3,
)
emission = EmissionMatrix.from_logits(rng.normal(size=(5, vocab.size)))

# an order-1 table stands in for an attention decoder
contexts = [()] + [(i,) for i in range(vocab.size)]
att = TableScorer(1, vocab.size, {
    ctx: np.log(rng.dirichlet(np.ones(vocab.size))) for ctx in contexts
})
ctc = CTCPrefixScorer(blank_id=vocab.blank_id, eos_id=vocab.eos_id)
weights = {"att": 0.7, "ctc": 0.3}

config = BeamConfig(weights=weights, beam_size=4, max_steps=4)
nbest = beam_search(emission, vocab, {"att": att}, config, {"ctc": ctc})

print("n-best (sequential search):")
for entry in nbest.entries[:5]:
    words = " ".join(vocab.tokens[t] for t in entry.yseq) or "<empty>"
    parts = ", ".join(f"{k}={v:.3f}" for k, v in sorted(entry.scores.items()))
    print(f"  {entry.score:8.4f}  {words:18s} ({parts})")

batched = batch_beam_search(emission, vocab, {"att": att}, config, {"ctc": ctc})
assert [e.yseq for e in nbest.entries] == [e.yseq for e in batched.entries]
print("\nbatched search returns the identical list.")

# exhaustive width reproduces the brute-force optimum
wide = BeamConfig(weights=weights, beam_size=81, pre_beam_size=81, max_steps=4)
exhaustive = beam_search(emission, vocab, {"att": att}, wide, {"ctc": ctc})
oracle_yseq, oracle_score = oracle_best_sequence(
    vocab, emission, {"att": att}, weights, max_len=3, partial_scorers={"ctc": ctc}
)
print(f"\nexhaustive-width top-1: {exhaustive.best().yseq} @ {exhaustive.best().score:.6f}")
print(f"brute-force optimum:    {oracle_yseq} @ {oracle_score:.6f}")
assert exhaustive.best().yseq == oracle_yseq
