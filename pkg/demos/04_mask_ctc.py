"""Non-autoregressive refinement: mask low-confidence CTC tokens, fill them
with a masked LM in a fixed number of iterations.

The emission is built so the middle of the collapse is confident and the
flanks are shaky; a pattern-table masked LM that knows the right answer
repairs them in two calls, and the number of calls never depends on the
sequence length.
"""

import numpy as np

from seqdecode import (
    EmissionMatrix,
    MaskCtcConfig,
    TableMLM,
    Vocabulary,
    ctc_confidence_collapse,
    mask_ctc_decode,
)

vocab = Vocabulary(
    tokens=("<blank>", "go", "to", "bed", "<eos>", "<sos>", "<mask>"),
    blank_id=0, sos_id=5, eos_id=4, mask_id=6,
)


def frame(tok, p):
    row = np.full(vocab.size, (1.0 - p) / (vocab.size - 1))
    row[tok] = p
    return row


emission = EmissionMatrix(np.log(np.array([
    frame(1, 0.55),  # "go", shaky
    frame(2, 0.96),  # "to", confident
    frame(3, 0.50),  # "bed", shaky
])))

tokens, confidences = ctc_confidence_collapse(emission, vocab.blank_id)
print("CTC collapse:")
for tok, conf in zip(tokens, confidences):
    print(f"  {vocab.tokens[tok]:5s} confidence {conf:.2f}")


def peak(tok, p=0.9):
    row = np.full(vocab.size, (1.0 - p) / (vocab.size - 1))
    row[tok] = p
    return np.log(row)


M = None  # mask position in a pattern key
mlm = TableMLM(vocab.size, vocab.mask_id, patterns={
    (M, 2, M): {0: peak(1, 0.95), 2: peak(3, 0.80)},
    (1, 2, M): {2: peak(3, 0.90)},
    (M, 2, 3): {0: peak(1, 0.90)},
})

result = mask_ctc_decode(emission, mlm, vocab, MaskCtcConfig(threshold=0.6, iterations=2))
print(f"\nmasked positions per iteration: {list(result.masked_counts)}")
print(f"masked-LM calls: {result.mlm_calls}")
print("refined output:", " ".join(vocab.tokens[t] for t in result.tokens))
assert result.tokens == (1, 2, 3)

# the call budget is a constant: longer inputs do not cost more calls
for length in (4, 8, 16):
    rows = [frame(1 + (i % 2), 0.4) for i in range(length)]
    em = EmissionMatrix(np.log(np.array(rows)))
    res = mask_ctc_decode(
        em, TableMLM(vocab.size, vocab.mask_id), vocab,
        MaskCtcConfig(threshold=0.9, iterations=2),
    )
    print(f"length {length:2d}: {res.mlm_calls} calls")
    assert res.mlm_calls == 2
