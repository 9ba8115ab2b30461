"""CTC forced alignment and blank-posterior voice activity detection.

Alignment: Viterbi over the blank-interleaved label graph gives the single
best path and half-open frame spans per token; its probability never exceeds
the CTC forward probability (the sum over all paths). VAD: frames whose
non-blank mass clears a threshold form speech segments, short gaps merge,
margins widen, and the segments tile the full range.
"""

import numpy as np

from seqdecode import EmissionMatrix, ctc_forced_align, ctc_forward, ctc_vad

vocab_names = ("<blank>", "da", "dit")

rows = np.array([
    [0.90, 0.05, 0.05],  # silence
    [0.10, 0.85, 0.05],  # "da"
    [0.15, 0.80, 0.05],  # "da" held
    [0.85, 0.10, 0.05],  # gap
    [0.05, 0.05, 0.90],  # "dit"
    [0.90, 0.05, 0.05],  # silence
])
emission = EmissionMatrix(np.log(rows / rows.sum(axis=1, keepdims=True)))

labels = [1, 2]  # "da dit"
alignment = ctc_forced_align(emission, labels, blank_id=0)
print("best path:", [vocab_names[s] for s in alignment.path])
print("token spans (half-open frames):")
for span in alignment.spans:
    print(f"  {vocab_names[span.token]:4s} [{span.start}, {span.end})")

forward = ctc_forward(emission, labels, blank_id=0)
print(f"\nViterbi log-prob {alignment.score:.4f} <= forward log-prob {forward:.4f}")
assert alignment.score <= forward

segments = ctc_vad(emission, blank_id=0, on_threshold=0.5,
                   min_gap_frames=2, margin_frames=0)
print("\nVAD segments (gap of one frame merged away):")
for seg in segments:
    print(f"  {seg.kind:9s} [{seg.start}, {seg.end})")
assert segments[0].start == 0 and segments[-1].end == emission.frames
