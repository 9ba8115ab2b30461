"""End-to-end CLI tour: write model and emission files, then drive every
subcommand the way a shell user would (the `seqdecode` entry point calls the
same `main`)."""

import json
import pathlib
import tempfile

import numpy as np

from seqdecode import EmissionMatrix, TableScorer, Vocabulary, save_emission
from seqdecode.cli import main

workdir = pathlib.Path(tempfile.mkdtemp(prefix="seqdecode-demo-"))
print(f"working in {workdir}\n")

rng = np.random.default_rng(23)
vocab = Vocabulary(
    tokens=("<blank>", "ba", "na", "<eos>", "<sos>"),
    blank_id=0, sos_id=4, eos_id=3,
)

emission_path = workdir / "utt0.json"
save_emission(EmissionMatrix.from_logits(rng.normal(size=(6, vocab.size))),
              str(emission_path), "json")

table_path = workdir / "table.json"
contexts = [()] + [(i,) for i in range(vocab.size)]
TableScorer(1, vocab.size, {
    ctx: np.log(rng.dirichlet(np.ones(vocab.size))) for ctx in contexts
}).save(str(table_path))

decode_cfg = workdir / "decode.json"
decode_cfg.write_text(json.dumps({
    "vocab": vocab.to_dict(),
    "emission": str(emission_path),
    "scorers": {
        "att": {"type": "table", "path": str(table_path)},
        "ctc": {"type": "ctc_prefix"},
    },
    "beam": {"beam_size": 4, "weights": {"att": 0.7, "ctc": 0.3}, "max_steps": 4},
}, indent=2))

out = workdir / "nbest.json"
print("$ seqdecode decode --config decode.json --output nbest.json")
assert main(["decode", "--config", str(decode_cfg), "--output", str(out)]) == 0
best = json.loads(out.read_text())["nbest"][0]
print(f"  top-1: {best['tokens']} @ {best['score']:.4f}\n")

print("$ seqdecode decode ... --sequential   (same hypotheses, slower path)")
out_seq = workdir / "nbest-seq.json"
assert main(["decode", "--config", str(decode_cfg), "--output", str(out_seq),
             "--sequential"]) == 0
assert json.loads(out_seq.read_text())["nbest"] == json.loads(out.read_text())["nbest"]
print("  identical n-best confirmed\n")

vad_cfg = workdir / "vad.json"
vad_cfg.write_text(json.dumps({
    "blank_id": 0, "emission": str(emission_path),
    "vad": {"on_threshold": 0.5, "min_gap_frames": 1},
}))
print("$ seqdecode vad --config vad.json")
assert main(["vad", "--config", str(vad_cfg), "--output", str(workdir / "vad-out.json")]) == 0
print(" ", json.loads((workdir / "vad-out.json").read_text())["segments"], "\n")

bench_cfg = workdir / "bench.json"
bench_cfg.write_text(json.dumps({"bench": {"V": 100, "T": 30, "B": 4, "repeats": 3}}))
print("$ seqdecode bench --config bench.json --seed 1")
assert main(["bench", "--config", str(bench_cfg),
             "--output", str(workdir / "bench-out.json"), "--seed", "1"]) == 0
report = json.loads((workdir / "bench-out.json").read_text())
print(f"  equal={report['equal']} speedup=x{report['speedup']:.2f}")
