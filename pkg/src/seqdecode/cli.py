"""Command-line surface: decode / transducer / maskctc / align / vad / bench.

One JSON config file describes a run; flags override config values. Outputs
are machine-readable JSON, written deterministically (sorted keys), so a run
repeated with the same inputs, config, and seed is byte-identical. Exit
codes: 0 success, 1 verification failure, 2 configuration error, 3 input
format error, 4 infeasible request.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import maskctc as maskctc_mod
from .beam_search import BeamConfig, batch_beam_search, beam_search
from .core import (
    ConfigError,
    DecodeError,
    EmissionMatrix,
    FormatError,
    InfeasibleError,
    NBestList,
    Vocabulary,
    load_emission,
)
from .ctc import ctc_forced_align, ctc_vad
from .lm import (
    LookAheadLMScorer,
    MultiLevelLMScorer,
    WordTrie,
    load_arpa,
    load_lexicon,
)
from .oracle import oracle_best_sequence, oracle_transducer_prob
from .scorers import CTCPrefixScorer, TableScorer
from .transducer import TableTransducer, TransducerBeamConfig, transducer_decode

TASKS = ("decode", "transducer", "maskctc", "align", "vad", "bench")


@dataclass
class RunConfig:
    """Materialised run description: task, input paths, config blocks."""

    task: str
    raw: Dict[str, Any]
    emissions: List[str]
    output: Optional[str]
    seed: int
    sequential: bool
    jobs: int
    oracle: bool


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    return payload


def _build_run_config(task: str, args: argparse.Namespace) -> RunConfig:
    raw = _load_config_file(args.config)
    emissions: List[str] = []
    if args.emission:
        emissions = list(args.emission)
    elif "emissions" in raw:
        emissions = [str(p) for p in raw["emissions"]]
    elif "emission" in raw:
        emissions = [str(raw["emission"])]
    output = args.output if args.output is not None else raw.get("output")
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    return RunConfig(
        task=task,
        raw=raw,
        emissions=emissions,
        output=output,
        seed=seed,
        sequential=bool(args.sequential),
        jobs=max(1, args.jobs),
        oracle=bool(getattr(args, "oracle", False)),
    )


def _vocab_from_config(raw: Dict[str, Any]) -> Vocabulary:
    if "vocab" not in raw:
        raise ConfigError("config needs a 'vocab' block")
    return Vocabulary.from_dict(raw["vocab"])


def _emit_json(payload: Dict[str, Any], output: Optional[str]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8") as f:
            f.write(text)


def _nbest_payload(nbest: NBestList, tokens: Sequence[str]) -> Dict[str, Any]:
    return {
        "nbest": [
            {
                "tokens": [tokens[t] for t in entry.yseq],
                "token_ids": list(entry.yseq),
                "score": entry.score,
                "scores": {k: v for k, v in sorted(entry.scores.items())},
            }
            for entry in nbest.entries
        ]
    }


def _build_scorers(raw: Dict[str, Any], vocab: Vocabulary):
    full: Dict[str, Any] = {}
    partial: Dict[str, Any] = {}
    spec = raw.get("scorers")
    if not spec:
        raise ConfigError("config needs a non-empty 'scorers' block")
    for name, entry in spec.items():
        kind = entry.get("type")
        try:
            if kind == "table":
                full[name] = TableScorer.load(entry["path"])
            elif kind == "ctc_prefix":
                partial[name] = CTCPrefixScorer(blank_id=vocab.blank_id, eos_id=vocab.eos_id)
            elif kind == "multilevel":
                word_lm = load_arpa(entry["arpa"])
                char_lm = TableScorer.load(entry["char_table"])
                full[name] = MultiLevelLMScorer(
                    char_lm, word_lm, vocab, delimiter_id=entry.get("delimiter_id")
                )
            elif kind == "lookahead":
                word_lm = load_arpa(entry["arpa"])
                lexicon = load_lexicon(entry["lexicon"])
                full[name] = LookAheadLMScorer(
                    WordTrie(lexicon, word_lm), word_lm, vocab,
                    delimiter_id=entry.get("delimiter_id"),
                )
            else:
                raise ConfigError(f"scorer {name!r} has unknown type {kind!r}")
        except KeyError as e:
            raise ConfigError(f"scorer {name!r} is missing key {e}") from None
    return full, partial


def _decode_one(
    path: str,
    vocab: Vocabulary,
    full: Dict[str, Any],
    partial: Dict[str, Any],
    config: BeamConfig,
    sequential: bool,
    with_oracle: bool,
) -> Dict[str, Any]:
    emission = load_emission(path)
    search = beam_search if sequential else batch_beam_search
    nbest = search(emission, vocab, full, config, partial)
    payload = _nbest_payload(nbest, vocab.tokens)
    if with_oracle:
        max_len = config.max_steps if config.max_steps is not None else max(
            1, int(config.max_len_ratio * emission.frames)
        )
        try:
            oracle_yseq, oracle_score = oracle_best_sequence(
                vocab, emission, full, config.weights,
                max_len=max_len - 1, partial_scorers=partial,
            )
        except ValueError as e:
            raise ConfigError(f"--oracle: {e}") from None
        best = nbest.best()
        payload["oracle"] = {
            "token_ids": list(oracle_yseq),
            "score": oracle_score,
            "match": tuple(oracle_yseq) == tuple(best.yseq)
            and _scores_close(oracle_score, best.score),
        }
    return payload


def _scores_close(a: float, b: float, tol: float = 1e-6) -> bool:
    return a == b or abs(a - b) <= tol


def run_decode(cfg: RunConfig) -> int:
    vocab = _vocab_from_config(cfg.raw)
    if not cfg.emissions:
        raise ConfigError("decode needs at least one emission path")
    full, partial = _build_scorers(cfg.raw, vocab)
    beam_cfg = BeamConfig.from_json(cfg.raw.get("beam", {}))

    def work(path: str) -> Dict[str, Any]:
        return _decode_one(path, vocab, full, partial, beam_cfg, cfg.sequential, cfg.oracle)

    if len(cfg.emissions) == 1:
        payload = work(cfg.emissions[0])
    else:
        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(work, cfg.emissions))
        else:
            results = [work(p) for p in cfg.emissions]
        payload = {"utterances": results}  # input order regardless of completion order
    _emit_json(payload, cfg.output)
    if cfg.oracle:
        mismatched = []
        utts = payload.get("utterances", [payload])
        for utt in utts:
            if "oracle" in utt and not utt["oracle"]["match"]:
                mismatched.append(utt)
        if mismatched:
            print(f"oracle mismatch on {len(mismatched)} utterance(s)", file=sys.stderr)
            return 1
    return 0


def run_transducer(cfg: RunConfig) -> int:
    raw = cfg.raw
    if "model" not in raw:
        raise ConfigError("transducer config needs a 'model' path")
    model = TableTransducer.load(raw["model"])
    tokens = raw.get("tokens")
    if tokens is None:
        tokens = [str(i) for i in range(model.num_labels)]
    if len(tokens) != model.num_labels:
        raise ConfigError(
            f"config lists {len(tokens)} tokens but the model has {model.num_labels} labels"
        )
    block = dict(raw.get("transducer", {}))
    lm = None
    if "lm_table" in block:
        lm = TableScorer.load(block.pop("lm_table"))
    t_cfg = TransducerBeamConfig(
        beam_size=int(block.get("beam_size", 4)),
        algorithm=str(block.get("algorithm", "beam")),
        max_exp_per_step=int(block.get("max_exp_per_step", 2)),
        u_max_ratio=float(block.get("u_max_ratio", 1.0)),
        n_steps=int(block.get("n_steps", 2)),
        lm=lm,
        lm_weight=float(block.get("lm_weight", 0.0)),
        u_max=None if block.get("u_max") is None else int(block["u_max"]),
    )
    nbest = transducer_decode(model, model.frames, t_cfg)
    payload = _nbest_payload(nbest, tokens)
    if cfg.oracle:
        best = nbest.best()
        try:
            oracle_score = oracle_transducer_prob(model, model.frames, best.yseq)
        except ValueError as e:
            raise ConfigError(f"--oracle: {e}") from None
        payload["oracle"] = {
            "score": oracle_score,
            "match": _scores_close(oracle_score, best.score),
        }
    _emit_json(payload, cfg.output)
    if cfg.oracle and not payload["oracle"]["match"]:
        print("oracle mismatch on transducer top-1 score", file=sys.stderr)
        return 1
    return 0


def run_maskctc(cfg: RunConfig) -> int:
    vocab = _vocab_from_config(cfg.raw)
    if vocab.mask_id is None:
        raise ConfigError("maskctc needs a vocabulary with mask_id")
    if not cfg.emissions:
        raise ConfigError("maskctc needs an emission path")
    if "mlm" not in cfg.raw:
        raise ConfigError("maskctc config needs an 'mlm' path")
    mlm = maskctc_mod.TableMLM.load(cfg.raw["mlm"], mask_id=vocab.mask_id)
    block = cfg.raw.get("maskctc", {})
    mc_cfg = maskctc_mod.MaskCtcConfig(
        threshold=float(block.get("threshold", 0.5)),
        iterations=int(block.get("iterations", 1)),
    )
    emission = load_emission(cfg.emissions[0])
    result = maskctc_mod.mask_ctc_decode(emission, mlm, vocab, mc_cfg)
    payload = {
        "tokens": [vocab.tokens[t] for t in result.tokens],
        "token_ids": list(result.tokens),
        "mlm_calls": result.mlm_calls,
        "masked_counts": list(result.masked_counts),
    }
    _emit_json(payload, cfg.output)
    return 0


def run_align(cfg: RunConfig) -> int:
    vocab = _vocab_from_config(cfg.raw)
    if not cfg.emissions:
        raise ConfigError("align needs an emission path")
    labels_raw = cfg.raw.get("labels")
    if labels_raw is None:
        raise ConfigError("align config needs a 'labels' list")
    labels: List[int] = []
    for item in labels_raw:
        if isinstance(item, str):
            if item not in vocab.tokens:
                raise ConfigError(f"label {item!r} is not in the vocabulary")
            labels.append(vocab.tokens.index(item))
        else:
            labels.append(int(item))
    emission = load_emission(cfg.emissions[0])
    try:
        alignment = ctc_forced_align(emission, labels, vocab.blank_id)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    payload = {
        "path": list(alignment.path),
        "spans": [
            {"token": s.token, "start": s.start, "end": s.end} for s in alignment.spans
        ],
        "score": alignment.score,
    }
    _emit_json(payload, cfg.output)
    return 0


def run_vad(cfg: RunConfig) -> int:
    raw = cfg.raw
    if "vocab" in raw:
        blank_id = Vocabulary.from_dict(raw["vocab"]).blank_id
    elif "blank_id" in raw:
        blank_id = int(raw["blank_id"])
    else:
        raise ConfigError("vad config needs 'vocab' or 'blank_id'")
    if not cfg.emissions:
        raise ConfigError("vad needs an emission path")
    block = raw.get("vad", {})
    emission = load_emission(cfg.emissions[0])
    try:
        segments = ctc_vad(
            emission,
            blank_id,
            on_threshold=float(block.get("on_threshold", 0.5)),
            min_gap_frames=int(block.get("min_gap_frames", 0)),
            margin_frames=int(block.get("margin_frames", 0)),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    payload = {
        "segments": [
            {"start": s.start, "end": s.end, "kind": s.kind} for s in segments
        ]
    }
    _emit_json(payload, cfg.output)
    return 0


def _synth_bench_instance(rng: np.random.Generator, v: int, t: int):
    """Seeded random emission + scorer stack used by the benchmark."""
    tokens = [f"t{i}" for i in range(v)]
    tokens[0] = "<blank>"
    tokens[1] = "<sos>"
    tokens[2] = "<eos>"
    vocab = Vocabulary(tokens=tuple(tokens), blank_id=0, sos_id=1, eos_id=2)
    emission = EmissionMatrix.from_logits(rng.normal(size=(t, v)))
    rows = {(): np.log(rng.dirichlet(np.ones(v)))}
    for i in range(v):
        rows[(i,)] = np.log(rng.dirichlet(np.ones(v)))
    att = TableScorer(context_order=1, vocab_size=v, rows=rows)
    ctc = CTCPrefixScorer(blank_id=vocab.blank_id, eos_id=vocab.eos_id)
    return vocab, emission, {"att": att}, {"ctc": ctc}


@dataclass
class BenchReport:
    """Wall-time stats per variant plus the equality verdict; the speedup is
    only reported when both variants produced identical hypotheses."""

    stats: Dict[str, Dict[str, float]]
    equal: bool
    speedup: Optional[float]
    digest: str


def run_bench(cfg: RunConfig) -> int:
    block = cfg.raw.get("bench", {})
    v = int(block.get("V", 50))
    t = int(block.get("T", 20))
    b = int(block.get("B", 4))
    repeats = int(block.get("repeats", 3))
    if min(v, t, b, repeats) < 1 or v < 4:
        raise ConfigError("bench needs V >= 4 and positive T, B, repeats")
    rng = np.random.default_rng(cfg.seed)
    vocab, emission, full, partial = _synth_bench_instance(rng, v, t)
    beam_cfg = BeamConfig(
        weights={"att": 0.7, "ctc": 0.3},
        beam_size=b,
        max_len_ratio=float(block.get("max_len_ratio", 0.5)),
    )

    variants = {
        "sequential": lambda: beam_search(emission, vocab, full, beam_cfg, partial),
        "batched": lambda: batch_beam_search(emission, vocab, full, beam_cfg, partial),
    }
    outputs: Dict[str, NBestList] = {}
    timings: Dict[str, List[float]] = {}
    for name, fn in variants.items():
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            outputs[name] = fn()
            times.append(time.perf_counter() - start)
        timings[name] = times

    seq, bat = outputs["sequential"], outputs["batched"]
    equal = len(seq) == len(bat) and all(
        a.yseq == b_.yseq
        and (a.score == b_.score or abs(a.score - b_.score) <= 1e-9)
        for a, b_ in zip(seq.entries, bat.entries)
    )
    digest_src = json.dumps(
        [[list(e.yseq), round(e.score, 9)] for e in seq.entries], sort_keys=True
    )
    digest = hashlib.sha256(digest_src.encode()).hexdigest()

    def stats(times: List[float]) -> Dict[str, float]:
        arr = np.sort(np.array(times))
        return {
            "mean": float(arr.mean()),
            "p50": float(np.percentile(arr, 50)),
            "p95": float(np.percentile(arr, 95)),
        }

    report = BenchReport(
        stats={name: stats(ts) for name, ts in timings.items()},
        equal=equal,
        speedup=(
            float(np.mean(timings["sequential"]) / np.mean(timings["batched"]))
            if equal
            else None
        ),
        digest=digest,
    )
    payload = {
        "config": {"V": v, "T": t, "B": b, "repeats": repeats, "seed": cfg.seed},
        "equal": report.equal,
        "hypothesis_digest": report.digest,
        "speedup": report.speedup,
        "timings": report.stats,
    }
    _emit_json(payload, cfg.output)
    if not equal:
        print("bench: sequential and batched outputs differ", file=sys.stderr)
        return 1
    return 0


_RUNNERS = {
    "decode": run_decode,
    "transducer": run_transducer,
    "maskctc": run_maskctc,
    "align": run_align,
    "vad": run_vad,
    "bench": run_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqdecode",
        description="Decode emission lattices with beam search, transducer search, "
        "mask-predict refinement, CTC alignment, or VAD; or benchmark the "
        "sequential vs batched search.",
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument(
            "--emission", action="append", help="emission path (repeatable)"
        )
        p.add_argument("--output", help="output JSON path (default: stdout)")
        p.add_argument("--sequential", action="store_true",
                       help="use the per-hypothesis search instead of the batched one")
        p.add_argument("--jobs", type=int, default=1,
                       help="decode multiple emissions in parallel")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--oracle", action="store_true",
                       help="verify against the brute-force oracle (tiny inputs only)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_run_config(args.task, args)
        return _RUNNERS[args.task](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 3
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"format error: missing file {e.filename}", file=sys.stderr)
        return 3
    except DecodeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError) as e:
        # malformed config values (bad casts, missing keys) count as config
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
