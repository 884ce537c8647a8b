"""Command-line entry point: ``detbeam {toy,train,decode,sweep,eval}``.

File formats
------------
decode output
    JSON lines. Each record has ``schema`` equal to ``DECODE_SCHEMA``, the input
    index and text, the strategy, the resolved config, the decoded hypotheses
    (text and log-probability) and a diversity report.
sweep output
    CSV. The first line is ``SWEEP_SCHEMA_LINE``, the second is ``SWEEP_HEADER``,
    then one row per (strategy, grid value, k). BLEU cells are empty when no
    references were supplied.
trace output
    JSON lines, one record per decoding step, tagged with the input index.

Inputs are one whitespace-tokenised prefix per line (a blank line means no
conditioning context). References, when given, align line by line with the
inputs and hold the expected continuation.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .core import ContractError
from .decode import DecodeConfig, decode_set
from .kernel import KernelParams
from .metrics import set_report
from .model import MarkovModel, PrefixedModel, train_markov
from .toy import generate_corpus

log = logging.getLogger("detbeam")

DECODE_SCHEMA = "detbeam.decode/1"
EVAL_SCHEMA = "detbeam.eval/1"
SWEEP_SCHEMA_LINE = "# detbeam.sweep/1"
SWEEP_HEADER = (
    "strategy,param,value,k,n_inputs,d_avg,d_1,d_2,d_3,d_4,"
    "bleu_min,bleu_median,bleu_max,seconds_per_set"
)

DEFAULTS = {
    "strategy": "standard",
    "k": 5,
    "w": 0.1,
    "temp": 1.0,
    "kernel_n": 2,
    "lambda": 0.3,
    "nmax": 50,
    "seed": 0,
    "groups": None,
    "prune_factor": None,
    "order": 3,
    "alpha": 0.1,
}


class UsageError(Exception):
    """Bad input files or settings; reported without a traceback."""


# ---------------------------------------------------------------- io helpers


def read_lines(path: str | Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    return text.splitlines()


def read_corpus(path: str | Path) -> list[list[str]]:
    corpus = [line.split() for line in read_lines(path) if line.strip()]
    if not corpus:
        raise UsageError(f"corpus {path} is empty")
    return corpus


def _open_out(path: str | None):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w", encoding="utf-8", newline="")


def read_decode_records(path: str | Path) -> list[dict]:
    out = []
    for n, line in enumerate(read_lines(path), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("schema") != DECODE_SCHEMA:
            raise UsageError(f"{path}:{n}: expected schema {DECODE_SCHEMA!r}")
        out.append(rec)
    return out


def read_sweep(path: str | Path) -> list[dict]:
    lines = read_lines(path)
    if not lines or lines[0] != SWEEP_SCHEMA_LINE:
        raise UsageError(f"{path}: missing {SWEEP_SCHEMA_LINE!r} line")
    if len(lines) < 2 or lines[1] != SWEEP_HEADER:
        raise UsageError(f"{path}: unexpected header")
    rows = []
    for row in csv.DictReader(lines[1:]):
        parsed: dict = {}
        for key, val in row.items():
            if key in ("strategy", "param"):
                parsed[key] = val
            elif key in ("k", "n_inputs"):
                parsed[key] = int(val)
            else:
                parsed[key] = float(val) if val != "" else None
        rows.append(parsed)
    return rows


# ------------------------------------------------------------ configuration


def resolve_settings(args: argparse.Namespace) -> dict:
    """Flags override the JSON config file, which overrides built-in defaults."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key.replace("lambda", "lam"), None)
        if val is not None:
            settings[key] = val
    return settings


def make_config(settings: dict) -> DecodeConfig:
    try:
        return DecodeConfig(
            strategy=settings["strategy"],
            k=settings["k"],
            w=settings["w"],
            temperature=settings["temp"],
            kernel=KernelParams(settings["kernel_n"], settings["lambda"]),
            n_max=settings["nmax"],
            seed=settings["seed"],
            groups=settings["groups"],
            prune_factor=settings["prune_factor"],
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def load_inputs(args) -> tuple[list[str], list[list[str]] | None]:
    inputs = read_lines(args.inputs) if args.inputs else [""]
    refs = None
    if getattr(args, "refs", None):
        refs = [line.split() for line in read_lines(args.refs)]
        if len(refs) != len(inputs):
            raise UsageError(f"{len(refs)} references for {len(inputs)} inputs")
    return inputs, refs


def load_model(path: str) -> MarkovModel:
    try:
        return MarkovModel.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from exc


# ------------------------------------------------------------------ workers

_WORKER_MODEL: MarkovModel | None = None


def _init_worker(path: str) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = MarkovModel.load(path)


def decode_one(model: MarkovModel, text: str, cfg: DecodeConfig, trace: bool = False):
    vocab = model.vocab
    try:
        context = [vocab.id(tok) for tok in text.split()]
    except (KeyError, ContractError) as exc:
        raise UsageError(f"input {text!r}: {exc}") from exc
    out = decode_set(PrefixedModel(model, context), cfg, trace=trace)
    return out.texts(vocab), [float(h.log_prob) for h in out], out.trace or []


def _decode_job(job):
    text, cfg, trace = job
    return decode_one(_WORKER_MODEL, text, cfg, trace)


def run_batch(model_path: str, inputs: Sequence[str], cfg: DecodeConfig, jobs: int, trace: bool = False):
    """Decode every input; results come back in input order whatever ``jobs`` is."""
    work = [(text, cfg, trace) for text in inputs]
    if jobs <= 1:
        model = load_model(model_path)
        return [decode_one(model, *w) for w in work]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(model_path,)) as pool:
        return list(pool.map(_decode_job, work))


# ----------------------------------------------------------------- commands


def cmd_toy(args) -> int:
    corpus = generate_corpus(args.n, args.seed, args.zipf)
    with _open_out(args.out) as fh:
        fh.write("".join(" ".join(s) + "\n" for s in corpus))
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    corpus = read_corpus(args.corpus)
    try:
        model = train_markov(corpus, order=settings["order"], alpha=settings["alpha"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    model.save(args.out)
    print(f"vocabulary size: {len(model.vocab)}")
    print(f"contexts: {len(model.counts)}")
    return 0


def cmd_decode(args) -> int:
    settings = resolve_settings(args)
    cfg = make_config(settings)
    inputs, refs = load_inputs(args)
    results = run_batch(args.model, inputs, cfg, args.jobs, trace=bool(args.trace))
    with _open_out(args.out) as fh:
        for i, (text, (hyps, lps, _)) in enumerate(zip(inputs, results)):
            ref = refs[i] if refs else None
            report = set_report([h.split() for h in hyps], ref)
            rec = {
                "schema": DECODE_SCHEMA,
                "index": i,
                "input": text,
                "strategy": cfg.strategy,
                "config": cfg.to_dict(),
                "hypotheses": [{"text": h, "log_prob": lp} for h, lp in zip(hyps, lps)],
                "report": report.to_dict(),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.trace:
        with _open_out(args.trace) as fh:
            for i, (_, _, steps) in enumerate(results):
                for step in steps:
                    fh.write(json.dumps({"index": i, **step}, sort_keys=True) + "\n")
    return 0


def _parse_grid(text: str, cast=float) -> list:
    try:
        vals = [cast(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from exc
    if not vals:
        raise UsageError("sweep grid must not be empty")
    return vals


def summarise(sets: Sequence[Sequence[str]], refs: Sequence | None) -> dict:
    """Average the per-set diversity and BLEU statistics over a batch."""
    reports = [set_report([h.split() for h in hyps], refs[i] if refs else None) for i, hyps in enumerate(sets)]
    row = {"d_avg": statistics.fmean(r.d_avg for r in reports)}
    for n in (1, 2, 3, 4):
        row[f"d_{n}"] = statistics.fmean(r.d_per_n[n] for r in reports)
    for key in ("bleu_min", "bleu_median", "bleu_max"):
        vals = [getattr(r, key) for r in reports]
        row[key] = statistics.fmean(vals) if refs and all(v is not None for v in vals) else None
    return row


def cmd_sweep(args) -> int:
    settings = resolve_settings(args)
    strategies = args.strategies.split(",") if args.strategies else [settings["strategy"]]
    ks = _parse_grid(args.ks, int) if args.ks else [settings["k"]]
    key = {"w": "w", "temp": "temp"}[args.param]
    grid = _parse_grid(args.grid)
    inputs, refs = load_inputs(args)
    rows = []
    for strategy in strategies:
        for k in ks:
            for value in grid:
                cfg = make_config({**settings, "strategy": strategy, "k": k, key: value})
                t0 = time.perf_counter()
                results = run_batch(args.model, inputs, cfg, args.jobs)
                elapsed = time.perf_counter() - t0
                row = {"strategy": strategy, "param": args.param, "value": value, "k": k, "n_inputs": len(inputs)}
                row.update(summarise([r[0] for r in results], refs))
                row["seconds_per_set"] = elapsed / len(inputs)
                rows.append(row)
                log.info("%s %s=%g k=%d d_avg=%.4f", strategy, args.param, value, k, row["d_avg"])
    with _open_out(args.out) as fh:
        fh.write(SWEEP_SCHEMA_LINE + "\n")
        writer = csv.DictWriter(fh, SWEEP_HEADER.split(","), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return 0


def cmd_eval(args) -> int:
    records = read_decode_records(args.decoded)
    refs = None
    if args.refs:
        refs = [line.split() for line in read_lines(args.refs)]
        if len(refs) != len(records):
            raise UsageError(f"{len(refs)} references for {len(records)} decoded sets")
    sets = [[h["text"] for h in rec["hypotheses"]] for rec in records]
    summary = {"schema": EVAL_SCHEMA, "n_inputs": len(records), **summarise(sets, refs)}
    with _open_out(args.out) as fh:
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


# ------------------------------------------------------------------- parser


def _decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--inputs", help="prefix file, one per line (default: one empty prefix)")
    p.add_argument("--refs", help="reference continuations aligned with --inputs")
    p.add_argument("--config", help="JSON file of settings; flags take precedence")
    p.add_argument("--strategy", choices=("standard", "detbs", "sbs", "dbs"))
    p.add_argument("--k", type=int)
    p.add_argument("--w", type=float)
    p.add_argument("--temp", type=float)
    p.add_argument("--kernel-n", dest="kernel_n", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--nmax", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--prune-factor", dest="prune_factor", type=int)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", default="-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detbeam", description="Diverse set decoding for toy sequence models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zipf", type=float, default=3.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("train", help="fit a smoothed Markov model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a set per input")
    _decode_flags(p)
    p.add_argument("--trace", help="write per-step trace records here")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", help="decode a batch over a parameter grid")
    _decode_flags(p)
    p.add_argument("--param", choices=("w", "temp"), default="w")
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--strategies", help="comma-separated strategies (default: --strategy)")
    p.add_argument("--ks", help="comma-separated beam sizes (default: --k)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="summarise a decode output file")
    p.add_argument("--decoded", required=True)
    p.add_argument("--refs")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"detbeam: error: {exc}", file=sys.stderr)
        return 2
