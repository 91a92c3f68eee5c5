"""Command-line entry point: ``switchspaces train`` and ``switchspaces eval``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report
from .config import RunConfig, coerce
from .errors import SwitchSpacesError
from .gating import GateLog, active_set_histogram, gate_forward
from .numerics import ParamStore
from .timing import relative_growth, timing_sweep
from .training import build_model, evaluate, load_data, selection_metric, train, write_history

log = logging.getLogger("switchspaces")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file; flags override its keys")
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="VALUE")


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else None
    flags = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig) if getattr(args, f.name) is not None}
    if base is None:
        return RunConfig(**coerce(flags))
    return base.updated(**flags)


def check_compatible(model, params: ParamStore) -> None:
    """Raise when checkpoint shapes differ from what the configured model expects."""
    expected = model.init_params(np.random.default_rng(0)).shapes()
    found = params.shapes()
    if expected == found:
        return
    lines = ["checkpoint does not match the configured signature:"]
    for name in sorted(set(expected) | set(found)):
        e, f = expected.get(name, "missing"), found.get(name, "missing")
        if e != f:
            lines.append(f"  {name}: expected {e}, found {f}")
    raise SwitchSpacesError("\n".join(lines))


def gate_decisions(cfg: RunConfig, model, params, data, split="test", chunk=1024):
    """Noise-free gate decisions for every example of a split (KG queries include reciprocals)."""
    if model.gate is None:
        return []
    p = dict(params)
    if cfg.task == "kg":
        q = data.with_reciprocals(getattr(data, split))
        a, b = q[:, 0], q[:, 1]
        fn = lambda lo, hi: model.gates(p, a[lo:hi], b[lo:hi])[1]
    else:
        pairs = getattr(data, split)
        a, b = pairs[:, 0], pairs[:, 1]
        fn = lambda lo, hi: gate_forward(model.gate, p, model.gate_input(p, a[lo:hi], b[lo:hi]), model.k)[1]
    return [(fn(lo, min(lo + chunk, len(a))), a[lo : lo + chunk], b[lo : lo + chunk]) for lo in range(0, len(a), chunk)]


def log_gates(cfg, model, params, data, out: Path, split="test") -> dict:
    hist = active_set_histogram(np.zeros((0, model.k), dtype=int), model.n, model.k)
    names = ("head", "relation") if cfg.task == "kg" else ("user", "item")
    with open(out / "gates.jsonl", "w", encoding="utf-8") as fh:
        sink = GateLog(fh)
        for decision, a, b in gate_decisions(cfg, model, params, data, split):
            sink.write(decision, **{names[0]: a, names[1]: b})
            for key, count in active_set_histogram(decision.active, model.n, model.k).items():
                hist[key] += count
    report.write_gate_histogram(hist, out / "gate_hist.csv", out / "gate_hist.png",
                                title=f"Active sets, N={model.n}, K={model.k}")
    return {report.format_active_set(k): v for k, v in hist.items()}


def _run_one(cfg: RunConfig, data, out: Path) -> dict:
    out = report.ensure_dir(out)
    cfg.save(out / "config.txt")
    model = build_model(cfg, data)
    rows = []

    def progress(record):
        rows.append(record)
        write_history(rows, out / "train_log.csv")

    result = train(cfg, data, model, on_epoch=progress)
    result.params.save(out / "checkpoint.npz")
    write_history(result.history, out / "train_log.csv")
    metric = selection_metric(cfg)
    if result.history:
        report.plot_training_curve(result.history, out / "training_curve.png", metric)
    metrics = evaluate(cfg, model, result.params, data, "test")
    summary = {"task": cfg.task, "signature": cfg.signature, "k": cfg.k, "mode": cfg.mode, "seed": cfg.seed,
               "split": "test", "best_epoch": result.best_epoch, "epochs_run": len(result.history),
               f"valid_{metric}": result.best_valid if result.history else None, "metrics": metrics}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def cmd_train(args) -> dict:
    cfg = resolve_config(args)
    data = load_data(cfg)
    out = Path(cfg.out)
    if not cfg.seeds:
        summary = _run_one(cfg, data, out)
    else:
        runs = [_run_one(cfg.updated(seed=s, out=str(out / f"seed_{s}")), data, out / f"seed_{s}") for s in cfg.seeds]
        keys = [k for k in runs[0]["metrics"] if isinstance(runs[0]["metrics"][k], float)]
        summary = {"task": cfg.task, "signature": cfg.signature, "k": cfg.k, "mode": cfg.mode, "seeds": cfg.seeds,
                   "split": "test", "per_seed": [r["metrics"] for r in runs],
                   "mean": {k: float(np.mean([r["metrics"][k] for r in runs])) for k in keys},
                   "std": {k: float(np.std([r["metrics"][k] for r in runs])) for k in keys}}
        report.ensure_dir(out)
        cfg.save(out / "config.txt")
        (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return summary


def cmd_eval(args) -> dict:
    ckpt = Path(args.checkpoint)
    if args.config is None and (ckpt.parent / "config.txt").exists():
        args.config = str(ckpt.parent / "config.txt")
    cfg = resolve_config(args)
    out = report.ensure_dir(args.out_dir or ckpt.parent)
    data = load_data(cfg)
    model = build_model(cfg, data)
    params = ParamStore.load(ckpt)
    check_compatible(model, params)
    summary = {"task": cfg.task, "signature": cfg.signature, "k": cfg.k, "mode": cfg.mode, "split": args.split,
               "checkpoint": str(ckpt), "metrics": evaluate(cfg, model, params, data, args.split)}
    if args.log_gates:
        summary["gate_histogram"] = log_gates(cfg, model, params, data, out, args.split)
    if args.time_sweep:
        ns = [int(v) for v in args.time_sweep.split(",") if v.strip()]
        rows = timing_sweep(ns, k=args.time_k, repeats=args.time_repeats)
        report.write_timing(rows, out / "timing.csv", out / "timing.png")
        summary["timing"] = rows
        summary["timing_growth"] = relative_growth(rows)
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchspaces", description="Switch-space embeddings for KG completion and recommendation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = parser.add_subparsers(dest="command", required=True)
    tr = sub.add_parser("train", help="train a model and write checkpoint.npz, train_log.csv and metrics.json")
    _add_config_flags(tr)
    tr.set_defaults(func=cmd_train)
    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--split", default="test", choices=("train", "valid", "test"))
    ev.add_argument("--out-dir", default=None, help="where to write outputs (default: the checkpoint's directory)")
    ev.add_argument("--log-gates", action="store_true", help="write gates.jsonl and the active-set histogram")
    ev.add_argument("--time-sweep", default=None, metavar="N1,N2,...", help="time inference for each N at fixed K")
    ev.add_argument("--time-k", type=int, default=2)
    ev.add_argument("--time-repeats", type=int, default=5)
    _add_config_flags(ev)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (SwitchSpacesError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
