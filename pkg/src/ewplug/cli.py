"""Command-line entry point: ``ewplug run | sweep | synth | eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmarks import BENCHMARKS
from .data import write_dataset
from .runner import METHODS, evaluate_predictions, load_config, run, sweep, write_error


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.method is not None:
        cfg["method"] = {"name": args.method}
    method = cfg.get("method")
    if isinstance(method, str):
        method = cfg["method"] = {"name": method}
    for key in ("eps", "T", "spacing", "split_mode"):
        v = getattr(args, key, None)
        if v is not None:
            method[key] = v
    if args.metric is not None:
        cfg["metric"] = {"name": args.metric}
    return cfg


def _add_run_flags(p):
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--metric", help="metric name, e.g. accuracy, gmean, fmeasure-macro, fairness")
    p.add_argument("--eps", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--split-mode", dest="split_mode", choices=("shared", "halved"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ewplug", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one pipeline")
    _add_run_flags(p)

    p = sub.add_parser("sweep", help="run a grid of candidates and select by validation metric")
    _add_run_flags(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eps-grid", type=_floats, help="comma-separated eps values")
    g.add_argument("--basis-grid", help="JSON list of basis definitions")

    p = sub.add_parser("synth", help="write a benchmark's splits as delimited files")
    p.add_argument("--benchmark", required=True, choices=sorted(BENCHMARKS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--params", default="{}", help="JSON keyword arguments for the benchmark builder")

    p = sub.add_parser("eval", help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--beta", type=_floats, help="weights for the linear metric")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.verb == "eval":
        metric = {"name": args.metric}
        if args.beta is not None:
            metric["beta"] = args.beta
        try:
            print(repr(evaluate_predictions(args.predictions, metric)))
        except Exception as exc:  # noqa: BLE001
            print(json.dumps({"record": "error", "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            return 1
        return 0

    if args.verb == "synth":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bm = BENCHMARKS[args.benchmark](seed=args.seed, **json.loads(args.params))
        for split in ("train", "val", "test"):
            write_dataset(out / f"{split}.csv", getattr(bm, split))
        meta = {"benchmark": args.benchmark, "seed": args.seed, "params": json.loads(args.params), "basis": bm.basis.describe()}
        (out / "benchmark.json").write_text(json.dumps(meta, indent=1))
        print(out)
        return 0

    cfg = _apply_overrides(load_config(args.config), args)
    out = args.out or cfg.get("output") or f"ewplug-{args.verb}"
    try:
        if args.verb == "run":
            report = run(cfg, output=out)
            print(open(Path(out) / "summary.txt").read(), end="")
        else:
            if args.basis_grid is not None:
                grid = {"basis": json.loads(args.basis_grid)}
            else:
                grid = {"eps": args.eps_grid or [1.0, 0.4, 0.1, 0.01, 0.001, 0.0001]}
            res = sweep(cfg, grid, output=out)
            print(f"selected candidate {res['selected']} (val {res['best']['metrics']['val']:.6f})")
            for c in res["candidates"]:
                status = f"val {c['val']:.6f}" if c["ok"] else f"failed: {c['error']}"
                print(f"  child-{c['index']:03d}  {status}")
    except Exception as exc:  # noqa: BLE001 - structured error report, nonzero exit
        err = write_error(out, exc)
        print(json.dumps({k: err[k] for k in ("record", "error", "message")}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
