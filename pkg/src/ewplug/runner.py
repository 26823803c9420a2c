"""Experiment orchestration: config, pipeline wiring, reports.

A run config is a JSON object::

    {
      "version": 1,
      "seed": 0,
      "data": {"benchmark": "cdln-gaussian3", "params": {"n_train": 20000}},
      "basis": [{"kind": "clusters", "k": 2}],
      "metric": {"name": "gmean"},
      "method": {"name": "fw-eg-known", "T": 25},
      "output": "runs/example"
    }

``data`` is either a named benchmark, or file paths
``{"train": ..., "val": ..., "test": ..., "schema": {...}, "model": "logistic"}``.
See ``docs/config.md`` for every field.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
import traceback
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import NOT_IMPLEMENTED, argmax_baseline, coordinate_search_plugin
from .basis import BasisSet, basis_from_config
from .benchmarks import BENCHMARKS
from .classifiers import DeterministicRule, as_randomized
from .data import ColumnSchema, Dataset, load_dataset
from .frank_wolfe import fw_eg
from .logistic import default_features, fit_softmax
from .metrics import metric_from_config
from .plugin import pi_ew

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
METHODS = ("pi-ew", "fw-eg-known", "fw-eg-unknown", "argmax-train", "argmax-val", "plugin-train-val")
SPLITS = ("train", "val", "test")
# fields that legitimately differ between otherwise identical runs
VOLATILE = ("wall_time", "timestamp")


class ConfigError(ValueError):
    pass


def validate_config(cfg: dict) -> dict:
    """Check required fields and fill defaults; returns a normalized copy."""
    cfg = copy.deepcopy(cfg)
    if "seed" not in cfg:
        raise ConfigError("config needs a seed")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    version = cfg.setdefault("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version} is not supported (expected {CONFIG_VERSION})")
    method = cfg.get("method")
    if isinstance(method, str):
        method = cfg["method"] = {"name": method}
    if not isinstance(method, dict) or "name" not in method:
        raise ConfigError("config needs exactly one method")
    if method["name"] not in METHODS:
        raise ConfigError(f"unknown method {method['name']!r}; choose from {', '.join(METHODS)}")
    if "metric" not in cfg or "name" not in cfg["metric"]:
        raise ConfigError("config needs a metric with a name")
    data = cfg.get("data")
    if not isinstance(data, dict):
        raise ConfigError("config needs a data section")
    if "benchmark" in data:
        if data["benchmark"] not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {data['benchmark']!r}")
    elif not all(k in data for k in SPLITS):
        raise ConfigError("data needs a benchmark name or train/val/test paths")
    cfg.setdefault("basis", None)
    cfg.setdefault("output", None)
    return cfg


def load_config(path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


# --- pipeline pieces ---------------------------------------------------------------


def seed_streams(seed: int):
    """Independent sub-streams for data sampling/corruption and probe randomization."""
    data_ss, probe_ss = np.random.SeedSequence(seed).spawn(2)
    return data_ss, np.random.default_rng(probe_ss)


def load_data(data: dict, data_ss) -> tuple:
    """Return ``(train, val, test, default_basis)``."""
    if "benchmark" in data:
        bm = BENCHMARKS[data["benchmark"]](seed=data_ss, **data.get("params", {}))
        return bm.train, bm.val, bm.test, bm.basis
    schema = ColumnSchema.from_dict(data.get("schema"))
    train, val, test = (load_dataset(data[k], schema, name=k) for k in SPLITS)
    for ds in (train, val, test):
        if ds.d != train.d:
            raise ConfigError(f"split {ds.name} has {ds.d} feature columns, train has {train.d}")
    m = max(ds.m for ds in (train, val, test))
    if any(ds.m != m for ds in (train, val, test)) and schema.m is None:
        raise ConfigError("splits disagree on the class set; declare schema.m")
    if data.get("model") == "logistic":
        model = fit_softmax(train, l2=float(data.get("l2", 1e-3)))
        train, val, test = model.attach(train, val, test)
    elif train.probs is None or val.probs is None or test.probs is None:
        raise ConfigError("every split needs probability columns p1..pm, or set data.model = 'logistic'")
    return train, val, test, None


class _ModelArgmax(DeterministicRule):
    """Argmax of a separately fitted model, re-evaluated on each dataset."""

    def __init__(self, model):
        self.model = model

    def predict(self, ds):
        return self.model.predict_proba(ds).argmax(axis=1)


@dataclass
class MethodOutput:
    classifier: object
    artifacts: dict = field(default_factory=dict)
    trace: Optional[list] = None


def run_method(method: dict, metric, basis: Optional[BasisSet], train, val, rng) -> MethodOutput:
    name = method["name"]
    if name in ("pi-ew", "fw-eg-known", "fw-eg-unknown") and basis is None:
        raise ConfigError(f"method {name} needs a basis")
    if name == "pi-ew":
        rule = pi_ew(
            metric,
            basis,
            train,
            val,
            eps=float(method.get("eps", 1.0)),
            mode=method.get("mode", "diagonal"),
            probe_kind=method.get("probe_kind", "fixed"),
            reg=float(method.get("reg", 0.0)),
            rng=rng,
            rank=method.get("rank"),
        )
        return MethodOutput(as_randomized(rule), {"elicitation": rule.elicitation.to_dict(), "rule": rule.to_dict()})
    if name in ("fw-eg-known", "fw-eg-unknown"):
        res = fw_eg(
            metric,
            basis,
            train,
            val,
            T=int(method.get("T", 25)),
            eps=method.get("eps"),
            split_mode=method.get("split_mode", "shared"),
            known=name == "fw-eg-known",
            probe_kind=method.get("probe_kind", "fixed"),
            reg=float(method.get("reg", 0.0)),
            rng=rng,
            unknown_system=method.get("unknown_system", "differenced"),
        )
        arts = {
            "components": len(res.classifier.components),
            "mixture_weights": res.classifier.weights.tolist(),
            "condition_numbers": [r.condition_number for r in res.trace],
        }
        return MethodOutput(res.classifier, arts, res.trace)
    if name == "argmax-train":
        return MethodOutput(as_randomized(argmax_baseline(train.m)), {"rule": argmax_baseline(train.m).to_dict()})
    if name == "argmax-val":
        model = fit_softmax(val, featurize=default_features)
        return MethodOutput(as_randomized(_ModelArgmax(model)), {"val_model_coef": model.coef.tolist()})
    if name == "plugin-train-val":
        res = coordinate_search_plugin(val, metric, float(method.get("spacing", 0.01)))
        arts = {"weights": res.weights.tolist(), "queries": res.queries, "capped": res.capped, "rule": res.rule.to_dict()}
        return MethodOutput(as_randomized(res.rule), arts)
    raise ConfigError(f"unknown method {name!r}")


# --- predictions files ----------------------------------------------------------------


def write_predictions(path, ds: Dataset, proba: np.ndarray) -> None:
    """Per-example class probabilities (exact reprs) plus the label and protected id."""
    header = ["index", "y"] + (["protected"] if ds.protected_ids is not None else []) + [f"h{k + 1}" for k in range(ds.m)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(ds.n):
            row = [r, int(ds.labels[r]) + 1]
            if ds.protected_ids is not None:
                row.append(int(ds.protected_ids[r]))
            w.writerow(row + [repr(float(v)) for v in proba[r]])


def read_predictions(path):
    """Return ``(dataset, proba)``; the dataset carries labels and protected ids only."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    hcols = [k for k, h in enumerate(header) if h.startswith("h")]
    yk = header.index("y")
    pk = header.index("protected") if "protected" in header else None
    y = np.array([int(r[yk]) - 1 for r in rows], dtype=np.int64)
    proba = np.array([[float(r[k]) for k in hcols] for r in rows])
    prot = None if pk is None else np.array([int(r[pk]) for r in rows])
    ds = Dataset(np.zeros((len(y), 1)), y, len(hcols), protected_ids=prot, name=Path(path).stem)
    return ds, proba


def evaluate_predictions(path, metric_cfg: dict) -> float:
    ds, proba = read_predictions(path)
    return metric_from_config(metric_cfg, ds.m).evaluate(ds, proba)


# --- run --------------------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def summary_table(report: dict) -> str:
    lines = [
        f"method  {report['method']}",
        f"metric  {report['metric']}",
        "",
        f"{'split':<8}{'value':>12}",
    ]
    for split in SPLITS:
        lines.append(f"{split:<8}{report['metrics'][split]:>12.6f}")
    return "\n".join(lines) + "\n"


def run(config: dict, output: Optional[str] = None) -> dict:
    """Execute one pipeline and write its artifacts; returns the report dict."""
    cfg = validate_config(config)
    out = Path(output or cfg["output"] or "ewplug-run")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    data_ss, probe_rng = seed_streams(cfg["seed"])
    train, val, test, default_basis = load_data(cfg["data"], data_ss)
    basis = basis_from_config(cfg["basis"], reference=train, rng=probe_rng) if cfg["basis"] else default_basis
    metric = metric_from_config(cfg["metric"], train.m)
    res = run_method(cfg["method"], metric, basis, train, val, probe_rng)

    metrics = {}
    for split, ds in zip(SPLITS, (train, val, test)):
        proba = res.classifier.proba(ds)
        write_predictions(out / f"predictions_{split}.csv", ds, proba)
        # score exactly what was written so the file reproduces the number
        _, proba_back = read_predictions(out / f"predictions_{split}.csv")
        metrics[split] = float(metric.evaluate(ds, proba_back))

    if res.trace is not None:
        with (out / "trace.jsonl").open("w") as fh:
            for rec in res.trace:
                fh.write(json.dumps(rec.to_dict(), default=_json_default) + "\n")

    report = {
        "version": __version__,
        "config": cfg,
        "method": cfg["method"]["name"],
        "metric": cfg["metric"]["name"],
        "metrics": metrics,
        "artifacts": res.artifacts,
        "trace_records": None if res.trace is None else len(res.trace),
        "not_implemented_baselines": list(NOT_IMPLEMENTED),
        "wall_time": time.perf_counter() - t0,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with (out / "report.jsonl").open("w") as fh:
        fh.write(json.dumps({"record": "config", "config": cfg, "version": __version__}, default=_json_default) + "\n")
        for split in SPLITS:
            fh.write(json.dumps({"record": "metric", "split": split, "name": report["metric"], "value": metrics[split]}) + "\n")
        fh.write(json.dumps({"record": "artifacts", "method": report["method"], **res.artifacts}, default=_json_default) + "\n")
        fh.write(json.dumps({"record": "timing", "wall_time": report["wall_time"], "timestamp": report["timestamp"]}) + "\n")
    (out / "summary.txt").write_text(summary_table(report))
    log.info("run finished: %s", metrics)
    return report


def write_error(out, exc: BaseException) -> dict:
    err = {"record": "error", "error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").write_text(json.dumps(err, indent=1))
    return err


def strip_volatile(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in VOLATILE}


# --- sweep ------------------------------------------------------------------------------


def sweep_candidates(config: dict, grid: dict) -> list:
    """Expand ``{"eps": [...]}`` or ``{"basis": [[...], ...]}`` into child configs."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    if len(grid) != 1:
        raise ConfigError("sweep over one field at a time: eps or basis")
    (key, values), = grid.items()
    if not values:
        raise ConfigError("sweep grid is empty")
    out = []
    for v in values:
        c = copy.deepcopy(config)
        if key == "eps":
            c["method"] = dict(c["method"]) if isinstance(c["method"], dict) else {"name": c["method"]}
            c["method"]["eps"] = v
        elif key == "basis":
            c["basis"] = v
        else:
            raise ConfigError(f"cannot sweep over {key!r}")
        out.append((key, v, c))
    return out


def sweep(config: dict, grid: dict, output: Optional[str] = None) -> dict:
    """Run every candidate, pick the best validation metric, report all of them."""
    cfg = validate_config(config)
    out = Path(output or cfg["output"] or "ewplug-sweep")
    candidates = sweep_candidates(cfg, grid)
    results = []
    for k, (key, value, child) in enumerate(candidates):
        child_dir = out / f"child-{k:03d}"
        try:
            rep = run(child, output=str(child_dir))
            results.append({"index": k, key: value, "ok": True, "val": rep["metrics"]["val"], "report": rep})
        except Exception as exc:  # noqa: BLE001 - sweep only fails when every child fails
            log.warning("sweep child %d failed: %s", k, exc)
            results.append({"index": k, key: value, "ok": False, "error": write_error(child_dir, exc)["message"]})
    ok = [r for r in results if r["ok"]]
    if not ok:
        raise RuntimeError(f"all {len(results)} sweep candidates failed")
    best = max(ok, key=lambda r: r["val"])
    summary = {
        "record": "sweep",
        "grid": grid,
        "selected": best["index"],
        "candidates": [{k: v for k, v in r.items() if k != "report"} for r in results],
    }
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.jsonl").open("w") as fh:
        for c in summary["candidates"]:
            fh.write(json.dumps({"record": "candidate", **c}, default=_json_default) + "\n")
        fh.write(json.dumps({"record": "selected", "index": best["index"], "val": best["val"]}) + "\n")
    return {"best": best["report"], **summary}
