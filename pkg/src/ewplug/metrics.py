"""Evaluation metrics over confusion statistics, and black-box oracles.

Closed-form metrics are functions of the diagonal confusion entries (plus
the classifier-independent class priors) and provide gradients. Oracle
metrics only accept per-example predictions on the validation sample and
hide how they score them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import ConfusionStats, Dataset, confusion

log = logging.getLogger(__name__)

GRAD_FLOOR = 1e-6


class UnsupportedGradientError(TypeError):
    """Raised when a gradient is requested from a black-box metric."""


class Metric:
    """Common interface: ``evaluate(dataset, predictions) -> float``."""

    kind = "metric"
    closed_form = True

    def evaluate(self, ds: Dataset, predictions) -> float:
        return self.value(confusion(ds, predictions))

    def value(self, stats: ConfusionStats) -> float:
        return self.diag_value(stats.diag, stats.priors)

    def diag_value(self, diag, priors) -> float:
        raise NotImplementedError

    def gradient(self, diag, priors) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass
class LinearMetric(Metric):
    """``sum_i beta_i C_ii``; accuracy is ``beta = 1``."""

    beta: np.ndarray
    kind = "linear"

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)

    def diag_value(self, diag, priors=None):
        return float(np.dot(self.beta, np.asarray(diag, dtype=float)))

    def gradient(self, diag=None, priors=None):
        return self.beta.copy()

    def describe(self):
        return {"kind": self.kind, "beta": self.beta.tolist()}


def accuracy(m: int) -> LinearMetric:
    return LinearMetric(np.ones(m))


@dataclass
class FullLinearMetric(Metric):
    """``sum_ij L_ij C_ij`` over the whole confusion matrix."""

    L: np.ndarray
    kind = "full-linear"

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)

    def value(self, stats):
        return float(np.sum(self.L * stats.full))

    def describe(self):
        return {"kind": self.kind, "L": self.L.tolist()}


class GMean(Metric):
    """Geometric mean of per-class recalls ``C_ii / pi_i``."""

    kind = "gmean"

    def diag_value(self, diag, priors):
        diag = np.asarray(diag, dtype=float)
        priors = np.asarray(priors, dtype=float)
        if np.any(diag <= 0):
            log.info("gmean: a class has zero recall; returning the limit value 0")
            return 0.0
        return float(np.exp(np.mean(np.log(diag / priors))))

    def gradient(self, diag, priors):
        diag = np.asarray(diag, dtype=float)
        clamped = np.maximum(diag, GRAD_FLOOR)
        if np.any(clamped != diag):
            log.info("gmean gradient: clamped diagonal entries below %g", GRAD_FLOOR)
        psi = self.diag_value(clamped, priors)
        return psi / (clamped.size * clamped)


class FMeasureBinary(Metric):
    """F1 of the first class, with the off-diagonals fixed by the priors.

    ``F = 2 c1 / (pi1 + c1 + pi2 - c2)``, which is ``2 c1 / (1 + c1 - c2)``
    for a full confusion matrix.
    """

    kind = "fmeasure-binary"

    def value(self, stats):
        if stats.m != 2:
            raise ValueError("binary F-measure needs m = 2")
        C = stats.full
        den = C[0].sum() + C[:, 0].sum()
        return 0.0 if den == 0 else float(2 * C[0, 0] / den)

    def diag_value(self, diag, priors):
        c1, c2 = diag
        den = priors[0] + c1 + priors[1] - c2
        return 0.0 if den == 0 else float(2 * c1 / den)

    def gradient(self, diag, priors):
        c1, c2 = np.asarray(diag, dtype=float)
        den = priors[0] + c1 + priors[1] - c2
        return np.array([2 * (den - c1) / den**2, 2 * c1 / den**2])


class FMeasureMacro(Metric):
    """Mean over classes of ``2 C_ii / (sum_j C_ij + sum_j C_ji)``.

    On a full confusion matrix this is defined for any ``m``. As a function
    of the diagonal alone it is defined for ``m = 2`` only, where column sums
    follow from the priors.
    """

    kind = "fmeasure-macro"

    def value(self, stats):
        C = stats.full
        den = C.sum(axis=1) + C.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(den > 0, 2 * np.diag(C) / den, 0.0)
        return float(f.mean())

    def _check(self, diag):
        if len(diag) != 2:
            raise ValueError("macro F-measure is a function of the diagonal only for m = 2")

    def diag_value(self, diag, priors):
        self._check(diag)
        c1, c2 = diag
        p1, p2 = priors
        d1 = p1 + c1 + p2 - c2
        d2 = p2 + c2 + p1 - c1
        return float(0.5 * (2 * c1 / d1 + 2 * c2 / d2))

    def gradient(self, diag, priors):
        self._check(diag)
        c1, c2 = np.asarray(diag, dtype=float)
        p1, p2 = priors
        d1 = p1 + c1 + p2 - c2
        d2 = p2 + c2 + p1 - c1
        g1 = (d1 - c1) / d1**2 + c2 / d2**2
        g2 = c1 / d1**2 + (d2 - c2) / d2**2
        return np.array([g1, g2])


@dataclass
class OracleMetric(Metric):
    """Opaque metric: a callable scoring validation predictions.

    The handle sees only the ``(n, m)`` prediction matrix; anything else it
    needs (labels, protected attributes) is captured inside it.
    """

    handle: Callable[[np.ndarray], float]
    name: str = "oracle"
    queries: int = field(default=0, compare=False)
    kind = "oracle"
    closed_form = False

    def evaluate(self, ds, predictions):
        p = np.asarray(predictions.proba(ds) if hasattr(predictions, "proba") else predictions, dtype=float)
        if p.ndim == 1:
            p = np.eye(ds.m)[p.astype(np.int64)]
        self.queries += 1
        v = float(self.handle(p))
        if not np.isfinite(v):
            raise ValueError(f"oracle {self.name} returned {v}")
        return v

    def value(self, stats):
        raise TypeError("oracle metrics score predictions, not confusion statistics")

    def gradient(self, diag, priors):
        raise UnsupportedGradientError(f"{self.name} is a black-box metric; use the unknown-gradient path")

    def describe(self):
        return {"kind": self.kind, "name": self.name}


@dataclass
class ShiftedMetric(Metric):
    """``base(h) - offset``; used for local linearization around an iterate."""

    base: Metric
    offset: float
    kind = "shifted"

    @property
    def closed_form(self):
        return self.base.closed_form

    def evaluate(self, ds, predictions):
        return self.base.evaluate(ds, predictions) - self.offset


def eval_metric(spec: Metric, stats_or_predictions, dataset: Optional[Dataset] = None) -> float:
    """Score confusion statistics (closed-form metrics) or predictions (any metric)."""
    if isinstance(stats_or_predictions, ConfusionStats):
        return spec.value(stats_or_predictions)
    if dataset is None:
        raise ValueError("scoring predictions needs the dataset they were made on")
    return spec.evaluate(dataset, stats_or_predictions)


def grad_metric(spec: Metric, diag, priors) -> np.ndarray:
    if not spec.closed_form:
        raise UnsupportedGradientError(f"{spec.kind} metric has no closed-form gradient")
    return np.asarray(spec.gradient(np.asarray(diag, dtype=float), np.asarray(priors, dtype=float)))


# --- fairness oracle --------------------------------------------------------


def group_rates(predictions, labels, protected_ids):
    """Within-group true-positive and true-negative rates.

    Class 1 (internal index 1) is the positive class. Returns a list of
    ``(tp_rate, tn_rate)`` per group in ascending group id, with ``nan`` for
    a rate whose group has no examples of that class.
    """
    p = np.asarray(predictions, dtype=float)
    if p.ndim == 1:
        p = np.eye(2)[p.astype(np.int64)]
    labels = np.asarray(labels)
    protected_ids = np.asarray(protected_ids)
    rates = []
    for g in np.unique(protected_ids):
        in_g = protected_ids == g
        pos = in_g & (labels == 1)
        neg = in_g & (labels == 0)
        tp = p[pos, 1].mean() if pos.any() else np.nan
        tn = p[neg, 0].mean() if neg.any() else np.nan
        rates.append((tp, tn))
    return rates


def fairness_oracle(predictions, labels, protected_ids) -> float:
    """Geometric mean of TP and TN rates taken separately in each group."""
    rates = np.array(group_rates(predictions, labels, protected_ids), dtype=float).ravel()
    if np.any(np.isnan(rates)):
        log.warning("fairness oracle: a group lacks positives or negatives; returning 0")
        return 0.0
    if np.any(rates <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(rates))))


def make_fairness_oracle(val: Dataset) -> OracleMetric:
    """Wrap the fairness metric for ``val`` as an opaque oracle handle."""
    if val.protected_ids is None:
        raise ValueError("fairness oracle needs protected attributes on the validation set")
    if val.m != 2:
        raise ValueError("fairness oracle is defined for binary labels")
    labels = val.labels.copy()
    prot = val.protected_ids.copy()

    def handle(pred):
        return fairness_oracle(pred, labels, prot)

    return OracleMetric(handle, name="fairness")


class DatasetOracle(Metric):
    """Oracle bound lazily to whichever dataset it is evaluated on.

    The fairness metric is a black box whose private inputs live on the
    dataset; this adapter lets one metric object score validation and test
    predictions without exposing a gradient.
    """

    kind = "oracle"
    closed_form = False

    def __init__(self, name: str = "fairness"):
        self.name = name
        self.queries = 0

    def evaluate(self, ds, predictions):
        self.queries += 1
        p = predictions.proba(ds) if hasattr(predictions, "proba") else predictions
        return make_fairness_oracle(ds).evaluate(ds, p)

    def gradient(self, diag, priors):
        raise UnsupportedGradientError(f"{self.name} is a black-box metric")

    def describe(self):
        return {"kind": self.kind, "name": self.name}


def metric_from_config(cfg: dict, m: int) -> Metric:
    """Resolve a metric by name: accuracy, linear, gmean, fmeasure-*, fairness."""
    name = cfg["name"]
    if name == "accuracy":
        return accuracy(m)
    if name == "linear":
        beta = np.asarray(cfg["beta"], dtype=float)
        if beta.shape != (m,):
            raise ValueError(f"linear metric needs {m} weights")
        return LinearMetric(beta)
    if name == "gmean":
        return GMean()
    if name == "fmeasure-binary":
        return FMeasureBinary()
    if name == "fmeasure-macro":
        return FMeasureMacro()
    if name == "fairness":
        return DatasetOracle("fairness")
    raise ValueError(f"unknown metric {name!r}")
