"""Frank-Wolfe over confusion diagonals with elicited linearizations.

Each iteration linearizes the metric at the current iterate, either from
its closed-form gradient or by probing the black-box metric in a small
neighbourhood of the current classifier, elicits example weights for that
linear metric, and mixes the resulting plug-in rule into a randomized
classifier.
"""

from __future__ import annotations

import json
import logging
import math
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .basis import BasisSet
from .classifiers import RandomizedClassifier, as_randomized, mix
from .data import Dataset, confusion
from .metrics import LinearMetric, Metric, ShiftedMetric, grad_metric
from .plugin import PostShiftRule, pi_ew

log = logging.getLogger(__name__)

DEFAULT_T = 25
DEFAULT_EPS_UNKNOWN = 0.1
DEFAULT_EPS_KNOWN = 1.0


class FwAborted(RuntimeError):
    """An iteration failed; ``trace`` holds the records completed before it."""

    def __init__(self, t: int, cause: Exception, trace: list):
        self.t = t
        self.trace = trace
        super().__init__(f"FW-EG aborted at iteration {t}: {cause}")


def step_size(t: int) -> float:
    """``2 / (t + 2)``: 1 at t = 0, so the first step replaces the initial classifier."""
    return 2.0 / (t + 2.0)


@dataclass
class TraceRecord:
    t: int
    step: float
    psi: float
    c: list
    beta: Optional[list]
    shifted: bool
    alpha: list
    condition_number: float
    residual: float
    c_tilde: list
    eps: float

    def to_dict(self):
        return asdict(self)


@dataclass
class FwState:
    t: int
    h: RandomizedClassifier
    c: np.ndarray
    component_c: List[np.ndarray]
    trace: List[TraceRecord] = field(default_factory=list)

    def recomputed_c(self) -> np.ndarray:
        return sum(w * cc for w, cc in zip(self.h.weights, self.component_c))


def fw_step(state: FwState, f_hat, c_tilde) -> FwState:
    """Move the iterate toward ``f_hat`` with step ``2 / (t + 2)``."""
    s = step_size(state.t)
    c_tilde = np.asarray(c_tilde, dtype=float)
    h = mix(f_hat, state.h, s)
    comp = [c_tilde] if s > 0 else []
    comp += [cc for w, cc in zip(state.h.weights, state.component_c) if (1.0 - s) * w > 0]
    c = (1.0 - s) * state.c + s * c_tilde
    return FwState(t=state.t + 1, h=h, c=c, component_c=comp, trace=list(state.trace))


class _Memo:
    """Caches a classifier's predictions per dataset within one iteration."""

    def __init__(self, h):
        self.h = h
        self._cache = weakref.WeakKeyDictionary()

    def proba(self, ds):
        p = self._cache.get(ds)
        if p is None:
            p = self.h.proba(ds)
            self._cache[ds] = p
        return p


@dataclass
class FwResult:
    classifier: RandomizedClassifier
    trace: List[TraceRecord]
    state: FwState
    elicit_val: Dataset
    measure_val: Dataset
    elicit_idx: np.ndarray
    measure_idx: np.ndarray

    def write_trace(self, path) -> None:
        write_trace(path, self.trace)


def write_trace(path, trace) -> None:
    with Path(path).open("w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def split_validation(val: Dataset, split_mode: str, rng: np.random.Generator):
    """Index sets used for elicitation and for measuring confusions."""
    idx = np.arange(val.n)
    if split_mode == "shared":
        return idx, idx
    if split_mode != "halved":
        raise ValueError(f"unknown split mode {split_mode!r}")
    if val.n < 2:
        raise ValueError("halved split needs at least two validation examples")
    perm = rng.permutation(val.n)
    k = math.ceil(val.n / 2)
    return np.sort(perm[:k]), np.sort(perm[k:])


def fw_eg(
    metric: Metric,
    basis: BasisSet,
    train: Dataset,
    val: Dataset,
    T: int = DEFAULT_T,
    eps: Optional[float] = None,
    split_mode: str = "shared",
    known: Optional[bool] = None,
    h0=None,
    probe_kind: str = "fixed",
    reg: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    unknown_system: str = "differenced",
    callback: Optional[Callable[[FwState], None]] = None,
) -> FwResult:
    """Run FW-EG for ``T`` iterations and return the final randomized classifier.

    ``known`` defaults to whether ``metric`` has a closed-form gradient. The
    initial classifier defaults to the plain argmax of the training model.

    Without a gradient the metric is probed around the current iterate and
    shifted by its value there. ``unknown_system="differenced"`` also
    subtracts the iterate's training statistics from every system row, so
    the shifted values are matched by a linear form in the confusion
    change. ``"literal"`` keeps the raw rows, which forces a linear form to
    absorb a constant offset and distorts the elicited weights.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    known = metric.closed_form if known is None else known
    if known and not metric.closed_form:
        raise ValueError("known-gradient path needs a closed-form metric")
    if unknown_system not in ("differenced", "literal"):
        raise ValueError(f"unknown_system must be 'differenced' or 'literal', got {unknown_system!r}")
    if eps is None:
        eps = DEFAULT_EPS_KNOWN if known else DEFAULT_EPS_UNKNOWN
    rng = rng if rng is not None else np.random.default_rng(0)

    e_idx, m_idx = split_validation(val, split_mode, rng)
    elicit_val = val if split_mode == "shared" else val.subset(e_idx)
    measure_val = val if split_mode == "shared" else val.subset(m_idx)
    priors = measure_val.priors()

    h0 = h0 if h0 is not None else PostShiftRule.from_class_weights(np.ones(train.m))
    c0 = confusion(measure_val, h0).diag
    state = FwState(t=0, h=as_randomized(h0), c=c0, component_c=[c0])

    for t in range(T):
        h_t = _Memo(state.h)
        try:
            center = None
            if known:
                psi = metric.diag_value(state.c, priors)
                beta = grad_metric(metric, state.c, priors)
                lin = LinearMetric(beta)
            else:
                psi = metric.evaluate(elicit_val, h_t.proba(elicit_val))
                beta = None
                lin = ShiftedMetric(metric, psi)
                center = h_t if unknown_system == "differenced" else None
            f_hat = pi_ew(
                lin, basis, train, elicit_val, base=h_t, eps=eps, probe_kind=probe_kind, reg=reg, rng=rng, center=center
            )
        except Exception as exc:  # noqa: BLE001 - surfaced with the partial trace
            raise FwAborted(t, exc, state.trace) from exc
        c_tilde = confusion(measure_val, f_hat).diag
        res = f_hat.elicitation
        rec = TraceRecord(
            t=t,
            step=step_size(t),
            psi=float(psi),
            c=state.c.tolist(),
            beta=None if beta is None else np.asarray(beta).tolist(),
            shifted=not known,
            alpha=res.alpha.tolist(),
            condition_number=res.condition_number,
            residual=res.residual,
            c_tilde=c_tilde.tolist(),
            eps=eps,
        )
        state = fw_step(state, f_hat, c_tilde)
        state.trace.append(rec)
        log.debug("fw-eg t=%d psi=%.5f cond=%.3g", t, psi, res.condition_number)
        if callback is not None:
            callback(state)

    return FwResult(
        classifier=state.h,
        trace=state.trace,
        state=state,
        elicit_val=elicit_val,
        measure_val=measure_val,
        elicit_idx=e_idx,
        measure_idx=m_idx,
    )
