"""Synthetic populations, label-noise and domain-shift corruptions, oracles.

Two generators are supported. A discrete generator is a joint table over a
finite set of feature points and the classes; every statistic of it is
available in closed form. A gaussian mixture has per-class means and one
shared covariance, so its class conditional is a softmax of linear scores.

Corruptions follow four models: label noise with one transition matrix
(``ILN``), with one matrix per cluster (``CDLN``), with a matrix that
depends on the instance (``IDLN``), and a change of the feature marginal
(``DomainShift``). Transition matrices are row-stochastic with
``T[i, j] = P(noisy label j | clean label i)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import expit, softmax
from scipy.stats import multivariate_normal

from .data import ConfusionStats, Dataset

log = logging.getLogger(__name__)

STOCH_TOL = 1e-9


def _check_stochastic(T, name="T") -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.ndim < 2 or T.shape[-1] != T.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {T.shape}")
    if np.any(T < 0) or not np.allclose(T.sum(axis=-1), 1.0, rtol=0, atol=STOCH_TOL):
        raise ValueError(f"{name} must be row-stochastic")
    return T


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# --- generators ---------------------------------------------------------------


@dataclass
class DiscreteSpec:
    """Joint distribution over ``k`` feature points and ``m`` classes."""

    points: np.ndarray
    joint: np.ndarray
    groups: Optional[np.ndarray] = None
    protected: Optional[np.ndarray] = None
    seed: int = 0
    kind = "discrete"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.joint = np.asarray(self.joint, dtype=float)
        if self.joint.ndim != 2 or self.joint.shape[0] != self.points.shape[0]:
            raise ValueError("joint table must have one row per point")
        if np.any(self.joint < 0) or abs(self.joint.sum() - 1.0) > STOCH_TOL:
            raise ValueError("joint table must be nonnegative and sum to 1")
        if np.any(self.joint.sum(axis=1) == 0):
            raise ValueError("every point needs positive mass")
        for name in ("groups", "protected"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.int64))

    @property
    def m(self) -> int:
        return self.joint.shape[1]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def conditional(self) -> np.ndarray:
        return self.joint / self.marginal[:, None]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "points": self.points.tolist(),
            "joint": self.joint.tolist(),
            "groups": None if self.groups is None else self.groups.tolist(),
            "protected": None if self.protected is None else self.protected.tolist(),
            "seed": self.seed,
        }


@dataclass
class GaussianMixtureSpec:
    """Class-conditional gaussians with a shared covariance.

    Cluster ids come from a halfspace: ``x[cluster_axis] > cluster_threshold``
    is cluster 1, the rest cluster 0.
    """

    means: np.ndarray
    cov: np.ndarray
    priors: np.ndarray
    cluster_axis: int = 0
    cluster_threshold: float = 0.0
    seed: int = 0
    kind = "gaussian-mixture"

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        self.priors = np.asarray(self.priors, dtype=float)
        m, d = self.means.shape
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}")
        if self.priors.shape != (m,) or np.any(self.priors <= 0) or abs(self.priors.sum() - 1) > STOCH_TOL:
            raise ValueError("priors must be positive and sum to 1")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is degenerate (not positive definite)") from None

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def conditional_at(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        logp = np.column_stack([multivariate_normal(mu, self.cov).logpdf(x) for mu in self.means])
        return softmax(np.atleast_2d(logp) + np.log(self.priors), axis=1)

    def cluster_of(self, x) -> np.ndarray:
        return (np.atleast_2d(x)[:, self.cluster_axis] > self.cluster_threshold).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "means": self.means.tolist(),
            "cov": self.cov.tolist(),
            "priors": self.priors.tolist(),
            "cluster_axis": self.cluster_axis,
            "cluster_threshold": self.cluster_threshold,
            "seed": self.seed,
        }


SyntheticSpec = Union[DiscreteSpec, GaussianMixtureSpec]


def spec_from_dict(d: dict) -> SyntheticSpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "discrete":
        return DiscreteSpec(**d)
    if kind == "gaussian-mixture":
        return GaussianMixtureSpec(**d)
    raise ValueError(f"unknown generator {kind!r}")


def _discrete_dataset(spec: DiscreteSpec, idx, labels, name) -> Dataset:
    return Dataset(
        features=spec.points[idx],
        labels=labels,
        m=spec.m,
        group_ids=None if spec.groups is None else spec.groups[idx],
        protected_ids=None if spec.protected is None else spec.protected[idx],
        probs=spec.conditional[idx],
        name=name,
    )


def sample_clean(spec: SyntheticSpec, n: int, seed=None, name: str = "clean") -> Dataset:
    """Draw ``n`` i.i.d. examples; ``probs`` holds the exact class conditional."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(spec.seed if seed is None else seed)
    if isinstance(spec, DiscreteSpec):
        cell = rng.choice(spec.joint.size, size=n, p=spec.joint.ravel())
        idx, y = np.divmod(cell, spec.m)
        return _discrete_dataset(spec, idx, y, name)
    y = rng.choice(spec.m, size=n, p=spec.priors)
    chol = np.linalg.cholesky(spec.cov)
    x = spec.means[y] + rng.standard_normal((n, spec.d)) @ chol.T
    return Dataset(x, y, spec.m, group_ids=spec.cluster_of(x), probs=spec.conditional_at(x), name=name)


def exact_dataset(spec: DiscreteSpec, n: int, name: str = "population") -> Dataset:
    """A sample whose empirical distribution equals the joint table exactly.

    ``n * joint`` must be integral (to within 1e-9).
    """
    counts = n * spec.joint
    rounded = np.rint(counts)
    if np.max(np.abs(counts - rounded)) > 1e-9 * max(n, 1):
        raise ValueError(f"n = {n} does not make every joint cell an integer count")
    rounded = rounded.astype(np.int64)
    idx = np.repeat(np.arange(spec.k), rounded.sum(axis=1))
    y = np.concatenate([np.repeat(np.arange(spec.m), row) for row in rounded])
    return _discrete_dataset(spec, idx, y, name)


def population_confusion(spec: DiscreteSpec, h) -> ConfusionStats:
    """Exact confusion matrix of a per-point rule.

    ``h`` is either a length-``k`` vector of predicted classes or a
    ``(k, m)`` matrix of prediction probabilities.
    """
    h = np.asarray(h)
    if h.ndim == 1:
        h = np.eye(spec.m)[h.astype(np.int64)]
    full = spec.joint.T @ h
    return ConfusionStats(full=full, priors=spec.joint.sum(axis=0))


def deterministic_rules(spec: DiscreteSpec):
    """Every map from the ``k`` points to a class (``m ** k`` of them)."""
    for assign in itertools.product(range(spec.m), repeat=spec.k):
        yield np.array(assign, dtype=np.int64)


# --- corruptions --------------------------------------------------------------


@dataclass
class ILN:
    T: np.ndarray
    kind = "iln"

    def __post_init__(self):
        self.T = _check_stochastic(self.T)

    def transitions(self, ds: Dataset) -> np.ndarray:
        return np.broadcast_to(self.T, (ds.n,) + self.T.shape)

    def to_dict(self):
        return {"kind": self.kind, "T": self.T.tolist()}


@dataclass
class CDLN:
    """One transition matrix per cluster, indexed by the dataset's group ids."""

    Ts: np.ndarray
    kind = "cdln"

    def __post_init__(self):
        self.Ts = _check_stochastic(self.Ts, "cluster transition matrices")
        if self.Ts.ndim != 3:
            raise ValueError("CDLN needs a stack of transition matrices (K, m, m)")

    def transitions(self, ds: Dataset) -> np.ndarray:
        if ds.group_ids is None:
            raise ValueError("cluster-dependent noise needs cluster ids on the dataset")
        g = ds.group_ids
        if g.min() < 0 or g.max() >= len(self.Ts):
            raise ValueError(f"cluster ids must lie in 0..{len(self.Ts) - 1}")
        return self.Ts[g]

    def to_dict(self):
        return {"kind": self.kind, "Ts": self.Ts.tolist()}


@dataclass
class IDLN:
    """``T(x) = (1 - s) T0 + s T1`` with ``s = logistic(scale * (x[feature] - offset))``."""

    T0: np.ndarray
    T1: np.ndarray
    feature: int = 0
    scale: float = 1.0
    offset: float = 0.0
    kind = "idln"

    def __post_init__(self):
        self.T0 = _check_stochastic(self.T0, "T0")
        self.T1 = _check_stochastic(self.T1, "T1")
        if self.T0.shape != self.T1.shape:
            raise ValueError("T0 and T1 must have the same shape")

    def mix_weight(self, features) -> np.ndarray:
        return expit(self.scale * (np.atleast_2d(features)[:, self.feature] - self.offset))

    def transitions(self, ds: Dataset) -> np.ndarray:
        s = self.mix_weight(ds.features)[:, None, None]
        return (1 - s) * self.T0 + s * self.T1

    def to_dict(self):
        return {
            "kind": self.kind,
            "T0": self.T0.tolist(),
            "T1": self.T1.tolist(),
            "feature": self.feature,
            "scale": self.scale,
            "offset": self.offset,
        }


@dataclass
class DomainShift:
    """Training features drawn from ``marginal`` over a discrete spec's points.

    Labels keep the generator's class conditional.
    """

    spec: DiscreteSpec
    marginal: np.ndarray
    kind = "ds"

    def __post_init__(self):
        self.marginal = np.asarray(self.marginal, dtype=float)
        if self.marginal.shape != (self.spec.k,):
            raise ValueError("marginal must have one entry per point")
        if np.any(self.marginal <= 0) or abs(self.marginal.sum() - 1) > STOCH_TOL:
            raise ValueError("marginal must be positive and sum to 1")

    def ratio(self) -> np.ndarray:
        """``P^D(x) / P^mu(x)`` per point."""
        return self.spec.marginal / self.marginal

    def to_dict(self):
        return {"kind": self.kind, "marginal": self.marginal.tolist()}


LABEL_NOISE = (ILN, CDLN, IDLN)


def corrupt(clean: Dataset, shift, seed=None, name: str = "corrupted") -> Dataset:
    """Apply a corruption model to a clean sample.

    Label noise resamples each label from its transition row and keeps the
    features. A domain shift redraws the features from the shifted
    marginal and the labels from the clean conditional, keeping ``n``.
    When the clean sample carries its exact conditional the output carries
    the exact conditional of the corrupted population.
    """
    rng = _rng(0 if seed is None else seed)
    if isinstance(shift, LABEL_NOISE):
        T = shift.transitions(clean)
        if T.shape[1:] != (clean.m, clean.m):
            raise ValueError(f"transition matrices are {T.shape[1:]} for {clean.m} classes")
        rows = T[np.arange(clean.n), clean.labels]
        u = rng.random(clean.n)
        y = np.minimum((rows.cumsum(axis=1) < u[:, None]).sum(axis=1), clean.m - 1)
        probs = None if clean.probs is None else np.einsum("ni,nij->nj", clean.eta, T)
        return Dataset(
            clean.features, y, clean.m, clean.group_ids, clean.protected_ids, probs, clean.label_values, name
        )
    if isinstance(shift, DomainShift):
        spec = shift.spec
        if clean.m != spec.m:
            raise ValueError("shift and dataset disagree on the class count")
        idx = rng.choice(spec.k, size=clean.n, p=shift.marginal)
        u = rng.random(clean.n)
        y = np.minimum((spec.conditional[idx].cumsum(axis=1) < u[:, None]).sum(axis=1), spec.m - 1)
        return _discrete_dataset(spec, idx, y, name)
    raise TypeError(f"unknown shift {type(shift).__name__}")


def shifted_spec(spec: DiscreteSpec, shift) -> DiscreteSpec:
    """The training population of a discrete spec under ``shift``, in closed form."""
    if isinstance(shift, DomainShift):
        joint = shift.marginal[:, None] * spec.conditional
    elif isinstance(shift, LABEL_NOISE):
        pts = Dataset(spec.points, np.zeros(spec.k, dtype=np.int64), spec.m, group_ids=spec.groups)
        T = shift.transitions(pts)
        joint = np.einsum("ki,kij->kj", spec.joint, T)
    else:
        raise TypeError(f"unknown shift {type(shift).__name__}")
    return DiscreteSpec(spec.points, joint, spec.groups, spec.protected, spec.seed)


def true_weights(shift, L, ds: Dataset) -> np.ndarray:
    """Exact per-example correction weights ``(n, m, m)`` for the linear metric ``L``.

    Label noise: ``W(x) = T(x)^{-1} L``. Domain shift: ``W(x) = r(x) L`` with
    ``r`` the density ratio of clean to training feature marginals.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = np.diag(L)
    if isinstance(shift, LABEL_NOISE):
        T = shift.transitions(ds)
        if np.any(np.abs(np.linalg.det(T)) < 1e-12):
            raise np.linalg.LinAlgError("transition matrix is singular; no correction weights exist")
        return np.linalg.solve(T, np.broadcast_to(L, T.shape))
    if isinstance(shift, DomainShift):
        idx = _point_index(shift.spec, ds.features)
        return shift.ratio()[idx][:, None, None] * L
    raise TypeError(f"unknown shift {type(shift).__name__}")


def _point_index(spec: DiscreteSpec, features) -> np.ndarray:
    diff = np.abs(np.atleast_2d(features)[:, None, :] - spec.points[None, :, :]).max(axis=2)
    idx = diff.argmin(axis=1)
    if np.any(diff[np.arange(len(idx)), idx] > 1e-12):
        raise ValueError("feature row is not one of the generator's points")
    return idx


def shift_from_dict(d: dict, spec: Optional[SyntheticSpec] = None):
    kind = d["kind"]
    if kind == "iln":
        return ILN(d["T"])
    if kind == "cdln":
        return CDLN(d["Ts"])
    if kind == "idln":
        return IDLN(d["T0"], d["T1"], d.get("feature", 0), d.get("scale", 1.0), d.get("offset", 0.0))
    if kind == "ds":
        if not isinstance(spec, DiscreteSpec):
            raise ValueError("domain shift needs a discrete generator")
        return DomainShift(spec, d["marginal"])
    raise ValueError(f"unknown shift kind {kind!r}")


def flip_matrix(m: int, a: int, b: int, p: float) -> np.ndarray:
    """Swap classes ``a`` and ``b`` with probability ``p``; other classes clean."""
    T = np.eye(m)
    T[a, a] = T[b, b] = 1 - p
    T[a, b] = T[b, a] = p
    return T


def uniform_flip_matrix(m: int, p: float) -> np.ndarray:
    """Flip to each other class with probability ``p / (m - 1)``."""
    return (1 - p) * np.eye(m) + p / (m - 1) * (1 - np.eye(m))


# --- oracles ------------------------------------------------------------------


def weight_grid(m: int, resolution: int) -> np.ndarray:
    """All ``resolution ** m`` per-class weight vectors on ``{1/G, 2/G, ..., 1}``."""
    axis = np.arange(1, resolution + 1) / resolution
    return np.array(list(itertools.product(axis, repeat=m)))


@dataclass
class OracleResult:
    value: float
    weights: np.ndarray
    resolution: int
    exact: bool
    n_mc: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "value": self.value,
            "weights": self.weights.tolist(),
            "resolution": self.resolution,
            "exact": self.exact,
            "n_mc": self.n_mc,
            **self.extra,
        }


def _grid_search(eta: np.ndarray, mass: np.ndarray, metric, resolution: int, batch: int = 16):
    """Score ``argmax(w * eta)`` for every grid ``w``; confusions use ``mass``.

    ``mass[x, i]`` is the probability weight of point ``x`` with label ``i``,
    so the confusion of a rule ``h`` is ``mass.T @ onehot(h)``.
    """
    m = eta.shape[1]
    grid = weight_grid(m, resolution)
    priors = mass.sum(axis=0)
    best_v, best_w = -np.inf, None
    for start in range(0, len(grid), batch):
        W = grid[start : start + batch]
        B = len(W)
        pred = (eta[None, :, :] * W[:, None, :]).argmax(axis=2) + m * np.arange(B)[:, None]
        # full[b, i, j] = mass of label i predicted j under grid point b
        full = np.stack(
            [np.bincount(pred.ravel(), weights=np.tile(mass[:, i], B), minlength=B * m).reshape(B, m) for i in range(m)],
            axis=1,
        )
        for w, F in zip(W, full):
            v = metric.value(ConfusionStats(full=F, priors=priors))
            if v > best_v + 1e-15:
                best_v, best_w = v, w
    return float(best_v), best_w


def bayes_oracle(spec: SyntheticSpec, metric, resolution: int = 20, n_mc: int = 100_000, seed: int = 12345) -> OracleResult:
    """Best metric value over post-shifts ``argmax_i w_i eta_i`` of the true conditional.

    Exact for discrete specs. For gaussian specs confusions are averaged
    over a fixed Monte Carlo feature sample, using the true conditional in
    place of sampled labels.
    """
    if isinstance(spec, DiscreteSpec):
        v, w = _grid_search(spec.conditional, spec.joint, metric, resolution)
        return OracleResult(v, w, resolution, exact=True)
    ds = sample_clean(spec, n_mc, seed=seed)
    v, w = _grid_search(ds.eta, ds.eta / ds.n, metric, resolution)
    return OracleResult(v, w, resolution, exact=False, n_mc=n_mc)


def spec_hash(spec: SyntheticSpec, metric, resolution: int, n_mc: int, seed: int) -> str:
    payload = json.dumps(
        {"spec": spec.to_dict(), "metric": metric.describe(), "resolution": resolution, "n_mc": n_mc, "seed": seed},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cached_oracle(
    spec: SyntheticSpec, metric, cache_dir, resolution: int = 20, n_mc: int = 100_000, seed: int = 12345
) -> OracleResult:
    """:func:`bayes_oracle` memoized as a JSON report keyed by a content hash of the generator, metric and settings."""
    cache_dir = Path(cache_dir)
    key = spec_hash(spec, metric, resolution, n_mc, seed)
    path = cache_dir / f"oracle-{key}.json"
    if path.exists():
        d = json.loads(path.read_text())
        return OracleResult(d["value"], np.asarray(d["weights"]), d["resolution"], d["exact"], d["n_mc"])
    res = bayes_oracle(spec, metric, resolution, n_mc, seed)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, **res.to_dict()}, indent=1))
    return res
