"""Eliciting example-weight coefficients by probing a metric.

Each probing classifier contributes one linear equation: its basis-weighted
confusions on the training sample (a row of ``sigma``) must reproduce its
metric value on the validation sample (an entry of ``rhs``). Solving the
square system gives coefficients ``alpha`` of the weight model
``W_i(x) = sum_l alpha[l, i] phi_l(x)`` (diagonal mode) or
``W_ij(x) = sum_l alpha[l, i, j] phi_l(x)`` (full mode). Flattening is
basis-major: index ``l * m + i`` (or ``(l * m + i) * m + j``).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import BasisSet
from .classifiers import (
    BlendClassifier,
    DeterministicRule,
    ProbeClassifier,
    ArgmaxRule,
    uniform_classifier,
)
from .data import Dataset, phi_confusions, phi_confusions_full

log = logging.getLogger(__name__)

EPS_GRID = (1.0, 0.4, 1e-1, 1e-2, 1e-3, 1e-4)
ILL_CONDITIONED = 1e8
WELL_CONDITIONED = 1e6
MAX_PROBE_RETRIES = 50
AUTO_RANK_TOL = 1e-10


class IllConditionedWarning(RuntimeWarning):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


class ElicitationError(RuntimeError):
    pass


class InfeasibleProbesError(ElicitationError):
    def __init__(self, report):
        self.report = report
        bad = [r for r in report if not r["feasible"]]
        names = ", ".join(f"{r['key']} (diag={r['diag']:.4g}, max_off={r['max_off']:.4g})" for r in bad[:5])
        super().__init__(f"{len(bad)} probing classifier(s) violate the constraints: {names}")


@dataclass
class WeightCoefficients:
    alpha: np.ndarray
    basis: BasisSet
    mode: str = "diagonal"

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        L = self.basis.L
        if self.mode == "diagonal":
            if a.ndim == 1:
                if a.size % L:
                    raise ValueError("alpha length does not match the basis")
                a = a.reshape(L, -1)
            if a.ndim != 2 or a.shape[0] != L:
                raise ValueError(f"diagonal alpha must have shape (L, m), got {a.shape}")
        elif self.mode == "full":
            if a.ndim == 1:
                m = int(round((a.size / L) ** 0.5))
                if L * m * m != a.size:
                    raise ValueError("alpha length does not match L * m^2")
                a = a.reshape(L, m, m)
            if a.ndim != 3 or a.shape[0] != L or a.shape[1] != a.shape[2]:
                raise ValueError(f"full alpha must have shape (L, m, m), got {a.shape}")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.alpha = a

    @property
    def m(self) -> int:
        return self.alpha.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.alpha.ravel()

    def weights(self, ds: Dataset) -> np.ndarray:
        """Per-example weights: ``(n, m)`` or ``(n, m, m)`` in full mode."""
        phi = self.basis.evaluate(ds)
        if self.mode == "diagonal":
            return phi @ self.alpha
        return np.einsum("nl,lij->nij", phi, self.alpha)

    def scaled(self, lam: float) -> "WeightCoefficients":
        return WeightCoefficients(self.alpha * lam, self.basis, self.mode)


@dataclass
class ProbingSet:
    classifiers: list
    keys: list
    construction: dict
    feasibility: Optional[list] = None

    def __len__(self):
        return len(self.classifiers)

    @property
    def feasible(self) -> bool:
        return self.feasibility is None or all(r["feasible"] for r in self.feasibility)


@dataclass
class ElicitationResult:
    alpha: np.ndarray
    sigma: np.ndarray
    rhs: np.ndarray
    condition_number: float
    residual: float
    reg: float = 0.0
    coefficients: Optional[WeightCoefficients] = None
    probes: Optional[ProbingSet] = field(default=None, repr=False)
    eps: Optional[float] = None

    @property
    def probe_values(self) -> np.ndarray:
        return self.rhs

    def recomputed_residual(self) -> float:
        return float(np.linalg.norm(self.sigma @ self.alpha - self.rhs))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "condition_number": self.condition_number,
            "residual": self.residual,
            "reg": self.reg,
            "eps": self.eps,
            "probe_values": self.rhs.tolist(),
            "mode": None if self.coefficients is None else self.coefficients.mode,
            "probe_construction": None if self.probes is None else self.probes.construction,
        }


# --- probing classifiers ----------------------------------------------------


def default_base(train: Dataset):
    """Argmax of the training probabilities, or uniform guessing without them.

    A uniform base makes fixed probes singular whenever two or more basis
    functions partition the input space: the probes of every basis function
    then sum to the same all-ones classifier.
    """
    return ArgmaxRule() if train.probs is not None else uniform_classifier(train.m)


def build_fixed_probes(basis: BasisSet, base, eps: float, dataset: Optional[Dataset] = None, m: Optional[int] = None) -> ProbingSet:
    """``h^{l,i}(x) = eps phi_l(x) e_i + (1 - eps phi_l(x)) base(x)`` for every (l, i)."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    if m is None:
        if dataset is None:
            raise ValueError("pass the dataset or the class count")
        m = dataset.m
    if dataset is not None:
        basis.evaluate(dataset)
    probes, keys = [], []
    for l in range(basis.L):
        for i in range(m):
            probes.append(ProbeClassifier(base, basis, l, i, eps))
            keys.append((l, i))
    return ProbingSet(probes, keys, {"kind": "fixed", "eps": eps})


@dataclass(frozen=True, eq=False)
class PerClusterRule(DeterministicRule):
    """A rule with one sub-rule per disjoint cluster.

    Sub-rules: ``("const", i)``; ``("threshold", tau)`` predicting class 1
    when ``eta_1(x) <= tau``; ``("argmin", w)`` predicting
    ``argmin_j w_j eta_j(x)``. Rows outside every cluster get the plain
    argmax of ``eta``.
    """

    basis: BasisSet
    parts: tuple

    def predict(self, ds):
        g = self.basis.cluster_of(ds)
        eta = ds.eta if any(p[0] != "const" for p in self.parts) or np.any(g < 0) else None
        out = np.empty(ds.n, dtype=np.int64)
        if np.any(g < 0):
            out[g < 0] = eta[g < 0].argmax(axis=1)
        for c, (kind, param) in enumerate(self.parts):
            rows = g == c
            if not rows.any():
                continue
            if kind == "const":
                out[rows] = param
            elif kind == "threshold":
                out[rows] = (eta[rows, 1] <= param).astype(np.int64)
            elif kind == "argmin":
                out[rows] = (eta[rows] * np.asarray(param)).argmin(axis=1)
            else:
                raise ValueError(kind)
        return out

    def key(self):
        return ("per-cluster", id(self.basis), repr(self.parts))


def _threshold_search(eta1: np.ndarray, y: np.ndarray, n: int, step: float):
    """Threshold minimizing max(Phi_0, Phi_1) of ``1(eta1 <= tau)`` on one cluster."""
    qs = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    taus = np.concatenate([[-np.inf], np.quantile(eta1, qs)]) if eta1.size else np.array([-np.inf])
    neg = np.sort(eta1[y == 0])
    pos = np.sort(eta1[y == 1])
    # class 0 correct when eta1 > tau; class 1 correct when eta1 <= tau
    phi0 = (neg.size - np.searchsorted(neg, taus, side="right")) / n
    phi1 = np.searchsorted(pos, taus, side="right") / n
    worst = np.maximum(phi0, phi1)
    best = worst.min()
    cand = taus[worst == best]
    return float(cand.min()), float(best)


def _pairwise_weight_search(eta: np.ndarray, y: np.ndarray, n: int, m: int, step: float) -> np.ndarray:
    """Per-class weights (last class fixed to 1) for an argmin rule on one cluster."""
    w = np.ones(m)
    zetas = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    for i in range(m - 1):
        # h^zeta predicts i where zeta eta_i < (1 - zeta) eta_m, else m
        pick_i = zetas[None, :] * eta[:, [i]] < (1 - zetas[None, :]) * eta[:, [m - 1]]
        phi_i = (pick_i & (y == i)[:, None]).sum(axis=0) / n
        phi_m = (~pick_i & (y == m - 1)[:, None]).sum(axis=0) / n
        worst = np.maximum(phi_i, phi_m)
        z = zetas[np.argmax(worst == worst.min())]
        w[i] = z / (1 - z) if z < 1 else 1.0 / step
    return w


def build_threshold_probes(
    basis: BasisSet,
    train: Dataset,
    gamma: float,
    omega: float,
    base=None,
    eps: float = 1.0,
    step: float = 1e-3,
    strict: bool = False,
) -> ProbingSet:
    """Constraint-targeting probes for disjoint cluster bases.

    Probe ``(l, i)`` predicts ``i`` on cluster ``l``; on every other cluster
    it uses a rule tuned to keep all that cluster's diagonal confusions
    small (a threshold on ``eta_1`` for two classes, an argmin post-shift
    found by pairwise line searches otherwise). Constraints
    ``Phi[l, i] >= gamma`` and ``Phi[l', i'] <= omega`` are checked on the
    final probe and reported per probe.
    """
    if not gamma > omega > 0:
        raise ValueError("need gamma > omega > 0")
    if not basis.is_disjoint_clusters:
        raise ValueError("threshold probes need a disjoint cluster basis")
    g = basis.cluster_of(train)
    m, n = train.m, train.n
    eta = train.eta
    tuned = []
    for c in range(basis.L):
        rows = g == c
        if m == 2:
            tau, _ = _threshold_search(eta[rows, 1], train.labels[rows], n, step)
            tuned.append(("threshold", tau))
        else:
            w = _pairwise_weight_search(eta[rows], train.labels[rows], n, m, step)
            tuned.append(("argmin", tuple(float(v) for v in w)))

    base = base if base is not None else default_base(train)
    probes, keys, report = [], [], []
    for l in range(basis.L):
        for i in range(m):
            parts = tuple(("const", i) if c == l else tuned[c] for c in range(basis.L))
            rule = PerClusterRule(basis, parts)
            probe = rule if eps == 1.0 else BlendClassifier(rule, base, eps)
            P = phi_confusions(train, basis, probe)
            off = P.copy()
            off[l, i] = -np.inf
            max_off = float(off.max()) if off.size > 1 else 0.0
            ok = P[l, i] >= gamma and max_off <= omega
            report.append({"key": (l, i), "diag": float(P[l, i]), "max_off": max_off, "feasible": bool(ok)})
            probes.append(probe)
            keys.append((l, i))
    pset = ProbingSet(
        probes,
        keys,
        {"kind": "cluster-threshold", "gamma": gamma, "omega": omega, "eps": eps, "step": step},
        feasibility=report,
    )
    if strict and not pset.feasible:
        raise InfeasibleProbesError(report)
    return pset


def required_omega(pset: ProbingSet, omega: float, step: float = 0.01) -> float:
    """Smallest ``omega + k * step`` that the probes' off-diagonals satisfy."""
    need = max(r["max_off"] for r in pset.feasibility)
    if need <= omega:
        return omega
    return omega + step * np.ceil((need - omega) / step - 1e-12)


@dataclass(frozen=True, eq=False)
class RandomCellRule(DeterministicRule):
    """Random class per cell of (dominant basis, argmax class, confidence bin)."""

    basis: BasisSet
    table: np.ndarray
    cuts: np.ndarray

    def predict(self, ds):
        eta = ds.eta
        dom = self.basis.evaluate(ds).argmax(axis=1)
        top = eta.argmax(axis=1)
        b = np.searchsorted(self.cuts, eta[np.arange(ds.n), top], side="right")
        return self.table[dom, top, b]

    def key(self):
        return ("random-cell", id(self.basis), self.table.tobytes(), self.cuts.tobytes())


def build_random_probes(
    basis: BasisSet,
    base,
    eps: float,
    train: Dataset,
    rng: np.random.Generator,
    n_bins: int = 2,
    max_cond: float = WELL_CONDITIONED,
    max_retries: int = MAX_PROBE_RETRIES,
) -> ProbingSet:
    """Full-matrix probes: eps-blends of ``base`` toward random cell rules.

    Resamples the whole set until the system matrix has condition number
    below ``max_cond``; gives up after ``max_retries`` draws.
    """
    m, L = train.m, basis.L
    base = base if base is not None else default_base(train)
    top = train.eta.max(axis=1)
    best = None
    for attempt in range(1, max_retries + 1):
        cuts = np.sort(np.quantile(top, rng.uniform(0.05, 0.95, size=n_bins - 1)))
        probes, keys = [], []
        for l in range(L):
            for i in range(m):
                for j in range(m):
                    table = rng.integers(0, m, size=(L, m, n_bins))
                    probes.append(BlendClassifier(RandomCellRule(basis, table, cuts), base, eps))
                    keys.append((l, i, j))
        pset = ProbingSet(probes, keys, {"kind": "random-cells", "eps": eps, "attempt": attempt})
        sigma = system_matrix(pset, basis, train, mode="full")
        cond = _condition(np.linalg.svd(sigma, compute_uv=False), structural_rank(L, m, "full"))
        if best is None or cond < best[0]:
            best = (cond, pset)
        if cond < max_cond:
            return pset
    raise ElicitationError(
        f"no well-conditioned full-matrix probe set after {max_retries} draws (best condition number {best[0]:.3g})"
    )


# --- linear system ------------------------------------------------------------


def system_matrix(probes: ProbingSet, basis: BasisSet, train: Dataset, mode: str = "diagonal") -> np.ndarray:
    stat = phi_confusions if mode == "diagonal" else phi_confusions_full
    rows = [stat(train, basis, h).ravel() for h in probes.classifiers]
    return np.vstack(rows)


def assemble_system(probes: ProbingSet, basis: BasisSet, train: Dataset, metric_values, mode: str = "diagonal"):
    """Stack probe statistics into ``(sigma, rhs)``."""
    rhs = np.asarray(metric_values, dtype=float)
    if rhs.shape != (len(probes),):
        raise ValueError(f"{len(probes)} probes but {rhs.size} metric values")
    bad = np.flatnonzero(~np.isfinite(rhs))
    if bad.size:
        raise ElicitationError(f"metric value at probe {probes.keys[bad[0]]} is {rhs[bad[0]]}")
    sigma = system_matrix(probes, basis, train, mode)
    if sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"system is {sigma.shape}, not square")
    return sigma, rhs


def structural_rank(L: int, m: int, mode: str = "diagonal") -> int:
    """Largest attainable rank of the probe system.

    In full mode every classifier's row obeys ``sum_j Phi[l, i, j] = pi[l, i]``,
    which caps the rank at ``L m^2 - L m + 1``.
    """
    return L * m if mode == "diagonal" else L * m * m - L * m + 1


def _condition(s: np.ndarray, rank: int) -> float:
    return float(s[0] / s[rank - 1]) if s[rank - 1] > 0 else float("inf")


def solve_alpha(sigma, rhs, reg: float = 0.0, warn_above: float = ILL_CONDITIONED, rank=None) -> ElicitationResult:
    """Solve ``sigma alpha = rhs`` (or its ridge normal equations when ``reg > 0``).

    With ``rank`` below the system size the minimum-norm solution on the
    leading ``rank`` singular directions is returned, and the condition
    number is taken over those directions only. ``rank="auto"`` drops
    singular values below ``1e-10`` of the largest.
    """
    sigma = np.asarray(sigma, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be square")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    k = sigma.shape[0]
    U, s, Vt = np.linalg.svd(sigma)
    if rank == "auto":
        rank = max(1, int(np.sum(s > s[0] * AUTO_RANK_TOL)))
        if rank < k:
            log.warning("probe system has rank %d of %d; returning the minimum-norm solution", rank, k)
    rank = k if rank is None else rank
    cond = _condition(s, rank)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        if reg == 0:
            raise SingularSystemError(
                f"probe system is singular (condition number {cond:.3g}); "
                "increase eps, drop basis functions that carry no training mass, or pass reg > 0"
            )
    if cond > warn_above:
        warnings.warn(f"probe system is ill-conditioned (condition number {cond:.3g})", IllConditionedWarning, stacklevel=2)
    if reg > 0:
        A = sigma.T @ sigma + reg * np.eye(k)
        alpha = np.linalg.solve(A, sigma.T @ rhs)
    elif rank < k:
        alpha = Vt[:rank].T @ ((U[:, :rank].T @ rhs) / s[:rank])
    else:
        alpha = np.linalg.solve(sigma, rhs)
    residual = float(np.linalg.norm(sigma @ alpha - rhs))
    return ElicitationResult(alpha=alpha, sigma=sigma, rhs=rhs, condition_number=cond, residual=residual, reg=reg)


def probe_values(metric, probes: ProbingSet, val: Dataset) -> np.ndarray:
    return np.array([metric.evaluate(val, h.proba(val)) for h in probes.classifiers])


def make_probes(
    basis: BasisSet,
    train: Dataset,
    base=None,
    eps: float = 1.0,
    mode: str = "diagonal",
    probe_kind: str = "fixed",
    gamma: float = 0.05,
    omega: float = 0.01,
    rng: Optional[np.random.Generator] = None,
) -> ProbingSet:
    base = base if base is not None else default_base(train)
    if mode == "full":
        return build_random_probes(basis, base, eps, train, rng if rng is not None else np.random.default_rng(0))
    if probe_kind == "fixed":
        return build_fixed_probes(basis, base, eps, train)
    if probe_kind == "threshold":
        return build_threshold_probes(basis, train, gamma, omega, base=base, eps=eps)
    raise ValueError(f"unknown probe kind {probe_kind!r}")


def elicit(
    metric,
    basis: BasisSet,
    train: Dataset,
    val: Dataset,
    base=None,
    eps: float = 1.0,
    mode: str = "diagonal",
    probe_kind: str = "fixed",
    reg: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    gamma: float = 0.05,
    omega: float = 0.01,
    probes: Optional[ProbingSet] = None,
    rank=None,
    center=None,
) -> ElicitationResult:
    """Probe ``metric`` on ``val`` and solve for the weight coefficients.

    ``base`` defaults to :func:`default_base`. Pass ``probes`` to
    reuse a prebuilt probing set. With ``center`` every system row becomes
    the probe's statistics minus those of ``center``; pair it with a metric
    shifted by its value at ``center`` to elicit a local linearization
    without an intercept.
    """
    if probes is None:
        probes = make_probes(basis, train, base, eps, mode, probe_kind, gamma, omega, rng)
    values = probe_values(metric, probes, val)
    sigma, rhs = assemble_system(probes, basis, train, values, mode)
    if center is not None:
        stat = phi_confusions if mode == "diagonal" else phi_confusions_full
        sigma = sigma - stat(train, basis, center).ravel()[None, :]
    if rank is None and mode == "full":
        rank = structural_rank(basis.L, train.m, mode)
    res = solve_alpha(sigma, rhs, reg=reg, rank=rank)
    res.coefficients = WeightCoefficients(res.alpha, basis, mode)
    res.probes = probes
    res.eps = eps
    return res


def select_epsilon(
    basis: BasisSet,
    train: Dataset,
    base=None,
    grid: Sequence[float] = EPS_GRID,
    max_cond: float = WELL_CONDITIONED,
) -> float:
    """Smallest eps in ``grid`` whose fixed-probe system has condition number below ``max_cond``.

    Needs no metric queries. Falls back to the best-conditioned eps.
    """
    base = base if base is not None else default_base(train)
    conds = {}
    for eps in grid:
        sigma = system_matrix(build_fixed_probes(basis, base, eps, train), basis, train)
        conds[eps] = np.linalg.cond(sigma)
    ok = [e for e, c in conds.items() if c < max_cond]
    if ok:
        return min(ok)
    log.warning("no eps in %s reaches condition number %g; using the best-conditioned one", list(grid), max_cond)
    return min(conds, key=conds.get)

