"""Plug-in post-shift classifiers built from elicited example weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisSet, basis_from_config, constant_basis
from .classifiers import AssignmentRule, DeterministicRule
from .data import Dataset, ProbabilityModel
from .elicitation import ElicitationResult, WeightCoefficients, elicit

TIE_BREAK = "lowest-class-index"


@dataclass(frozen=True, eq=False)
class PostShiftRule(DeterministicRule):
    """``argmax_i W_i(x) eta_i(x)``, or ``argmax_j sum_i W_ij(x) eta_i(x)`` in full mode.

    ``eta`` is read from the dataset's probability model. Ties go to the
    lowest class index.
    """

    coefficients: WeightCoefficients
    elicitation: Optional[ElicitationResult] = field(default=None, compare=False)

    @classmethod
    def from_class_weights(cls, w) -> "PostShiftRule":
        w = np.asarray(w, dtype=float)
        return cls(WeightCoefficients(w[None, :], constant_basis(), "diagonal"))

    @property
    def mode(self) -> str:
        return self.coefficients.mode

    def scores(self, ds: Dataset, eta: Optional[np.ndarray] = None) -> np.ndarray:
        eta = ds.eta if eta is None else np.asarray(eta)
        if eta.shape != (ds.n, ds.m):
            raise ValueError(f"probabilities of shape {eta.shape} do not match dataset ({ds.n}, {ds.m})")
        W = self.coefficients.weights(ds)
        if self.mode == "diagonal":
            return W * eta
        return np.einsum("nij,ni->nj", W, eta)

    def predict(self, ds, eta=None):
        # np.argmax returns the first maximum, i.e. the lowest class index
        return self.scores(ds, eta).argmax(axis=1)

    def key(self):
        return ("postshift", self.mode, id(self.coefficients.basis), self.coefficients.alpha.tobytes())

    def to_dict(self) -> dict:
        return {
            "kind": "post-shift",
            "mode": self.mode,
            "alpha": self.coefficients.alpha.tolist(),
            "basis": self.coefficients.basis.describe(),
            "tie_break": TIE_BREAK,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PostShiftRule":
        basis = basis_from_config(d["basis"])
        return cls(WeightCoefficients(np.asarray(d["alpha"]), basis, d["mode"]))


def pi_ew(
    metric,
    basis: BasisSet,
    train: Dataset,
    val: Dataset,
    base=None,
    eps: float = 1.0,
    mode: str = "diagonal",
    probe_kind: str = "fixed",
    **kwargs,
) -> PostShiftRule:
    """Elicit weights for a linear ``metric`` and return the plug-in rule.

    ``train`` must carry the pre-trained probability model; the rule reads
    it from whatever dataset it is applied to.
    """
    res = elicit(metric, basis, train, val, base=base, eps=eps, mode=mode, probe_kind=probe_kind, **kwargs)
    return PostShiftRule(res.coefficients, elicitation=res)


def apply_rule(rule: PostShiftRule, dataset: Dataset, eta=None) -> AssignmentRule:
    """Materialize ``rule`` on ``dataset`` (probabilities from ``eta`` or the dataset)."""
    if isinstance(eta, ProbabilityModel):
        eta = eta.probs
    if eta is not None and np.asarray(eta).shape[0] != dataset.n:
        raise ValueError(f"{np.asarray(eta).shape[0]} probability rows for {dataset.n} examples")
    return AssignmentRule(rule.predict(dataset, eta), dataset)


def weighted_objective(ds: Dataset, W: np.ndarray, predictions) -> float:
    """``(1/n) sum W_y(x) h_y(x)`` for per-example weights ``W`` of shape (n, m)."""
    p = np.asarray(predictions)
    if p.ndim == 1:
        p = np.eye(ds.m)[p]
    idx = np.arange(ds.n)
    return float(np.sum(W[idx, ds.labels] * p[idx, ds.labels]) / ds.n)
