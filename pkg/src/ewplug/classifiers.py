"""Deterministic rules and finite mixtures of them.

A classifier is anything with ``proba(dataset) -> (n, m)`` returning a
per-example distribution over classes. Deterministic rules also expose
``predict``. Mixtures are evaluated exactly by linearity; nothing here
samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset

WEIGHT_TOL = 1e-9


class DeterministicRule:
    """Base class for rules mapping each example to one class."""

    def predict(self, ds: Dataset) -> np.ndarray:
        raise NotImplementedError

    def proba(self, ds: Dataset) -> np.ndarray:
        return np.eye(ds.m)[self.predict(ds)]

    def key(self) -> Optional[Hashable]:
        """Hashable identity used when compacting mixtures; None = never merge."""
        return None


@dataclass(frozen=True)
class ConstantRule(DeterministicRule):
    cls: int

    def predict(self, ds):
        if not 0 <= self.cls < ds.m:
            raise ValueError(f"class {self.cls} out of range for m={ds.m}")
        return np.full(ds.n, self.cls, dtype=np.int64)

    def key(self):
        return ("constant", self.cls)


class ArgmaxRule(DeterministicRule):
    """Plain argmax of the dataset's probability model (lowest index on ties)."""

    def predict(self, ds):
        return ds.eta.argmax(axis=1)

    def key(self):
        return ("argmax",)


@dataclass(frozen=True, eq=False)
class AssignmentRule(DeterministicRule):
    """Predictions frozen on one dataset; cannot be re-materialized elsewhere."""

    assignment: np.ndarray
    dataset: Dataset

    def predict(self, ds):
        if ds is not self.dataset:
            raise ValueError("assignment rule is bound to a different dataset")
        return np.asarray(self.assignment, dtype=np.int64)

    def key(self):
        return ("assignment", id(self.dataset), np.asarray(self.assignment).tobytes())


@dataclass(frozen=True, eq=False)
class CellRule(DeterministicRule):
    """Piecewise-constant rule over cells of the probability model.

    A row falls in cell ``(k, b)`` where ``k`` is the argmax class of its
    class-probability estimate and ``b`` the bin of that top probability
    against ``cuts``. ``table[k, b]`` is the predicted class.
    """

    table: np.ndarray
    cuts: np.ndarray

    def predict(self, ds):
        eta = ds.eta
        top = eta.argmax(axis=1)
        b = np.searchsorted(self.cuts, eta[np.arange(ds.n), top], side="right")
        return np.asarray(self.table, dtype=np.int64)[top, b]

    def key(self):
        return ("cells", self.table.tobytes(), self.cuts.tobytes())


@dataclass(frozen=True, eq=False)
class RandomizedClassifier:
    """Convex combination of classifiers ``sum_c weight_c * rule_c``."""

    components: Tuple[Tuple[float, object], ...]

    def __post_init__(self):
        comps = tuple((float(w), r) for w, r in self.components)
        if not comps:
            raise ValueError("a randomized classifier needs at least one component")
        ws = np.array([w for w, _ in comps])
        if np.any(ws < -WEIGHT_TOL) or abs(ws.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"component weights must be a distribution, got sum {ws.sum()!r}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, rule) -> "RandomizedClassifier":
        return cls(((1.0, rule),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def rules(self) -> list:
        return [r for _, r in self.components]

    def proba(self, ds: Dataset) -> np.ndarray:
        out = np.zeros((ds.n, ds.m))
        for w, r in self.components:
            if w:
                out += w * r.proba(ds)
        return out

    def compact(self) -> "RandomizedClassifier":
        """Merge components whose rules share a key and drop zero weights."""
        merged: dict = {}
        order = []
        for w, r in self.components:
            if w == 0.0:
                continue
            k = r.key() if hasattr(r, "key") else None
            k = ("id", id(r)) if k is None else k
            if k in merged:
                merged[k] = (merged[k][0] + w, merged[k][1])
            else:
                merged[k] = (w, r)
                order.append(k)
        total = sum(merged[k][0] for k in order)
        return RandomizedClassifier(tuple((merged[k][0] / total, merged[k][1]) for k in order))


def uniform_classifier(m: int) -> RandomizedClassifier:
    return RandomizedClassifier(tuple((1.0 / m, ConstantRule(i)) for i in range(m)))


def as_randomized(h) -> RandomizedClassifier:
    return h if isinstance(h, RandomizedClassifier) else RandomizedClassifier.single(h)


def mix(h1, h2, w: float) -> RandomizedClassifier:
    """Return ``w * h1 + (1 - w) * h2`` as a flat component list."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"mixing weight must lie in [0, 1], got {w}")
    a, b = as_randomized(h1), as_randomized(h2)
    comps = [(w * cw, r) for cw, r in a.components if w * cw > 0]
    comps += [((1.0 - w) * cw, r) for cw, r in b.components if (1.0 - w) * cw > 0]
    total = sum(c for c, _ in comps)
    return RandomizedClassifier(tuple((c / total, r) for c, r in comps))


@dataclass(frozen=True, eq=False)
class ProbeClassifier:
    """``eps * phi_l(x) * onehot(cls) + (1 - eps * phi_l(x)) * base(x)``."""

    base: object
    basis: object
    index: int
    cls: int
    eps: float

    def proba(self, ds: Dataset) -> np.ndarray:
        lam = self.eps * self.basis.evaluate(ds)[:, self.index]
        out = (1.0 - lam)[:, None] * self.base.proba(ds)
        out[:, self.cls] += lam
        return out


@dataclass(frozen=True, eq=False)
class BlendClassifier:
    """``eps * target + (1 - eps) * base`` for arbitrary classifiers."""

    target: object
    base: object
    eps: float

    def proba(self, ds: Dataset) -> np.ndarray:
        if self.eps == 1.0:
            return self.target.proba(ds)
        return self.eps * self.target.proba(ds) + (1.0 - self.eps) * self.base.proba(ds)


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-row total-variation distance between two prediction matrices."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)


def materialize(h, datasets: Sequence[Dataset]) -> list:
    return [h.proba(ds) for ds in datasets]
