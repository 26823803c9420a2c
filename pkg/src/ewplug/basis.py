"""Basis functions for the example-weight model.

Each basis function maps an example to [0, 1]. A :class:`BasisSet` evaluates
all of them into an ``(n, L)`` matrix, cached per dataset.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class Constant:
    def __call__(self, ds: Dataset) -> np.ndarray:
        return np.ones(ds.n)

    def describe(self) -> dict:
        return {"kind": "constant"}


@dataclass(frozen=True)
class ClusterIndicator:
    """``1(g(x) = cluster)`` using the dataset's group ids."""

    cluster: int

    def __call__(self, ds):
        if ds.group_ids is None:
            raise ValueError("cluster basis needs group ids on the dataset")
        return (ds.group_ids == self.cluster).astype(float)

    def describe(self):
        return {"kind": "cluster", "cluster": self.cluster}


@dataclass(frozen=True)
class BinaryFeature:
    """``1(x[column] = 1)`` for a 0/1 feature column."""

    column: int

    def __call__(self, ds):
        return (ds.features[:, self.column] == 1).astype(float)

    def describe(self):
        return {"kind": "binary-feature", "column": self.column}


@dataclass(frozen=True, eq=False)
class RBF:
    """``exp(-||x - center|| / (2 width^2))``; the norm is not squared."""

    center: np.ndarray
    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("rbf width must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def __call__(self, ds):
        dist = np.linalg.norm(ds.features - self.center, axis=1)
        return np.exp(-dist / (2.0 * self.width**2))

    def describe(self):
        return {"kind": "rbf", "center": self.center.tolist(), "width": self.width}


class BasisSet:
    """An ordered list of basis functions with a per-dataset cache."""

    def __init__(self, functions: Sequence):
        if not functions:
            raise ValueError("a basis set needs at least one function")
        self.functions = tuple(functions)
        self._cache = weakref.WeakKeyDictionary()

    def __len__(self):
        return len(self.functions)

    @property
    def L(self) -> int:
        return len(self.functions)

    def evaluate(self, ds: Dataset) -> np.ndarray:
        phi = self._cache.get(ds)
        if phi is None:
            phi = np.column_stack([f(ds) for f in self.functions]).astype(float)
            if np.any(phi < 0) or np.any(phi > 1):
                raise ValueError("basis values must lie in [0, 1]")
            phi.setflags(write=False)
            self._cache[ds] = phi
        return phi

    @property
    def is_disjoint_clusters(self) -> bool:
        return all(isinstance(f, ClusterIndicator) for f in self.functions) or (
            self.L == 1 and isinstance(self.functions[0], Constant)
        )

    def cluster_of(self, ds: Dataset) -> np.ndarray:
        """Index of the basis function active on each row (disjoint clusters only)."""
        if not self.is_disjoint_clusters:
            raise ValueError("basis is not a set of disjoint cluster indicators")
        phi = self.evaluate(ds)
        if np.any(phi.sum(axis=1) > 1):
            raise ValueError("cluster indicators overlap")
        out = phi.argmax(axis=1)
        out[phi.sum(axis=1) == 0] = -1
        return out

    def describe(self) -> list:
        return [f.describe() for f in self.functions]

    def __add__(self, other: "BasisSet") -> "BasisSet":
        return BasisSet(self.functions + other.functions)

    def __repr__(self):
        return f"BasisSet({[d['kind'] for d in self.describe()]})"


def constant_basis() -> BasisSet:
    return BasisSet([Constant()])


def cluster_basis(k: int) -> BasisSet:
    return BasisSet([ClusterIndicator(c) for c in range(k)])


def rbf_basis(centers, width: float = 1.0) -> BasisSet:
    return BasisSet([RBF(c, width) for c in np.atleast_2d(centers)])


def basis_from_config(entries: Sequence[dict], reference: Dataset = None, rng=None) -> BasisSet:
    """Build a basis from config entries.

    Entry kinds: ``constant``; ``clusters`` (``k`` indicators over group
    ids); ``cluster``; ``binary-feature``; ``rbf`` with explicit ``centers``
    or ``n_centers`` drawn from ``reference`` rows.
    """
    funcs = []
    for e in entries:
        kind = e["kind"]
        if kind == "constant":
            funcs.append(Constant())
        elif kind == "clusters":
            k = e.get("k")
            if k is None:
                if reference is None or reference.group_ids is None:
                    raise ValueError("clusters basis needs k or a reference dataset with group ids")
                k = int(reference.group_ids.max()) + 1
            funcs += [ClusterIndicator(c) for c in range(k)]
        elif kind == "cluster":
            funcs.append(ClusterIndicator(int(e["cluster"])))
        elif kind == "binary-feature":
            funcs.append(BinaryFeature(int(e["column"])))
        elif kind == "rbf":
            width = float(e.get("width", 1.0))
            if "centers" in e:
                centers = np.atleast_2d(np.asarray(e["centers"], dtype=float))
            else:
                if reference is None or rng is None:
                    raise ValueError("rbf centers must be given or drawn from a reference dataset")
                idx = rng.choice(reference.n, size=int(e["n_centers"]), replace=False)
                centers = reference.features[np.sort(idx)]
            funcs += [RBF(c, width) for c in centers]
        else:
            raise ValueError(f"unknown basis kind {kind!r}")
    return BasisSet(funcs)
