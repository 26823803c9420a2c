"""Named synthetic benchmarks wired end to end.

Each builder returns a :class:`Benchmark` holding the corrupted training
sample (with a fitted probability model), clean validation and test
samples carrying the same model, a default basis, and the generating spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisSet, cluster_basis, constant_basis
from .data import Dataset
from .logistic import cluster_features, fit_softmax
from .shift_lab import (
    CDLN,
    DiscreteSpec,
    DomainShift,
    GaussianMixtureSpec,
    ILN,
    corrupt,
    exact_dataset,
    sample_clean,
    shifted_spec,
    uniform_flip_matrix,
)


@dataclass
class Benchmark:
    name: str
    train: Dataset
    val: Dataset
    test: Dataset
    basis: BasisSet
    spec: object
    shift: object
    info: dict = field(default_factory=dict)


def _streams(seed, k: int = 4):
    """Independent generators for clean sampling, corruption, validation and test draws."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(k)]


# --- discrete domain shift ------------------------------------------------------

DS_CONDITIONAL = np.array([[0.4, 0.6], [0.7, 0.3]])


def ds_spec() -> DiscreteSpec:
    """Points ``a`` (x = 1) and ``b`` (x = 0), clean mass 0.8 / 0.2."""
    return DiscreteSpec([[1.0], [0.0]], np.array([0.8, 0.2])[:, None] * DS_CONDITIONAL, groups=[0, 1])


def ds_shift(spec: Optional[DiscreteSpec] = None) -> DomainShift:
    """Training marginal 0.5 / 0.5, so the density ratio is 1.6 on ``a`` and 0.4 on ``b``."""
    return DomainShift(spec or ds_spec(), [0.5, 0.5])


def ds_discrete(seed: int = 0, n_train: int = 50_000, n_val: int = 5_000, n_test: int = 50_000, exact: bool = False):
    spec = ds_spec()
    shift = ds_shift(spec)
    if exact:
        train = exact_dataset(shifted_spec(spec, shift), 1000, name="train")
        val = exact_dataset(spec, 1000, name="val")
        test = exact_dataset(spec, 1000, name="test")
    else:
        r_clean, r_shift, r_val, r_test = _streams(seed)
        train = corrupt(sample_clean(spec, n_train, seed=r_clean), shift, seed=r_shift, name="train")
        val = sample_clean(spec, n_val, seed=r_val, name="val")
        test = sample_clean(spec, n_test, seed=r_test, name="test")
    return Benchmark("ds-discrete", train, val, test, cluster_basis(2), spec, shift, {"exact": exact})


# --- discrete label noise -------------------------------------------------------

ILN_T = np.array([[0.8, 0.2], [0.2, 0.8]])


def iln_spec() -> DiscreteSpec:
    return DiscreteSpec([[0.0], [1.0]], [[0.35, 0.15], [0.15, 0.35]], groups=[0, 1])


def iln_discrete(seed: int = 0, n_train: int = 50_000, n_val: int = 5_000, n_test: int = 50_000, exact: bool = False):
    spec = iln_spec()
    shift = ILN(ILN_T)
    if exact:
        train = exact_dataset(shifted_spec(spec, shift), 1000, name="train")
        val = exact_dataset(spec, 1000, name="val")
        test = exact_dataset(spec, 1000, name="test")
    else:
        r_clean, r_shift, r_val, r_test = _streams(seed)
        train = corrupt(sample_clean(spec, n_train, seed=r_clean), shift, seed=r_shift, name="train")
        val = sample_clean(spec, n_val, seed=r_val, name="val")
        test = sample_clean(spec, n_test, seed=r_test, name="test")
    return Benchmark("iln-discrete", train, val, test, constant_basis(), spec, shift, {"exact": exact})


# --- three-class gaussian with cluster-dependent noise --------------------------

CDLN_FLIP = 0.3


def gaussian3_spec() -> GaussianMixtureSpec:
    return GaussianMixtureSpec(
        means=[[0.0, 1.0], [-1.0, -1.0], [1.0, -1.0]],
        cov=np.eye(2),
        priors=[0.6, 0.3, 0.1],
        cluster_axis=0,
        cluster_threshold=0.0,
    )


def gaussian3_shift(flip: float = CDLN_FLIP) -> CDLN:
    """Clean labels in cluster 0; uniform flips with probability ``flip`` in cluster 1."""
    return CDLN(np.stack([np.eye(3), uniform_flip_matrix(3, flip)]))


def cdln_gaussian3(seed: int = 0, n_train: int = 20_000, n_val: int = 2_000, n_test: int = 50_000, flip: float = CDLN_FLIP):
    """Noisy training sample, clean validation and test, logistic ``eta`` fitted on train."""
    spec = gaussian3_spec()
    shift = gaussian3_shift(flip)
    r_clean, r_shift, r_val, r_test = _streams(seed)
    train = corrupt(sample_clean(spec, n_train, seed=r_clean), shift, seed=r_shift, name="train")
    val = sample_clean(spec, n_val, seed=r_val, name="val")
    test = sample_clean(spec, n_test, seed=r_test, name="test")
    model = fit_softmax(train, featurize=cluster_features)
    train, val, test = model.attach(train, val, test)
    return Benchmark("cdln-gaussian3", train, val, test, cluster_basis(2), spec, shift, {"flip": flip})


# --- binary fairness toy ----------------------------------------------------------


def fairness_binary(seed: int = 0, n_train: int = 20_000, n_val: int = 2_000, n_test: int = 20_000):
    """Two protected groups with different base rates; labels of group 1 flipped 20% in training."""
    r_clean, r_shift, r_val, r_test = _streams(seed)

    def draw(n, rng):
        g = rng.integers(0, 2, size=n)
        y = (rng.random(n) < np.where(g == 1, 0.2, 0.4)).astype(np.int64)
        x = rng.standard_normal((n, 2)) + np.column_stack([1.5 * y, 0.5 * g])
        return Dataset(x, y, 2, group_ids=g, protected_ids=g)

    train = draw(n_train, r_clean)
    shift = CDLN(np.stack([np.eye(2), uniform_flip_matrix(2, 0.2)]))
    train = corrupt(train, shift, seed=r_shift, name="train")
    val, test = draw(n_val, r_val), draw(n_test, r_test)
    model = fit_softmax(train, featurize=cluster_features)
    train, val, test = model.attach(train, val, test)
    return Benchmark("fairness-binary", train, val, test, cluster_basis(2), None, shift, {})


BENCHMARKS = {
    "ds-discrete": ds_discrete,
    "iln-discrete": iln_discrete,
    "cdln-gaussian3": cdln_gaussian3,
    "fairness-binary": fairness_binary,
}
