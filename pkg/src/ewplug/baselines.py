"""Reference comparators: plain argmax and coordinate-wise weight search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .plugin import PostShiftRule

# Gradient-trained comparators that this library does not implement.
NOT_IMPLEMENTED = ("fine-tuning", "learn-to-reweight", "adaptive-surrogates", "forward-correction", "kmm")


def argmax_baseline(m: int) -> PostShiftRule:
    """Unweighted ``argmax_i eta_i(x)``; ties go to the lowest class index."""
    return PostShiftRule.from_class_weights(np.ones(m))


def zeta_grid(spacing: float) -> np.ndarray:
    steps = 1.0 / spacing
    if abs(steps - round(steps)) > 1e-9:
        raise ValueError(f"1/spacing must be an integer, got spacing {spacing}")
    return np.arange(int(round(steps)) + 1) / round(steps)


@dataclass
class CoordinateSearchResult:
    rule: PostShiftRule
    weights: np.ndarray
    queries: int
    capped: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.values[-1] if self.values else float("nan")


def coordinate_search_plugin(val: Dataset, metric, spacing: float = 0.01) -> CoordinateSearchResult:
    """Weights for ``argmax_i w_i eta_i`` from one line search per class.

    Class ``m`` is the anchor with ``w_m = 1``. For ``j = 1, ..., m - 1`` in
    turn, ``zeta`` runs over ``{0, spacing, ..., 1}`` and sets
    ``w_j = zeta / (1 - zeta)`` with every other weight at its current
    value; the best validation score is kept. ``zeta = 1/2`` reproduces the
    current rule, so the result never scores below plain argmax. A
    maximizing ``zeta = 1`` is capped at ratio ``1 / spacing`` and flagged.
    Uses exactly ``(m - 1) (1 / spacing + 1)`` metric queries.
    """
    if not 0 < spacing <= 0.5:
        raise ValueError("spacing must lie in (0, 0.5]")
    m = val.m
    zetas = zeta_grid(spacing)
    half = np.flatnonzero(np.isclose(zetas, 0.5))
    if half.size != 1:
        raise ValueError("the zeta grid must contain 1/2 so the argmax rule stays reachable")
    cap = 1.0 / spacing
    eta = val.eta
    w = np.ones(m)
    queries = 0
    capped, values = [], []
    for j in range(m - 1):
        scores = np.empty(zetas.size)
        for k, z in enumerate(zetas):
            cand = w.copy()
            cand[j] = z / (1 - z) if z < 1 else cap
            pred = (eta * cand).argmax(axis=1)
            scores[k] = metric.evaluate(val, pred)
            queries += 1
        best = scores.max()
        k = half[0] if scores[half[0]] >= best else int(np.argmax(scores))
        z = zetas[k]
        if z == 1.0:
            capped.append(j)
        w[j] = z / (1 - z) if z < 1 else cap
        values.append(float(scores[k]))
    w = w / w.sum()
    return CoordinateSearchResult(PostShiftRule.from_class_weights(w), w, queries, capped, values)
