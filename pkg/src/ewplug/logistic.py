"""Multinomial logistic regression, used to produce class-probability models.

Deliberately small: L2-penalized softmax regression fitted with L-BFGS.
The fitted model is then frozen and only post-shifted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .data import Dataset


def with_intercept(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(x)), x])


@dataclass
class SoftmaxRegression:
    coef: np.ndarray
    featurize: Callable[[Dataset], np.ndarray]

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return softmax(self.featurize(ds) @ self.coef, axis=1)

    def attach(self, *datasets: Dataset):
        """Return copies of ``datasets`` carrying this model's probabilities."""
        out = tuple(ds.with_probs(self.predict_proba(ds)) for ds in datasets)
        return out[0] if len(out) == 1 else out


def default_features(ds: Dataset) -> np.ndarray:
    return with_intercept(ds.features)


def cluster_features(ds: Dataset) -> np.ndarray:
    """Features and intercept interacted with a one-hot of the cluster id."""
    if ds.group_ids is None:
        return default_features(ds)
    base = with_intercept(ds.features)
    k = int(ds.group_ids.max()) + 1
    onehot = np.eye(max(k, 2))[ds.group_ids]
    return (onehot[:, :, None] * base[:, None, :]).reshape(ds.n, -1)


def fit_softmax(
    ds: Dataset,
    l2: float = 1e-3,
    featurize: Optional[Callable[[Dataset], np.ndarray]] = None,
    maxiter: int = 500,
) -> SoftmaxRegression:
    """Fit ``softmax(F(x) @ coef)`` to the labels of ``ds`` by penalized likelihood."""
    featurize = featurize or default_features
    F = featurize(ds)
    Y = ds.onehot_labels()
    n, p = F.shape
    m = ds.m

    def loss(w):
        W = w.reshape(p, m)
        z = F @ W
        lp = log_softmax(z, axis=1)
        val = -np.sum(Y * lp) / n + 0.5 * l2 * np.sum(W[1:] ** 2)
        g = F.T @ (np.exp(lp) - Y) / n
        g[1:] += l2 * W[1:]
        return val, g.ravel()

    res = minimize(loss, np.zeros(p * m), jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    return SoftmaxRegression(res.x.reshape(p, m), featurize)
