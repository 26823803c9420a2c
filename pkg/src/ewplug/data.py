"""Samples, probability models and confusion statistics.

Labels are 0-indexed internally. Files and reports use 1-indexed class
numbers; the mapping between raw label values and internal indices is fixed
when a dataset is loaded and kept on the :class:`Dataset`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PROB_TOL = 1e-9


class DataFormatError(ValueError):
    """A delimited input file does not match its schema."""


@dataclass(frozen=True, eq=False)
class ProbabilityModel:
    """Class-probability estimates evaluated on the rows of one dataset."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[1] < 2:
            raise ValueError(f"probabilities must be an (n, m) matrix, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=PROB_TOL):
            raise ValueError("probability rows must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_array(cls, probs, renormalize: bool = True) -> "ProbabilityModel":
        """Build from raw scores, optionally renormalizing rows that do not sum to 1.

        Rows already within ``PROB_TOL`` of 1 are kept bit for bit.
        """
        p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
        if renormalize:
            s = p.sum(axis=1, keepdims=True)
            p = np.where(np.abs(s - 1.0) > PROB_TOL, p / s, p)
        return cls(p)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def m(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """An empirical sample: features, labels and optional side columns.

    Instances hash by identity so basis evaluations and materialized
    predictions can be cached per dataset.
    """

    features: np.ndarray
    labels: np.ndarray
    m: int
    group_ids: Optional[np.ndarray] = None
    protected_ids: Optional[np.ndarray] = None
    probs: Optional[ProbabilityModel] = None
    label_values: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.size < 1:
            raise ValueError("labels must be a nonempty vector")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
            y = y.astype(np.int64)
        if self.m < 2:
            raise ValueError("need at least two classes")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.min() < 0 or y.max() >= self.m:
            raise ValueError(f"labels must lie in 0..{self.m - 1}")
        for col in ("group_ids", "protected_ids"):
            v = getattr(self, col)
            if v is not None:
                v = np.asarray(v, dtype=np.int64)
                if v.shape != y.shape:
                    raise ValueError(f"{col} must align with labels")
                v.setflags(write=False)
                object.__setattr__(self, col, v)
        if self.probs is not None:
            p = self.probs if isinstance(self.probs, ProbabilityModel) else ProbabilityModel(self.probs)
            if p.n != y.size or p.m != self.m:
                raise ValueError("probability model does not match the dataset")
            object.__setattr__(self, "probs", p)
        x.setflags(write=False)
        y = y.astype(np.int64, copy=True)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def eta(self) -> np.ndarray:
        if self.probs is None:
            raise ValueError(f"dataset {self.name or '<unnamed>'} carries no probability model")
        return self.probs.probs

    def onehot_labels(self) -> np.ndarray:
        return np.eye(self.m)[self.labels]

    def priors(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.m) / self.n

    def with_probs(self, probs) -> "Dataset":
        if probs is not None and not isinstance(probs, ProbabilityModel):
            probs = ProbabilityModel(probs)
        return replace(self, probs=probs)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            group_ids=None if self.group_ids is None else self.group_ids[idx],
            protected_ids=None if self.protected_ids is None else self.protected_ids[idx],
            probs=None if self.probs is None else ProbabilityModel(self.probs.probs[idx]),
        )


@dataclass
class ColumnSchema:
    """Column layout of a delimited dataset file.

    ``features=None`` takes every column not claimed by another role.
    ``prob_prefix`` picks up probability columns ``p1 .. pm``.
    ``m`` declares the class count; labels are then expected to be the
    integers ``1..m``. Without it, the sorted distinct label values are
    mapped to classes in order.
    """

    label: str = "y"
    features: Optional[Sequence[str]] = None
    group: Optional[str] = None
    protected: Optional[str] = None
    prob_prefix: Optional[str] = "p"
    m: Optional[int] = None

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "ColumnSchema":
        return cls(**(d or {}))


def _sniff_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def load_dataset(path, schema: Optional[ColumnSchema] = None, name: str = "") -> Dataset:
    """Read a comma- or tab-delimited file with a header row."""
    schema = schema or ColumnSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with path.open(newline="") as fh:
        header_line = fh.readline()
        delim = _sniff_delimiter(header_line)
        header = next(csv.reader([header_line], delimiter=delim))
        header = [h.strip() for h in header]
        rows = list(csv.reader(fh, delimiter=delim))

    if schema.label not in header:
        raise DataFormatError(f"{path}: label column {schema.label!r} not in header")
    col = {h: k for k, h in enumerate(header)}
    prob_cols = []
    if schema.prob_prefix:
        k = 1
        while f"{schema.prob_prefix}{k}" in col:
            prob_cols.append(f"{schema.prob_prefix}{k}")
            k += 1
    claimed = {schema.label, schema.group, schema.protected, *prob_cols} - {None}
    if schema.features is None:
        feat_cols = [h for h in header if h not in claimed]
    else:
        feat_cols = list(schema.features)
        missing = [c for c in feat_cols if c not in col]
        if missing:
            raise DataFormatError(f"{path}: feature columns {missing} not in header")
    for c in (schema.group, schema.protected):
        if c is not None and c not in col:
            raise DataFormatError(f"{path}: column {c!r} not in header")

    feats, raw_labels, groups, prot, probs = [], [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            feats.append([float(row[col[c]]) for c in feat_cols])
            raw_labels.append(row[col[schema.label]].strip())
            if schema.group is not None:
                groups.append(int(float(row[col[schema.group]])))
            if schema.protected is not None:
                prot.append(int(float(row[col[schema.protected]])))
            if prob_cols:
                probs.append([float(row[col[c]]) for c in prob_cols])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not raw_labels:
        raise DataFormatError(f"{path}: no data rows")

    if schema.m is not None:
        m = schema.m
        labels = []
        for lineno, v in enumerate(raw_labels, start=2):
            try:
                k = int(float(v))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label {v!r} is not an integer") from None
            if not 1 <= k <= m:
                raise DataFormatError(f"{path}:{lineno}: label {k} outside declared range 1..{m}")
            labels.append(k - 1)
        label_values = tuple(str(k) for k in range(1, m + 1))
    else:
        try:
            keyed = sorted(set(raw_labels), key=float)
        except ValueError:
            keyed = sorted(set(raw_labels))
        label_values = tuple(keyed)
        lookup = {v: k for k, v in enumerate(label_values)}
        labels = [lookup[v] for v in raw_labels]
        m = max(len(label_values), len(prob_cols), 2)

    if prob_cols and len(prob_cols) != m:
        raise DataFormatError(f"{path}: {len(prob_cols)} probability columns for {m} classes")
    return Dataset(
        features=np.asarray(feats, dtype=float).reshape(len(labels), len(feat_cols)),
        labels=np.asarray(labels, dtype=np.int64),
        m=m,
        group_ids=np.asarray(groups) if schema.group is not None else None,
        protected_ids=np.asarray(prot) if schema.protected is not None else None,
        probs=ProbabilityModel.from_array(probs) if prob_cols else None,
        label_values=label_values,
        name=name or path.stem,
    )


def write_dataset(path, ds: Dataset, feature_names: Optional[Sequence[str]] = None) -> None:
    """Write ``ds`` in the format :func:`load_dataset` reads (labels 1..m)."""
    names = list(feature_names or [f"x{k + 1}" for k in range(ds.d)])
    header = names + ["y"]
    if ds.group_ids is not None:
        header.append("group")
    if ds.protected_ids is not None:
        header.append("protected")
    if ds.probs is not None:
        header += [f"p{k + 1}" for k in range(ds.m)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(ds.n):
            row = [repr(float(v)) for v in ds.features[r]] + [int(ds.labels[r]) + 1]
            if ds.group_ids is not None:
                row.append(int(ds.group_ids[r]))
            if ds.protected_ids is not None:
                row.append(int(ds.protected_ids[r]))
            if ds.probs is not None:
                row += [repr(float(v)) for v in ds.probs.probs[r]]
            w.writerow(row)


def standardize(train: Dataset, *others: Dataset):
    """Z-score features using statistics of ``train`` only."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    out = [replace(ds, features=(ds.features - mu) / sd) for ds in (train, *others)]
    return out[0] if not others else tuple(out)


# --- confusion statistics -------------------------------------------------


@dataclass(frozen=True)
class ConfusionStats:
    full: np.ndarray
    priors: np.ndarray
    phi_diag: Optional[np.ndarray] = field(default=None)

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.full).copy()

    @property
    def m(self) -> int:
        return self.full.shape[0]


def _as_proba(dataset: Dataset, h) -> np.ndarray:
    if hasattr(h, "proba"):
        p = h.proba(dataset)
    else:
        p = np.asarray(h, dtype=float)
        if p.ndim == 1:
            p = np.eye(dataset.m)[p.astype(np.int64)]
    if p.shape != (dataset.n, dataset.m):
        raise ValueError(f"predictions of shape {p.shape} do not match dataset ({dataset.n}, {dataset.m})")
    return p


def confusion(dataset: Dataset, h) -> ConfusionStats:
    """Empirical confusion ``C_ij = (1/n) sum 1(y=i) h_j(x)``.

    ``h`` may be a classifier (anything with ``proba``), an ``(n, m)``
    matrix of per-example class distributions, or a vector of hard labels.
    """
    p = _as_proba(dataset, h)
    full = np.zeros((dataset.m, dataset.m))
    np.add.at(full, dataset.labels, p)
    full /= dataset.n
    return ConfusionStats(full=full, priors=dataset.priors())


def _phi_matrix(dataset, phi) -> np.ndarray:
    return phi.evaluate(dataset) if hasattr(phi, "evaluate") else np.asarray(phi, dtype=float)


def phi_confusions(dataset: Dataset, phi, h) -> np.ndarray:
    """Basis-weighted diagonal confusions, shape ``(L, m)``.

    Entry ``(l, i)`` is ``(1/n) sum phi_l(x) 1(y=i) h_i(x)``. ``phi`` is a
    basis set or its evaluated ``(n, L)`` matrix.
    """
    phi = _phi_matrix(dataset, phi)
    p = _as_proba(dataset, h)
    hit = p[np.arange(dataset.n), dataset.labels]
    out = np.zeros((phi.shape[1], dataset.m))
    for i in range(dataset.m):
        mask = dataset.labels == i
        out[:, i] = phi[mask].T @ hit[mask]
    return out / dataset.n


def phi_confusions_full(dataset: Dataset, phi, h) -> np.ndarray:
    """Basis-weighted full confusions, shape ``(L, m, m)``."""
    phi = _phi_matrix(dataset, phi)
    p = _as_proba(dataset, h)
    out = np.zeros((phi.shape[1], dataset.m, dataset.m))
    for i in range(dataset.m):
        mask = dataset.labels == i
        out[:, i, :] = phi[mask].T @ p[mask]
    return out / dataset.n
