"""Tabular data loading, feature correlations and deterministic splits."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASK_KINDS = (REGRESSION, CLASSIFICATION)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with its target column.

    ``features`` has one row per observation and one column per feature.
    ``target`` holds floats for regression and integer labels for
    classification.
    """

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    task_kind: str = REGRESSION

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.task_kind not in TASK_KINDS:
            raise DataError(f"unknown task kind {self.task_kind!r}")
        y = np.asarray(self.target)
        if self.task_kind == CLASSIFICATION:
            y = _as_labels(y)
        else:
            y = y.astype(float)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"target length {y.shape[0]} does not match row count {X.shape[0]}"
            )
        if X.shape[0] < 1:
            raise DataError("dataset has no rows")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1] or not names:
            raise DataError(
                f"{len(names)} feature names for {X.shape[1]} feature columns"
            )
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("dataset contains NaN or infinite values")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "target", _frozen(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> tuple[int, ...]:
        if self.task_kind != CLASSIFICATION:
            return ()
        return tuple(int(c) for c in np.unique(self.target))

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            self.features[rows], self.target[rows], self.feature_names, self.task_kind
        )


def _as_labels(y: np.ndarray) -> np.ndarray:
    yf = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(yf)) or not np.all(yf == np.round(yf)):
        raise DataError("classification target must hold integer class labels")
    return yf.astype(np.int64)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric feature-by-feature Pearson matrix with a zero diagonal."""

    values: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        W = np.asarray(self.values, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DataError("correlation matrix must be square")
        if not np.array_equal(W, W.T):
            raise DataError("correlation matrix must be symmetric")
        if np.any(np.diag(W) != 0.0):
            raise DataError("correlation matrix diagonal must be zero")
        object.__setattr__(self, "values", _frozen(W))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, ij):
        return self.values[ij]

    def to_csv(self) -> str:
        names = self.feature_names or tuple(str(i) for i in range(self.size))
        return _matrix_csv(self.values, names, repr)


def _matrix_csv(values: np.ndarray, names: Sequence[str], fmt) -> str:
    from io import StringIO

    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(names))
    for name, row in zip(names, values):
        w.writerow([name] + [fmt(v.item()) for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    ratio: float
    train_index: np.ndarray = field(repr=False, default=None)
    test_index: np.ndarray = field(repr=False, default=None)


def load_table(
    path: str | os.PathLike,
    target_column: str,
    task_kind: str = REGRESSION,
    impute_mean: bool = False,
) -> Dataset:
    """Read a headed, numeric CSV file into a :class:`Dataset`.

    All non-target columns become features in file order. Missing feature
    cells are rejected unless ``impute_mean`` is set, in which case they are
    replaced by the column mean. A missing target cell is always an error.
    """
    if task_kind not in TASK_KINDS:
        raise DataError(f"unknown task kind {task_kind!r}")
    if not os.path.isfile(path):
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: table has a header but no data rows")
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 data rows")
    if target_column not in header:
        raise DataError(f"target column {target_column!r} not found in {path}")
    t = header.index(target_column)
    feat_cols = [j for j in range(len(header)) if j != t]
    if not feat_cols:
        raise DataError(f"{path}: no feature columns besides the target")

    X = np.empty((len(body), len(feat_cols)))
    y = np.empty(len(body))
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            raise DataError(
                f"{path}: line {line} has {len(row)} cells, header has {len(header)}"
            )
        y[r] = _parse_cell(row[t], line, target_column, allow_missing=False)
        for c, j in enumerate(feat_cols):
            X[r, c] = _parse_cell(row[j], line, header[j], allow_missing=impute_mean)

    missing = np.isnan(X)
    if missing.any():
        counts = missing.sum(axis=0)
        if np.any(counts == X.shape[0]):
            bad = header[feat_cols[int(np.argmax(counts == X.shape[0]))]]
            raise DataError(f"column {bad!r} has no values to impute from")
        means = np.nanmean(X, axis=0)
        X = np.where(missing, means, X)
        logger.warning("imputed %d missing cells with column means", int(missing.sum()))

    return Dataset(X, y, tuple(header[j] for j in feat_cols), task_kind)


def _parse_cell(text: str, line: int, column: str, allow_missing: bool) -> float:
    s = text.strip()
    if s.lower() in _MISSING_TOKENS:
        if allow_missing:
            return math.nan
        raise DataError(f"missing value at line {line}, column {column!r}")
    try:
        v = float(s)
    except ValueError:
        raise DataError(
            f"non-numeric value {text!r} at line {line}, column {column!r}"
        ) from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value {text!r} at line {line}, column {column!r}")
    return v


def pearson_matrix(d: Dataset) -> CorrelationMatrix:
    """Sample Pearson correlation between every pair of feature columns.

    Constant columns have correlation 0 with everything. The diagonal is 0.
    """
    X = d.features
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    # relative threshold so float noise in a constant column counts as zero variance
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    degenerate = norms <= 1e-13 * scale * math.sqrt(X.shape[0])
    safe = np.where(degenerate, 1.0, norms)
    Z = Xc / safe
    W = Z.T @ Z
    W[degenerate, :] = 0.0
    W[:, degenerate] = 0.0
    W = np.clip(W, -1.0, 1.0)
    upper = np.triu(W, k=1)
    W = upper + upper.T
    return CorrelationMatrix(W, d.feature_names)


def split(d: Dataset, ratio: float = 0.8, seed: int = 0) -> SplitPair:
    """Shuffle rows deterministically into train and test parts.

    Classification data is stratified by class when every class has at
    least two members. Row order inside each part follows the source order.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    n = d.n_rows
    if n < 2:
        raise DataError("need at least 2 rows to split")
    rng = np.random.default_rng(seed)

    groups = None
    if d.task_kind == CLASSIFICATION:
        labels, counts = np.unique(d.target, return_counts=True)
        if np.all(counts >= 2):
            groups = [np.flatnonzero(d.target == c) for c in labels]
        else:
            logger.warning("a class has fewer than 2 rows; falling back to plain shuffle")

    if groups is None:
        groups = [np.arange(n)]
    train_parts = []
    for members in groups:
        perm = rng.permutation(members)
        n_train = min(max(math.floor(ratio * len(perm) + 0.5), 1), len(perm) - 1)
        train_parts.append(perm[:n_train])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.setdiff1d(np.arange(n), train_idx)
    if len(test_idx) == 0 or len(train_idx) == 0:
        raise DataError("split leaves an empty part; need more rows")
    return SplitPair(
        d.take(train_idx),
        d.take(test_idx),
        seed,
        ratio,
        _frozen(train_idx),
        _frozen(test_idx),
    )
