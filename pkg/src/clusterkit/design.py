"""Clustered data model, CSV ingestion and per-cluster cross-products."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .errors import EmptyFile, MissingColumn, NonNumericCell, TooFewClusters

INTERCEPT_NAME = "_cons"


def dense_labels(labels: Sequence[Hashable]) -> tuple[np.ndarray, list]:
    """Map arbitrary labels to 0..G-1 in order of first appearance.

    Returns the integer codes and the list of original labels indexed by code.
    """
    mapping: dict = {}
    codes = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        code = mapping.get(lab)
        if code is None:
            code = len(mapping)
            mapping[lab] = code
        codes[i] = code
    return codes, list(mapping)


@dataclass(frozen=True)
class ClusteredDataset:
    """Regression data whose rows are stored cluster-contiguously.

    ``cluster_id`` holds dense codes ``0..G-1`` that are non-decreasing
    along the rows, so cluster ``g`` occupies ``offsets[g]:offsets[g+1]``.
    ``row_order[i]`` is the position of row ``i`` in the original input.
    """

    y: np.ndarray
    X: np.ndarray
    cluster_id: np.ndarray
    column_names: tuple[str, ...]
    cluster_id2: np.ndarray | None = None
    treatment_col: int | None = None
    row_order: np.ndarray | None = None
    cluster_labels: tuple = ()
    cluster2_labels: tuple = ()
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sizes = np.bincount(self.cluster_id)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        object.__setattr__(self, "offsets", offsets)

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def G(self) -> int:
        return self.offsets.shape[0] - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def rows(self, g: int) -> slice:
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))

    def coef_index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.k:
                raise IndexError(f"coefficient index {name} out of range")
            return int(name)
        try:
            return self.column_names.index(name)
        except ValueError:
            raise MissingColumn(f"no regressor named {name!r}") from None

    def with_y(self, y: np.ndarray) -> "ClusteredDataset":
        """Same design and clusters, new regressand (rows in stored order)."""
        return replace(self, y=np.asarray(y, dtype=np.float64))

    def with_X(self, X: np.ndarray, column_names: Sequence[str]) -> "ClusteredDataset":
        treat = self.treatment_col
        if treat is not None and treat >= X.shape[1]:
            treat = None
        return replace(self, X=np.ascontiguousarray(X, dtype=np.float64),
                       column_names=tuple(column_names), treatment_col=treat)

    def with_clusters(self, labels, labels2=None) -> "ClusteredDataset":
        """Re-cluster the stored rows; rows are re-sorted to stay contiguous."""
        return from_arrays(self.y, self.X, labels, cluster2=labels2,
                           column_names=self.column_names,
                           treatment_col=self.treatment_col,
                           row_order=self.row_order)


def from_arrays(y, X, cluster, *, cluster2=None, column_names=None,
                treatment_col=None, row_order=None) -> ClusteredDataset:
    """Build a dataset from arrays, reordering rows so clusters are contiguous.

    The reordering is a stable sort on first-appearance cluster codes, so the
    original relative order of rows within each cluster is kept.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = y.shape[0]
    if n == 0:
        raise EmptyFile("dataset has no observations")
    if X.shape[0] != n or len(cluster) != n:
        raise ValueError("y, X and cluster must have the same number of rows")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise NonNumericCell("missing or non-finite values in y or X")
    if X.shape[1] > n:
        raise ValueError(f"more regressors ({X.shape[1]}) than observations ({n})")
    codes, labels = dense_labels(list(np.asarray(cluster).tolist()))
    if len(labels) < 2:
        raise TooFewClusters(f"need at least 2 clusters, found {len(labels)}")
    order = np.argsort(codes, kind="stable")
    if row_order is None:
        row_order = np.arange(n)
    row_order = np.asarray(row_order)[order]
    codes2, labels2 = None, ()
    if cluster2 is not None:
        if len(cluster2) != n:
            raise ValueError("cluster2 must have one label per row")
        c2 = np.asarray(cluster2)[order]
        codes2, labels2 = dense_labels(c2.tolist())
    if column_names is None:
        column_names = [f"x{i + 1}" for i in range(X.shape[1])]
    return ClusteredDataset(
        y=np.ascontiguousarray(y[order]),
        X=np.ascontiguousarray(X[order]),
        cluster_id=codes[order],
        column_names=tuple(column_names),
        cluster_id2=codes2,
        treatment_col=treatment_col,
        row_order=row_order,
        cluster_labels=tuple(labels),
        cluster2_labels=tuple(labels2),
    )


@dataclass
class ColumnSpec:
    """Which CSV columns play which role."""

    y: str
    x: list[str]
    cluster: str
    cluster2: str | None = None
    treatment: str | None = None
    fe: str | None = None
    intercept: bool = True


def _parse_float(text: str, col: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(f"line {line}: column {col!r} has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise NonNumericCell(f"line {line}: column {col!r} is missing or non-finite ({text!r})")
    return value


def load_dataset(path: str | Path, columns: ColumnSpec) -> ClusteredDataset:
    """Read a headed CSV file into a cluster-contiguous dataset.

    Cluster columns may hold arbitrary strings. Missing values anywhere in the
    used columns are an error; nothing is imputed.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        records = [row for row in reader if row]
    if not records:
        raise EmptyFile(f"{path}: header but no data rows")

    needed = [columns.y, *columns.x, columns.cluster]
    for extra in (columns.cluster2, columns.treatment, columns.fe):
        if extra is not None:
            needed.append(extra)
    pos = {}
    for col in needed:
        if col not in header:
            raise MissingColumn(f"{path}: column {col!r} not in header")
        pos[col] = header.index(col)

    def column(col, numeric=True):
        out = []
        for i, row in enumerate(records, start=2):
            if len(row) != len(header):
                raise NonNumericCell(f"line {i}: expected {len(header)} fields, got {len(row)}")
            cell = row[pos[col]].strip()
            if numeric:
                out.append(_parse_float(cell, col, i))
            else:
                if cell == "":
                    raise NonNumericCell(f"line {i}: column {col!r} is missing")
                out.append(cell)
        return out

    y = np.array(column(columns.y))
    names = list(columns.x)
    xs = [column(c) for c in columns.x]
    if columns.fe is not None:
        fe_codes, fe_levels = dense_labels(column(columns.fe, numeric=False))
        for level in range(1, len(fe_levels)):
            xs.append((fe_codes == level).astype(float).tolist())
            names.append(f"{columns.fe}={fe_levels[level]}")
    if columns.intercept:
        xs.insert(0, [1.0] * len(y))
        names.insert(0, INTERCEPT_NAME)
    X = np.column_stack(xs) if xs else np.empty((len(y), 0))
    treatment_col = None
    if columns.treatment is not None:
        if columns.treatment in names:
            treatment_col = names.index(columns.treatment)
        else:
            raise MissingColumn(f"treatment {columns.treatment!r} must be one of the regressors")
    cluster = column(columns.cluster, numeric=False)
    cluster2 = column(columns.cluster2, numeric=False) if columns.cluster2 else None
    return from_arrays(y, X, cluster, cluster2=cluster2, column_names=names,
                       treatment_col=treatment_col)


class ClusterBlocks:
    """Per-cluster cross-products ``X_g'X_g`` and ``X_g'y_g`` plus totals.

    Quantities that depend only on ``X`` (factorizations, leverage blocks) are
    memoized in ``cache``; :meth:`with_y` shares that cache, which is what makes
    repeated fits on a fixed design cheap.
    """

    def __init__(self, data: ClusteredDataset, xtx_g=None, cache=None):
        self.data = data
        X, y, off = data.X, data.y, data.offsets
        G, k = data.G, data.k
        if xtx_g is None:
            xtx_g = np.empty((G, k, k))
            for g in range(G):
                Xg = X[off[g]:off[g + 1]]
                xtx_g[g] = Xg.T @ Xg
        xty_g = np.add.reduceat(X * y[:, None], off[:-1], axis=0)
        self.xtx_g = xtx_g
        self.xty_g = xty_g
        self.xtx = _ordered_sum(xtx_g)
        self.xty = _ordered_sum(xty_g)
        self.cache = {} if cache is None else cache

    @property
    def G(self) -> int:
        return self.data.G

    @property
    def k(self) -> int:
        return self.data.k

    @property
    def N(self) -> int:
        return self.data.N

    @property
    def offsets(self) -> np.ndarray:
        return self.data.offsets

    def with_y(self, y) -> "ClusterBlocks":
        return ClusterBlocks(self.data.with_y(y), xtx_g=self.xtx_g, cache=self.cache)


def _ordered_sum(blocks: np.ndarray) -> np.ndarray:
    total = np.zeros(blocks.shape[1:])
    for b in blocks:
        total += b
    return total


def build_blocks(d: ClusteredDataset) -> ClusterBlocks:
    return ClusterBlocks(d)


def weight_by_cluster_size(d: ClusteredDataset) -> ClusteredDataset:
    """Scale every row of cluster g by ``N_g ** -0.5`` so clusters weigh equally."""
    w = np.repeat(1.0 / np.sqrt(d.sizes), d.sizes)
    return replace(d, y=d.y * w, X=d.X * w[:, None])
