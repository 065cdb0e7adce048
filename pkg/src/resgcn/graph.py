"""Sparse graph operators and the on-disk dataset directory format.

A dataset directory contains:
    manifest.json   {"name", "num_nodes", "num_features", "num_classes"}
    features.bin    row-major little-endian float32, num_nodes x num_features
    labels.bin      little-endian uint32, one per node
    edges.bin       little-endian uint32 pairs, each undirected edge once
    masks.json      {"train": [...], "val": [...], "test": [...]}

Features are widened to float64 on load. The loader symmetrizes the
adjacency (max of A and its transpose), so edge direction in the file is
irrelevant.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .tensor import ConfigError, ShapeError, Tensor, _emit


class GraphError(ValueError):
    """A structural property of the graph is violated."""


class DatasetError(ValueError):
    """A dataset directory is missing pieces or internally inconsistent."""


class SparseMatrix:
    """Immutable CSR matrix: row_ptr (n+1), col_idx and values (nnz).

    Column indices are strictly increasing within each row. Products are
    delegated to scipy.sparse behind this contract.
    """

    __slots__ = ("shape", "row_ptr", "col_idx", "values", "_csr", "_csr_t")

    def __init__(self, shape: tuple[int, int], row_ptr, col_idx, values):
        self.shape = (int(shape[0]), int(shape[1]))
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self._validate()
        csr = sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=self.shape)
        self._csr = csr
        self._csr_t = csr.T.tocsr()

    def _validate(self) -> None:
        n, _ = self.shape
        rp = self.row_ptr
        if rp.shape != (n + 1,) or rp[0] != 0 or rp[-1] != self.col_idx.size:
            raise ShapeError(
                f"row_ptr shape/extents inconsistent with {n} rows and "
                f"{self.col_idx.size} entries")
        if np.any(np.diff(rp) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if self.col_idx.size != self.values.size:
            raise ShapeError("col_idx and values length mismatch")
        if self.col_idx.size:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.shape[1]:
                raise ShapeError("column index out of range")
            for r in range(n):
                cols = self.col_idx[rp[r]:rp[r + 1]]
                if cols.size > 1 and np.any(np.diff(cols) <= 0):
                    raise ShapeError(
                        f"row {r}: column indices must be strictly increasing")

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        return cls(m.shape, m.indptr, m.indices, m.data)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: np.ndarray) -> "SparseMatrix":
        """Build a symmetric binary adjacency from undirected edge pairs."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise GraphError("edge endpoint out of range")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        keep = rows != cols  # no self-loops in the raw adjacency
        data = np.ones(keep.sum(), dtype=np.float64)
        m = sp.coo_matrix((data, (rows[keep], cols[keep])),
                          shape=(num_nodes, num_nodes))
        m = m.tocsr()
        m.data[:] = 1.0  # duplicates collapse to binary
        return cls.from_scipy(m)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def t_matmul_dense(self, x: np.ndarray) -> np.ndarray:
        return self._csr_t @ x


def add_self_loops(a: SparseMatrix) -> SparseMatrix:
    """Return A with every diagonal entry set to 1 (idempotent)."""
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"add_self_loops needs a square matrix, got {a.shape}")
    m = a._csr.tolil(copy=True)
    m.setdiag(1.0)
    return SparseMatrix.from_scipy(m)


def degree_normalize(a: SparseMatrix, mode: str = "row") -> SparseMatrix:
    """Scale by inverse (row) or inverse-sqrt (symmetric) degree."""
    if mode not in ("row", "symmetric"):
        raise ConfigError(f"unknown normalization mode {mode!r}")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"degree_normalize needs a square matrix, got {a.shape}")
    deg = a.row_sums()
    zero = np.flatnonzero(deg == 0)
    if zero.size:
        raise GraphError(f"degenerate graph: node {int(zero[0])} has zero degree")
    if mode == "row":
        d_inv = sp.diags(1.0 / deg)
        return SparseMatrix.from_scipy(d_inv @ a._csr)
    d_half = sp.diags(1.0 / np.sqrt(deg))
    return SparseMatrix.from_scipy(d_half @ a._csr @ d_half)


def spmm(a: SparseMatrix, x: Tensor) -> Tensor:
    """Sparse-dense product A @ X. A is a fixed operator, never differentiated."""
    x = x if isinstance(x, Tensor) else Tensor.constant(x)
    if x.ndim != 2 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {a.shape} @ {x.shape}")
    out = a.matmul_dense(x.data)
    return _emit("spmm", out, [
        (x, lambda g: a.t_matmul_dense(g)),
    ])


@dataclass
class Dataset:
    """An attributed graph with train/val/test index masks."""

    name: str
    features: np.ndarray        # (n, d) float64
    labels: np.ndarray          # (n,) int64
    adjacency: SparseMatrix     # symmetric, zero diagonal
    train_mask: np.ndarray      # int64 node indices
    val_mask: np.ndarray
    test_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def validate(self) -> None:
        n = self.num_nodes
        if self.labels.shape != (n,):
            raise DatasetError(f"labels shape {self.labels.shape} != ({n},)")
        if self.adjacency.shape != (n, n):
            raise DatasetError(
                f"adjacency shape {self.adjacency.shape} != ({n}, {n})")
        skew = self.adjacency._csr - self.adjacency._csr.T
        if skew.count_nonzero() != 0:
            raise DatasetError("adjacency must be symmetric")
        if self.adjacency._csr.diagonal().any():
            raise DatasetError("adjacency must have a zero diagonal")
        masks = [self.train_mask, self.val_mask, self.test_mask]
        names = ["train", "val", "test"]
        seen: set[int] = set()
        for name, m in zip(names, masks):
            if m.size == 0:
                raise DatasetError(f"{name} mask is empty")
            if m.min() < 0 or m.max() >= n:
                raise DatasetError(f"{name} mask index out of range")
            if np.unique(m).size != m.size:
                raise DatasetError(f"{name} mask has duplicate indices")
            overlap = seen.intersection(m.tolist())
            if overlap:
                raise DatasetError(
                    f"masks overlap: node {sorted(overlap)[0]} appears twice")
            seen.update(m.tolist())
        if self.labels.min() < 0:
            raise DatasetError("negative label")


def save_dataset(ds: Dataset, out_dir: str) -> None:
    """Write the directory format; round-trips bit-exactly through load."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "name": ds.name,
        "num_nodes": int(ds.num_nodes),
        "num_features": int(ds.num_features),
        "num_classes": int(ds.num_classes),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ds.features.astype("<f4").tofile(os.path.join(out_dir, "features.bin"))
    ds.labels.astype("<u4").tofile(os.path.join(out_dir, "labels.bin"))
    coo = sp.triu(ds.adjacency._csr, k=1).tocoo()
    edges = np.stack([coo.row, coo.col], axis=1).astype("<u4")
    edges.tofile(os.path.join(out_dir, "edges.bin"))
    masks = {
        "train": ds.train_mask.tolist(),
        "val": ds.val_mask.tolist(),
        "test": ds.test_mask.tolist(),
    }
    with open(os.path.join(out_dir, "masks.json"), "w") as fh:
        json.dump(masks, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir: str) -> Dataset:
    """Load and cross-check a dataset directory."""
    def path(name: str) -> str:
        p = os.path.join(in_dir, name)
        if not os.path.exists(p):
            raise DatasetError(f"missing {name} in {in_dir}")
        return p

    with open(path("manifest.json")) as fh:
        manifest = json.load(fh)
    for key in ("name", "num_nodes", "num_features", "num_classes"):
        if key not in manifest:
            raise DatasetError(f"manifest missing key {key!r}")
    n = int(manifest["num_nodes"])
    d = int(manifest["num_features"])
    c = int(manifest["num_classes"])

    raw = np.fromfile(path("features.bin"), dtype="<f4")
    if raw.size != n * d:
        raise DatasetError(
            f"features.bin holds {raw.size} values, manifest implies {n * d}")
    features = raw.reshape(n, d).astype(np.float64)

    labels = np.fromfile(path("labels.bin"), dtype="<u4").astype(np.int64)
    if labels.shape != (n,):
        raise DatasetError(
            f"labels.bin holds {labels.size} values, manifest implies {n}")
    if labels.size and int(labels.max()) + 1 != c:
        raise DatasetError(
            f"manifest num_classes={c} but labels imply {int(labels.max()) + 1}")

    raw_edges = np.fromfile(path("edges.bin"), dtype="<u4")
    if raw_edges.size % 2 != 0:
        raise DatasetError("edges.bin has an odd number of entries")
    edges = raw_edges.reshape(-1, 2).astype(np.int64)
    if edges.size and edges.max() >= n:
        raise DatasetError("edge endpoint out of range")
    adjacency = SparseMatrix.from_edges(n, edges)

    with open(path("masks.json")) as fh:
        masks = json.load(fh)
    for key in ("train", "val", "test"):
        if key not in masks:
            raise DatasetError(f"masks.json missing key {key!r}")

    ds = Dataset(
        name=str(manifest["name"]),
        features=features,
        labels=labels,
        adjacency=adjacency,
        train_mask=np.asarray(masks["train"], dtype=np.int64),
        val_mask=np.asarray(masks["val"], dtype=np.int64),
        test_mask=np.asarray(masks["test"], dtype=np.int64),
    )
    ds.validate()
    return ds


def build_operator(ds: Dataset, propagation: str = "row") -> SparseMatrix:
    """Self-loop then degree-normalize the dataset adjacency."""
    return degree_normalize(add_self_loops(ds.adjacency), propagation)
