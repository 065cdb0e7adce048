"""Deterministic synthetic datasets for tests and offline demos.

tiny10    10 nodes, 4 features, 2 classes, 4/3/3 split, linearly separable
          features on a homophilous graph; bundled with the package.
synth300  300 nodes, 32 features, 4 classes, planted-partition edges and
          class-mean features; large enough for meaningful training curves.
"""

from __future__ import annotations

import numpy as np

from .graph import Dataset, SparseMatrix, save_dataset


def tiny10() -> Dataset:
    feats = np.array([
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 0.75, 0.0, 0.25],
        [0.75, 1.0, 0.25, 0.0],
        [1.0, 0.5, 0.0, 0.0],
        [0.5, 1.0, 0.25, 0.25],
        [0.0, 0.0, 1.0, 1.0],
        [0.25, 0.0, 1.0, 0.75],
        [0.0, 0.25, 0.75, 1.0],
        [0.0, 0.0, 1.0, 0.5],
        [0.25, 0.25, 0.5, 1.0],
    ], dtype=np.float64)
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1], dtype=np.int64)
    edges = np.array([
        [0, 1], [0, 2], [1, 3], [2, 4], [3, 4], [0, 4],
        [5, 6], [5, 7], [6, 8], [7, 9], [8, 9], [5, 9],
        [4, 5],
    ], dtype=np.int64)
    return Dataset(
        name="tiny10",
        features=feats,
        labels=labels,
        adjacency=SparseMatrix.from_edges(10, edges),
        train_mask=np.array([0, 1, 5, 6], dtype=np.int64),
        val_mask=np.array([2, 7, 3], dtype=np.int64),
        test_mask=np.array([4, 8, 9], dtype=np.int64),
    )


def synth300(seed: int = 7) -> Dataset:
    """Planted-partition citation-style benchmark."""
    rng = np.random.default_rng(seed)
    n, d, c = 300, 32, 4
    labels = np.repeat(np.arange(c), n // c).astype(np.int64)
    means = rng.normal(0.0, 1.0, size=(c, d))
    feats = means[labels] + rng.normal(0.0, 1.6, size=(n, d))
    # sparse positive features, loosely citation-like
    feats = np.maximum(feats, 0.0)
    p_in, p_out = 0.055, 0.003
    rows, cols = np.triu_indices(n, k=1)
    same = labels[rows] == labels[cols]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(rows.size) < prob
    edges = np.stack([rows[keep], cols[keep]], axis=1)
    # splice isolated nodes onto a same-class neighbor to keep degrees positive
    deg = np.zeros(n, dtype=np.int64)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1
    extra = []
    for u in np.flatnonzero(deg == 0):
        mates = np.flatnonzero((labels == labels[u])
                               & (np.arange(n) != u) & (deg > 0))
        v = int(rng.choice(mates))
        extra.append([u, v])
        deg[u] += 1
        deg[v] += 1
    if extra:
        edges = np.concatenate([edges, np.array(extra, dtype=np.int64)])
    per_class_train = 8
    train = np.concatenate([
        np.flatnonzero(labels == k)[:per_class_train] for k in range(c)
    ])
    rest = np.setdiff1d(np.arange(n), train)
    rng.shuffle(rest)
    val = np.sort(rest[:60])
    test = np.sort(rest[60:160])
    return Dataset(
        name="synth300",
        features=feats,
        labels=labels,
        adjacency=SparseMatrix.from_edges(n, edges),
        train_mask=np.sort(train).astype(np.int64),
        val_mask=val.astype(np.int64),
        test_mask=test.astype(np.int64),
    )


BUILDERS = {"tiny10": tiny10, "synth300": synth300}


def materialize(name: str, out_dir: str) -> Dataset:
    ds = BUILDERS[name]()
    save_dataset(ds, out_dir)
    return ds
