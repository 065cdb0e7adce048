"""Convert pickled Planetoid citation bundles to dataset directories.

The upstream release ships each dataset as eight files named
ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}.  This script
reassembles them into the neutral directory format the resgcn loader
reads: manifest.json, features.bin, labels.bin, edges.bin, masks.json.
"""

from __future__ import annotations

import argparse
import json
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp

DATASET_NAMES = ("cora", "citeseer", "pubmed")
UPSTREAM_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")
VAL_SIZE = 500  # fixed width of the upstream validation split


class ConvertError(Exception):
    """Raised when an upstream bundle is missing, truncated, or inconsistent."""


class _CompatUnpickler(pickle.Unpickler):
    """Unpickler that tolerates the class paths of older scipy releases.

    The upstream pickles reference modules such as scipy.sparse.csr that
    no longer exist; every sparse class they name is still importable
    from the scipy.sparse package itself.
    """

    def find_class(self, module, name):
        if module.startswith("scipy.sparse") and hasattr(sp, name):
            return getattr(sp, name)
        return super().find_class(module, name)


def _part_path(in_dir: str, name: str, part: str) -> str:
    return os.path.join(in_dir, f"ind.{name}.{part}")


def _load_pickle(path: str):
    with open(path, "rb") as fh:
        return _CompatUnpickler(fh, encoding="latin1").load()


def load_bundle(in_dir: str, name: str) -> dict:
    """Read all eight upstream files, failing fast on any absence."""
    for part in UPSTREAM_PARTS:
        path = _part_path(in_dir, name, part)
        if not os.path.exists(path):
            raise ConvertError(
                f"missing upstream file {os.path.basename(path)!r} in {in_dir}")
    bundle = {part: _load_pickle(_part_path(in_dir, name, part))
              for part in UPSTREAM_PARTS[:-1]}
    with open(_part_path(in_dir, name, "test.index")) as fh:
        lines = [line.strip() for line in fh if line.strip()]
    try:
        bundle["test.index"] = np.asarray([int(line) for line in lines],
                                          dtype=np.int64)
    except ValueError:
        raise ConvertError("test.index holds a non-integer line")
    return bundle


def assemble(bundle: dict, name: str):
    """Reorder the upstream blocks into dense per-node arrays and masks."""
    x = bundle["x"]
    y = np.asarray(bundle["y"])
    tx = bundle["tx"]
    ty = np.asarray(bundle["ty"])
    allx = bundle["allx"]
    ally = np.asarray(bundle["ally"])
    graph = bundle["graph"]
    test_reorder = bundle["test.index"]

    if x.shape[0] != y.shape[0]:
        raise ConvertError(
            f"x holds {x.shape[0]} rows but y holds {y.shape[0]} labels")
    if test_reorder.size == 0:
        raise ConvertError("test.index is empty")
    if np.unique(test_reorder).size != test_reorder.size:
        raise ConvertError("test.index holds duplicate indices")

    test_sorted = np.sort(test_reorder)
    lo, hi = int(test_sorted[0]), int(test_sorted[-1])
    span = hi - lo + 1
    gaps = span - test_sorted.size
    if name == "citeseer":
        # Some citeseer test nodes are cited but carry no feature row.
        # The upstream convention keeps them: widen the test block to the
        # full index span and leave the absent rows as zeros.
        tx_ext = sp.lil_matrix((span, x.shape[1]), dtype=np.float32)
        tx_ext[test_sorted - lo, :] = tx
        tx = tx_ext
        ty_ext = np.zeros((span, y.shape[1]), dtype=ty.dtype)
        ty_ext[test_sorted - lo, :] = ty
        ty = ty_ext
    elif gaps:
        missing = sorted(set(range(lo, hi + 1)) - set(test_sorted.tolist()))
        raise ConvertError(
            f"test.index spans [{lo}, {hi}] but skips {gaps} indices "
            f"(first gap at {missing[0]}); only citeseer bundles are "
            "zero-filled")

    features = sp.vstack((allx, tx)).toarray().astype(np.float64)
    labels_1hot = np.vstack((ally, np.asarray(ty)))
    n = len(graph)
    if features.shape[0] != n:
        raise ConvertError(
            f"feature blocks cover {features.shape[0]} nodes but the graph "
            f"lists {n}")
    if hi >= n:
        raise ConvertError(f"test index {hi} is out of range for {n} nodes")

    # The stacked test block sits at the sorted positions in file order;
    # move each row to the node index the test.index file assigns it.
    features[test_reorder, :] = features[test_sorted, :]
    labels_1hot[test_reorder, :] = labels_1hot[test_sorted, :]
    # Zero-filled rows decode to class 0; they sit outside every mask.
    labels = np.argmax(labels_1hot, axis=1).astype(np.int64)

    train = np.arange(y.shape[0], dtype=np.int64)
    val = np.arange(y.shape[0], y.shape[0] + VAL_SIZE, dtype=np.int64)
    if int(val[-1]) >= n:
        raise ConvertError(
            f"bundle holds {n} nodes, too few for {y.shape[0]} train plus "
            f"{VAL_SIZE} validation indices")

    pairs = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            u_i, v_i = int(u), int(v)
            if u_i == v_i:
                continue  # the output format keeps the diagonal empty
            if not (0 <= u_i < n and 0 <= v_i < n):
                raise ConvertError(
                    f"graph edge ({u_i}, {v_i}) is out of range for {n} nodes")
            pairs.add((u_i, v_i) if u_i < v_i else (v_i, u_i))
    if not pairs:
        raise ConvertError("graph holds no edges")
    edges = np.asarray(sorted(pairs), dtype=np.int64)

    return features, labels, edges, train, val, test_sorted


def write_dataset(out_dir: str, name: str, features, labels, edges,
                  train, val, test) -> dict:
    """Emit the five-file directory format; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "name": name,
        "num_nodes": int(features.shape[0]),
        "num_features": int(features.shape[1]),
        "num_classes": int(labels.max()) + 1,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    features.astype("<f4").tofile(os.path.join(out_dir, "features.bin"))
    labels.astype("<u4").tofile(os.path.join(out_dir, "labels.bin"))
    edges.astype("<u4").tofile(os.path.join(out_dir, "edges.bin"))
    masks = {
        "train": train.tolist(),
        "val": val.tolist(),
        "test": test.tolist(),
    }
    with open(os.path.join(out_dir, "masks.json"), "w") as fh:
        json.dump(masks, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convert.py",
        description="Convert a pickled citation bundle to a dataset "
                    "directory.")
    parser.add_argument("--in", dest="in_dir", required=True, metavar="DIR",
                        help="directory holding the eight ind.<name>.* files")
    parser.add_argument("--name", required=True, choices=DATASET_NAMES,
                        help="which bundle to convert")
    parser.add_argument("--out", dest="out_dir", required=True, metavar="DIR",
                        help="directory to write the converted dataset into")
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        bundle = load_bundle(ns.in_dir, ns.name)
        features, labels, edges, train, val, test = assemble(bundle, ns.name)
        manifest = write_dataset(ns.out_dir, ns.name, features, labels,
                                 edges, train, val, test)
    except ConvertError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {manifest['name']}: {manifest['num_nodes']} nodes, "
          f"{manifest['num_features']} features, "
          f"{manifest['num_classes']} classes, "
          f"masks {train.size}/{val.size}/{test.size}, "
          f"{edges.shape[0]} edges")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
