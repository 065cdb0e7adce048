"""Figure rendering writes well-formed PNG files."""

import numpy as np

from resgcn.figures import save_compare_png, save_histogram_png, save_sweep_pngs
from resgcn.stats import mann_whitney_u

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def is_png(path):
    with open(path, "rb") as fh:
        return fh.read(8) == PNG_MAGIC


def test_histogram_png(tmp_path):
    rng = np.random.default_rng(0)
    samples = {
        "model-a": rng.uniform(0.6, 0.8, size=20).tolist(),
        "model-b": rng.uniform(0.7, 0.9, size=20).tolist(),
    }
    path = tmp_path / "hist.png"
    save_histogram_png(samples, bins=10, lo=0.5, hi=1.0, path=str(path))
    assert is_png(path)


def test_compare_png(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.uniform(0.6, 0.8, size=10).tolist()
    b = rng.uniform(0.7, 0.9, size=10).tolist()
    res = mann_whitney_u(a, b)
    path = tmp_path / "cmp.png"
    save_compare_png(("a", "b"), (a, b), res, bins=8, lo=0.5, hi=1.0,
                     path=str(path))
    assert is_png(path)


def test_sweep_pngs_handle_nan_cells(tmp_path):
    depths = [3, 4, 5]
    series = {
        "gcn": {
            "acc_mean": [0.8, float("nan"), 0.6],
            "acc_std": [0.01, float("nan"), 0.02],
            "iters_mean": [20.0, 150.0, 200.0],
            "hit_ratio": [1.0, 0.4, 0.0],
        },
    }
    written = save_sweep_pngs(depths, series, str(tmp_path / "sweep"))
    assert len(written) == 3
    for path in written:
        assert is_png(path)
