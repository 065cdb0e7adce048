"""End-to-end CLI behavior on the bundled datasets."""

import json
import os

import jsonschema
import numpy as np
import pytest

from resgcn.cli import (
    RESULTS_SCHEMA,
    _parse_layer_range,
    _resolve_variant,
    main,
    resolve_dataset,
)
from resgcn.fixtures import materialize
from resgcn.tensor import ConfigError


@pytest.fixture(autouse=True)
def _isolated_cwd(tmp_path, monkeypatch):
    """Keep ./datasets lookups and relative outputs inside the test dir."""
    monkeypatch.delenv("RESGCN_DATASETS", raising=False)
    monkeypatch.chdir(tmp_path)
    yield


def run_cli(*argv):
    return main(list(argv))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def strip_times(payload):
    """Results payload minus wall-clock entries, for determinism checks."""
    out = json.loads(json.dumps(payload))
    for rec in out["per_seed"]:
        rec.pop("wall_time")
    out["aggregate"].pop("time_mean")
    return out


class TestRun:
    def test_writes_results_histogram_and_figure(self, tmp_path, capsys):
        out = tmp_path / "r1"
        code = run_cli("run", "--dataset", "tiny10", "--seeds", "2",
                       "--epochs", "15", "--hidden", "8", "--out", str(out))
        assert code == 0
        payload = read_json(out / "results.json")
        jsonschema.validate(payload, RESULTS_SCHEMA)
        assert payload["dataset"]["name"] == "tiny10"
        assert payload["model"]["variant"] == "gcn"
        assert payload["seeds"] == 2
        assert len(payload["per_seed"]) == 2
        assert (out / "accuracy_hist.csv").exists()
        assert (out / "accuracy_hist.png").exists()
        stdout = capsys.readouterr().out
        assert "gcn-3 on tiny10:" in stdout

    def test_no_figures_skips_png(self, tmp_path):
        out = tmp_path / "r2"
        code = run_cli("run", "--dataset", "tiny10", "--seeds", "1",
                       "--epochs", "5", "--hidden", "8", "--no-figures",
                       "--out", str(out))
        assert code == 0
        assert (out / "accuracy_hist.csv").exists()
        assert not (out / "accuracy_hist.png").exists()

    def test_histogram_counts_sum_to_seed_count(self, tmp_path):
        out = tmp_path / "r3"
        run_cli("run", "--dataset", "tiny10", "--seeds", "3", "--epochs", "10",
                "--hidden", "8", "--no-figures", "--out", str(out))
        lines = (out / "accuracy_hist.csv").read_text().strip().splitlines()
        counts = [int(ln.split(",")[2]) for ln in lines[1:]]
        assert sum(counts) == 3

    def test_curves_rows_match_epochs_run(self, tmp_path):
        out = tmp_path / "r4"
        run_cli("run", "--dataset", "tiny10", "--seeds", "2", "--epochs", "8",
                "--hidden", "8", "--curves", "--no-figures", "--out", str(out))
        payload = read_json(out / "results.json")
        want_rows = sum(r["epochs_run"] for r in payload["per_seed"])
        lines = (out / "curves.csv").read_text().strip().splitlines()
        assert lines[0] == "seed,epoch,train_loss,val_loss,val_acc"
        assert len(lines) - 1 == want_rows

    def test_rerun_is_bit_identical_modulo_wall_time(self, tmp_path):
        args = ("run", "--dataset", "tiny10", "--seeds", "2", "--epochs",
                "12", "--hidden", "8", "--no-figures")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli(*args, "--out", str(out1)) == 0
        assert run_cli(*args, "--out", str(out2)) == 0
        p1 = strip_times(read_json(out1 / "results.json"))
        p2 = strip_times(read_json(out2 / "results.json"))
        assert p1 == p2
        h1 = (out1 / "accuracy_hist.csv").read_bytes()
        h2 = (out2 / "accuracy_hist.csv").read_bytes()
        assert h1 == h2

    def test_aggregate_reaggregates_from_per_seed(self, tmp_path):
        out = tmp_path / "r5"
        run_cli("run", "--dataset", "tiny10", "--seeds", "3", "--epochs", "10",
                "--hidden", "8", "--no-figures", "--out", str(out))
        payload = read_json(out / "results.json")
        ok = [r["test_acc"] for r in payload["per_seed"] if not r["failed"]]
        agg = payload["aggregate"]
        assert agg["samples"] == ok
        assert np.isclose(agg["acc_mean"], np.mean(ok))
        assert np.isclose(agg["acc_std"], np.std(ok))
        assert agg["acc_min"] == min(ok)
        assert agg["acc_max"] == max(ok)

    def test_failed_runs_serialize_as_null(self, tmp_path):
        # A tolerance below machine precision exhausts the solver budget,
        # so the single seed fails and its metrics must serialize as null.
        out = tmp_path / "r6"
        code = run_cli("run", "--dataset", "tiny10", "--model", "ode",
                       "--norm", "mid", "--rtol", "1e-18", "--atol", "1e-18",
                       "--seeds", "1", "--epochs", "5", "--hidden", "8",
                       "--no-figures", "--out", str(out))
        assert code == 0
        raw = (out / "results.json").read_text()
        assert "NaN" not in raw
        payload = read_json(out / "results.json")
        jsonschema.validate(payload, RESULTS_SCHEMA)
        rec = payload["per_seed"][0]
        assert rec["failed"] is True
        assert rec["test_acc"] is None
        assert payload["aggregate"]["acc_mean"] is None
        assert payload["aggregate"]["n_failed"] == 1

    def test_ode_variant_via_flags(self, tmp_path):
        out = tmp_path / "r7"
        code = run_cli("run", "--dataset", "tiny10", "--model", "ode",
                       "--norm", "mid", "--solver", "rk4", "--steps", "4",
                       "--seeds", "1", "--epochs", "6", "--hidden", "8",
                       "--no-figures", "--out", str(out))
        assert code == 0
        payload = read_json(out / "results.json")
        assert payload["model"]["variant"] == "ode-norm"
        assert payload["model"]["solver"]["method"] == "rk4"

    def test_early_stop_flag_enables_rule(self, tmp_path):
        out = tmp_path / "r8"
        code = run_cli("run", "--dataset", "tiny10", "--seeds", "1",
                       "--epochs", "150", "--early-stop",
                       "--no-figures", "--out", str(out))
        assert code == 0
        payload = read_json(out / "results.json")
        assert payload["train"]["early_stop"] is not None
        rec = payload["per_seed"][0]
        assert rec["stopped_early"] is True
        assert rec["epochs_run"] < 150


class TestConfigFile:
    def test_config_defaults_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"hidden": 4, "epochs": 7, "seeds": 2}))
        out = tmp_path / "r"
        code = run_cli("run", "--dataset", "tiny10", "--config", str(cfg),
                       "--epochs", "9", "--no-figures", "--out", str(out))
        assert code == 0
        payload = read_json(out / "results.json")
        assert payload["model"]["hidden"] == 4          # from config
        assert payload["train"]["max_epochs"] == 9      # flag wins
        assert payload["seeds"] == 2                    # from config

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"hiden": 4}))
        code = run_cli("run", "--dataset", "tiny10", "--config", str(cfg),
                       "--out", str(tmp_path / "r"))
        assert code == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_non_object_config_fails(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        code = run_cli("run", "--dataset", "tiny10", "--config", str(cfg),
                       "--out", str(tmp_path / "r"))
        assert code == 1
        assert "must hold an object" in capsys.readouterr().err


class TestSweep:
    def test_sweep_outputs(self, tmp_path, capsys):
        out = tmp_path / "s1"
        code = run_cli("sweep", "--dataset", "tiny10", "--models", "gcn,res",
                       "--layers", "3,4", "--seeds", "2", "--epochs", "40",
                       "--hidden", "8", "--out", str(out))
        assert code == 0
        sweep = read_json(out / "sweep.json")
        assert sweep["depths"] == [3, 4]
        assert len(sweep["cells"]) == 4  # 2 models x 2 depths
        for model in ("gcn", "res"):
            csv = (out / f"sweep_{model}.csv").read_text().strip().splitlines()
            assert csv[0] == "depth,acc_mean,acc_std,iters_mean,hit_ratio"
            assert len(csv) == 3
        for panel in ("acc_mean", "iters_mean", "hit_ratio"):
            assert (out / f"sweep_{panel}.png").exists()
        stdout = capsys.readouterr().out
        assert "gcn-3: hit" in stdout

    def test_sweep_no_figures(self, tmp_path):
        out = tmp_path / "s2"
        code = run_cli("sweep", "--dataset", "tiny10", "--models", "gcn",
                       "--layers", "3", "--seeds", "1", "--epochs", "20",
                       "--hidden", "8", "--no-figures", "--out", str(out))
        assert code == 0
        assert not list(out.glob("*.png"))
        assert (out / "sweep.json").exists()

    def test_layer_range_parsing(self):
        assert _parse_layer_range("3:6") == [3, 4, 5, 6]
        assert _parse_layer_range("3,5,9") == [3, 5, 9]
        with pytest.raises(ConfigError):
            _parse_layer_range("1:3")
        with pytest.raises(ConfigError):
            _parse_layer_range(",")


class TestCompare:
    @staticmethod
    def _make_results(tmp_path, name, model, seeds=3):
        out = tmp_path / name
        code = run_cli("run", "--dataset", "tiny10", "--model", model,
                       "--seeds", str(seeds), "--epochs", "12", "--hidden",
                       "8", "--no-figures", "--out", str(out))
        assert code == 0
        return str(out / "results.json")

    def test_mannwhitney_two_results(self, tmp_path, capsys):
        a = self._make_results(tmp_path, "a", "gcn")
        b = self._make_results(tmp_path, "b", "res")
        out = tmp_path / "cmp"
        code = run_cli("compare", a, b, "--test", "mannwhitney",
                       "--out", str(out))
        assert code == 0
        stdout = capsys.readouterr().out
        assert "mann-whitney-u" in stdout
        assert "p=" in stdout
        report = read_json(out / "compare.json")
        assert 0.0 <= report["p_value"] <= 1.0
        assert report["method"].startswith("mann-whitney-u")
        assert (out / "compare.png").exists()

    def test_kruskal_three_results(self, tmp_path, capsys):
        paths = [self._make_results(tmp_path, n, m, seeds=2)
                 for n, m in (("a", "gcn"), ("b", "res"), ("c", "res-norm"))]
        code = run_cli("compare", *paths, "--test", "kruskal")
        assert code == 0
        assert "kruskal-wallis" in capsys.readouterr().out

    def test_mannwhitney_rejects_three_results(self, tmp_path, capsys):
        paths = [self._make_results(tmp_path, n, "gcn", seeds=1)
                 for n in ("a", "b", "c")]
        code = run_cli("compare", *paths, "--test", "mannwhitney")
        assert code == 1
        assert "exactly two" in capsys.readouterr().err

    def test_rejects_non_results_file(self, tmp_path, capsys):
        bogus = tmp_path / "x.json"
        bogus.write_text("{}")
        code = run_cli("compare", str(bogus), str(bogus))
        assert code == 1
        assert "not a results file" in capsys.readouterr().err


class TestValidateDataset:
    def test_valid_directory_passes(self, tmp_path, capsys):
        materialize("tiny10", str(tmp_path / "d"))
        code = run_cli("validate-dataset", str(tmp_path / "d"))
        assert code == 0
        stdout = capsys.readouterr().out
        assert "10 nodes" in stdout
        assert "masks 4/3/3" in stdout

    def test_broken_directory_fails(self, tmp_path, capsys):
        materialize("tiny10", str(tmp_path / "d"))
        os.remove(tmp_path / "d" / "edges.bin")
        code = run_cli("validate-dataset", str(tmp_path / "d"))
        assert code == 1
        assert "edges.bin" in capsys.readouterr().err


class TestDatasetResolution:
    def test_env_root_lookup(self, tmp_path, monkeypatch):
        materialize("tiny10", str(tmp_path / "root" / "tiny10"))
        monkeypatch.setenv("RESGCN_DATASETS", str(tmp_path / "root"))
        ds = resolve_dataset("tiny10")
        assert ds.num_nodes == 10

    def test_cwd_datasets_lookup(self, tmp_path):
        materialize("tiny10", str(tmp_path / "datasets" / "tiny10"))
        ds = resolve_dataset("tiny10")
        assert ds.num_nodes == 10

    def test_bundled_lookup(self):
        ds = resolve_dataset("synth300")
        assert ds.num_nodes == 300

    def test_missing_dataset_message_names_converter(self, capsys):
        code = run_cli("run", "--dataset", "does-not-exist", "--out", "r")
        assert code == 1
        err = capsys.readouterr().err
        assert "converter" in err
        assert "RESGCN_DATASETS" in err


class TestVariantResolution:
    def test_norm_combinations(self):
        assert _resolve_variant("gcn", None) == "gcn"
        assert _resolve_variant("res", "mid") == "res-norm"
        assert _resolve_variant("res", "full") == "res-fullnorm"
        assert _resolve_variant("ode", "none") == "ode"
        assert _resolve_variant("RES", "mid") == "res-norm"

    def test_norm_with_full_variant_name_rejected(self):
        with pytest.raises(ConfigError):
            _resolve_variant("res-norm", "mid")

    def test_unknown_variant_exits_with_error(self, tmp_path, capsys):
        code = run_cli("run", "--dataset", "tiny10", "--model", "bogus",
                       "--out", str(tmp_path / "r"))
        assert code == 1
        assert "variant" in capsys.readouterr().err
