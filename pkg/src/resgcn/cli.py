"""Command-line experiment runner.

Subcommands: run (seeded training runs on one model), sweep (depth sweep
with early stopping), compare (nonparametric tests between results files),
validate-dataset (check a dataset directory). Flag values override config
file entries, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from .graph import Dataset, DatasetError, load_dataset
from .models import ModelSpec, VARIANTS
from .odeint import OdeSolverConfig
from .stats import histogram, kruskal_wallis, mann_whitney_u, write_histogram_csv
from .tensor import ConfigError
from .training import (
    AggregateStats,
    EarlyStopRule,
    RunRecord,
    TrainConfig,
    multi_seed,
)

RESULTS_FORMAT = "resgcn-results-v1"

RESULTS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "dataset", "model", "train", "seeds", "jobs",
                 "per_seed", "aggregate"],
    "properties": {
        "format": {"const": RESULTS_FORMAT},
        "dataset": {
            "type": "object",
            "required": ["name", "num_nodes", "num_features", "num_classes"],
            "properties": {
                "name": {"type": "string"},
                "num_nodes": {"type": "integer", "minimum": 1},
                "num_features": {"type": "integer", "minimum": 1},
                "num_classes": {"type": "integer", "minimum": 2},
            },
        },
        "model": {
            "type": "object",
            "required": ["variant", "layers", "hidden"],
            "properties": {
                "variant": {"enum": list(VARIANTS)},
                "layers": {"type": "integer", "minimum": 2},
                "hidden": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "required": ["lr", "weight_decay", "dropout_p", "max_epochs"],
        },
        "seeds": {"type": "integer", "minimum": 1},
        "jobs": {"type": "integer", "minimum": 1},
        "per_seed": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["seed", "test_acc", "test_loss", "epochs_run",
                             "stopped_early", "failed", "wall_time"],
                "properties": {
                    "seed": {"type": "integer", "minimum": 0},
                    "test_acc": {"type": ["number", "null"]},
                    "test_loss": {"type": ["number", "null"]},
                    "epochs_run": {"type": "integer", "minimum": 0},
                    "stopped_early": {"type": "boolean"},
                    "failed": {"type": "boolean"},
                },
            },
        },
        "aggregate": {
            "type": "object",
            "required": ["n_runs", "n_failed", "acc_mean", "acc_std",
                         "acc_min", "acc_max", "samples"],
            "properties": {
                "n_runs": {"type": "integer", "minimum": 1},
                "n_failed": {"type": "integer", "minimum": 0},
                "acc_mean": {"type": ["number", "null"]},
                "acc_std": {"type": ["number", "null"]},
                "acc_min": {"type": ["number", "null"]},
                "acc_max": {"type": ["number", "null"]},
                "samples": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
}


def _bundled_data_dir() -> str:
    return str(resources.files("resgcn").joinpath("data"))


def load_anchors() -> dict:
    path = os.path.join(_bundled_data_dir(), "early_stop_anchors.json")
    with open(path) as fh:
        return json.load(fh)


def resolve_dataset(token: str) -> Dataset:
    """Accept a directory path or a dataset name.

    Names are searched in $RESGCN_DATASETS, ./datasets, then the bundled
    package data.
    """
    candidates = [token]
    env = os.environ.get("RESGCN_DATASETS")
    if env:
        candidates.append(os.path.join(env, token))
    candidates.append(os.path.join("datasets", token))
    candidates.append(os.path.join(_bundled_data_dir(), token))
    for cand in candidates:
        if os.path.isdir(cand):
            return load_dataset(cand)
    raise DatasetError(
        f"dataset {token!r} not found; looked for a directory at "
        f"{candidates}. Convert raw data with the converter package "
        "(converter/convert.py) or point $RESGCN_DATASETS at your data root.")


def _resolve_variant(model: str, norm: str | None) -> str:
    model = model.lower()
    if norm is None or model not in ("gcn", "res", "ode"):
        if norm is not None:
            raise ConfigError(
                f"--norm only combines with base names gcn/res/ode, "
                f"got --model {model!r}")
        return model
    suffix = {"none": "", "mid": "-norm", "full": "-fullnorm"}[norm]
    return model + suffix


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold --config file values in as parser defaults (flags still win).

    Keys are flag destination names (weight_decay, not --weight-decay).
    Defaults must land on the subcommand parsers: a subparser parses into a
    fresh namespace, so top-level set_defaults never reaches it.
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    with open(known.config) as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {known.config} must hold an object")
    targets = [parser] + list(getattr(parser, "subcommand_parsers", {}).values())
    valid: set[str] = set()
    for t in targets:
        valid.update(a.dest for a in t._actions)
    unknown = sorted(set(loaded) - valid)
    if unknown:
        raise ConfigError(
            f"config file {known.config} has unknown keys {unknown}; keys "
            "must be flag names with dashes as underscores (e.g. weight_decay)")
    for t in targets:
        dests = {a.dest for a in t._actions}
        t.set_defaults(**{k: v for k, v in loaded.items() if k in dests})
    return argv


def _solver_cfg(ns) -> OdeSolverConfig:
    return OdeSolverConfig(
        method=ns.solver,
        steps=ns.steps,
        rtol=ns.rtol,
        atol=ns.atol,
        grad_mode=ns.grad,
    )


def _model_spec(ns, ds: Dataset) -> ModelSpec:
    variant = _resolve_variant(ns.model, ns.norm)
    spec = ModelSpec(
        variant=variant,
        layers=ns.layers,
        in_features=ds.num_features,
        num_classes=ds.num_classes,
        hidden=ns.hidden,
        input_dropout=ns.input_dropout,
        init=ns.init,
        residual_stride=ns.residual_stride,
        propagation=ns.propagation,
        solver=_solver_cfg(ns) if variant.startswith("ode") else None,
        slice_output=getattr(ns, "slice_output", False),
    )
    spec.validate()
    return spec


def _early_stop_rule(ns, dataset_name: str, default_on: bool) -> EarlyStopRule | None:
    enabled = ns.early_stop if ns.early_stop is not None else default_on
    if not enabled:
        return None
    acc_ref, loss_ref = ns.es_acc_ref, ns.es_loss_ref
    if acc_ref is None or loss_ref is None:
        anchors = load_anchors().get(dataset_name.lower())
        if anchors is None:
            raise ConfigError(
                f"no early-stop anchors known for dataset {dataset_name!r}; "
                "pass --es-acc-ref and --es-loss-ref")
        acc_ref = acc_ref if acc_ref is not None else anchors["acc"]
        loss_ref = loss_ref if loss_ref is not None else anchors["loss"]
    return EarlyStopRule(
        acc_reference=acc_ref,
        loss_reference=loss_ref,
        acc_floor=ns.es_acc_floor,
        loss_ceiling=ns.es_loss_ceiling,
    )


def _train_cfg(ns, rule: EarlyStopRule | None) -> TrainConfig:
    cfg = TrainConfig(
        lr=ns.lr,
        weight_decay=ns.weight_decay,
        dropout_p=ns.dropout,
        max_epochs=ns.epochs,
        early_stop=rule,
    )
    cfg.validate()
    return cfg


def _train_dict(cfg: TrainConfig) -> dict:
    d = {
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "dropout_p": cfg.dropout_p,
        "max_epochs": cfg.max_epochs,
        "early_stop": None,
    }
    if cfg.early_stop is not None:
        d["early_stop"] = {
            "acc_reference": cfg.early_stop.acc_reference,
            "loss_reference": cfg.early_stop.loss_reference,
            "acc_floor": cfg.early_stop.acc_floor,
            "loss_ceiling": cfg.early_stop.loss_ceiling,
        }
    return d


def _sanitize(obj):
    """Replace non-finite floats with null so files stay strict JSON."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _results_payload(ds: Dataset, spec: ModelSpec, tcfg: TrainConfig, ns,
                     agg: AggregateStats, records: list[RunRecord]) -> dict:
    payload = {
        "format": RESULTS_FORMAT,
        "dataset": {
            "name": ds.name,
            "num_nodes": ds.num_nodes,
            "num_features": ds.num_features,
            "num_classes": ds.num_classes,
        },
        "model": spec.to_dict(),
        "train": _train_dict(tcfg),
        "seeds": ns.seeds,
        "jobs": ns.jobs,
        "per_seed": [r.to_dict() for r in records],
        "aggregate": agg.to_dict(),
    }
    payload = _sanitize(payload)
    jsonschema.validate(payload, RESULTS_SCHEMA)
    return payload


def _dump_json(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(payload), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")


def _summary_line(spec: ModelSpec, ds: Dataset, agg: AggregateStats) -> str:
    return (f"{spec.variant}-{spec.layers} on {ds.name}: "
            f"acc {100 * agg.acc_mean:.2f} +/- {100 * agg.acc_std:.2f} "
            f"[{100 * agg.acc_min:.2f}, {100 * agg.acc_max:.2f}] "
            f"loss {agg.loss_mean:.4f} "
            f"({agg.n_runs - agg.n_failed}/{agg.n_runs} runs, "
            f"{agg.time_mean:.2f}s avg)")


def _write_curves(records: list[RunRecord], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("seed,epoch,train_loss,val_loss,val_acc\n")
        for r in records:
            for e, (tl, vl, va) in enumerate(
                    zip(r.train_loss, r.val_loss, r.val_acc), start=1):
                fh.write(f"{r.seed},{e},{tl!r},{vl!r},{va!r}\n")


def cmd_run(ns) -> int:
    ds = resolve_dataset(ns.dataset)
    spec = _model_spec(ns, ds)
    rule = _early_stop_rule(ns, ds.name, default_on=False)
    tcfg = _train_cfg(ns, rule)
    agg, records = multi_seed(spec, ds, tcfg, ns.seeds, jobs=ns.jobs)
    os.makedirs(ns.out, exist_ok=True)
    payload = _results_payload(ds, spec, tcfg, ns, agg, records)
    _dump_json(payload, os.path.join(ns.out, "results.json"))
    hist = histogram(agg.samples, ns.hist_bins, ns.hist_lo, ns.hist_hi)
    write_histogram_csv(hist, os.path.join(ns.out, "accuracy_hist.csv"))
    if ns.figures:
        from .figures import save_histogram_png
        save_histogram_png(
            {f"{spec.variant}-{spec.layers}": agg.samples},
            ns.hist_bins, ns.hist_lo, ns.hist_hi,
            os.path.join(ns.out, "accuracy_hist.png"),
            title=f"{ds.name}: test accuracy over {ns.seeds} seeds")
    if ns.curves:
        _write_curves(records, os.path.join(ns.out, "curves.csv"))
    print(_summary_line(spec, ds, agg))
    return 0


def _parse_layer_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        depths = list(range(int(lo), int(hi) + 1))
    else:
        depths = [int(x) for x in text.split(",") if x]
    if not depths or any(d < 2 for d in depths):
        raise ConfigError(f"bad layer range {text!r}")
    return depths


def cmd_sweep(ns) -> int:
    ds = resolve_dataset(ns.dataset)
    depths = _parse_layer_range(ns.layers)
    models = [m.strip() for m in ns.models.split(",") if m.strip()]
    rule = _early_stop_rule(ns, ds.name, default_on=True)
    os.makedirs(ns.out, exist_ok=True)
    series: dict[str, dict[str, list[float]]] = {}
    cells = []
    for model in models:
        metrics = {"acc_mean": [], "acc_std": [], "iters_mean": [],
                   "hit_ratio": []}
        for depth in depths:
            ns2 = argparse.Namespace(**vars(ns))
            ns2.model, ns2.layers = model, depth
            spec = _model_spec(ns2, ds)
            tcfg = _train_cfg(ns, rule)
            agg, records = multi_seed(spec, ds, tcfg, ns.seeds, jobs=ns.jobs)
            hits = [r for r in records if r.stopped_early]
            hit_accs = np.array([r.test_acc for r in hits], dtype=np.float64)
            acc_mean = float(hit_accs.mean()) if hits else float("nan")
            acc_std = float(hit_accs.std()) if hits else float("nan")
            iters = float(np.mean([r.epochs_run for r in records]))
            ratio = len(hits) / len(records)
            metrics["acc_mean"].append(acc_mean)
            metrics["acc_std"].append(acc_std)
            metrics["iters_mean"].append(iters)
            metrics["hit_ratio"].append(ratio)
            cells.append({
                "model": spec.variant,
                "depth": depth,
                "aggregate": agg.to_dict(),
                "acc_mean_hit": acc_mean,
                "acc_std_hit": acc_std,
                "iters_mean": iters,
                "hit_ratio": ratio,
            })
            print(f"{spec.variant}-{depth}: hit {len(hits)}/{len(records)}, "
                  f"acc(hit) {100 * acc_mean:.2f}, iters {iters:.1f}")
        variant = _resolve_variant(model, ns.norm)
        series[variant] = metrics
        path = os.path.join(ns.out, f"sweep_{variant}.csv")
        with open(path, "w") as fh:
            fh.write("depth,acc_mean,acc_std,iters_mean,hit_ratio\n")
            for i, depth in enumerate(depths):
                fh.write(f"{depth},{metrics['acc_mean'][i]!r},"
                         f"{metrics['acc_std'][i]!r},"
                         f"{metrics['iters_mean'][i]!r},"
                         f"{metrics['hit_ratio'][i]!r}\n")
    payload = {
        "format": "resgcn-sweep-v1",
        "dataset": ds.name,
        "depths": depths,
        "seeds": ns.seeds,
        "cells": cells,
    }
    _dump_json(payload, os.path.join(ns.out, "sweep.json"))
    if ns.figures:
        from .figures import save_sweep_pngs
        save_sweep_pngs(depths, series, os.path.join(ns.out, "sweep"))
    return 0


def _samples_from_results(path: str) -> tuple[str, list[float]]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != RESULTS_FORMAT:
        raise ConfigError(f"{path} is not a results file")
    label = f"{payload['model']['variant']}-{payload['model']['layers']}"
    samples = payload["aggregate"]["samples"]
    if not samples:
        raise ConfigError(f"{path} holds no successful runs")
    return label, [float(s) for s in samples]


def cmd_compare(ns) -> int:
    loaded = [_samples_from_results(p) for p in ns.results]
    if ns.test == "mannwhitney":
        if len(loaded) != 2:
            raise ConfigError("mannwhitney compares exactly two results files")
        result = mann_whitney_u(loaded[0][1], loaded[1][1])
    else:
        result = kruskal_wallis([s for _, s in loaded])
    names = " vs ".join(label for label, _ in loaded)
    print(f"{result.method} on {names}: statistic={result.statistic:.6g} "
          f"p={result.p_value:.6g}")
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        if ns.figures and len(loaded) == 2:
            from .figures import save_compare_png
            save_compare_png(
                (loaded[0][0], loaded[1][0]),
                (loaded[0][1], loaded[1][1]),
                result, ns.hist_bins, ns.hist_lo, ns.hist_hi,
                os.path.join(ns.out, "compare.png"))
        _dump_json({
            "method": result.method,
            "statistic": result.statistic,
            "p_value": result.p_value,
            "inputs": list(ns.results),
        }, os.path.join(ns.out, "compare.json"))
    return 0


def cmd_validate_dataset(ns) -> int:
    ds = load_dataset(ns.dir)
    print(f"{ds.name}: {ds.num_nodes} nodes, {ds.num_features} features, "
          f"{ds.num_classes} classes, {ds.adjacency.nnz // 2} edges, "
          f"masks {ds.train_mask.size}/{ds.val_mask.size}/{ds.test_mask.size}")
    return 0


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--init", choices=("uniform", "glorot"), default="uniform")
    p.add_argument("--input-dropout", action="store_true")
    p.add_argument("--norm", choices=("none", "mid", "full"), default=None,
                   help="normalization family, combined with a base --model")
    p.add_argument("--propagation", choices=("row", "symmetric"),
                   default="row")
    p.add_argument("--residual-stride", type=int, choices=(1, 2), default=1)
    p.add_argument("--solver", choices=("rk4", "dopri5"), default="dopri5")
    p.add_argument("--rtol", type=float, default=1e-3)
    p.add_argument("--atol", type=float, default=1e-3)
    p.add_argument("--steps", type=int, default=8,
                   help="fixed step count for rk4")
    p.add_argument("--grad", choices=("discretize", "adjoint"),
                   default="discretize")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel seed workers; results identical to serial")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="kept for interface stability; every code path is "
                        "seeded, so runs are deterministic either way")
    p.add_argument("--early-stop", action=argparse.BooleanOptionalAction,
                   default=None,
                   help="validation early stopping (default: off for run, "
                        "on for sweep)")
    p.add_argument("--es-acc-ref", type=float, default=None)
    p.add_argument("--es-loss-ref", type=float, default=None)
    p.add_argument("--es-acc-floor", type=float, default=0.9)
    p.add_argument("--es-loss-ceiling", type=float, default=1.1)
    p.add_argument("--hist-bins", type=int, default=30)
    p.add_argument("--hist-lo", type=float, default=0.0)
    p.add_argument("--hist-hi", type=float, default=1.0)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction,
                   default=True, help="render PNGs next to CSV outputs")
    p.add_argument("--out", default="results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resgcn",
        description="Discrete and continuous residual graph convolution "
                    "experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one model over several seeds")
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--model", default="gcn",
                       help="variant name, or base name combined with --norm")
    p_run.add_argument("--layers", type=int, default=3)
    p_run.add_argument("--slice-output", action="store_true",
                       help="2-layer residual with class scores from the "
                            "first columns")
    p_run.add_argument("--curves", action="store_true",
                       help="write per-epoch curves.csv")
    _add_shared_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="depth sweep with early stopping")
    p_sweep.add_argument("--dataset", required=True)
    p_sweep.add_argument("--models", default="gcn,res,res-norm",
                         help="comma-separated variant names")
    p_sweep.add_argument("--layers", default="3:8",
                         help="depth range lo:hi or comma list")
    _add_shared_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="nonparametric test on results")
    p_cmp.add_argument("results", nargs="+")
    p_cmp.add_argument("--test", choices=("mannwhitney", "kruskal"),
                       default="mannwhitney")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--hist-bins", type=int, default=30)
    p_cmp.add_argument("--hist-lo", type=float, default=0.0)
    p_cmp.add_argument("--hist-hi", type=float, default=1.0)
    p_cmp.add_argument("--figures", action=argparse.BooleanOptionalAction,
                       default=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_val = sub.add_parser("validate-dataset",
                           help="check a dataset directory")
    p_val.add_argument("dir")
    p_val.set_defaults(func=cmd_validate_dataset)

    parser.subcommand_parsers = {
        "run": p_run, "sweep": p_sweep, "compare": p_cmp,
        "validate-dataset": p_val,
    }
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        ns = parser.parse_args(argv)
        return ns.func(ns)
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
