"""Training harness: Adam, single runs, and seed sweeps."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import Dataset, SparseMatrix, build_operator
from .models import Model, ModelSpec, build_model
from .odeint import DivergenceError, StiffnessError
from .tensor import ConfigError, GradMap, Tape, nll_loss

from .layers import Parameter


@dataclass
class EarlyStopRule:
    """Stop once validation beats fixed fractions of reference values.

    References are experiment configuration (per-dataset anchors), not
    constants: stop when val_acc > acc_floor * acc_reference and
    val_loss < loss_ceiling * loss_reference.
    """

    acc_reference: float
    loss_reference: float
    acc_floor: float = 0.9
    loss_ceiling: float = 1.1

    def hit(self, val_acc: float, val_loss: float) -> bool:
        return (val_acc > self.acc_floor * self.acc_reference
                and val_loss < self.loss_ceiling * self.loss_reference)


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout_p: float = 0.5
    max_epochs: int = 200
    seed: int = 0
    early_stop: EarlyStopRule | None = None

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"negative weight decay {self.weight_decay}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout must satisfy 0 <= p < 1, got {self.dropout_p}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class RunRecord:
    seed: int
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: float = float("nan")
    test_loss: float = float("nan")
    epochs_run: int = 0
    stopped_early: bool = False
    failed: bool = False
    fail_epoch: int | None = None
    fail_reason: str | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "test_acc": self.test_acc,
            "test_loss": self.test_loss,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "failed": self.failed,
            "fail_epoch": self.fail_epoch,
            "fail_reason": self.fail_reason,
            "wall_time": self.wall_time,
        }


@dataclass
class AggregateStats:
    """Accuracy statistics over the successful runs of a seed sweep."""

    n_runs: int
    n_failed: int
    acc_mean: float
    acc_std: float
    acc_min: float
    acc_max: float
    loss_mean: float
    time_mean: float
    samples: list[float]

    @classmethod
    def from_records(cls, records: list[RunRecord]) -> "AggregateStats":
        ok = [r for r in records if not r.failed]
        accs = np.array([r.test_acc for r in ok], dtype=np.float64)
        nan = float("nan")
        return cls(
            n_runs=len(records),
            n_failed=len(records) - len(ok),
            acc_mean=float(accs.mean()) if accs.size else nan,
            acc_std=float(accs.std()) if accs.size else nan,  # population std
            acc_min=float(accs.min()) if accs.size else nan,
            acc_max=float(accs.max()) if accs.size else nan,
            loss_mean=float(np.mean([r.test_loss for r in ok])) if ok else nan,
            time_mean=float(np.mean([r.wall_time for r in ok])) if ok else nan,
            samples=[float(a) for a in accs],
        )

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "acc_min": self.acc_min,
            "acc_max": self.acc_max,
            "loss_mean": self.loss_mean,
            "time_mean": self.time_mean,
            "samples": self.samples,
        }


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[Parameter]):
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0


_B1, _B2, _EPS = 0.9, 0.999, 1e-8


def adam_step(params: list[Parameter], grads: GradMap, state: AdamState,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update; L2 decay folded into weight grads."""
    state.t += 1
    t = state.t
    for p in params:
        g = grads.by_tag(p)
        if cfg.weight_decay and p.is_weight:
            g = g + cfg.weight_decay * p.data
        m = state.m[p.name]
        v = state.v[p.name]
        m *= _B1
        m += (1 - _B1) * g
        v *= _B2
        v += (1 - _B2) * (g * g)
        mhat = m / (1 - _B1 ** t)
        vhat = v / (1 - _B2 ** t)
        p.data = p.data - cfg.lr * mhat / (np.sqrt(vhat) + _EPS)


def evaluate(model: Model, ds: Dataset, mask: np.ndarray) -> tuple[float, float]:
    """(loss, accuracy) on a node mask, eval mode."""
    logp = model.forward(ds.features, tape=None, training=False)
    loss = nll_loss(logp, ds.labels, mask).item()
    pred = logp.data[mask].argmax(axis=1)
    acc = float((pred == ds.labels[mask]).mean())
    return loss, acc


def train_run(spec: ModelSpec, ds: Dataset, cfg: TrainConfig,
              operator: SparseMatrix | None = None) -> RunRecord:
    """One seeded training run; wall time excludes dataset/operator setup."""
    cfg.validate()
    if operator is None:
        operator = build_operator(ds, spec.propagation)
    rec = RunRecord(seed=cfg.seed)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = build_model(spec, operator, rng)
    state = AdamState(model.params)
    for epoch in range(1, cfg.max_epochs + 1):
        tape = Tape()
        try:
            logp = model.forward(ds.features, tape=tape, training=True,
                                 rng=rng, dropout_p=cfg.dropout_p)
            loss = nll_loss(logp, ds.labels, ds.train_mask)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise DivergenceError("training loss is not finite")
            grads = tape.backward(loss)
            adam_step(model.params, grads, state, cfg)
            val_loss, val_acc = evaluate(model, ds, ds.val_mask)
        except (DivergenceError, StiffnessError, FloatingPointError) as exc:
            rec.failed = True
            rec.fail_epoch = epoch
            rec.fail_reason = f"{type(exc).__name__}: {exc}"
            break
        rec.train_loss.append(loss_val)
        rec.val_loss.append(val_loss)
        rec.val_acc.append(val_acc)
        rec.epochs_run = epoch
        if cfg.early_stop is not None and cfg.early_stop.hit(val_acc, val_loss):
            rec.stopped_early = True
            break
    if not rec.failed:
        rec.test_loss, rec.test_acc = evaluate(model, ds, ds.test_mask)
    rec.wall_time = time.perf_counter() - start
    return rec


def multi_seed(spec: ModelSpec, ds: Dataset, cfg: TrainConfig, n_seeds: int,
               jobs: int = 1) -> tuple[AggregateStats, list[RunRecord]]:
    """Run seeds 0..n-1; results are identical for any job count."""
    if n_seeds < 1:
        raise ConfigError(f"need at least one seed, got {n_seeds}")
    if jobs < 1:
        raise ConfigError(f"job count must be >= 1, got {jobs}")
    operator = build_operator(ds, spec.propagation)
    configs = [replace(cfg, seed=s) for s in range(n_seeds)]
    if jobs == 1:
        records = [train_run(spec, ds, c, operator) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(
                lambda c: train_run(spec, ds, c, operator), configs))
    return AggregateStats.from_records(records), records
