"""Model construction for the discrete and continuous residual variants.

Depth-k models stack graph convolutions with widths (in, h, ..., h, c).
Interior positions carry the variant's block type; between-layer transforms
follow the variant's placement rules:

    gcn           plain convolutions, dropout in every gap
    gcn-norm      dropout in the first gap, group norm in the others
    res           interior residual blocks, dropout in every gap
    res-norm      dropout first gap, group norm in the others
    res-fullnorm  group norm in every gap (no dropout)
    ode-norm      interior ODE blocks, dropout first gap, group norm inside
                  the field, nothing in later gaps
    ode-fullnorm  group norm in the first gap and inside the field

ReLU follows every convolution except the last, inside the layer and hence
before any gap normalization. Residual and ODE block outputs are not
re-activated.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .graph import SparseMatrix
from .layers import (
    Binding,
    GroupNormParams,
    LayerParams,
    OdeField,
    Parameter,
    gcn_forward,
    init_group_norm,
    init_params,
)
from .odeint import OdeSolverConfig, ode_solve_node
from .tensor import (
    ConfigError,
    Tape,
    Tensor,
    add,
    dropout,
    group_norm,
    log_softmax,
    slice_cols,
)

VARIANTS = ("gcn", "gcn-norm", "res", "res-norm", "res-fullnorm",
            "ode-norm", "ode-fullnorm")


@dataclass
class ModelSpec:
    variant: str
    layers: int
    in_features: int
    num_classes: int
    hidden: int = 16
    input_dropout: bool = False
    init: str = "uniform"
    residual_stride: int = 1
    norm_groups: int = 4
    norm_eps: float = 1e-5
    propagation: str = "row"
    solver: OdeSolverConfig | None = None
    slice_output: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.layers < 2:
            raise ConfigError(f"need at least 2 layers, got {self.layers}")
        if self.hidden < 1 or self.in_features < 1:
            raise ConfigError("feature widths must be positive")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.init not in ("uniform", "glorot"):
            raise ConfigError(f"unknown init scheme {self.init!r}")
        if self.residual_stride not in (1, 2):
            raise ConfigError(
                f"residual stride must be 1 or 2, got {self.residual_stride}")
        if self.propagation not in ("row", "symmetric"):
            raise ConfigError(f"unknown propagation {self.propagation!r}")
        if self._has_norm() and (self.norm_groups < 1
                                 or self.hidden % self.norm_groups != 0):
            raise ConfigError(
                f"norm groups {self.norm_groups} do not divide hidden width "
                f"{self.hidden}")
        if self.slice_output:
            if self.layers != 2 or not self.variant.startswith("res"):
                raise ConfigError(
                    "slice output requires a 2-layer residual variant")
            if self.num_classes > self.hidden:
                raise ConfigError(
                    f"cannot slice {self.num_classes} classes from width "
                    f"{self.hidden}")

    def _has_norm(self) -> bool:
        return "norm" in self.variant

    def is_ode(self) -> bool:
        return self.variant.startswith("ode")

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "layers": self.layers,
            "in_features": self.in_features,
            "num_classes": self.num_classes,
            "hidden": self.hidden,
            "input_dropout": self.input_dropout,
            "init": self.init,
            "residual_stride": self.residual_stride,
            "norm_groups": self.norm_groups,
            "norm_eps": self.norm_eps,
            "propagation": self.propagation,
            "slice_output": self.slice_output,
            "solver": None,
        }
        if self.solver is not None:
            d["solver"] = {
                "method": self.solver.method,
                "t0": self.solver.t0,
                "t1": self.solver.t1,
                "steps": self.solver.steps,
                "rtol": self.solver.rtol,
                "atol": self.solver.atol,
                "grad_mode": self.solver.grad_mode,
                "max_evals": self.solver.max_evals,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        solver = None
        if d.get("solver") is not None:
            solver = OdeSolverConfig(**d["solver"])
        kwargs = {k: v for k, v in d.items() if k != "solver"}
        return cls(solver=solver, **kwargs)


@dataclass
class _GcnStep:
    params: LayerParams
    activation: bool


@dataclass
class _ResStep:
    stages: list  # 1 or 2 LayerParams under one skip connection


@dataclass
class _OdeStep:
    field: OdeField


@dataclass
class _DropStep:
    pass


@dataclass
class _NormStep:
    params: GroupNormParams


@dataclass
class _SliceStep:
    keep: int


class Model:
    """A built variant: ordered steps plus the parameter list."""

    def __init__(self, spec: ModelSpec, operator: SparseMatrix, steps: list):
        self.spec = spec
        self.operator = operator
        self.steps = steps
        self.params: list[Parameter] = []
        for step in steps:
            self.params.extend(_step_parameters(step))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in model")

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self.params)

    def parameters(self) -> list[Parameter]:
        return self.params

    def forward(self, x, tape: Tape | None = None, training: bool = False,
                rng: np.random.Generator | None = None,
                dropout_p: float = 0.5) -> Tensor:
        """Log class probabilities for every node."""
        if training and rng is None:
            raise ConfigError("training forward needs an RNG for dropout")
        binding = Binding(tape)
        h = x if isinstance(x, Tensor) else Tensor.constant(x)
        if self.spec.input_dropout:
            h = dropout(h, dropout_p, training, rng)
        for step in self.steps:
            h = self._apply(step, h, binding, training, rng, dropout_p)
        return log_softmax(h)

    def _apply(self, step, h, binding, training, rng, dropout_p):
        if isinstance(step, _GcnStep):
            return gcn_forward(self.operator, h, step.params, binding,
                               activation=step.activation)
        if isinstance(step, _ResStep):
            z = h
            for stage in step.stages:
                z = gcn_forward(self.operator, z, stage, binding,
                                activation=True)
            return add(h, z)
        if isinstance(step, _OdeStep):
            cfg = self.spec.solver
            return ode_solve_node(h, step.field, cfg)
        if isinstance(step, _DropStep):
            return dropout(h, dropout_p, training, rng)
        if isinstance(step, _NormStep):
            p = step.params
            return group_norm(h, p.groups, binding.get(p.gamma),
                              binding.get(p.beta), p.eps)
        if isinstance(step, _SliceStep):
            return slice_cols(h, step.keep)
        raise ConfigError(f"unknown step {step!r}")


def _step_parameters(step) -> list[Parameter]:
    if isinstance(step, _GcnStep):
        return [step.params.weight, step.params.bias]
    if isinstance(step, _ResStep):
        out = []
        for s in step.stages:
            out.extend([s.weight, s.bias])
        return out
    if isinstance(step, _OdeStep):
        return step.field.parameters()
    if isinstance(step, _NormStep):
        return [step.params.gamma, step.params.beta]
    return []


def _gap_step(spec: ModelSpec, gap_index: int, width: int):
    """The transform placed after top-level position ``gap_index``."""
    v = spec.variant
    if v in ("gcn", "res"):
        return _DropStep()
    if v in ("gcn-norm", "res-norm"):
        if gap_index == 0:
            return _DropStep()
        return _NormStep(init_group_norm(
            width, spec.norm_groups, spec.norm_eps, name=f"gap{gap_index}.norm"))
    if v == "res-fullnorm":
        return _NormStep(init_group_norm(
            width, spec.norm_groups, spec.norm_eps, name=f"gap{gap_index}.norm"))
    if v == "ode-norm":
        return _DropStep() if gap_index == 0 else None
    if v == "ode-fullnorm":
        if gap_index == 0:
            return _NormStep(init_group_norm(
                width, spec.norm_groups, spec.norm_eps,
                name=f"gap{gap_index}.norm"))
        return None
    raise ConfigError(f"unknown variant {v!r}")


def _interior_blocks(spec: ModelSpec, operator: SparseMatrix,
                     rng: np.random.Generator) -> list:
    """Group the k-2 interior positions into blocks honoring the stride."""
    count = spec.layers - 2
    h = spec.hidden
    if spec.variant.startswith("gcn"):
        # plain convolutions; the stride only groups skip connections
        return [
            _GcnStep(init_params(h, h, spec.init, rng, name=f"layer{i + 1}"),
                     activation=True)
            for i in range(count)
        ]
    if spec.residual_stride == 1:
        sizes = [1] * count
    else:
        sizes = [2] * (count // 2) + ([1] if count % 2 else [])
    blocks = []
    for bi, size in enumerate(sizes):
        if spec.is_ode():
            stages = [
                init_params(h + 1, h, spec.init, rng,
                            name=f"ode{bi + 1}.stage{si}")
                for si in range(size)
            ]
            norm = init_group_norm(h, spec.norm_groups, spec.norm_eps,
                                   name=f"ode{bi + 1}.norm")
            blocks.append(_OdeStep(OdeField(operator, stages, norm)))
        else:
            stages = [
                init_params(h, h, spec.init, rng,
                            name=f"res{bi + 1}.stage{si}")
                for si in range(size)
            ]
            blocks.append(_ResStep(stages))
    return blocks


def build_model(spec: ModelSpec, operator: SparseMatrix,
                rng: np.random.Generator) -> Model:
    """Assemble the step sequence for a variant."""
    spec.validate()
    if operator.shape[0] != operator.shape[1]:
        raise ConfigError(f"operator must be square, got {operator.shape}")
    if spec.is_ode() and spec.solver is None:
        spec.solver = OdeSolverConfig()
    if spec.solver is not None:
        spec.solver.validate()
    if spec.slice_output:
        return _build_two_layer_slice(spec, operator, rng)

    h, c = spec.hidden, spec.num_classes
    layers: list = [
        _GcnStep(init_params(spec.in_features, h, spec.init, rng,
                             name="layer0"), activation=True)
    ]
    layers.extend(_interior_blocks(spec, operator, rng))
    last_index = len(layers)
    layers.append(_GcnStep(
        init_params(h, c, spec.init, rng, name=f"layer{last_index}"),
        activation=False))

    steps: list = []
    for i, layer in enumerate(layers):
        steps.append(layer)
        if i < len(layers) - 1:
            gap = _gap_step(spec, i, h)
            if gap is not None:
                steps.append(gap)
    return Model(spec, operator, steps)


def build_two_layer_slice(spec: ModelSpec, operator: SparseMatrix,
                          rng: np.random.Generator) -> Model:
    """Two-layer residual model reading class scores off the first columns."""
    spec.slice_output = True
    spec.validate()
    return _build_two_layer_slice(spec, operator, rng)


def _build_two_layer_slice(spec, operator, rng) -> Model:
    h = spec.hidden
    steps: list = [
        _GcnStep(init_params(spec.in_features, h, spec.init, rng,
                             name="layer0"), activation=True),
        _DropStep(),
        _ResStep([init_params(h, h, spec.init, rng, name="res1.stage0")]),
        _SliceStep(spec.num_classes),
    ]
    return Model(spec, operator, steps)


_CHECKPOINT_FORMAT = "resgcn-checkpoint-v1"


def save_checkpoint(model: Model, path: str) -> None:
    """Single-file checkpoint: length-prefixed JSON header plus f64 blob."""
    tensors = {}
    offset = 0
    for p in model.params:
        tensors[p.name] = {"shape": list(p.data.shape), "offset": offset}
        offset += p.data.size * 8
    header = {
        "format": _CHECKPOINT_FORMAT,
        "spec": model.spec.to_dict(),
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str, operator: SparseMatrix) -> Model:
    """Rebuild the model and restore parameters bit-exactly."""
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        blob = fh.read()
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"not a checkpoint file: {path}")
    spec = ModelSpec.from_dict(header["spec"])
    model = build_model(spec, operator, np.random.default_rng(0))
    byname = {p.name: p for p in model.params}
    if set(byname) != set(header["tensors"]):
        raise ConfigError(
            "checkpoint parameter names do not match the rebuilt model")
    for name, meta in header["tensors"].items():
        p = byname[name]
        shape = tuple(meta["shape"])
        if shape != p.data.shape:
            raise ConfigError(
                f"checkpoint tensor {name} has shape {shape}, "
                f"model expects {p.data.shape}")
        start = meta["offset"]
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=start).reshape(shape)
        p.data = arr.astype(np.float64).copy()
    return model
