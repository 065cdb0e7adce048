"""Graph convolution layers and the continuous residual vector field."""

from __future__ import annotations

import numpy as np

from .graph import SparseMatrix, spmm
from .tensor import (
    ConfigError,
    ShapeError,
    Tape,
    Tensor,
    add,
    add_bias,
    concat_time_column,
    group_norm,
    matmul,
    relu,
)


class Parameter:
    """Named array slot visible to the optimizer.

    ``is_weight`` marks kernels that receive L2 weight decay; biases and
    normalization affines do not.
    """

    __slots__ = ("name", "data", "is_weight")

    def __init__(self, name: str, data: np.ndarray, is_weight: bool):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.is_weight = is_weight

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class LayerParams:
    """Kernel and bias of one graph convolution."""

    __slots__ = ("weight", "bias")

    def __init__(self, weight: Parameter, bias: Parameter):
        self.weight = weight
        self.bias = bias

    @property
    def in_features(self) -> int:
        return self.weight.data.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.data.shape[1]


class GroupNormParams:
    """Learned affine of one group-norm placement."""

    __slots__ = ("gamma", "beta", "groups", "eps")

    def __init__(self, gamma: Parameter, beta: Parameter, groups: int, eps: float):
        self.gamma = gamma
        self.beta = beta
        self.groups = groups
        self.eps = eps


INIT_SCHEMES = ("uniform", "glorot")


def init_params(in_features: int, out_features: int, scheme: str,
                rng: np.random.Generator, name: str = "layer") -> LayerParams:
    """Sample a kernel and bias.

    uniform: W, b ~ U(-sqrt(1/out), sqrt(1/out))
    glorot:  W ~ U(-sqrt(6/(in+out)), sqrt(6/(in+out))), b = 0
    """
    if in_features < 1 or out_features < 1:
        raise ConfigError(
            f"layer dimensions must be positive, got {in_features}x{out_features}")
    if scheme == "uniform":
        bound = np.sqrt(1.0 / out_features)
        w = rng.uniform(-bound, bound, size=(in_features, out_features))
        b = rng.uniform(-bound, bound, size=out_features)
    elif scheme == "glorot":
        bound = np.sqrt(6.0 / (in_features + out_features))
        w = rng.uniform(-bound, bound, size=(in_features, out_features))
        b = np.zeros(out_features)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return LayerParams(
        weight=Parameter(f"{name}.weight", w, is_weight=True),
        bias=Parameter(f"{name}.bias", b, is_weight=False),
    )


def init_group_norm(width: int, groups: int, eps: float,
                    name: str = "norm") -> GroupNormParams:
    if groups < 1 or width % groups != 0:
        raise ConfigError(f"group count {groups} does not divide width {width}")
    return GroupNormParams(
        gamma=Parameter(f"{name}.gamma", np.ones(width), is_weight=False),
        beta=Parameter(f"{name}.beta", np.zeros(width), is_weight=False),
        groups=groups,
        eps=eps,
    )


class Binding:
    """Per-pass map from Parameter to its leaf tensor on one tape.

    Binding the same parameter twice returns the same leaf, so a parameter
    shared by several calls accumulates one gradient.
    """

    def __init__(self, tape: Tape | None):
        self.tape = tape
        self._leaves: dict[Parameter, Tensor] = {}

    def get(self, p: Parameter) -> Tensor:
        if self.tape is None:
            return Tensor.constant(p.data)
        leaf = self._leaves.get(p)
        if leaf is None:
            leaf = self.tape.leaf(p.data, tag=p)
            self._leaves[p] = leaf
        return leaf


def gcn_forward(op: SparseMatrix, h: Tensor, params: LayerParams,
                binding: Binding, activation: bool = True) -> Tensor:
    """One propagation step: relu?(op @ (h W) + b)."""
    if h.ndim != 2 or h.shape[1] != params.in_features:
        raise ShapeError(
            f"gcn_forward: input width {h.shape} does not match kernel "
            f"{params.weight.data.shape}")
    z = matmul(h, binding.get(params.weight))
    z = spmm(op, z)
    z = add_bias(z, binding.get(params.bias))
    return relu(z) if activation else z


def res_gcn_forward(op: SparseMatrix, h: Tensor, params: LayerParams,
                    binding: Binding) -> Tensor:
    """Residual step: h + relu(op @ (h W) + b). Requires square kernel."""
    if params.in_features != params.out_features:
        raise ShapeError(
            f"residual layer needs a square kernel, got "
            f"{params.in_features}x{params.out_features}")
    if h.shape[1] != params.in_features:
        raise ShapeError(
            f"res_gcn_forward: input width {h.shape[1]} != {params.in_features}")
    return add(h, gcn_forward(op, h, params, binding, activation=True))


class OdeField:
    """Right-hand side of dH/dt for a continuous residual block.

    Each stage concatenates the current time as an extra input column, so a
    stage kernel maps (d+1) -> d. An optional group norm is applied to the
    state (before the time concat) ahead of the first stage.
    """

    def __init__(self, operator: SparseMatrix, stages: list[LayerParams],
                 norm: GroupNormParams | None = None):
        if not stages:
            raise ConfigError("ode field needs at least one stage")
        for s in stages:
            if s.in_features != s.out_features + 1:
                raise ShapeError(
                    f"ode stage kernel must map (d+1) -> d, got "
                    f"{s.in_features}x{s.out_features}")
        self.operator = operator
        self.stages = stages
        self.norm = norm

    @property
    def width(self) -> int:
        return self.stages[0].out_features

    def parameters(self) -> list[Parameter]:
        ps: list[Parameter] = []
        for s in self.stages:
            ps.extend([s.weight, s.bias])
        if self.norm is not None:
            ps.extend([self.norm.gamma, self.norm.beta])
        return ps

    def bind(self, tape: Tape | None) -> "BoundOdeField":
        return BoundOdeField(self, Binding(tape))


class BoundOdeField:
    """OdeField with parameters materialized on one tape."""

    def __init__(self, field: OdeField, binding: Binding):
        self.field = field
        self.binding = binding

    def __call__(self, t: float, h: Tensor) -> Tensor:
        f = self.field
        h = h if isinstance(h, Tensor) else Tensor.constant(h)
        if h.shape[1] != f.width:
            raise ShapeError(
                f"ode field: state width {h.shape[1]} != {f.width}")
        z = h
        for i, stage in enumerate(f.stages):
            if i == 0 and f.norm is not None:
                z = group_norm(z, f.norm.groups, self.binding.get(f.norm.gamma),
                               self.binding.get(f.norm.beta), f.norm.eps)
            z = concat_time_column(z, t)
            z = matmul(z, self.binding.get(stage.weight))
            z = spmm(f.operator, z)
            z = add_bias(z, self.binding.get(stage.bias))
            z = relu(z)
        return z


def ode_field_eval(t: float, h: Tensor, field: OdeField,
                   binding: Binding | None = None) -> Tensor:
    """Evaluate the field once; convenience wrapper around a binding."""
    bound = BoundOdeField(field, binding if binding is not None else Binding(None))
    return bound(t, h)
