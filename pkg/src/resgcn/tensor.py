"""Dense float64 tensors recorded on a reverse-mode differentiation tape.

The tape is an append-only list of nodes in topological order: every node's
parents precede it, so one reverse sweep from a scalar loss accumulates
gradients for every reachable leaf. Tapes are passed explicitly; there is no
global state, so several tapes can coexist (the adjoint ODE path records
throwaway sub-tapes while a training tape is live).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class ConfigError(ValueError):
    """A parameter is outside its valid domain."""


class ContractError(RuntimeError):
    """An API precondition was violated (wrong tape, non-scalar loss, ...)."""


_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Toggle post-op NaN/Inf assertions (cheap insurance for tests)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


def _assert_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced non-finite values")


class Tensor:
    """Immutable view of a float64 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "gid")

    def __init__(self, data, tape: "Tape | None" = None, gid: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.gid = gid

    @classmethod
    def constant(cls, data) -> "Tensor":
        return cls(data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = "leaf" if self.tape is not None and self.tape.is_leaf(self.gid) else (
            "node" if self.tape is not None else "const")
        return f"Tensor({tag}, shape={self.data.shape})"

    # Arithmetic used by the solvers and tests. Scalars fold in as constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class GradMap:
    """Leaf gradients from one backward pass.

    Indexable by leaf tensor (returns a constant Tensor of the leaf's shape)
    or, for leaves registered with a tag, by the tag object via ``by_tag``.
    """

    def __init__(self, by_gid: dict[int, np.ndarray], tags: dict[int, object]):
        self._by_gid = by_gid
        self._by_tag = {tag: by_gid[gid] for gid, tag in tags.items()}

    def __getitem__(self, leaf: Tensor) -> Tensor:
        return Tensor.constant(self.raw(leaf))

    def raw(self, leaf: Tensor) -> np.ndarray:
        if leaf.gid is None or leaf.gid not in self._by_gid:
            raise ContractError("tensor is not a leaf of this tape")
        return self._by_gid[leaf.gid]

    def by_tag(self, tag) -> np.ndarray:
        return self._by_tag[tag]

    def __contains__(self, leaf: Tensor) -> bool:
        return leaf.gid in self._by_gid

    def __len__(self) -> int:
        return len(self._by_gid)


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._pullbacks: list = []
        self._leaf_data: dict[int, np.ndarray] = {}
        self._leaf_tags: dict[int, object] = {}
        self._consumed = False

    def __len__(self) -> int:
        return len(self._parents)

    def is_leaf(self, gid) -> bool:
        return gid in self._leaf_data

    def _check_open(self) -> None:
        if self._consumed:
            raise ContractError("tape already consumed by backward; call reset()")

    def leaf(self, data, tag=None) -> Tensor:
        """Register a differentiation root. ``tag`` keys GradMap.by_tag."""
        self._check_open()
        t = Tensor(data, tape=self, gid=len(self._parents))
        self._parents.append(())
        self._pullbacks.append(None)
        self._leaf_data[t.gid] = t.data
        if tag is not None:
            self._leaf_tags[t.gid] = tag
        return t

    def record(self, data, parents: tuple[Tensor, ...], pullback) -> Tensor:
        """Append an op result. ``pullback(g)`` returns one array per parent."""
        self._check_open()
        for p in parents:
            if p.tape is not self:
                raise ContractError("parent tensor belongs to a different tape")
        t = Tensor(data, tape=self, gid=len(self._parents))
        self._parents.append(tuple(p.gid for p in parents))
        self._pullbacks.append(pullback)
        return t

    def backward(self, loss: Tensor) -> GradMap:
        """Reverse sweep from a scalar; afterwards the tape needs reset()."""
        if loss.tape is not self:
            raise ContractError("loss does not live on this tape")
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._check_open()
        grads: dict[int, np.ndarray] = {loss.gid: np.ones_like(loss.data)}
        for nid in range(loss.gid, -1, -1):
            if nid not in grads:
                continue
            pb = self._pullbacks[nid]
            if pb is None:
                continue  # leaf: leave its accumulated gradient in place
            g = grads.pop(nid)
            for pid, pg in zip(self._parents[nid], pb(g)):
                if pg is None:
                    continue
                have = grads.get(pid)
                grads[pid] = pg if have is None else have + pg
        self._consumed = True
        leaf_grads = {
            gid: grads.get(gid, np.zeros_like(data))
            for gid, data in self._leaf_data.items()
        }
        return GradMap(leaf_grads, dict(self._leaf_tags))

    def reset(self) -> None:
        self._parents.clear()
        self._pullbacks.clear()
        self._leaf_data.clear()
        self._leaf_tags.clear()
        self._consumed = False


def backward(loss: Tensor) -> GradMap:
    if loss.tape is None:
        raise ContractError("loss is a constant; nothing to differentiate")
    return loss.tape.backward(loss)


def _single_tape(*tensors: Tensor) -> "Tape | None":
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands live on different tapes")
    return tape


def _emit(op: str, out: np.ndarray, inputs: list[tuple[Tensor, object]]) -> Tensor:
    """Record ``out`` if any input is on a tape; constants stay constants.

    ``inputs`` pairs each operand with its vjp closure (or None for operands
    that never receive gradient).
    """
    _assert_finite(out, op)
    tape = _single_tape(*(t for t, _ in inputs))
    if tape is None:
        return Tensor.constant(out)
    tracked = [(t, vjp) for t, vjp in inputs if t.tape is tape and vjp is not None]
    parents = tuple(t for t, _ in tracked)
    vjps = tuple(vjp for _, vjp in tracked)

    def pullback(g):
        return tuple(vjp(g) for vjp in vjps)

    return tape.record(out, parents, pullback)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.constant(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data
    return _emit("matmul", out, [
        (a, lambda g: g @ bd.T),
        (b, lambda g: ad.T @ g),
    ])


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit("add", a.data + b.data, [
        (a, lambda g: g),
        (b, lambda g: g),
    ])


def add_scalar(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit("add_scalar", a.data + c, [(a, lambda g: g)])


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit("scale", a.data * c, [(a, lambda g: g * c)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, [
        (a, lambda g: g * bd),
        (b, lambda g: g * ad),
    ])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (n, d) + (d,)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: shape mismatch {x.shape} + {b.shape}")
    return _emit("add_bias", x.data + b.data, [
        (x, lambda g: g),
        (b, lambda g: g.sum(axis=0)),
    ])


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    keep = x.data > 0.0
    return _emit("relu", np.where(keep, x.data, 0.0), [
        (x, lambda g: g * keep),
    ])


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; eval mode (or p == 0) is the exact identity."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    factor = keep / (1.0 - p)
    return _emit("dropout", x.data * factor, [
        (x, lambda g: g * factor),
    ])


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Per-row group normalization over feature groups, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 2:
        raise ShapeError(f"group_norm expects a matrix, got shape {x.shape}")
    n, d = x.shape
    if groups < 1 or d % groups != 0:
        raise ConfigError(f"group count {groups} does not divide feature width {d}")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"group_norm affine params must have shape ({d},), "
            f"got {gamma.shape} and {beta.shape}")
    m = d // groups
    xg = x.data.reshape(n, groups, m)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)  # population variance
    istd = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * istd).reshape(n, d)
    out = xhat * gamma.data + beta.data
    gdat = gamma.data

    def vjp_x(g):
        dxhat = (g * gdat).reshape(n, groups, m)
        xh = xhat.reshape(n, groups, m)
        term = dxhat - dxhat.mean(axis=2, keepdims=True) \
            - xh * (dxhat * xh).mean(axis=2, keepdims=True)
        return (term * istd).reshape(n, d)

    return _emit("group_norm", out, [
        (x, vjp_x),
        (gamma, lambda g: (g * xhat).sum(axis=0)),
        (beta, lambda g: g.sum(axis=0)),
    ])


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax, max-shifted for stability."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"log_softmax expects a matrix, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    sm = np.exp(out)
    return _emit("log_softmax", out, [
        (x, lambda g: g - sm * g.sum(axis=1, keepdims=True)),
    ])


def nll_loss(logp: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log likelihood over the rows selected by ``mask``."""
    logp = _as_tensor(logp)
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if logp.ndim != 2:
        raise ShapeError(f"nll_loss expects log-probabilities matrix, got {logp.shape}")
    if mask.size == 0:
        raise ConfigError("nll_loss: empty index mask")
    n, c = logp.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    picked = labels[mask]
    if picked.min() < 0 or picked.max() >= c:
        raise ConfigError(f"labels must lie in [0, {c})")
    k = mask.size
    out = -logp.data[mask, picked].sum() / k

    def vjp(g):
        grad = np.zeros_like(logp.data)
        np.subtract.at(grad, (mask, picked), float(g) / k)
        return grad

    return _emit("nll_loss", np.asarray(out), [(logp, vjp)])


def concat_time_column(x: Tensor, t: float) -> Tensor:
    """Append a constant column of ``t``; gradient w.r.t. t is discarded."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"concat_time_column expects a matrix, got {x.shape}")
    n, d = x.shape
    out = np.concatenate([x.data, np.full((n, 1), float(t))], axis=1)
    return _emit("concat_time_column", out, [
        (x, lambda g: g[:, :d]),
    ])


def slice_cols(x: Tensor, c: int) -> Tensor:
    """Keep the first ``c`` columns; gradient zero-pads the dropped ones."""
    x = _as_tensor(x)
    if x.ndim != 2 or not 0 < c <= x.shape[1]:
        raise ShapeError(f"slice_cols: cannot take {c} columns from shape {x.shape}")
    n, d = x.shape

    def vjp(g):
        out = np.zeros((n, d))
        out[:, :c] = g
        return out

    return _emit("slice_cols", x.data[:, :c].copy(), [(x, vjp)])


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    x = _as_tensor(x)
    shape = x.shape
    return _emit("tsum", np.asarray(x.data.sum()), [
        (x, lambda g: np.broadcast_to(g, shape).astype(np.float64)),
    ])
