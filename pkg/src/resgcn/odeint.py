"""Explicit ODE solvers usable on arrays and on autodiff tensors.

States are duck-typed: anything supporting ``a + b`` and ``a * float`` works
(np.ndarray, Tensor, the augmented adjoint state below). Gradient modes:

discretize  record the solver's arithmetic on the live tape and backprop
            through the realized discretization (step-size control reads
            raw values and is treated as non-differentiable);
adjoint     integrate the augmented system (state, costate, parameter
            gradients) backward in time, re-evaluating the field on fresh
            sub-tapes instead of checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import Binding, OdeField
from .tensor import ConfigError, GradMap, Tape, Tensor, mul, tsum


class DivergenceError(RuntimeError):
    """The state became non-finite on a fixed grid."""


class StiffnessError(RuntimeError):
    """Adaptive stepping underflowed or exhausted its evaluation budget."""


@dataclass
class OdeSolverConfig:
    method: str = "dopri5"           # "rk4" | "dopri5"
    t0: float = 0.0
    t1: float = 1.0
    steps: int = 8                   # rk4 only
    rtol: float = 1e-3               # dopri5 only
    atol: float = 1e-3
    grad_mode: str = "discretize"    # | "adjoint"
    max_evals: int = 20000

    def validate(self) -> None:
        if self.method not in ("rk4", "dopri5"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.grad_mode not in ("discretize", "adjoint"):
            raise ConfigError(f"unknown gradient mode {self.grad_mode!r}")
        if self.steps < 1:
            raise ConfigError(f"rk4 step count must be >= 1, got {self.steps}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError(
                f"tolerances must be positive, got rtol={self.rtol} atol={self.atol}")
        if self.max_evals < 10:
            raise ConfigError(f"max_evals too small: {self.max_evals}")


@dataclass
class SolveStats:
    field_evaluations: int = 0
    accepted_steps: int = 0
    rejected_steps: int = 0


def _state_array(y) -> np.ndarray:
    """Raw values of a state, for error norms and divergence checks."""
    if isinstance(y, Tensor):
        return y.data
    if isinstance(y, np.ndarray):
        return y
    return y.flat_array()


def rk4_integrate(field, y0, cfg: OdeSolverConfig):
    """Classical fixed-grid fourth-order Runge-Kutta."""
    cfg.validate()
    span = cfg.t1 - cfg.t0
    stats = SolveStats()
    y = y0
    if span == 0.0:
        return y, stats
    h = span / cfg.steps
    t = cfg.t0
    for i in range(cfg.steps):
        k1 = field(t, y)
        k2 = field(t + h / 2.0, y + k1 * (h / 2.0))
        k3 = field(t + h / 2.0, y + k2 * (h / 2.0))
        k4 = field(t + h, y + k3 * h)
        stats.field_evaluations += 4
        y = y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
        stats.accepted_steps += 1
        t = cfg.t0 + (i + 1) * h
        if not np.all(np.isfinite(_state_array(y))):
            raise DivergenceError(f"state became non-finite at step {i + 1}")
    return y, stats


# Dormand-Prince 5(4) tableau. The last row of A equals B, so the seventh
# stage is the first stage of the next step (FSAL).
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0),
)
_DP_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
         11.0 / 84.0, 0.0)
_DP_BHAT = (5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0,
            -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0)
_DP_E = tuple(b - bh for b, bh in zip(_DP_B, _DP_BHAT))

_SAFETY = 0.9
_BETA = 0.04                  # PI stabilization
_EXPO = 0.2 - _BETA * 0.75
_MIN_FACTOR = 0.2             # max shrink per step
_MAX_FACTOR = 10.0            # max growth per step


def _error_norm(k, y_arr, ynew_arr, h, rtol, atol) -> float:
    """RMS of the embedded error over atol + rtol * max(|y|, |y_new|)."""
    err = sum(_state_array(ki) * (coef * h) for ki, coef in zip(k, _DP_E)
              if coef != 0.0)
    scale = atol + rtol * np.maximum(np.abs(y_arr), np.abs(ynew_arr))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(field, y0, f0, cfg: OdeSolverConfig, stats: SolveStats):
    """Hairer-style first step guess; a near-zero field takes the full span."""
    span = cfg.t1 - cfg.t0
    direction = 1.0 if span > 0 else -1.0
    y_arr = _state_array(y0)
    f_arr = _state_array(f0)
    scale = cfg.atol + cfg.rtol * np.abs(y_arr)
    d0 = float(np.sqrt(np.mean((y_arr / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f_arr / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    if not np.isfinite(h0):  # a NaN field must not poison the step size
        h0 = 1e-6
    y1 = y0 + f0 * (h0 * direction)
    f1 = field(cfg.t0 + h0 * direction, y1)
    stats.field_evaluations += 1
    d2 = float(np.sqrt(np.mean(
        ((_state_array(f1) - f_arr) / scale) ** 2))) / h0
    if d1 <= 1e-14 and d2 <= 1e-14:
        return abs(span)
    h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, abs(span))


def dopri5_integrate(field, y0, cfg: OdeSolverConfig):
    """Adaptive Dormand-Prince 5(4) with a PI step controller and FSAL."""
    cfg.validate()
    span = cfg.t1 - cfg.t0
    stats = SolveStats()
    if span == 0.0:
        return y0, stats
    direction = 1.0 if span > 0 else -1.0
    t = cfg.t0
    y = y0
    k1 = field(t, y)
    stats.field_evaluations += 1
    h = _initial_step(field, y, k1, cfg, stats)
    min_step = 1e-12 * max(abs(cfg.t0), abs(cfg.t1), 1.0)
    facold = 1e-4
    just_rejected = False
    while (cfg.t1 - t) * direction > 0:
        h = min(h, abs(cfg.t1 - t))
        if h < min_step:
            raise StiffnessError(
                f"step size underflow ({h:.3e}) at t={t:.6f}; "
                "problem appears stiff for an explicit method")
        hs = h * direction
        k = [k1]
        # Stage 7 sits at t+h with A-row equal to B, so its input is the
        # 5th-order solution itself and its value seeds the next step (FSAL).
        y_new = None
        for i in range(1, 7):
            yi = y
            for aij, kj in zip(_DP_A[i], k):
                if aij != 0.0:
                    yi = yi + kj * (aij * hs)
            k.append(field(t + _DP_C[i] * hs, yi))
            if i == 6:
                y_new = yi
        stats.field_evaluations += 6
        if stats.field_evaluations > cfg.max_evals:
            raise StiffnessError(
                f"evaluation budget exceeded ({cfg.max_evals}) at t={t:.6f}")
        err = _error_norm(k, _state_array(y), _state_array(y_new), hs,
                          cfg.rtol, cfg.atol)
        if not np.isfinite(err):
            stats.rejected_steps += 1
            just_rejected = True
            h *= 0.25
            continue
        if err <= 1.0:
            t = t + hs
            y = y_new
            k1 = k[6]
            stats.accepted_steps += 1
            # PI controller (Hairer DOPRI5): damp growth by the previous
            # error so step sizes do not oscillate.
            fac11 = max(err, 1e-10) ** _EXPO
            fac = fac11 / (facold ** _BETA) / _SAFETY
            fac = min(1.0 / _MIN_FACTOR, max(1.0 / _MAX_FACTOR, fac))
            grow = 1.0 / fac
            if just_rejected:
                grow = min(grow, 1.0)
            h *= grow
            facold = max(err, 1e-4)
            just_rejected = False
        else:
            stats.rejected_steps += 1
            just_rejected = True
            h *= max(_MIN_FACTOR, _SAFETY * err ** (-0.2))
    if not np.all(np.isfinite(_state_array(y))):
        raise DivergenceError("state became non-finite at the final time")
    return y, stats


def integrate(field, y0, cfg: OdeSolverConfig):
    if cfg.method == "rk4":
        return rk4_integrate(field, y0, cfg)
    return dopri5_integrate(field, y0, cfg)


class _Aug:
    """Augmented adjoint state: (state, costate, per-parameter gradients)."""

    __slots__ = ("parts",)

    def __init__(self, parts: list[np.ndarray]):
        self.parts = parts

    def __add__(self, other: "_Aug") -> "_Aug":
        return _Aug([a + b for a, b in zip(self.parts, other.parts)])

    def __mul__(self, c: float) -> "_Aug":
        return _Aug([a * c for a in self.parts])

    def flat_array(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parts])


def _field_vjp(field: OdeField, t: float, h_data: np.ndarray,
               a_data: np.ndarray):
    """Field value plus vector-Jacobian products against the costate."""
    tape = Tape()
    h_leaf = tape.leaf(h_data)
    bound = field.bind(tape)
    f = bound(t, h_leaf)
    pseudo = tsum(mul(f, Tensor.constant(a_data)))
    gm = tape.backward(pseudo)
    gh = gm.raw(h_leaf)
    gps = [gm.by_tag(p) for p in field.parameters()]
    return f.data, gh, gps


def adjoint_backward(field: OdeField, y1_data: np.ndarray,
                     loss_grad: np.ndarray, cfg: OdeSolverConfig):
    """Integrate the augmented system from t1 back to t0.

    Returns (dL/dh0, [dL/dp for p in field.parameters()]).
    """
    params = field.parameters()
    s1 = _Aug([np.array(y1_data, dtype=np.float64),
               np.array(loss_grad, dtype=np.float64),
               *[np.zeros_like(p.data) for p in params]])

    def aug_field(t: float, s: _Aug) -> _Aug:
        f_val, gh, gps = _field_vjp(field, t, s.parts[0], s.parts[1])
        return _Aug([f_val, -gh, *[-gp for gp in gps]])

    back = replace(cfg, t0=cfg.t1, t1=cfg.t0)
    s0, _ = integrate(aug_field, s1, back)
    return s0.parts[1], list(s0.parts[2:])


def ode_solve_node(h: Tensor, field: OdeField, cfg: OdeSolverConfig) -> Tensor:
    """Apply an ODE block inside a model forward pass.

    With no tape or in discretize mode the solver arithmetic runs directly
    (recorded when a tape is live). In adjoint mode the forward integrates
    on raw arrays and a single tape node replays gradients via the
    augmented backward solve.
    """
    tape = h.tape
    if tape is None or cfg.grad_mode == "discretize":
        bound = field.bind(tape)
        y, _ = integrate(bound, h, cfg)
        return y
    params = field.parameters()
    binding = Binding(tape)
    leaves = [binding.get(p) for p in params]
    y_const, _ = integrate(field.bind(None), Tensor.constant(h.data), cfg)
    y_data = y_const.data

    def pullback(g):
        gh0, gps = adjoint_backward(field, y_data, g, cfg)
        return (gh0, *gps)

    return tape.record(y_data, (h, *leaves), pullback)


def solve_with_grad(field: OdeField, h0: np.ndarray, cfg: OdeSolverConfig,
                    loss_grad_at_t1: np.ndarray):
    """Integrate h0 through the field and pull ``loss_grad_at_t1`` back.

    Returns (result array, GradMap). The GradMap is keyed by tag: the
    string \"h0\" for the initial state and each field Parameter object.
    """
    cfg.validate()
    h0 = np.asarray(h0, dtype=np.float64)
    loss_grad = np.asarray(loss_grad_at_t1, dtype=np.float64)
    if loss_grad.shape != h0.shape:
        raise ConfigError(
            f"loss gradient shape {loss_grad.shape} != state shape {h0.shape}")
    params = field.parameters()
    if cfg.grad_mode == "discretize":
        tape = Tape()
        leaf = tape.leaf(h0, tag="h0")
        bound = field.bind(tape)
        y, _ = integrate(bound, leaf, cfg)
        pseudo = tsum(mul(y, Tensor.constant(loss_grad)))
        gm = tape.backward(pseudo)
        return y.data, gm
    y_const, _ = integrate(field.bind(None), Tensor.constant(h0), cfg)
    gh0, gps = adjoint_backward(field, y_const.data, loss_grad, cfg)
    by_gid = {0: gh0}
    tags = {0: "h0"}
    for i, (p, gp) in enumerate(zip(params, gps), start=1):
        by_gid[i] = gp
        tags[i] = p
    return y_const.data, GradMap(by_gid, tags)
