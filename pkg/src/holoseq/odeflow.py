"""Flows of coefficient sequences.

Integrates the two sequence-valued initial value problems behind expectation
functionals: the linear flow c' = L(c) (whose evaluation at the start state
gives E[h(X_T)]) and the quadratic flow psi' = R(psi) (whose evaluated
exponential gives E[exp h(X_T)]). A third route recovers psi from the linear
flow by a *-logarithm, tracking the degree-zero branch with an auxiliary
scalar ODE so the two quadratic routes stay comparable.

The integrators are dimension-agnostic over flat complex state vectors; the
adaptive error norm weights coefficient alpha by r^alpha / alpha! so tolerance
is enforced in the majorant metric at radius ``ref_radius``, matching how
truncation tails are measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from holoseq import series as ser
from holoseq.characteristics import Characteristics
from holoseq.generator import LinearOperator, RiccatiOperator
from holoseq.series import CoeffSeries, LeadingCoefficientError

__all__ = [
    "OdeConfig",
    "FlowResult",
    "ExpectationResult",
    "StepSizeUnderflowError",
    "FlowBudgetError",
    "dopri5",
    "rk4_fixed",
    "solve_linear",
    "solve_riccati",
    "riccati_from_linear",
    "holomorphic_expectation",
    "affine_expectation",
    "tail_mass",
    "flow_to_csv",
]


class StepSizeUnderflowError(RuntimeError):
    """Adaptive step fell below representable resolution at ``time``."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class FlowBudgetError(RuntimeError):
    """Step budget exhausted before reaching the horizon."""


@dataclass(frozen=True)
class OdeConfig:
    method: str = "rk45"
    rtol: float = 1e-9
    atol: float = 1e-12
    # None: horizon / 100
    first_step: float | None = None
    # rk4 only; None: horizon / 1000
    fixed_step: float | None = None
    max_steps: int = 1_000_000
    # radius of the majorant metric used by the adaptive error norm
    ref_radius: float = 1.0

    def __post_init__(self) -> None:
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        for name in ("first_step", "fixed_step"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive when given")


# Dormand-Prince 5(4) tableau, FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.append(_A[6], 0.0)
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_ERR = _B5 - _B4


def _norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, rtol, atol, weights) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1)) * weights
    return float(np.sqrt(np.mean((np.abs(err) * weights / scale) ** 2)))


def _merge_record(t0: float, t1: float, record) -> np.ndarray:
    pts = [t1] if record is None else [float(t) for t in record] + [t1]
    out = np.unique(np.asarray(pts, dtype=float))
    if out.size and (out[0] < t0 - 1e-14 or out[-1] > t1 * (1 + 1e-14) + 1e-14):
        raise ValueError(f"record times must lie in [{t0}, {t1}]")
    return out[out > t0 + 1e-14 * max(1.0, abs(t1))]


def dopri5(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0: np.ndarray,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    first_step: float | None = None,
    max_steps: int = 1_000_000,
    weights: np.ndarray | None = None,
    record=None,
):
    """Adaptive 5(4) pairs over a flat state; snapshots land exactly on
    requested times (steps are clipped, no interpolation)."""
    y = np.array(y0)
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=float)
    targets = _merge_record(t0, t1, record)
    times, states = [], []
    span = t1 - t0
    if span < 0:
        raise ValueError("flows run forward: need t1 >= t0")
    if span == 0 or targets.size == 0:
        return np.array([t0]), [y.copy()], {"nfev": 0, "accepted": 0, "rejected": 0}
    h = first_step if first_step is not None else span / 100
    h = min(h, span)
    t = t0
    k1 = rhs(t, y)
    nfev, accepted, rejected = 1, 0, 0
    ptr = 0
    tiny = 1e-14 * max(1.0, abs(t1))
    while ptr < targets.size:
        target = targets[ptr]
        if t >= target - tiny:
            times.append(target)
            states.append(y.copy())
            ptr += 1
            continue
        if accepted + rejected >= max_steps:
            raise FlowBudgetError(f"exceeded {max_steps} steps at t={t:.6g}")
        h_step = min(h, target - t)
        if h_step < tiny:
            raise StepSizeUnderflowError(f"step size {h_step:.3e} underflow at t={t:.6g}", t)
        k = [k1]
        y1 = y
        for s in range(1, 7):
            y1 = y + h_step * sum(a * ki for a, ki in zip(_A[s], k))
            k.append(rhs(t + _C[s] * h_step, y1))
        nfev += 6
        # the last stage argument is the 5th-order solution (FSAL pair)
        err = h_step * sum(e * ki for e, ki in zip(_ERR, k) if e != 0.0)
        en = _norm(err, y, y1, rtol, atol, w)
        if en <= 1.0:
            accepted += 1
            t = t + h_step
            y = y1
            k1 = k[6]  # FSAL: last stage was evaluated at (t, y1)
            factor = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = h_step * factor
        else:
            rejected += 1
            h = h_step * max(0.2, 0.9 * en ** -0.2)
    return np.array(times), states, {"nfev": nfev, "accepted": accepted, "rejected": rejected}


def rk4_fixed(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0: np.ndarray,
    *,
    step: float,
    max_steps: int = 1_000_000,
    record=None,
):
    """Classical fourth-order method on a fixed grid, segmented so snapshot
    times are hit exactly."""
    y = np.array(y0)
    targets = _merge_record(t0, t1, record)
    if targets.size == 0:
        return np.array([t0]), [y.copy()], {"nfev": 0, "accepted": 0, "rejected": 0}
    times, states = [], []
    t = t0
    nfev = steps = 0
    for target in targets:
        seg = target - t
        n = max(1, int(math.ceil(seg / step - 1e-12)))
        if steps + n > max_steps:
            raise FlowBudgetError(f"exceeded {max_steps} steps at t={t:.6g}")
        h = seg / n
        for _ in range(n):
            k1 = rhs(t, y)
            k2 = rhs(t + h / 2, y + (h / 2) * k1)
            k3 = rhs(t + h / 2, y + (h / 2) * k2)
            k4 = rhs(t + h, y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            nfev += 4
        steps += n
        t = target
        times.append(target)
        states.append(y.copy())
    return np.array(times), states, {"nfev": nfev, "accepted": steps, "rejected": 0}


@dataclass(frozen=True)
class FlowResult:
    """Snapshots of a sequence flow; times[0] is the first recorded time."""

    kind: str
    times: np.ndarray
    series: tuple[CoeffSeries, ...]
    stats: dict = field(default_factory=dict)

    @property
    def final(self) -> CoeffSeries:
        return self.series[-1]


@dataclass(frozen=True)
class ExpectationResult:
    value: complex
    tail: float
    radius: float
    flow: FlowResult

    def __float__(self) -> float:
        return float(self.value.real)


def _majorant_weights(dim: int, order: int, radius: float) -> np.ndarray:
    degs = ser._degrees(dim, order)
    idx, _ = ser.index_table(dim, order)
    out = np.empty(len(idx))
    for j, alpha in enumerate(idx):
        f = 1.0
        for a in alpha:
            f *= math.factorial(a)
        out[j] = radius ** degs[j] / f
    return out


def tail_mass(u: CoeffSeries, radius: float, top: int = 2) -> float:
    """Majorant mass sitting in the top ``top`` degrees: the standard
    truncation diagnostic (small tail => the reported order was enough)."""
    degs = ser._degrees(u.dim, u.order)
    w = _majorant_weights(u.dim, u.order, radius)
    mask = degs > u.order - top
    return float(np.sum(np.abs(u.coeffs[mask]) * w[mask]))


def _linear_op(model) -> Callable[[CoeffSeries], CoeffSeries]:
    return LinearOperator(model) if isinstance(model, Characteristics) else model


def _riccati_op(model) -> Callable[[CoeffSeries], CoeffSeries]:
    return RiccatiOperator(model) if isinstance(model, Characteristics) else model


def _run(rhs, T, y0, config: OdeConfig, weights, record):
    """Integrate on [0, T] and prepend the initial snapshot."""
    if config.method == "rk4":
        step = config.fixed_step if config.fixed_step is not None else T / 1000
        times, states, stats = rk4_fixed(
            rhs, 0.0, T, y0, step=step, max_steps=config.max_steps, record=record
        )
    else:
        times, states, stats = dopri5(
            rhs,
            0.0,
            T,
            y0,
            rtol=config.rtol,
            atol=config.atol,
            first_step=config.first_step,
            max_steps=config.max_steps,
            weights=weights,
            record=record,
        )
    if times.size == 0 or times[0] != 0.0:
        times = np.concatenate([[0.0], times])
        states = [np.array(y0)] + states
    return times, states, stats


def solve_linear(
    model,
    u0: CoeffSeries,
    T: float,
    config: OdeConfig | None = None,
    record=None,
) -> FlowResult:
    """c(t) with c' = L(c), c(0) = u0; model is Characteristics or a callable
    series operator."""
    config = config or OdeConfig()
    op = _linear_op(model)
    dim, order = u0.dim, u0.order

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return op(CoeffSeries(dim, order, y)).coeffs

    w = _majorant_weights(dim, order, config.ref_radius)
    times, states, stats = _run(rhs, T, u0.coeffs.copy(), config, w, record)
    snaps = tuple(CoeffSeries(dim, order, y, u0.trusted) for y in states)
    return FlowResult("linear", times, snaps, stats)


def solve_riccati(
    model,
    u0: CoeffSeries,
    T: float,
    config: OdeConfig | None = None,
    record=None,
) -> FlowResult:
    """psi(t) with psi' = R(psi), psi(0) = u0."""
    config = config or OdeConfig()
    op = _riccati_op(model)
    dim, order = u0.dim, u0.order

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return op(CoeffSeries(dim, order, y)).coeffs

    w = _majorant_weights(dim, order, config.ref_radius)
    times, states, stats = _run(rhs, T, u0.coeffs.copy(), config, w, record)
    snaps = tuple(CoeffSeries(dim, order, y, u0.trusted) for y in states)
    return FlowResult("riccati", times, snaps, stats)


def riccati_from_linear(
    model,
    u0: CoeffSeries,
    T: float,
    config: OdeConfig | None = None,
    record=None,
) -> FlowResult:
    """psi(t) = log* c(t) where c flows linearly from exp*(u0).

    The degree-zero branch is not recoverable from c alone once Im log c_0
    wanders; an auxiliary scalar phi0' = (Lc)_0 / c_0 with phi0(0) = u0_0
    integrates the branch alongside and is handed to the *-logarithm.
    """
    config = config or OdeConfig()
    op = _linear_op(model)
    dim, order = u0.dim, u0.order
    c0 = ser.exp_star(u0)
    n = c0.coeffs.size

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        lead = y[0]
        if abs(lead) <= ser.EPS_DIV:
            raise LeadingCoefficientError(
                f"linear flow leading coefficient |c_0| = {abs(lead):.3e} within "
                f"division guard at t = {t:.6g}; the *-log route breaks down here"
            )
        dc = op(CoeffSeries(dim, order, y[:n])).coeffs
        out = np.empty(n + 1, dtype=np.complex128)
        out[:n] = dc
        out[n] = dc[0] / lead
        return out

    y0 = np.concatenate([c0.coeffs, [complex(u0.coeffs[0])]])
    w = np.concatenate([_majorant_weights(dim, order, config.ref_radius), [1.0]])
    times, states, stats = _run(rhs, T, y0, config, w, record)
    snaps = []
    for y in states:
        c = CoeffSeries(dim, order, y[:n], u0.trusted)
        snaps.append(ser.log_star(c, phi0=complex(y[n])))
    return FlowResult("log-linear", times, tuple(snaps), stats)


def _radius_for(x0) -> float:
    r = float(np.max(np.abs(np.atleast_1d(np.asarray(x0, dtype=float)))))
    return r if r > 0 else 1.0


def holomorphic_expectation(
    model,
    u0: CoeffSeries,
    T: float,
    x0,
    config: OdeConfig | None = None,
    record=None,
) -> ExpectationResult:
    """E[h(X_T) | X_0 = x0] for the payoff with coefficients u0."""
    flow = solve_linear(model, u0, T, config, record)
    r = _radius_for(x0)
    return ExpectationResult(ser.evaluate(flow.final, x0), tail_mass(flow.final, r), r, flow)


def affine_expectation(
    model,
    u0: CoeffSeries,
    T: float,
    x0,
    config: OdeConfig | None = None,
    route: str = "riccati",
    record=None,
) -> ExpectationResult:
    """E[exp h(X_T) | X_0 = x0], via the quadratic flow or the *-log of the
    linear one (``route`` in {"riccati", "log-linear"})."""
    if route == "riccati":
        flow = solve_riccati(model, u0, T, config, record)
    elif route == "log-linear":
        flow = riccati_from_linear(model, u0, T, config, record)
    else:
        raise ValueError(f"unknown route {route!r}")
    r = _radius_for(x0)
    psi = flow.final
    return ExpectationResult(np.exp(ser.evaluate(psi, x0)), tail_mass(psi, r), r, flow)


def flow_to_csv(flow: FlowResult, path) -> None:
    """One row per snapshot: t then re/im per multi-index, full precision."""
    idx = flow.series[0].indices
    cols = ["t"]
    for alpha in idx:
        tag = ",".join(str(a) for a in alpha)
        cols.extend([f"re[{tag}]", f"im[{tag}]"])
    lines = [",".join(cols)]
    for t, u in zip(flow.times, flow.series):
        row = [f"{t:.17g}"]
        for c in u.coeffs:
            row.extend([f"{c.real:.17g}", f"{c.imag:.17g}"])
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
