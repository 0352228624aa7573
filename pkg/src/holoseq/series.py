"""Truncated multivariate coefficient sequences and their convolution algebra.

A sequence u = (u_alpha) over multi-indices |alpha| <= N represents the
function h_u(z) = sum_alpha u_alpha z^alpha / alpha! (coefficients carry the
factorial normalisation, so polynomial data like z^2 is stored as u_2 = 2).
All operations are pure: they return new series and never mutate inputs.

Each series tracks a ``trusted`` degree: coefficients of degree <= trusted
are exact under the operation history, higher ones may have absorbed
truncation. Operations propagate it conservatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CoeffSeries",
    "SeriesVector",
    "SeriesMatrix",
    "LeadingCoefficientError",
    "EPS_DIV",
    "index_table",
    "from_entries",
    "unit",
    "zero",
    "lin_comb",
    "mul",
    "star_pow",
    "vector_star_pow",
    "shift",
    "divide_by_coordinate",
    "exp_star",
    "log_star",
    "compose_shift",
    "evaluate",
    "evaluate_many",
    "abs_norm",
    "write_series",
    "read_series",
    "dumps_series",
    "loads_series",
]

# Division guard for leading coefficients (log_star, Riccati-from-linear).
EPS_DIV = 1e-12

MultiIndex = tuple[int, ...]


class LeadingCoefficientError(ValueError):
    """Raised when a degree-zero coefficient required for division vanishes."""


@lru_cache(maxsize=None)
def index_table(dim: int, order: int) -> tuple[tuple[MultiIndex, ...], dict[MultiIndex, int]]:
    """All multi-indices with |alpha| <= order in graded lexicographic order.

    Returns the ordered tuple of indices and the inverse lookup dict. The
    ordering (by total degree, then lexicographic) is the storage layout of
    every series of this shape, and the deterministic iteration order of all
    accumulations.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    indices: list[MultiIndex] = []
    for deg in range(order + 1):
        level = [a for a in product(range(deg + 1), repeat=dim) if sum(a) == deg]
        level.sort()
        indices.extend(level)
    lookup = {a: i for i, a in enumerate(indices)}
    return tuple(indices), lookup


@lru_cache(maxsize=None)
def _degrees(dim: int, order: int) -> np.ndarray:
    idx, _ = index_table(dim, order)
    d = np.array([sum(a) for a in idx], dtype=np.int64)
    d.setflags(write=False)
    return d


@lru_cache(maxsize=None)
def _index_matrix(dim: int, order: int) -> np.ndarray:
    idx, _ = index_table(dim, order)
    m = np.array(idx, dtype=np.int64)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def _conv_table(dim: int, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """COO tensor of the convolution product.

    (u * v)_alpha = sum_{beta + gamma = alpha} alpha!/(beta! gamma!) u_beta v_gamma.
    Rows are grouped by output index in graded-lex order, so accumulation
    order is deterministic. Weights are exact binomial integers in float.
    """
    idx, lookup = index_table(dim, order)
    out, left, right, weight = [], [], [], []
    for a in idx:
        ia = lookup[a]
        for b in product(*(range(k + 1) for k in a)):
            g = tuple(ak - bk for ak, bk in zip(a, b))
            w = 1.0
            for ak, bk in zip(a, b):
                w *= math.comb(ak, bk)
            out.append(ia)
            left.append(lookup[b])
            right.append(lookup[g])
            weight.append(w)
    arrs = (
        np.array(out, dtype=np.int64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(weight, dtype=np.float64),
    )
    for a in arrs:
        a.setflags(write=False)
    return arrs


@lru_cache(maxsize=None)
def _shift_table(dim: int, order: int, beta: MultiIndex) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (dst, src) realising u^(beta)_alpha = u_{alpha+beta}."""
    idx, lookup = index_table(dim, order)
    dst, src = [], []
    for i, a in enumerate(idx):
        t = tuple(ak + bk for ak, bk in zip(a, beta))
        j = lookup.get(t)
        if j is not None:
            dst.append(i)
            src.append(j)
    return np.array(dst, dtype=np.int64), np.array(src, dtype=np.int64)


@dataclass(frozen=True)
class CoeffSeries:
    """Dense truncated coefficient sequence over {|alpha| <= order}."""

    dim: int
    order: int
    coeffs: np.ndarray
    trusted: int = field(default=-1)

    def __post_init__(self) -> None:
        idx, _ = index_table(self.dim, self.order)
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (len(idx),):
            raise ValueError(
                f"coeffs shape {c.shape} does not match {len(idx)} indices "
                f"for dim={self.dim} order={self.order}"
            )
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        t = self.trusted if self.trusted >= 0 else self.order
        object.__setattr__(self, "trusted", min(t, self.order))

    @property
    def indices(self) -> tuple[MultiIndex, ...]:
        return index_table(self.dim, self.order)[0]

    def coefficient(self, alpha: MultiIndex | int) -> complex:
        if isinstance(alpha, int):
            alpha = (alpha,)
        _, lookup = index_table(self.dim, self.order)
        return complex(self.coeffs[lookup[tuple(alpha)]])

    def with_trusted(self, trusted: int) -> "CoeffSeries":
        return CoeffSeries(self.dim, self.order, self.coeffs, trusted)

    def __add__(self, other: "CoeffSeries") -> "CoeffSeries":
        return lin_comb((1.0, self), (1.0, other))

    def __sub__(self, other: "CoeffSeries") -> "CoeffSeries":
        return lin_comb((1.0, self), (-1.0, other))

    def __neg__(self) -> "CoeffSeries":
        return CoeffSeries(self.dim, self.order, -self.coeffs, self.trusted)

    def __mul__(self, other):
        if isinstance(other, CoeffSeries):
            return mul(self, other)
        return CoeffSeries(self.dim, self.order, self.coeffs * complex(other), self.trusted)

    __rmul__ = __mul__

    def __repr__(self) -> str:  # short: full arrays are noisy in test output
        head = ", ".join(f"{c:.6g}" for c in self.coeffs[: min(6, len(self.coeffs))])
        tail = ", ..." if len(self.coeffs) > 6 else ""
        return f"CoeffSeries(dim={self.dim}, order={self.order}, trusted={self.trusted}, [{head}{tail}])"


SeriesVector = tuple[CoeffSeries, ...]
SeriesMatrix = tuple[tuple[CoeffSeries, ...], ...]


def _check_same_shape(*series: CoeffSeries) -> tuple[int, int]:
    dims = {u.dim for u in series}
    orders = {u.order for u in series}
    if len(dims) != 1 or len(orders) != 1:
        raise ValueError(
            f"series shapes differ: dims={sorted(dims)} orders={sorted(orders)}"
        )
    return series[0].dim, series[0].order


def from_entries(
    dim: int,
    order: int,
    entries: Iterable[tuple[Sequence[int], complex]],
    trusted: int = -1,
) -> CoeffSeries:
    """Build a series from sparse (multi-index, value) pairs; rest is zero."""
    idx, lookup = index_table(dim, order)
    c = np.zeros(len(idx), dtype=np.complex128)
    for alpha, value in entries:
        key = tuple(int(a) for a in alpha)
        if key not in lookup:
            raise ValueError(f"multi-index {key} outside dim={dim} order={order}")
        c[lookup[key]] += complex(value)
    return CoeffSeries(dim, order, c, trusted)


def zero(dim: int, order: int) -> CoeffSeries:
    idx, _ = index_table(dim, order)
    return CoeffSeries(dim, order, np.zeros(len(idx), dtype=np.complex128))


def unit(dim: int, order: int) -> CoeffSeries:
    """Multiplicative unit (1, 0, 0, ...) of the convolution algebra."""
    idx, _ = index_table(dim, order)
    c = np.zeros(len(idx), dtype=np.complex128)
    c[0] = 1.0
    return CoeffSeries(dim, order, c)


def lin_comb(*terms: tuple[complex, CoeffSeries]) -> CoeffSeries:
    """sum_k c_k u_k; trusted degree is the minimum over the inputs."""
    if not terms:
        raise ValueError("lin_comb needs at least one term")
    series = [u for _, u in terms]
    dim, order = _check_same_shape(*series)
    acc = np.zeros(len(series[0].coeffs), dtype=np.complex128)
    for c, u in terms:
        acc += complex(c) * u.coeffs
    return CoeffSeries(dim, order, acc, min(u.trusted for u in series))


def mul(u: CoeffSeries, v: CoeffSeries) -> CoeffSeries:
    """Convolution product realising h_{u*v} = h_u h_v (degrees > order dropped)."""
    dim, order = _check_same_shape(u, v)
    out, left, right, w = _conv_table(dim, order)
    terms = w * u.coeffs[left] * v.coeffs[right]
    n = len(u.coeffs)
    c = np.bincount(out, weights=terms.real, minlength=n) + 1j * np.bincount(
        out, weights=terms.imag, minlength=n
    )
    return CoeffSeries(dim, order, c, min(u.trusted, v.trusted))


def star_pow(u: CoeffSeries, n: int) -> CoeffSeries:
    """n-fold convolution power; n = 0 gives the unit."""
    if n < 0:
        raise ValueError(f"negative power {n}")
    acc = unit(u.dim, u.order).with_trusted(u.trusted)
    for _ in range(n):
        acc = mul(acc, u)
    return acc


def vector_star_pow(vec: Sequence[CoeffSeries], beta: Sequence[int]) -> CoeffSeries:
    """Componentwise power product v_1^{*beta_1} * ... * v_d^{*beta_d}."""
    if len(vec) != len(beta):
        raise ValueError(f"vector length {len(vec)} != multi-index length {len(beta)}")
    dim, order = _check_same_shape(*vec)
    acc = unit(dim, order).with_trusted(min(v.trusted for v in vec))
    for v, b in zip(vec, beta):
        for _ in range(int(b)):
            acc = mul(acc, v)
    return acc


def shift(u: CoeffSeries, beta: Sequence[int] | int) -> CoeffSeries:
    """Coefficient shift u^(beta)_alpha = u_{alpha+beta} (the beta-th derivative).

    Consumes |beta| trusted degrees; coefficients above order - |beta| are
    zero-filled and untrusted by construction.
    """
    if isinstance(beta, int):
        beta = (beta,)
    b = tuple(int(x) for x in beta)
    if len(b) != u.dim or any(x < 0 for x in b):
        raise ValueError(f"bad shift index {b} for dim={u.dim}")
    dst, src = _shift_table(u.dim, u.order, b)
    c = np.zeros(len(u.coeffs), dtype=np.complex128)
    c[dst] = u.coeffs[src]
    return CoeffSeries(u.dim, u.order, c, u.trusted - sum(b))


def divide_by_coordinate(u: CoeffSeries, coord: int = 0) -> CoeffSeries:
    """Series of h_u(z)/z_i for h_u vanishing on {z_i = 0}.

    Requires every coefficient with alpha_i = 0 to vanish (|.| <= EPS_DIV
    guard); the result satisfies out_alpha = u_{alpha+e_i} / (alpha_i + 1).
    Used to host jump intensities with a simple pole at the origin.
    """
    if not 0 <= coord < u.dim:
        raise ValueError(f"coordinate {coord} out of range for dim={u.dim}")
    idxm = _index_matrix(u.dim, u.order)
    on_axis = idxm[:, coord] == 0
    bad = np.abs(u.coeffs[on_axis])
    if bad.size and bad.max() > EPS_DIV:
        raise LeadingCoefficientError(
            f"series does not vanish on z_{coord}=0 (max |coeff| = {bad.max():.3e})"
        )
    e_i = tuple(1 if k == coord else 0 for k in range(u.dim))
    shifted = shift(u, e_i)
    denom = idxm[:, coord].astype(np.float64) + 1.0
    return CoeffSeries(u.dim, u.order, shifted.coeffs / denom, shifted.trusted)


def exp_star(u: CoeffSeries) -> CoeffSeries:
    """Coefficients of exp(h_u), exact on trusted degrees.

    Degree-by-degree recurrence: along the first coordinate i with delta_i > 0,
    E_{delta} = (E * u^(e_i))_{delta - e_i}, seeded with E_0 = exp(u_0).
    Avoids the cancellation-prone direct sum of powers of (u - u_0).
    """
    dim, order = u.dim, u.order
    idx, lookup = index_table(dim, order)
    out, left, right, w = _conv_table(dim, order)
    # rows of the conv table grouped by output index
    row_start = np.searchsorted(out, np.arange(len(idx) + 1))
    shifted = [
        shift(u, tuple(1 if k == i else 0 for k in range(dim))).coeffs
        for i in range(dim)
    ]
    e = np.zeros(len(idx), dtype=np.complex128)
    e[0] = np.exp(u.coeffs[0])
    for j, delta in enumerate(idx):
        if j == 0:
            continue
        i = next(k for k, d in enumerate(delta) if d > 0)
        alpha = tuple(d - 1 if k == i else d for k, d in enumerate(delta))
        ia = lookup[alpha]
        rows = slice(row_start[ia], row_start[ia + 1])
        e[j] = np.sum(w[rows] * e[left[rows]] * shifted[i][right[rows]])
    return CoeffSeries(dim, order, e, u.trusted)


def log_star(
    c: CoeffSeries,
    phi0: complex | None = None,
    weights: str = "reciprocal",
) -> CoeffSeries:
    """Inverse of exp_star up to the degree-zero branch.

    Writes c = c_0 (1 + d) with d_0 = 0 and sums w_k d^{*k}, k = 1..order.
    ``weights`` selects the degree-k weight: "reciprocal" uses
    (-1)^(k-1)/k (satisfies the exp/log round trip and is the default);
    "factorial" uses (-1)^(k-1) (k-1)! (kept for comparison; fails the round
    trip beyond degree 1, see tests).

    The degree-zero coefficient is ``phi0`` when given (callers integrating a
    flow supply the branch), else the principal log of c_0.
    """
    if weights not in ("reciprocal", "factorial"):
        raise ValueError(f"unknown weights {weights!r}")
    c0 = complex(c.coeffs[0])
    if abs(c0) <= EPS_DIV:
        raise LeadingCoefficientError(
            f"leading coefficient {c0!r} within division guard {EPS_DIV}"
        )
    d = CoeffSeries(c.dim, c.order, c.coeffs / c0, c.trusted)
    d = lin_comb((1.0, d), (-1.0, unit(c.dim, c.order).with_trusted(c.trusted)))
    acc = np.zeros(len(c.coeffs), dtype=np.complex128)
    power = unit(c.dim, c.order).with_trusted(c.trusted)
    for k in range(1, c.order + 1):
        power = mul(power, d)
        w_k = (-1.0) ** (k - 1) * (1.0 / k if weights == "reciprocal" else math.factorial(k - 1))
        acc += w_k * power.coeffs
    acc[0] = np.log(c0) if phi0 is None else complex(phi0)
    return CoeffSeries(c.dim, c.order, acc, c.trusted)


def compose_shift(u: CoeffSeries, vec: Sequence[CoeffSeries]) -> CoeffSeries:
    """Coefficients of h_u(z + h_v1(z), ..., z + h_vd(z)) ... see below.

    Realises the shifted composition h_out(z) = h_u(z + (h_v1(z),...,h_vd(z)))
    as sum_beta (1/beta!) u^(beta) * v^{*beta}, beta capped at the order.

    When every v_i has zero constant coefficient the cap is exact (v^{*beta}
    starts at degree |beta|) and no trusted degrees are consumed; with a
    constant part present the beta tail is a factorially damped truncation
    absorbed into the result.
    """
    if len(vec) != u.dim:
        raise ValueError(f"need {u.dim} shift components, got {len(vec)}")
    dim, order = _check_same_shape(u, *vec)
    idx, _ = index_table(dim, order)
    # incremental vector powers in graded-lex order: pow[beta] = pow[beta - e_i] * v_i
    powers: dict[MultiIndex, CoeffSeries] = {idx[0]: unit(dim, order)}
    acc = np.array(u.coeffs, dtype=np.complex128)  # beta = 0 term
    for beta in idx[1:]:
        i = next(k for k, b in enumerate(beta) if b > 0)
        prev = tuple(b - 1 if k == i else b for k, b in enumerate(beta))
        powers[beta] = mul(powers[prev], vec[i])
        fact = 1.0
        for b in beta:
            fact *= math.factorial(b)
        acc += (1.0 / fact) * mul(shift(u, beta), powers[beta]).coeffs
    trusted = min([u.trusted] + [v.trusted for v in vec])
    return CoeffSeries(dim, order, acc, trusted)


def _weight_factors(u: CoeffSeries, z: Sequence[complex] | complex) -> np.ndarray:
    """Per-index factors z^alpha / alpha! built from per-coordinate tables."""
    zv = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    if zv.shape != (u.dim,):
        raise ValueError(f"point shape {zv.shape} does not match dim={u.dim}")
    # per coordinate: z_i^k / k! computed incrementally (no factorial overflow)
    table = np.empty((u.dim, u.order + 1), dtype=np.complex128)
    table[:, 0] = 1.0
    for k in range(1, u.order + 1):
        table[:, k] = table[:, k - 1] * zv / k
    idxm = _index_matrix(u.dim, u.order)
    factors = np.ones(len(idxm), dtype=np.complex128)
    for i in range(u.dim):
        factors *= table[i, idxm[:, i]]
    return factors


def evaluate(u: CoeffSeries, z: Sequence[complex] | complex) -> complex:
    """h_u(z) = sum_alpha u_alpha z^alpha / alpha!, compensated summation.

    Terms are accumulated in graded-lex order with Kahan compensation so the
    result is deterministic and resilient to cancellation between degrees.
    """
    terms = u.coeffs * _weight_factors(u, z)
    total = 0.0 + 0.0j
    comp = 0.0 + 0.0j
    for t in terms:
        y = t - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return complex(total)


def evaluate_many(u: CoeffSeries, zs: np.ndarray) -> np.ndarray:
    """Vectorised evaluate over points; zs has shape (npoints, dim) or (npoints,)."""
    pts = np.asarray(zs, dtype=np.complex128)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[1] != u.dim:
        raise ValueError(f"points shape {pts.shape} does not match dim={u.dim}")
    table = np.empty((pts.shape[0], u.dim, u.order + 1), dtype=np.complex128)
    table[:, :, 0] = 1.0
    for k in range(1, u.order + 1):
        table[:, :, k] = table[:, :, k - 1] * pts / k
    idxm = _index_matrix(u.dim, u.order)
    total = np.zeros(pts.shape[0], dtype=np.complex128)
    comp = np.zeros(pts.shape[0], dtype=np.complex128)
    for j in range(len(idxm)):  # graded-lex order, Kahan per point
        f = np.ones(pts.shape[0], dtype=np.complex128)
        for i in range(u.dim):
            f *= table[:, i, idxm[j, i]]
        t = u.coeffs[j] * f
        y = t - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return total


def abs_norm(u: CoeffSeries, r: float | Sequence[float]) -> float:
    """Weighted coefficient norm sum_alpha |u_alpha| r^alpha / alpha! at radius r > 0.

    Dominates sup_{|z_i| <= r_i} |h_u(z)| and is submultiplicative for mul.
    """
    rv = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if rv.shape == (1,) and u.dim > 1:
        rv = np.full(u.dim, rv[0])
    if rv.shape != (u.dim,):
        raise ValueError(f"radius shape {rv.shape} does not match dim={u.dim}")
    if np.any(rv <= 0):
        raise ValueError("radius must be positive")
    factors = _weight_factors(u, rv.astype(np.complex128))
    return float(np.sum(np.abs(u.coeffs) * factors.real))


# --- text serialisation ------------------------------------------------------
#
# Format: header "dim <d> order <N>", then one line per multi-index in
# graded-lex order: the exponents, the real part, the imaginary part.
# Floats are written in shortest repr, so write/read round-trips bit-exactly.


def dumps_series(u: CoeffSeries) -> str:
    lines = [f"dim {u.dim} order {u.order}"]
    for alpha, c in zip(u.indices, u.coeffs):
        exps = " ".join(str(a) for a in alpha)
        lines.append(f"{exps} {float(c.real)!r} {float(c.imag)!r}")
    return "\n".join(lines) + "\n"


def loads_series(text: str) -> CoeffSeries:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 4 or head[0] != "dim" or head[2] != "order":
        raise ValueError(f"bad header {lines[0]!r}")
    dim, order = int(head[1]), int(head[3])
    idx, lookup = index_table(dim, order)
    if len(lines) - 1 != len(idx):
        raise ValueError(f"expected {len(idx)} coefficient lines, got {len(lines) - 1}")
    c = np.zeros(len(idx), dtype=np.complex128)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != dim + 2:
            raise ValueError(f"bad coefficient line {ln!r}")
        alpha = tuple(int(p) for p in parts[:dim])
        c[lookup[alpha]] = float(parts[dim]) + 1j * float(parts[dim + 1])
    return CoeffSeries(dim, order, c)


def write_series(u: CoeffSeries, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dumps_series(u))


def read_series(path) -> CoeffSeries:
    with open(path, "r", encoding="ascii") as fh:
        return loads_series(fh.read())
