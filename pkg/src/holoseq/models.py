"""Worked model families with closed-form or matrix oracles.

Three kinds of reference models live here:

* finite-state chains, where both expectation flows reduce to matrix
  exponentials (the linear one exactly, the quadratic one after a log), giving
  oracles for the sequence-flow machinery at zero truncation error;
* constant-coefficient and affine jump-diffusions, whose exponents solve
  scalar ODEs with known closed forms;
* a unit-interval kill model whose generator maps the monomial basis
  (x/2)^k to a birth-death chain on the exponent, so E[e^{X_T}] is computable
  by uniformization of an explicit (explosive) dual chain.

The matrix exponential is a [6/6] diagonal Pade approximant under scaling and
squaring; plenty for the small well-conditioned generators used here, and it
keeps the runtime dependency surface at numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from holoseq import series as ser
from holoseq.characteristics import Characteristics, JumpAtom, JumpKernel
from holoseq.odeflow import dopri5
from holoseq.series import CoeffSeries

__all__ = [
    "expm",
    "EscapeMassError",
    "FiniteChain",
    "chain_expectation",
    "chain_riccati_rhs",
    "chain_affine_flow",
    "two_state_closed_form",
    "LevySpec",
    "AffineSpec",
    "UnitIntervalModel",
    "DualResult",
    "PRESETS",
    "PRESET_INFO",
    "build_preset",
]


class EscapeMassError(RuntimeError):
    """Dual-chain mass escaped past the truncation boundary beyond the requested tolerance."""


# [6/6] diagonal Pade coefficients for exp
_PADE6 = (1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280)
_PADE6_THETA = 0.5


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring of a [6/6] Pade approximant."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm needs a square matrix, got {a.shape}")
    norm = float(np.linalg.norm(a, 1))
    s = 0 if norm <= _PADE6_THETA else max(0, int(math.ceil(math.log2(norm / _PADE6_THETA))))
    b = a / (2.0**s)
    n = a.shape[0]
    eye = np.eye(n, dtype=b.dtype)
    b2 = b @ b
    b4 = b2 @ b2
    c = _PADE6
    odd = b @ (c[1] * eye + c[3] * b2 + c[5] * b4)
    even = c[0] * eye + c[2] * b2 + c[4] * b4 + c[6] * (b2 @ b4)
    f = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        f = f @ f
    return f


@dataclass(frozen=True)
class FiniteChain:
    """Continuous-time chain given by off-diagonal jump rates.

    ``rates[i][j]`` is the rate i -> j; the diagonal is ignored and rebuilt
    so generator rows sum to zero.
    """

    rates: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"rates must be square, got {r.shape}")
        np.fill_diagonal(r, 0.0)
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("off-diagonal rates must be finite and >= 0")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def n_states(self) -> int:
        return self.rates.shape[0]

    @property
    def generator_matrix(self) -> np.ndarray:
        q = self.rates.copy()
        np.fill_diagonal(q, -q.sum(axis=1))
        return q


def chain_expectation(chain: FiniteChain, h: np.ndarray, T: float, route: str = "expm"):
    """E_i[h(X_T)] for every start state: exp(T Q) h, directly or by ODE."""
    h = np.asarray(h)
    q = chain.generator_matrix
    if route == "expm":
        return expm(T * q) @ h
    if route == "ode":
        _, ys, _ = dopri5(lambda t, y: q @ y, 0.0, T, h.astype(np.complex128), rtol=1e-11, atol=1e-13)
        out = ys[-1]
        return out.real if np.isrealobj(h) else out
    raise ValueError(f"unknown route {route!r}")


def chain_riccati_rhs(chain: FiniteChain, psi: np.ndarray) -> np.ndarray:
    """Quadratic-flow right side on a chain: sum_j q_ij (e^(psi_j - psi_i) - 1)."""
    psi = np.asarray(psi)
    diff = np.exp(psi[None, :] - psi[:, None]) - 1.0
    return np.sum(chain.rates * diff, axis=1)


def chain_affine_flow(chain: FiniteChain, u0: np.ndarray, T: float, route: str = "riccati"):
    """psi(T) with e^(psi_i(T)) = E_i[exp u0(X_T)].

    The log-linear route exponentiates, flows linearly, and takes the
    principal log; valid for real exponents (the propagator is positive).
    """
    u0 = np.asarray(u0)
    if route == "riccati":
        rhs = lambda t, y: chain_riccati_rhs(chain, y).astype(y.dtype)
        _, ys, _ = dopri5(rhs, 0.0, T, u0.astype(np.complex128), rtol=1e-11, atol=1e-13)
        out = ys[-1]
        return out.real if np.isrealobj(u0) else out
    if route == "log-linear":
        c = chain_expectation(chain, np.exp(u0), T)
        return np.log(c)
    raise ValueError(f"unknown route {route!r}")


def two_state_closed_form(l12: float, l21: float, u1: float, u2: float, t: float):
    """c(t) = exp(t Q) (e^u1, e^u2) for the two-state chain, eigendecomposed
    by hand: the spectral gap is l12 + l21."""
    total = l12 + l21
    stat = (l21 * math.exp(u1) + l12 * math.exp(u2)) / total
    gap = (math.exp(u1) - math.exp(u2)) / total * math.exp(-total * t)
    return np.array([stat + l12 * gap, stat - l21 * gap])


@dataclass(frozen=True)
class LevySpec:
    """Constant-coefficient dynamics: drift b, variance a, compensated atoms
    (weight, size) arriving at rate ``rate``."""

    b: float = 0.0
    a: float = 1.0
    rate: float = 1.0
    atoms: tuple[tuple[float, float], ...] = ()

    def exponent(self, tau: complex) -> complex:
        """Growth rate of E[exp(tau X_t)]: b tau + a tau^2/2 + jump terms."""
        out = self.b * tau + 0.5 * self.a * tau * tau
        for w, xi in self.atoms:
            out += self.rate * w * (np.exp(tau * xi) - 1.0 - tau * xi)
        return complex(out)

    def to_characteristics(self, order: int) -> Characteristics:
        def c(value):
            return ser.from_entries(1, order, [((0,), value)])

        kernel = None
        if self.atoms:
            kernel = JumpKernel(
                c(self.rate), tuple(JumpAtom(w, (c(xi),)) for w, xi in self.atoms), 0
            )
        return Characteristics(1, (c(self.b),), ((c(self.a),),), kernel)


@dataclass(frozen=True)
class AffineSpec:
    """State-affine dynamics in dimension one:
    b(x) = b0 + b1 x, a(x) = a0 + a1 x, intensity l0 + l1 x, constant jump
    sizes. Exponential moments then close over affine exponents:
    psi' = F1(psi), phi' = F0(psi) with Fk(u) = bk u + ak u^2/2
    + lk sum_m w_m (e^(u xi_m) - 1 - u xi_m).
    """

    b0: float = 0.0
    b1: float = 0.0
    a0: float = 0.0
    a1: float = 0.0
    l0: float = 0.0
    l1: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    def _f(self, u: complex, lin: bool) -> complex:
        b, a, lam = (self.b1, self.a1, self.l1) if lin else (self.b0, self.a0, self.l0)
        out = b * u + 0.5 * a * u * u
        if lam:
            for w, xi in self.atoms:
                out += lam * w * (np.exp(u * xi) - 1.0 - u * xi)
        return complex(out)

    def transform(self, tau: complex, T: float, rtol: float = 1e-11):
        """(phi(T), psi(T)) with E[exp(tau X_T) | x] = exp(phi + psi x)."""
        y0 = np.array([0.0, tau], dtype=np.complex128)

        def rhs(t, y):
            return np.array([self._f(y[1], False), self._f(y[1], True)])

        _, ys, _ = dopri5(rhs, 0.0, T, y0, rtol=rtol, atol=1e-14)
        return complex(ys[-1][0]), complex(ys[-1][1])

    def check_positivity(self, lo: float, hi: float, n: int = 101) -> list[str]:
        """Variance and intensity must stay nonnegative on the working box."""
        xs = np.linspace(lo, hi, n)
        out = []
        var = self.a0 + self.a1 * xs
        lam = self.l0 + self.l1 * xs
        if var.min() < 0:
            out.append(f"variance negative at x = {xs[var.argmin()]:.6g}")
        if lam.min() < 0:
            out.append(f"intensity negative at x = {xs[lam.argmin()]:.6g}")
        return out

    def to_characteristics(self, order: int) -> Characteristics:
        def lin(c0, c1):
            return ser.from_entries(1, order, [((0,), c0), ((1,), c1)])

        kernel = None
        if self.atoms and (self.l0 or self.l1):
            kernel = JumpKernel(
                lin(self.l0, self.l1),
                tuple(JumpAtom(w, (lin(xi, 0.0),)) for w, xi in self.atoms),
                0,
            )
        return Characteristics(1, (lin(self.b0, self.b1),), ((lin(self.a0, self.a1),),), kernel)


@dataclass(frozen=True)
class DualResult:
    """E[e^{X_T} | X_0 = .] on [0, 1] in the basis f_k(x) = (x/2)^k.

    ``outflow`` is the basis mass that escaped past k_max through the dropped
    up-transition; ``impact_bound`` converts it into a bound on the evaluation
    error: escaped mass re-enters level i with probability <= (1/2)^(k_max+1-i)
    (the chain drifts up 2:1) and then weighs <= (x/2)^i <= 2^(-i), so each
    escaped unit moves any value on [0, 1] by at most 2^(-(k_max+1)).
    """

    coefficients: np.ndarray
    k_max: int
    outflow: float
    impact_bound: float
    horizon: float

    def evaluate(self, x) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        half = xs / 2.0
        out = np.zeros_like(half)
        for c in self.coefficients[::-1]:  # Horner in x/2
            out = out * half + c
        return out

    def series(self, order: int = 40) -> CoeffSeries:
        """Leading coefficients in the standard sequence convention
        (u_k = nu_k k! / 2^k); the factorial caps usable orders around 100."""
        m = min(order + 1, len(self.coefficients))
        logs = np.array([math.lgamma(k + 1) - k * math.log(2.0) for k in range(m)])
        c = np.zeros(order + 1, dtype=np.complex128)
        c[:m] = self.coefficients[:m] * np.exp(logs)
        return CoeffSeries(1, order, c)


@dataclass(frozen=True)
class UnitIntervalModel:
    """Diffusion a(x) = x (1-x)(1-x/2) on [0, 1] with kill-to-origin jumps at
    rate (1-x)(1-x/2)/x (a simple pole; both endpoints and the origin are
    then absorbing).

    The generator sends f_k = (x/2)^k to
    (k+2)(k-1)/4 f_{k-1} - 3 (k+2)(k-1)/4 f_k + (k+2)(k-1)/2 f_{k+1},
    a birth-death chain on the exponent with up/down ratio 2. The chain is
    explosive, so the dual computation truncates at ``k_max`` and accounts for
    escaped mass explicitly (see DualResult).
    """

    k_max: int = 400

    def __post_init__(self) -> None:
        if self.k_max < 4:
            raise ValueError("k_max must be at least 4")

    def characteristics(self, order: int) -> Characteristics:
        a = ser.from_entries(1, order, [((1,), 1.0), ((2,), -3.0), ((3,), 3.0)])
        s = ser.from_entries(1, order, [((0,), 1.0), ((1,), -1.5), ((2,), 1.0)])
        atom = JumpAtom(1.0, (ser.from_entries(1, order, [((1,), -1.0)]),))
        kernel = JumpKernel(s, (atom,), pole_order=1)
        return Characteristics(1, (ser.zero(1, order),), ((a,),), kernel)

    def dual_rates(self) -> tuple[np.ndarray, np.ndarray]:
        """(down, up) rates on exponents 0..k_max; 0 and 1 are absorbing."""
        k = np.arange(self.k_max + 1, dtype=float)
        base = (k + 2) * (k - 1)
        base[:2] = 0.0
        return base / 4.0, base / 2.0

    def dual_expectation(self, T: float, tail_threshold: float = 1e-8) -> DualResult:
        """nu(T) = mu exp(T B) by uniformization, mu_k = 2^k / k! (so that
        sum mu_k f_k = e^x); the up-edge out of k_max is dropped and tracked."""
        down, up = self.dual_rates()
        total = down + up
        lam = 1.05 * float(total.max())
        mu = np.exp(np.arange(self.k_max + 1) * math.log(2.0)
                    - np.array([math.lgamma(k + 1) for k in range(self.k_max + 1)]))
        mass_in = float(mu.sum())

        lt = lam * T
        width = 12.0 * math.sqrt(lt) + 30.0
        n_hi = int(math.ceil(lt + width))
        log_w = (np.arange(n_hi + 1) * math.log(lt) if lt > 0 else np.zeros(n_hi + 1))
        log_w = log_w - lt - np.array([math.lgamma(n + 1) for n in range(n_hi + 1)])
        w = np.exp(log_w)

        p_down = down / lam
        p_up = up / lam
        stay = 1.0 - total / lam
        nu = mu.copy()
        acc = w[0] * nu
        for n in range(1, n_hi + 1):
            nxt = nu * stay
            nxt[:-1] += nu[1:] * p_down[1:]
            nxt[1:] += nu[:-1] * p_up[:-1]
            # the up-move out of k_max has no target row: that mass leaks
            nu = nxt
            acc = acc + w[n] * nu
        outflow = mass_in * float(w.sum()) - float(acc.sum())
        outflow = max(outflow, 0.0)
        bound = outflow * 2.0 ** -(self.k_max + 1)
        if bound > tail_threshold:
            raise EscapeMassError(
                f"escaped dual mass {outflow:.3e} bounds the evaluation error by "
                f"{bound:.3e} > {tail_threshold:.1e}; increase k_max"
            )
        return DualResult(acc, self.k_max, outflow, bound, T)


# --- preset registry -----------------------------------------------------------

AFFINE_LINEAR_JUMPS = AffineSpec(
    b0=0.1, b1=0.2, a0=0.3, a1=0.0, l0=1.0, l1=0.0, atoms=((1.0, 0.4), (1.0, -0.3))
)

_CHAIN_RATES = np.array(
    [
        [0.0, 0.7, 0.3, 0.0],
        [0.2, 0.0, 0.5, 0.3],
        [0.4, 0.1, 0.0, 0.5],
        [0.6, 0.2, 0.2, 0.0],
    ]
)

TWO_STATE_RATES = (0.6, 0.9)


def _bm(order: int = 12):
    return LevySpec(b=0.0, a=1.0).to_characteristics(order)


def _compound_poisson(order: int = 12):
    return LevySpec(b=0.0, a=1.0, rate=1.0, atoms=((1.0, 0.5), (1.0, -0.5))).to_characteristics(
        order
    )


PRESETS = {
    "bm": _bm,
    "compound-poisson": _compound_poisson,
    "affine-linear-jumps": lambda order=12: AFFINE_LINEAR_JUMPS.to_characteristics(order),
    "unit-interval": lambda order=12: UnitIntervalModel().characteristics(order),
    "finite-chain": lambda order=12: FiniteChain(_CHAIN_RATES),
    "two-state-affine": lambda order=12: FiniteChain(
        np.array([[0.0, TWO_STATE_RATES[0]], [TWO_STATE_RATES[1], 0.0]])
    ),
}

PRESET_INFO = {
    "bm": "unit Brownian motion (b = 0, a = 1)",
    "compound-poisson": "unit diffusion plus rate-1 compensated jumps of size +-1/2",
    "affine-linear-jumps": "affine drift 0.1 + 0.2x, a = 0.3, constant-size jumps",
    "unit-interval": "kill-to-origin model on [0, 1] with pole intensity",
    "finite-chain": "four-state chain with fixed irreducible rates",
    "two-state-affine": "two-state chain (rates 0.6 / 0.9) with closed-form flows",
}


def build_preset(name: str, order: int = 12):
    """Characteristics (diffusive presets) or FiniteChain (chain presets)."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
    return factory(order=order)
