"""Model data for jump-diffusions: drift, diffusion, and jump kernel.

All entries are coefficient series (see :mod:`holoseq.series`), so the state
dependence of every characteristic is holomorphic. The jump kernel is a
finite atomic mixture: intensity lambda(x) times atoms (weight w_m, size
j_m(x)). The kernel convention is compensated: the generator integrand is
f(x + j) - f(x) - grad f(x) . j, so the drift series is the compensated one.

Intensities with a simple pole at the origin (state-proportional kill rates)
are carried in factored form lambda(x) = s(x) / x_1^p via ``pole_order``;
series-level operations multiply by s first and divide the product by the
coordinate, which is exact whenever the jump sizes vanish at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from holoseq import series as ser
from holoseq.series import CoeffSeries, SeriesMatrix, SeriesVector

__all__ = [
    "JumpAtom",
    "JumpKernel",
    "Characteristics",
    "MomentTable",
    "GridFinding",
    "GridReport",
    "moment_series",
    "build_moment_table",
    "validate_on_grid",
    "characteristics_from_config",
    "series_from_config",
]


@dataclass(frozen=True)
class JumpAtom:
    """One atom of the jump measure: weight >= 0 and a jump-size series per coordinate."""

    weight: float
    size: SeriesVector

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError(f"atom weight must be >= 0, got {self.weight}")
        object.__setattr__(self, "size", tuple(self.size))


@dataclass(frozen=True)
class JumpKernel:
    """K(x, .) = lambda(x) sum_m w_m delta_{j_m(x)} with lambda = intensity / x_1^pole_order."""

    intensity: CoeffSeries
    atoms: tuple[JumpAtom, ...]
    pole_order: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if self.pole_order < 0:
            raise ValueError("pole_order must be >= 0")
        if self.pole_order > 0 and self.intensity.dim != 1:
            raise ValueError("pole_order > 0 is supported for dim=1 kernels only")

    def intensity_value(self, x) -> np.ndarray:
        """lambda evaluated at state points (vectorised, real part)."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        pts = xs if xs.ndim > 1 else xs[:, None]
        vals = ser.evaluate_many(self.intensity, pts).real
        if self.pole_order:
            base = pts[:, 0]
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = vals / base**self.pole_order
        return vals

    def total_weight(self) -> float:
        return float(sum(a.weight for a in self.atoms))


@dataclass(frozen=True)
class Characteristics:
    """Differential characteristics (b, a, K) with series-valued state dependence."""

    dim: int
    drift: SeriesVector
    diffusion: SeriesMatrix
    kernel: JumpKernel | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "diffusion", tuple(tuple(row) for row in self.diffusion))
        if len(self.drift) != self.dim:
            raise ValueError(f"drift needs {self.dim} components, got {len(self.drift)}")
        if len(self.diffusion) != self.dim or any(len(r) != self.dim for r in self.diffusion):
            raise ValueError(f"diffusion must be {self.dim}x{self.dim}")
        all_series = list(self.drift) + [s for row in self.diffusion for s in row]
        if self.kernel is not None:
            all_series.append(self.kernel.intensity)
            for atom in self.kernel.atoms:
                if len(atom.size) != self.dim:
                    raise ValueError("jump-size vector length must equal dim")
                all_series.extend(atom.size)
        dims = {s.dim for s in all_series}
        orders = {s.order for s in all_series}
        if dims != {self.dim} or len(orders) != 1:
            raise ValueError(
                f"characteristic series must share dim={self.dim} and one order; "
                f"got dims={sorted(dims)} orders={sorted(orders)}"
            )
        for i in range(self.dim):
            for j in range(i + 1, self.dim):
                if not np.array_equal(self.diffusion[i][j].coeffs, self.diffusion[j][i].coeffs):
                    raise ValueError(f"diffusion series a[{i}][{j}] != a[{j}][{i}]")

    @property
    def order(self) -> int:
        return self.drift[0].order

    def drift_values(self, xs: np.ndarray) -> np.ndarray:
        """(npoints, dim) drift evaluations (real parts)."""
        pts = np.atleast_2d(np.asarray(xs, dtype=float))
        return np.stack([ser.evaluate_many(b, pts).real for b in self.drift], axis=1)

    def diffusion_values(self, xs: np.ndarray) -> np.ndarray:
        """(npoints, dim, dim) diffusion matrix evaluations (real parts)."""
        pts = np.atleast_2d(np.asarray(xs, dtype=float))
        out = np.empty((pts.shape[0], self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[:, i, j] = ser.evaluate_many(self.diffusion[i][j], pts).real
        return out


@dataclass(frozen=True)
class MomentTable:
    """Jump moment series m^beta for 2 <= |beta| <= b_max."""

    dim: int
    b_max: int
    entries: dict[tuple[int, ...], CoeffSeries] = field(default_factory=dict)

    def get(self, beta: tuple[int, ...]) -> CoeffSeries:
        return self.entries[tuple(beta)]

    def __contains__(self, beta) -> bool:
        return tuple(beta) in self.entries


def moment_series(chars: Characteristics, beta: Sequence[int]) -> CoeffSeries:
    """m^beta = lambda * sum_m w_m j_m^{*beta}, defined for |beta| >= 2.

    Degree-one moments are rejected: they are absorbed by the compensator and
    never appear in the generator.
    """
    b = tuple(int(x) for x in beta)
    if sum(b) < 2:
        raise ValueError(f"moment series requires |beta| >= 2, got {b}")
    if chars.kernel is None:
        raise ValueError("characteristics carry no jump kernel")
    k = chars.kernel
    acc = None
    for atom in k.atoms:
        term = atom.weight * ser.vector_star_pow(atom.size, b)
        acc = term if acc is None else acc + term
    if acc is None:
        return ser.zero(chars.dim, chars.order)
    out = ser.mul(k.intensity, acc)
    for _ in range(k.pole_order):
        out = ser.divide_by_coordinate(out, 0)
    return out


def build_moment_table(chars: Characteristics, b_max: int) -> MomentTable:
    """All m^beta with 2 <= |beta| <= b_max (b_max >= 2)."""
    if b_max < 2:
        raise ValueError(f"b_max must be >= 2, got {b_max}")
    idx, _ = ser.index_table(chars.dim, b_max)
    entries = {}
    for beta in idx:
        if 2 <= sum(beta) <= b_max:
            entries[beta] = moment_series(chars, beta)
    return MomentTable(chars.dim, b_max, entries)


@dataclass(frozen=True)
class GridFinding:
    kind: str
    point: tuple[float, ...]
    detail: str


@dataclass(frozen=True)
class GridReport:
    findings: tuple[GridFinding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def by_kind(self, kind: str) -> list[GridFinding]:
        return [f for f in self.findings if f.kind == kind]


def validate_on_grid(
    chars: Characteristics,
    points: Iterable[Sequence[float]] | np.ndarray,
    box: tuple[Sequence[float], Sequence[float]] | None = None,
    psd_tol: float = 1e-10,
) -> GridReport:
    """Spot-check model sanity on a state grid. Reports, never raises.

    Checks: negative jump intensity, non-PSD diffusion, atoms whose jump size
    vanishes at a point while carrying weight (mass at zero jumps), and,
    when ``box`` is given, post-jump states leaving it (flagged only).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    findings: list[GridFinding] = []
    diff = chars.diffusion_values(pts)
    for p, a in zip(pts, diff):
        w = np.linalg.eigvalsh((a + a.T) / 2)
        if w.min() < -psd_tol:
            findings.append(
                GridFinding("diffusion-not-psd", tuple(p), f"min eigenvalue {w.min():.3e}")
            )
    if chars.kernel is not None:
        k = chars.kernel
        lam = k.intensity_value(pts)
        for p, lv in zip(pts, lam):
            if not np.isfinite(lv) or lv < 0:
                findings.append(GridFinding("negative-intensity", tuple(p), f"lambda = {lv:.6g}"))
        for m, atom in enumerate(k.atoms):
            if atom.weight == 0:
                continue
            sizes = np.stack([ser.evaluate_many(s, pts).real for s in atom.size], axis=1)
            for p, j in zip(pts, sizes):
                if np.all(np.abs(j) < 1e-14):
                    findings.append(
                        GridFinding(
                            "zero-jump-size", tuple(p), f"atom {m} jumps by 0 with weight {atom.weight}"
                        )
                    )
                elif box is not None:
                    lo = np.asarray(box[0], dtype=float)
                    hi = np.asarray(box[1], dtype=float)
                    target = p + j
                    if np.any(target < lo - 1e-12) or np.any(target > hi + 1e-12):
                        findings.append(
                            GridFinding(
                                "jump-leaves-box",
                                tuple(p),
                                f"atom {m} lands at {tuple(np.round(target, 12))}",
                            )
                        )
    return GridReport(tuple(findings))


# --- declarative config -------------------------------------------------------
#
# A series is a list of entries [alpha, real, imag] (alpha itself a list of
# exponents, or a bare int in dimension one). Missing entries are zero.


def series_from_config(spec, dim: int, order: int) -> CoeffSeries:
    if spec is None:
        return ser.zero(dim, order)
    entries = []
    for item in spec:
        if len(item) not in (2, 3):
            raise ValueError(f"series entry must be [alpha, re(, im)], got {item!r}")
        alpha = item[0]
        if isinstance(alpha, int):
            alpha = [alpha]
        re = float(item[1])
        im = float(item[2]) if len(item) == 3 else 0.0
        entries.append((tuple(int(a) for a in alpha), re + 1j * im))
    return ser.from_entries(dim, order, entries)


def _vector_from_config(spec, dim: int, order: int) -> SeriesVector:
    # dim 1: a single series config; dim > 1: one config per coordinate
    if dim == 1:
        return (series_from_config(spec, dim, order),)
    if spec is None:
        return tuple(ser.zero(dim, order) for _ in range(dim))
    if len(spec) != dim:
        raise ValueError(f"expected {dim} component configs, got {len(spec)}")
    return tuple(series_from_config(c, dim, order) for c in spec)


def characteristics_from_config(cfg: dict, order: int) -> Characteristics:
    """Build Characteristics from a nested dict (parsed YAML)."""
    dim = int(cfg.get("dim", 1))
    drift = _vector_from_config(cfg.get("drift"), dim, order)
    diff_cfg = cfg.get("diffusion")
    if dim == 1:
        diffusion = ((series_from_config(diff_cfg, dim, order),),)
    elif diff_cfg is None:
        diffusion = tuple(tuple(ser.zero(dim, order) for _ in range(dim)) for _ in range(dim))
    else:
        diffusion = tuple(tuple(series_from_config(c, dim, order) for c in row) for row in diff_cfg)
    kernel = None
    if cfg.get("kernel") is not None:
        kc = cfg["kernel"]
        intensity = series_from_config(kc.get("intensity", [[[0] * dim, 1.0]]), dim, order)
        atoms = [
            JumpAtom(float(ac["weight"]), _vector_from_config(ac["size"], dim, order))
            for ac in kc.get("atoms", [])
        ]
        kernel = JumpKernel(intensity, tuple(atoms), int(kc.get("pole_order", 0)))
    return Characteristics(dim, drift, diffusion, kernel)
