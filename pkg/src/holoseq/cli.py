"""Config-driven front end.

``holoseq run config.yaml`` loads a model (preset name or inline
characteristics), a payoff (named family or explicit series entries), and
runs the requested sequence flows plus whatever oracles the config enables.
Output is a provenance header echoing every resolved setting, one table row
per computed quantity (engine rows carry tail diagnostics, oracle rows carry
absolute/relative differences against the engine), and, with ``--out``,
CSV artifacts at full precision.

Exit codes: 0 on success, 2 on config or model-validation problems, 3 on
numerical failure (step-size underflow, flow budget, vanishing leading
coefficient, escaped dual mass, violated thinning bound).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import series as ser
from .characteristics import Characteristics, characteristics_from_config, validate_on_grid
from .models import (
    PRESET_INFO,
    PRESETS,
    EscapeMassError,
    FiniteChain,
    UnitIntervalModel,
    build_preset,
    chain_affine_flow,
    chain_expectation,
    two_state_closed_form,
)
from .montecarlo import IntensityBoundError, McConfig, simulate_expectation
from .odeflow import (
    FlowBudgetError,
    OdeConfig,
    StepSizeUnderflowError,
    affine_expectation,
    flow_to_csv,
    holomorphic_expectation,
)
from .series import CoeffSeries, LeadingCoefficientError

NUMERICAL_ERRORS = (
    StepSizeUnderflowError,
    FlowBudgetError,
    LeadingCoefficientError,
    EscapeMassError,
    IntensityBoundError,
    np.linalg.LinAlgError,
)


class ConfigError(ValueError):
    """Bad or inconsistent run configuration (exit code 2)."""


@dataclass
class Row:
    quantity: str
    mode: str
    value: complex
    kind: str  # "engine" or "oracle"
    detail: str = ""
    seconds: float = 0.0
    abs_diff: float | None = None
    rel_diff: float | None = None


def _fail(msg: str) -> ConfigError:
    return ConfigError(msg)


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise _fail(f"missing config section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise _fail(f"section {name!r} must be a mapping")
    return sec


# --- payoff families ------------------------------------------------------------

_TRIG = {"cos": (1.0, 0.0, -1.0, 0.0), "sin": (0.0, 1.0, 0.0, -1.0)}


def _payoff(fn_cfg: dict, dim: int, order: int):
    """Payoff series at the working order plus the exact callable for oracles.

    ``polynomial`` coefficients are plain monomial coefficients (value
    convention); ``exp``/``cos``/``sin`` take amplitude * f(scale * x); raw
    ``series`` entries are [alpha, re(, im)] pairs in derivative convention.
    """
    family = fn_cfg.get("family", "series")
    if family == "series":
        entries = fn_cfg.get("entries")
        if not entries:
            raise _fail("function.entries required for family 'series'")
        try:
            u0 = _series_from_entries(entries, dim, order)
        except (ValueError, TypeError) as e:
            raise _fail(f"function.entries: {e}") from None
        return u0, (lambda xs: ser.evaluate_many(u0, np.asarray(xs)).real)
    if dim != 1:
        raise _fail(f"function family {family!r} needs a one-dimensional model")
    if family == "polynomial":
        coeffs = fn_cfg.get("coefficients")
        if not coeffs:
            raise _fail("function.coefficients required for family 'polynomial'")
        cs = [float(c) for c in coeffs]
        if len(cs) - 1 > order:
            raise _fail(f"polynomial degree {len(cs) - 1} exceeds order {order}")
        u0 = ser.from_entries(1, order, [((k,), c * math.factorial(k)) for k, c in enumerate(cs)])
        poly = np.polynomial.Polynomial(cs)
        return u0, (lambda xs: poly(np.asarray(xs, dtype=float)))
    if family in ("exp", "cos", "sin"):
        s = float(fn_cfg.get("scale", 1.0))
        amp = float(fn_cfg.get("amplitude", 1.0))
        if family == "exp":
            entries = [((k,), amp * s**k) for k in range(order + 1)]
            fn = lambda xs: amp * np.exp(s * np.asarray(xs, dtype=float))
        else:
            cyc = _TRIG[family]
            entries = [((k,), amp * cyc[k % 4] * s**k) for k in range(order + 1)]
            trig = np.cos if family == "cos" else np.sin
            fn = lambda xs: amp * trig(s * np.asarray(xs, dtype=float))
        return ser.from_entries(1, order, entries), fn
    raise _fail(f"unknown function family {family!r}")


def _series_from_entries(entries, dim: int, order: int) -> CoeffSeries:
    out = []
    for item in entries:
        alpha = item[0]
        if isinstance(alpha, int):
            alpha = [alpha]
        val = float(item[1]) + 1j * (float(item[2]) if len(item) > 2 else 0.0)
        out.append((tuple(int(a) for a in alpha), val))
    return ser.from_entries(dim, order, out)


def _is_identity_payoff(u0: CoeffSeries) -> bool:
    want = ser.from_entries(u0.dim, u0.order, [(tuple([1] + [0] * (u0.dim - 1)), 1.0)])
    return bool(np.array_equal(u0.coeffs, want.coeffs))


# --- config assembly ------------------------------------------------------------


def _ode_config(cfg: dict) -> OdeConfig:
    known = {"method", "rtol", "atol", "first_step", "fixed_step", "max_steps", "ref_radius"}
    extra = set(cfg) - known
    if extra:
        raise _fail(f"unknown ode settings: {sorted(extra)}")
    try:
        return OdeConfig(**cfg)
    except (ValueError, TypeError) as e:
        raise _fail(f"ode config: {e}") from None


def _mc_config(cfg: dict, args) -> McConfig:
    cfg = dict(cfg)
    cfg.pop("enabled", None)
    if args.mc_paths is not None:
        cfg["paths"] = args.mc_paths
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg.get("state_box") is not None:
        cfg["state_box"] = tuple(float(v) for v in cfg["state_box"])
    try:
        return McConfig(**cfg)
    except (ValueError, TypeError) as e:
        raise _fail(f"mc config: {e}") from None


def _parse_x0(run_cfg: dict, dim: int):
    x0 = run_cfg.get("x0", 0.0)
    if isinstance(x0, (list, tuple)):
        if len(x0) != dim:
            raise _fail(f"x0 has {len(x0)} components, model dimension is {dim}")
        return np.array([float(v) for v in x0])
    return float(x0)


def _sweep_list(arg: str | None) -> list[int] | None:
    if arg is None:
        return None
    try:
        orders = [int(v) for v in arg.split(",") if v.strip()]
    except ValueError:
        raise _fail(f"--sweep-order expects comma-separated integers, got {arg!r}") from None
    if not orders or any(n < 2 for n in orders):
        raise _fail("--sweep-order entries must be integers >= 2")
    return orders


# --- run ------------------------------------------------------------------------


def _grid_check(chars: Characteristics, grid_cfg: dict) -> list[str]:
    lo, hi = float(grid_cfg.get("lo", -1.0)), float(grid_cfg.get("hi", 1.0))
    n = int(grid_cfg.get("n", 9))
    if chars.dim == 1:
        pts = np.linspace(lo, hi, n).reshape(-1, 1)
    else:
        axes = [np.linspace(lo, hi, n)] * chars.dim
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes)], axis=1)
    box = grid_cfg.get("box")
    if box is not None:
        box = (
            [float(v) for v in np.broadcast_to(box[0], chars.dim)],
            [float(v) for v in np.broadcast_to(box[1], chars.dim)],
        )
    report = validate_on_grid(chars, pts, box)
    return [f"{f.kind} at {f.point}: {f.detail}" for f in report.findings]


def _diffusive_rows(model, build, name, cfg, args, out_dir) -> list[Row]:
    run_cfg = _section(cfg, "run")
    num_cfg = _section(cfg, "numerics", required=False)
    order = int(num_cfg.get("order", 12))
    buffer = int(num_cfg.get("buffer", 2))
    if order < 2:
        raise _fail(f"numerics.order must be >= 2, got {order}")
    if buffer < 0:
        raise _fail(f"numerics.buffer must be >= 0, got {buffer}")
    mode = run_cfg.get("mode", "holomorphic")
    if mode not in ("holomorphic", "affine", "both"):
        raise _fail(f"run.mode must be holomorphic, affine or both, got {mode!r}")
    T = float(run_cfg.get("T", 1.0))
    if T <= 0:
        raise _fail(f"run.T must be positive, got {T}")
    x0 = _parse_x0(run_cfg, model.dim)
    route = run_cfg.get("affine_route", "riccati")
    if route not in ("riccati", "log-linear", "both"):
        raise _fail(f"run.affine_route must be riccati, log-linear or both, got {route!r}")
    ode = _ode_config(num_cfg.get("ode") or {})
    orders = _sweep_list(args.sweep_order) or [order]
    sweep = args.sweep_order is not None

    oracles = _section(cfg, "oracles", required=False)
    fn_cfg = _section(cfg, "function")
    # payoff at the largest working order; per-N truncations restrict it, and
    # the model is rebuilt per N so operator and state share one truncation
    u_full, f_exact = _payoff(fn_cfg, model.dim, max(orders) + buffer)

    rows: list[Row] = []
    for n in orders:
        u0 = _truncate(u_full, n + buffer)
        model_n = model if u0.order == model.order else build(u0.order)
        tag = f" N={n}" if sweep else ""
        if mode in ("holomorphic", "both"):
            t0 = time.perf_counter()
            res = holomorphic_expectation(model_n, u0, T, x0, ode)
            rows.append(
                Row(
                    f"linear-flow{tag}",
                    "holomorphic",
                    res.value,
                    "engine",
                    f"tail {res.tail:.2e}, nfev {res.flow.stats.get('nfev', 0)}",
                    time.perf_counter() - t0,
                )
            )
            if out_dir is not None and not sweep:
                flow_to_csv(res.flow, out_dir / "flow_linear.csv")
        if mode in ("affine", "both"):
            for r in ("riccati", "log-linear"):
                if route != "both" and r != route:
                    continue
                t0 = time.perf_counter()
                res = affine_expectation(model_n, u0, T, x0, ode, route=r)
                rows.append(
                    Row(
                        f"{r}-flow{tag}",
                        "affine",
                        res.value,
                        "engine",
                        f"tail {res.tail:.2e}, nfev {res.flow.stats.get('nfev', 0)}",
                        time.perf_counter() - t0,
                    )
                )
                if out_dir is not None and not sweep:
                    flow_to_csv(res.flow, out_dir / f"flow_{r.replace('-', '_')}.csv")

    mc_cfg = oracles.get("mc")
    if mc_cfg is not None and mc_cfg.get("enabled", True):
        mc = _mc_config(mc_cfg, args)
        if mode in ("holomorphic", "both"):
            t0 = time.perf_counter()
            est = simulate_expectation(model, f_exact, x0, T, mc)
            rows.append(_mc_row(est, "holomorphic", time.perf_counter() - t0))
        if mode in ("affine", "both"):
            g = lambda xs: np.exp(f_exact(xs))
            t0 = time.perf_counter()
            est = simulate_expectation(model, g, x0, T, mc)
            rows.append(_mc_row(est, "affine", time.perf_counter() - t0))

    dual_cfg = oracles.get("dual")
    if dual_cfg is not None and dual_cfg.get("enabled", True):
        if name != "unit-interval":
            raise _fail("the dual-chain oracle only applies to the unit-interval preset")
        if mode == "holomorphic":
            raise _fail("the dual-chain oracle computes E[exp X_T]; use an affine mode")
        if not _is_identity_payoff(u_full):
            raise _fail("the dual-chain oracle needs the identity payoff h(x) = x")
        k_max = int(dual_cfg.get("k_max", 400))
        t0 = time.perf_counter()
        dual = UnitIntervalModel(k_max=k_max).dual_expectation(
            T, tail_threshold=float(dual_cfg.get("tail_threshold", 1e-8))
        )
        rows.append(
            Row(
                "dual-chain",
                "affine",
                complex(dual.evaluate(float(x0))),
                "oracle",
                f"outflow {dual.outflow:.2e}, bound {dual.impact_bound:.2e}",
                time.perf_counter() - t0,
            )
        )
    return rows


def _mc_row(est, mode: str, seconds: float) -> Row:
    detail = f"stderr {est.stderr:.2e}, paths {est.paths}"
    if est.clamps:
        detail += f", clamps {est.clamps}"
    if est.absorbed:
        detail += f", absorbed {est.absorbed}"
    return Row("monte-carlo", mode, complex(est.mean), "oracle", detail, seconds)


def _truncate(u: CoeffSeries, order: int) -> CoeffSeries:
    # graded ordering: the low-degree block is a prefix of the coefficient array
    if order >= u.order:
        return u
    idx, _ = ser.index_table(u.dim, order)
    return CoeffSeries(u.dim, order, u.coeffs[: len(idx)].copy())


def _chain_rows(chain: FiniteChain, cfg, args) -> list[Row]:
    if args.sweep_order is not None:
        raise _fail("--sweep-order applies to series models, not finite chains")
    run_cfg = _section(cfg, "run")
    fn_cfg = _section(cfg, "function")
    if fn_cfg.get("family", "values") != "values":
        raise _fail("chain models take function family 'values'")
    values = fn_cfg.get("values")
    if values is None or len(values) != chain.n_states:
        raise _fail(f"function.values must list {chain.n_states} per-state payoffs")
    h = np.array([float(v) for v in values])
    T = float(run_cfg.get("T", 1.0))
    if T <= 0:
        raise _fail(f"run.T must be positive, got {T}")
    i = run_cfg.get("x0", 0)
    if not isinstance(i, int) or not 0 <= i < chain.n_states:
        raise _fail(f"run.x0 must be a start-state index in [0, {chain.n_states})")
    mode = run_cfg.get("mode", "holomorphic")
    if mode not in ("holomorphic", "affine", "both"):
        raise _fail(f"run.mode must be holomorphic, affine or both, got {mode!r}")

    rows: list[Row] = []
    if mode in ("holomorphic", "both"):
        t0 = time.perf_counter()
        val = chain_expectation(chain, h, T, route="ode")[i]
        rows.append(Row("chain-ode", "holomorphic", complex(val), "engine", f"start state {i}", time.perf_counter() - t0))
        t0 = time.perf_counter()
        val = chain_expectation(chain, h, T, route="expm")[i]
        rows.append(Row("matrix-exponential", "holomorphic", complex(val), "oracle", "", time.perf_counter() - t0))
    if mode in ("affine", "both"):
        t0 = time.perf_counter()
        psi = chain_affine_flow(chain, h, T, route="riccati")
        rows.append(Row("riccati-flow", "affine", complex(np.exp(psi[i])), "engine", f"start state {i}", time.perf_counter() - t0))
        t0 = time.perf_counter()
        psi = chain_affine_flow(chain, h, T, route="log-linear")
        rows.append(Row("log-linear-flow", "affine", complex(np.exp(psi[i])), "oracle", "", time.perf_counter() - t0))
        if chain.n_states == 2:
            t0 = time.perf_counter()
            c = two_state_closed_form(chain.rates[0, 1], chain.rates[1, 0], h[0], h[1], T)
            rows.append(Row("closed-form", "affine", complex(c[i]), "oracle", "", time.perf_counter() - t0))
    return rows


def _attach_diffs(rows: list[Row], sweep: bool) -> None:
    """Oracle rows diff against the engine; in a sweep the engine rows diff
    against the oracle instead (that is the convergence readout)."""
    for mode in ("holomorphic", "affine"):
        engines = [r for r in rows if r.mode == mode and r.kind == "engine"]
        oracles = [r for r in rows if r.mode == mode and r.kind == "oracle"]
        if not engines:
            continue
        if sweep:
            ref = oracles[0].value if oracles else engines[-1].value
            targets = engines if oracles else engines[:-1]
        else:
            ref, targets = engines[0].value, oracles
        for r in targets:
            r.abs_diff = abs(r.value - ref)
            r.rel_diff = r.abs_diff / max(abs(ref), 1e-300)


def _fmt_value(v: complex) -> str:
    if abs(v.imag) <= 1e-12 * (1.0 + abs(v.real)):
        return f"{v.real:.6g}"
    return f"{v.real:.6g}{v.imag:+.6g}j"


def _print_table(rows: list[Row]) -> None:
    head = ("quantity", "mode", "value", "abs diff", "rel diff", "time (s)", "detail")
    table = [head]
    for r in rows:
        table.append(
            (
                r.quantity,
                r.mode,
                _fmt_value(r.value),
                "" if r.abs_diff is None else f"{r.abs_diff:.2e}",
                "" if r.rel_diff is None else f"{r.rel_diff:.2e}",
                f"{r.seconds:.3f}",
                r.detail,
            )
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(head))]
    for k, row in enumerate(table):
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            print("  ".join("-" * w for w in widths))


def _write_results_csv(rows: list[Row], path: Path) -> None:
    lines = ["quantity,mode,kind,value_re,value_im,abs_diff,rel_diff,seconds,detail"]
    for r in rows:
        lines.append(
            ",".join(
                [
                    r.quantity,
                    r.mode,
                    r.kind,
                    f"{r.value.real:.17g}",
                    f"{r.value.imag:.17g}",
                    "" if r.abs_diff is None else f"{r.abs_diff:.17g}",
                    "" if r.rel_diff is None else f"{r.rel_diff:.17g}",
                    f"{r.seconds:.17g}",
                    '"' + r.detail + '"',
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _echo_header(cfg: dict, args, name: str) -> None:
    resolved = {
        "model": name,
        "overrides": {
            "sweep_order": args.sweep_order,
            "mc_paths": args.mc_paths,
            "seed": args.seed,
        },
        "config": cfg,
    }
    print(f"# holoseq {__version__}")
    for line in yaml.safe_dump(resolved, default_flow_style=None, sort_keys=True).splitlines():
        print(f"# {line}")


def run_config(cfg: dict, args) -> list[Row]:
    if not isinstance(cfg, dict):
        raise _fail("top-level config must be a mapping")
    model_cfg = _section(cfg, "model")
    num_cfg = _section(cfg, "numerics", required=False)
    order = int(num_cfg.get("order", 12))
    buffer = int(num_cfg.get("buffer", 2))
    if order < 2:
        raise _fail(f"numerics.order must be >= 2, got {order}")
    if buffer < 0:
        raise _fail(f"numerics.buffer must be >= 0, got {buffer}")
    if "preset" in model_cfg:
        name = str(model_cfg["preset"])

        def build(o: int):
            return build_preset(name, order=o)

    else:
        name = "inline"

        def build(o: int):
            return characteristics_from_config(model_cfg, o)

    try:
        model = build(order + buffer)
    except KeyError as e:
        raise _fail(e.args[0]) from None
    except (ValueError, TypeError) as e:
        raise _fail(f"model: {e}") from None

    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    _echo_header(cfg, args, name)

    if isinstance(model, FiniteChain):
        rows = _chain_rows(model, cfg, args)
    else:
        grid_cfg = cfg.get("grid")
        if grid_cfg is not None:
            problems = _grid_check(model, grid_cfg)
            if problems:
                raise _fail("model failed grid validation: " + "; ".join(problems))
        rows = _diffusive_rows(model, build, name, cfg, args, out_dir)

    _attach_diffs(rows, args.sweep_order is not None)
    _print_table(rows)
    if out_dir is not None:
        _write_results_csv(rows, out_dir / "results.csv")
        print(f"# artifacts in {out_dir}")
    return rows


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holoseq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a config file and print the results table")
    runp.add_argument("config", help="path to a YAML run config")
    runp.add_argument("--sweep-order", help="comma-separated truncation orders, one engine row each")
    runp.add_argument("--mc-paths", type=int, help="override Monte Carlo path count")
    runp.add_argument("--seed", type=int, help="override Monte Carlo seed")
    runp.add_argument("--out", help="directory for results.csv and flow CSVs")
    sub.add_parser("list-presets", help="print the preset registry")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list-presets":
        for name in sorted(PRESETS):
            print(f"{name:22s}{PRESET_INFO[name]}")
        return 0
    try:
        with open(args.config) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except yaml.YAMLError as e:
        print(f"config error: invalid YAML: {e}", file=sys.stderr)
        return 2
    try:
        run_config(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
