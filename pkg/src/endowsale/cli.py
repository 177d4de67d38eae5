"""Command-line front end: classify | solve | evaluate | sweep | simulate | verify.

Every run resolves a JSON config (parameters, optional state and simulation
blocks), executes one pipeline stage and emits CSV or JSON artifacts.  Data
outputs are byte-reproducible for a given (config, seed); each output file
gets a sidecar manifest with the resolved config and SHA-256 digests, which
``--check-manifest`` re-derives.  The only environment control is
ENDOWSALE_THREADS (kernel thread count).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .params import AgentState, ModelParams, ParameterError, Regime, classify
from .ncurve import NCurve, StepFailure, find_qstar, integrate_n
from .surface import (IllPosedError, SurfaceError, build_surface,
                      value_function)
from .policy import (MertonIllPosedError, certainty_equivalent, consumption,
                     illiquidity_cost, immediate_sale_units, policy_point)
from .simulate import (SimConfig, mc_value, simulate_cashfirst,
                       simulate_sell_immediately, simulate_threshold)

SWEEP_PARAMS = ("epsilon", "delta", "R", "beta", "x", "theta")
SWEEP_QUANTITIES = ("z_star", "q_star", "g_curve", "C_curve", "p_curve", "p_star_curve")
_CURVE_AXIS_DEFAULT = {"g_curve": "z", "C_curve": "theta", "p_curve": "x", "p_star_curve": "theta"}


def _fmt(x) -> str:
    """Round-trip-safe decimal rendering for CSV cells."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_manifest(out_path: Path, command: str, config: dict, seed: int) -> Path:
    manifest = {
        "tool": "endowsale",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "outputs": {out_path.name: _sha256(out_path)},
    }
    mpath = out_path.with_name(out_path.name + ".manifest.json")
    mpath.write_text(_json_dump(manifest))
    return mpath


def check_manifest(path: str) -> int:
    """Re-derive the digests recorded in a manifest; 0 on match."""
    mpath = Path(path)
    manifest = json.loads(mpath.read_text())
    ok = True
    for name, digest in manifest.get("outputs", {}).items():
        target = mpath.parent / name
        if not target.exists():
            print(f"missing output file: {target}", file=sys.stderr)
            ok = False
            continue
        actual = _sha256(target)
        if actual != digest:
            print(f"digest mismatch for {name}: {actual} != {digest}", file=sys.stderr)
            ok = False
    if ok:
        print("manifest OK")
    return 0 if ok else 1


def _load_config(path: str | None) -> dict:
    if path is None:
        raise ParameterError("--config PATH is required for this command")
    with open(path) as fh:
        return json.load(fh)


def _state_from_config(cfg: dict, args) -> AgentState:
    st = dict(cfg.get("state", {}))
    for key in ("x", "y", "theta"):
        v = getattr(args, key, None)
        if v is not None:
            st[key] = v
    return AgentState(
        x=float(st.get("x", 1.0)),
        y=float(st.get("y", 1.0)),
        theta=float(st.get("theta", 0.0)),
        t=float(st.get("t", 0.0)),
    )


def _sim_config(cfg: dict, args) -> SimConfig:
    sim = dict(cfg.get("sim", {}))
    if args.seed is not None:
        sim["seed"] = args.seed
    return SimConfig(
        dt=float(sim.get("dt", 1e-3)),
        horizon=sim.get("horizon"),
        n_paths=int(sim.get("n_paths", 1000)),
        seed=int(sim.get("seed", 0)),
        antithetic=bool(sim.get("antithetic", False)),
        scheme=str(sim.get("scheme", "reflect")),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_classify(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.from_config(cfg)
    regime = classify(params)
    info = {
        "regime": regime.value,
        "epsilon": params.epsilon,
        "cash_first_bound": params.cash_first_bound,
        "ill_posed_bound": params.ill_posed_bound,
    }
    if args.format == "json":
        sys.stdout.write(_json_dump(info))
    else:
        print(regime.value)
        print(
            f"epsilon={_fmt(params.epsilon)} "
            f"cash_first_bound={_fmt(params.cash_first_bound)} "
            f"ill_posed_bound={_fmt(params.ill_posed_bound)}"
        )
    return 0


def _dump_ncurve(ncurve: NCurve, path: Path) -> None:
    lines = ["# endowsale crossing curve"]
    lines.append(
        f"# q_star={_fmt(ncurve.q_star)} h_star={_fmt(ncurve.h_star)} "
        f"kappa={_fmt(ncurve.kappa)} chi0={_fmt(ncurve.chi0)} "
        f"termination={ncurve.termination.value}"
    )
    lines.append("q,n,m,ell,N")
    for row in zip(ncurve.q, ncurve.n, ncurve.m, ncurve.ell, ncurve.N):
        lines.append(",".join(_fmt(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.from_config(cfg)
    regime = classify(params)
    if regime is Regime.ILL_POSED:
        print("IllPosed: the value function is infinite; nothing to solve", file=sys.stderr)
        return 1
    ncurve = integrate_n(params)
    surface = build_surface(params, ncurve)
    summary = {
        "regime": regime.value,
        "q_star": ncurve.q_star,
        "z_star": surface.z_star,
        "h_star": surface.h_star,
        "m_qstar": surface.m_qstar,
        "kappa": ncurve.kappa,
        "chi0": ncurve.chi0,
        "termination": ncurve.termination.value,
    }
    seed = args.seed if args.seed is not None else 0
    if args.dump_ncurve:
        out = Path(args.dump_ncurve)
        _dump_ncurve(ncurve, out)
        _write_manifest(out, "solve --dump-ncurve", cfg, seed)
    if args.emit_surface:
        out = Path(args.emit_surface)
        out.write_text(_json_dump(surface.as_dict()))
        _write_manifest(out, "solve --emit-surface", cfg, seed)
    sys.stdout.write(_json_dump(summary))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.from_config(cfg)
    regime = classify(params)
    if regime is Regime.ILL_POSED:
        print(
            "IllPosed: the value is +infinity and the certainty equivalent "
            "is undefined (see the diverging-utility diagnostic)",
            file=sys.stderr,
        )
        return 1
    state = _state_from_config(cfg, args)
    surface = build_surface(params)
    point = policy_point(surface, state)
    out = {
        "V": value_function(surface, state),
        "C": point.consumption,
        "p": point.certainty_equiv,
        "p_star": point.illiq_cost,
        "immediate_sale_units": point.immediate_sale_units,
        "z": point.z_ratio,
        "z_star": surface.z_star,
        "regime": regime.value,
    }
    text = _json_dump(out)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        _write_manifest(Path(args.out), "evaluate", cfg, args.seed or 0)
    return 0


# -- sweep ------------------------------------------------------------------


def _sweep_spec(cfg: dict, args) -> dict:
    spec = dict(cfg.get("sweep", {}))
    if args.vary:
        spec["vary"] = args.vary
    if args.values:
        spec["values"] = [float(v) for v in args.values.split(",")]
    if args.quantity:
        spec["quantity"] = args.quantity
    if "vary" not in spec or "values" not in spec or "quantity" not in spec:
        raise ParameterError("sweep needs vary, values and quantity (config or flags)")
    if spec["vary"] not in SWEEP_PARAMS:
        raise ParameterError(f"vary must be one of {SWEEP_PARAMS}")
    if spec["quantity"] not in SWEEP_QUANTITIES:
        raise ParameterError(f"quantity must be one of {SWEEP_QUANTITIES}")
    vals = [float(v) for v in spec["values"]]
    diffs = np.diff(vals)
    if len(vals) == 0 or not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ParameterError("sweep values must be strictly monotone")
    spec["values"] = vals
    spec.setdefault("fixed", {})
    return spec


def _resolved_point(base_cfg: dict, spec: dict, value: float):
    """Parameters and state for one sweep point."""
    fixed = dict(spec["fixed"])
    pcfg = {k: fixed.get(k, base_cfg.get(k)) for k in ("epsilon", "delta", "alpha", "eta", "beta", "R")}
    pcfg = {k: v for k, v in pcfg.items() if v is not None}
    scfg = dict(base_cfg.get("state", {}))
    scfg.update({k: fixed[k] for k in ("x", "y", "theta") if k in fixed})
    vary = spec["vary"]
    if vary in ("x", "theta"):
        scfg[vary] = value
    else:
        if vary in ("epsilon", "delta") and ("alpha" in pcfg or "eta" in pcfg):
            # normalize to the epsilon/delta representation before varying
            base = ModelParams.from_config(pcfg)
            pcfg = {"epsilon": base.epsilon, "delta": base.delta, "beta": base.beta, "R": base.R}
        pcfg[vary] = value
    params = ModelParams.from_config(pcfg)
    state = AgentState(
        x=float(scfg.get("x", 1.0)),
        y=float(scfg.get("y", 1.0)),
        theta=float(scfg.get("theta", 1.0)),
    )
    return params, state


def _curve_axis(spec: dict) -> tuple[str, np.ndarray]:
    grid = dict(spec.get("grid", {}))
    axis = grid.get("axis", _CURVE_AXIS_DEFAULT[spec["quantity"]])
    if spec["quantity"] == "g_curve":
        axis = "z"
    elif axis not in ("x", "theta"):
        raise ParameterError("curve axis must be 'x' or 'theta' for state curves")
    lo = float(grid.get("min", 0.0))
    hi = float(grid.get("max", 5.0 if axis == "z" else 10.0))
    n = int(grid.get("points", 101))
    return axis, np.linspace(lo, hi, n)


def _curve_rows(params: ModelParams, state: AgentState, quantity: str,
                axis: str, grid: np.ndarray):
    """Rows (axis_value, quantity_value) for one sweep point."""
    surface = build_surface(params)
    rows = []
    for a in grid:
        a = float(a)
        if quantity == "g_curve":
            val = params.g_at_zero if a == 0.0 else float(surface.g(a))
            rows.append((a, val))
            continue
        if a < 0.0:
            rows.append((a, math.nan))
            continue
        if axis == "x":
            st = AgentState(x=a, y=state.y, theta=state.theta)
        else:
            st = AgentState(x=state.x, y=state.y, theta=a)
        if quantity == "C_curve":
            val = consumption(surface, st)
        elif quantity == "p_curve":
            val = certainty_equivalent(surface, st)
        else:
            val = illiquidity_cost(surface, st)
        rows.append((a, val))
    return rows


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    spec = _sweep_spec(cfg, args)
    quantity = spec["quantity"]
    is_curve = quantity.endswith("_curve")
    lines = ["# endowsale sweep"]
    lines.append(f"# vary={spec['vary']} quantity={quantity}")
    if is_curve:
        axis, grid = _curve_axis(spec)
        lines.append(f"# columns: {spec['vary']}, regime, {axis}, {quantity}, error")
        header = f"{spec['vary']},regime,{axis},{quantity},error"
    else:
        lines.append(f"# columns: {spec['vary']}, regime, q_star, z_star, error")
        header = f"{spec['vary']},regime,q_star,z_star,error"
    lines.append(header)

    for value in spec["values"]:
        try:
            params, state = _resolved_point(cfg, spec, value)
            regime = classify(params)
        except ParameterError as exc:
            lines.append(f"{_fmt(value)},,,,{exc}")
            continue
        if not is_curve:
            try:
                if regime is Regime.SELL_IMMEDIATELY:
                    q_star, z_star = 0.0, 0.0
                else:
                    q_star, z_star = find_qstar(params)
                lines.append(
                    f"{_fmt(value)},{regime.value},{_fmt(q_star)},{_fmt(z_star)},"
                )
            except (ParameterError, StepFailure, SurfaceError) as exc:
                lines.append(f"{_fmt(value)},{regime.value},,,{exc}")
            continue
        try:
            rows = _curve_rows(params, state, quantity, axis, grid)
            for a, val in rows:
                lines.append(f"{_fmt(value)},{regime.value},{_fmt(a)},{_fmt(val)},")
        except (ParameterError, StepFailure, SurfaceError, IllPosedError,
                MertonIllPosedError) as exc:
            lines.append(f"{_fmt(value)},{regime.value},,,{exc}")

    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _write_manifest(out, "sweep", {"config": cfg, "sweep": spec}, args.seed or 0)
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.from_config(cfg)
    regime = classify(params)
    if regime is Regime.ILL_POSED:
        print("IllPosed: no optimal dynamics exist to simulate", file=sys.stderr)
        return 1
    state = _state_from_config(cfg, args)
    sim = _sim_config(cfg, args)
    surface = build_surface(params)
    lines = ["# endowsale simulated paths", "# columns: path, t, Y, J, L, Theta, X, C, U",
             "path,t,Y,J,L,Theta,X,C,U"]
    if regime is Regime.SELL_IMMEDIATELY or state.theta == 0.0:
        paths = [simulate_sell_immediately(surface, state, sim)]
    elif regime is Regime.THRESHOLD_SALE:
        paths = simulate_threshold(surface, state, sim)
    else:
        paths = simulate_cashfirst(surface, state, sim)
    stride = max(1, int(args.stride))
    for path in paths:
        idx = np.arange(0, len(path.t), stride)
        if idx[-1] != len(path.t) - 1:
            idx = np.append(idx, len(path.t) - 1)
        for k in idx:
            row = (path.path_id, path.t[k], path.Y[k], path.J[k], path.L[k],
                   path.Theta[k], path.X[k], path.C[k], path.U[k])
            lines.append(",".join(_fmt(float(v) if not isinstance(v, int) else v) for v in row))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _write_manifest(out, "simulate", cfg, sim.seed)
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.from_config(cfg)
    regime = classify(params)
    if regime is Regime.ILL_POSED:
        print(
            "IllPosed: the value is +infinity; use the diverging-utility "
            "diagnostic instead of Monte Carlo",
            file=sys.stderr,
        )
        return 1
    state = _state_from_config(cfg, args)
    sim = _sim_config(cfg, args)
    surface = build_surface(params)
    report = mc_value(surface, state, sim)
    text = _json_dump(report.as_dict())
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _write_manifest(out, "verify", cfg, sim.seed)
    return 0 if abs(report.z_score) <= 4.0 else 1


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="endowsale",
        description="Solver and simulator for optimal consumption and sale of a risky endowment.",
    )
    ap.add_argument("--config", help="JSON config with model parameters")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed override")
    ap.add_argument("--out", help="output file path")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--check-manifest", metavar="PATH",
                    help="re-derive digests from a manifest and exit")
    sub = ap.add_subparsers(dest="command")

    sub.add_parser("classify", help="print the regime label and thresholds")

    solve = sub.add_parser("solve", help="build the crossing curve and value surface")
    solve.add_argument("--dump-ncurve", metavar="PATH", help="write the crossing grid as CSV")
    solve.add_argument("--emit-surface", metavar="PATH", help="write the surface as JSON")

    ev = sub.add_parser("evaluate", help="value and policy at a state")
    ev.add_argument("--x", type=float)
    ev.add_argument("--y", type=float)
    ev.add_argument("--theta", type=float)

    sw = sub.add_parser("sweep", help="comparative statics as CSV")
    sw.add_argument("--vary", choices=SWEEP_PARAMS)
    sw.add_argument("--values", help="comma-separated list")
    sw.add_argument("--quantity", choices=SWEEP_QUANTITIES)

    sim = sub.add_parser("simulate", help="write simulated optimal paths")
    sim.add_argument("--x", type=float)
    sim.add_argument("--y", type=float)
    sim.add_argument("--theta", type=float)
    sim.add_argument("--stride", type=int, default=1, help="record every k-th step")

    sub.add_parser("verify", help="Monte Carlo cross-check of the analytic value")
    return ap


_DISPATCH = {
    "classify": cmd_classify,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    if args.check_manifest:
        return check_manifest(args.check_manifest)
    if not args.command:
        ap.print_help()
        return 2
    try:
        return _DISPATCH[args.command](args)
    except (ParameterError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StepFailure, SurfaceError, IllPosedError, MertonIllPosedError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
