"""Command-line interface: solve, profiles, study, check.

Exit codes: 0 on success, 2 when a run completes but an acceptance flag
or invariant fails, 1 on any error (bad flags, bad config, solver abort).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .composite import decomposition_residual
from .errors import PipelineError
from .full_solver import boundary_ode_check, half_height_width, solve_full
from .harness import (
    StudyConfig,
    build_hierarchy,
    canonical_config,
    dt_for,
    initial_data_for,
    load_config,
    rate_fit,
    render_csv,
    report_to_json_dict,
    run_pipeline,
    run_study,
    write_report_csv,
    write_report_json,
)
from .outer_solver import solve_outer0
from .params_grids import build_layer_grid
from .transform_compat import (
    antiderivative_transform,
    check_compatibility,
    constant_data,
    sample_initial_data,
)

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage and exits 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON study config; flags override it")
    p.add_argument("--eps", metavar="FLOAT", type=float, action="append",
                   help="diffusion value; repeatable for study sweeps")
    p.add_argument("--alpha", type=float, help="corner-corrector scale exponent")
    p.add_argument("--nu", type=float, help="homogenizer decay exponent")
    p.add_argument("--vstar", type=float, help="boundary chemical value")
    p.add_argument("--grid-n", type=int, help="interval cell count (multiple of 4)")
    p.add_argument("--dt", type=float, help="time step override (snapped to divide t_end)")
    p.add_argument("--zmax", type=float, help="stretched-domain truncation length")
    p.add_argument("--tmin", type=float, help="weighted-metric time window start")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="snapshot/report payload format")


def _build_parser() -> _Parser:
    p = _Parser(prog="chemlayer",
                description="Boundary-layer hierarchy laboratory for a chemical-consumption system")
    sub = p.add_subparsers(dest="command", required=True,
                           metavar="{solve,profiles,study,check}")
    specs = (
        ("solve", _cmd_solve, "solve the full system at one eps and dump a snapshot"),
        ("profiles", _cmd_profiles, "build the asymptotic hierarchy only"),
        ("study", _cmd_study, "run the eps sweep and write the convergence report"),
        ("check", _cmd_check, "run the fast invariant suite"),
    )
    for name, handler, help_text in specs:
        sp = sub.add_parser(name, help=help_text)
        _add_common_flags(sp)
        sp.set_defaults(handler=handler)
    return p


_OVERRIDE_MAP = (
    ("alpha", "alpha"),
    ("nu", "nu"),
    ("vstar", "v_star"),
    ("grid_n", "grid_n"),
    ("dt", "dt_override"),
    ("zmax", "z_max"),
    ("tmin", "t_min"),
)


def _config_from_args(args, use_eps_list: bool) -> StudyConfig:
    base = load_config(args.config) if args.config else canonical_config()
    overrides = {}
    if use_eps_list and args.eps:
        overrides["eps_list"] = tuple(args.eps)
    for flag, field_name in _OVERRIDE_MAP:
        value = getattr(args, flag)
        if value is not None:
            overrides[field_name] = value
    return replace(base, **overrides) if overrides else base


def _single_eps(args) -> float:
    if not args.eps or len(args.eps) != 1:
        raise _UsageError(
            f"{args.command} needs exactly one --eps value, got {len(args.eps or [])}"
        )
    return float(args.eps[0])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eps_label(eps: float) -> str:
    return f"{eps:g}"


def _write_columns_csv(path: Path, header: str, columns) -> None:
    rows = np.column_stack(columns)
    lines = [header]
    for row in rows:
        lines.append(",".join("%.12e" % v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_solve(args) -> int:
    config = _config_from_args(args, use_eps_list=False)
    eps = _single_eps(args)
    data = initial_data_for(config)
    gate = check_compatibility(data, config.v_star)
    if not gate.passed:
        raise PipelineError("compat_gate", "; ".join(gate.violations))
    grid = build_layer_grid(config.grid_n, eps, config.shishkin_c)
    u0, v0 = sample_initial_data(data, grid.nodes)
    phi0, M = antiderivative_transform(grid.nodes, u0)
    dt = dt_for(config, eps)
    sol = solve_full(phi0, v0, M, eps, config.v_star, grid, dt, config.t_end)
    u = sol.recovered_u()

    out = _out_dir(args)
    label = _eps_label(eps)
    meta = {
        "eps": eps,
        "M": M,
        "dt": dt,
        "t_end": config.t_end,
        "grid_n": config.grid_n,
        "grid_kind": grid.kind,
        "snapshot_time": float(sol.phi.times[-1]),
        "mass_defect_max": sol.mass_defect_max,
        "v_min": sol.v_min,
        "v_max": sol.v_max,
        "v_bound": sol.v_bound,
        "max_principle_violations": sol.max_principle_violations,
    }
    if eps == 0.0:
        meta["boundary_ode_defect"] = boundary_ode_check(sol)
    else:
        meta["half_height_width"] = half_height_width(sol)

    columns = (grid.nodes, u.values[-1], sol.v.values[-1], sol.phi.values[-1])
    if args.format == "json":
        snap_path = out / f"solution_eps{label}.json"
        _write_json(snap_path, {
            "t": meta["snapshot_time"],
            "x": list(map(float, columns[0])),
            "u": list(map(float, columns[1])),
            "v": list(map(float, columns[2])),
            "phi": list(map(float, columns[3])),
        })
    else:
        snap_path = out / f"solution_eps{label}.csv"
        _write_columns_csv(snap_path, "x,u,v,phi", columns)
    meta_path = out / f"solution_eps{label}_meta.json"
    _write_json(meta_path, meta)

    print(f"solve eps={label}: wrote {snap_path} and {meta_path}")
    if eps == 0.0:
        print(f"boundary_ode_defect,{meta['boundary_ode_defect']:.12e}")
    return 0


def _cmd_profiles(args) -> int:
    config = _config_from_args(args, use_eps_list=False)
    eps = _single_eps(args)
    h = build_hierarchy(config, eps)
    out = _out_dir(args)
    label = _eps_label(eps)

    outer_cols = (
        h.grid.nodes,
        h.outer0.phi.values[-1], h.outer0.v.values[-1],
        h.outer1.phi.values[-1], h.outer1.v.values[-1],
    )
    side_payload = {}
    for side_set in (h.left, h.right):
        side_payload[side_set.side] = (
            side_set.v_lead.grid.nodes,
            side_set.v_lead.values[-1], side_set.v_reg.values[-1],
            side_set.v_first.values[-1],
            side_set.phi_lead.values[-1], side_set.phi_reg.values[-1],
            side_set.phi_second.values[-1],
        )
    corr_cols = (h.corr_left.times, h.corr_left.values, h.corr_right.values)

    written = []
    if args.format == "json":
        payload = {
            "eps": eps,
            "t": float(h.outer0.phi.times[-1]),
            "outer": {k: list(map(float, c)) for k, c in
                      zip(("x", "phi0", "v0", "phi1", "v1"), outer_cols)},
            "correctors": {k: list(map(float, c)) for k, c in
                           zip(("t", "lambda_left", "lambda_right"), corr_cols)},
        }
        for side, cols in side_payload.items():
            payload[f"layer_{side}"] = {
                k: list(map(float, c)) for k, c in
                zip(("z", "v_lead", "v_reg", "v_first", "phi_lead", "phi_reg", "phi_second"), cols)
            }
        path = out / f"profiles_eps{label}.json"
        _write_json(path, payload)
        written.append(path)
    else:
        path = out / f"profiles_eps{label}_outer.csv"
        _write_columns_csv(path, "x,phi0,v0,phi1,v1", outer_cols)
        written.append(path)
        for side, cols in side_payload.items():
            path = out / f"profiles_eps{label}_{side}.csv"
            _write_columns_csv(
                path, "z,v_lead,v_reg,v_first,phi_lead,phi_reg,phi_second", cols
            )
            written.append(path)
        path = out / f"profiles_eps{label}_correctors.csv"
        _write_columns_csv(path, "t,lambda_left,lambda_right", corr_cols)
        written.append(path)

    print(f"profiles eps={label}: wrote " + ", ".join(str(p) for p in written))
    return 0


def _cmd_study(args) -> int:
    config = _config_from_args(args, use_eps_list=True)
    report, _ = run_study(config)
    out = _out_dir(args)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    write_report_csv(report.rows, csv_path)
    write_report_json(report, json_path)

    if args.format == "json":
        print(json.dumps(report_to_json_dict(report), indent=2, sort_keys=True))
    else:
        print(render_csv(report.rows), end="")
    for name, ok in report.flags.items():
        print(f"flag {name}: {'PASS' if ok else 'FAIL'}")
    verdict = "PASS" if report.all_pass else "FAIL"
    print(f"study: wrote {csv_path} and {json_path}; overall {verdict}")
    return 0 if report.all_pass else 2


def _check_outer_closed_form(config: StudyConfig):
    grid = build_layer_grid(96, 1e-3, config.shishkin_c)
    data = constant_data(1.5, config.v_star)
    u0, v0 = sample_initial_data(data, grid.nodes)
    phi0, M = antiderivative_transform(grid.nodes, u0)
    sol = solve_outer0(phi0, v0, M, grid, 1e-3, 0.3)
    decay = np.exp(-M * sol.v.times)
    rel = np.max(np.abs(sol.v.values - decay[:, None]) / decay[:, None])
    phi_sup = np.max(np.abs(sol.phi.values))
    ok = rel <= 1e-10 and phi_sup <= 1e-12
    return ok, f"chemical rel {rel:.2e} (bar 1e-10), potential sup {phi_sup:.2e} (bar 1e-12)"


def _check_gate_rejects(config: StudyConfig):
    report = check_compatibility(constant_data(1.5, 0.8), config.v_star)
    named = any("chemical boundary value" in v for v in report.violations)
    ok = (not report.passed) and named
    return ok, f"passed={report.passed}, violations={len(report.violations)}"


def _mini_config() -> StudyConfig:
    return StudyConfig(
        eps_list=(4e-3, 2e-3, 1e-3), grid_n=96, layer_cells=240,
        t_end=0.3, t_min=0.1, dt_cap=1e-3,
    )


def _check_pipeline_invariants(run):
    d = run.diagnostics
    residual = decomposition_residual(run.full, run.composite)
    ok = (
        d.mass_defect <= 1e-9
        and d.max_principle_violations == 0
        and d.phi_boundary_sup <= 1e-12
        and d.v_boundary_sup <= 1e-12
        and residual <= 1e-12
    )
    return ok, (
        f"mass {d.mass_defect:.2e}, violations {d.max_principle_violations}, "
        f"boundary sups {d.phi_boundary_sup:.2e}/{d.v_boundary_sup:.2e}, "
        f"decomposition {residual:.2e}"
    )


def _check_determinism(run, config: StudyConfig):
    again = run_pipeline(config, run.eps)
    ok = again.row == run.row
    return ok, "re-run row identical" if ok else "re-run row differs"


def _check_rate_fit():
    eps = np.array([1e-2, 1e-3, 1e-4, 1e-5])
    slope = rate_fit(eps, 2.7 * eps**0.3)
    ok = abs(slope - 0.3) <= 1e-12
    return ok, f"synthetic power-law slope {slope:.15f} (target 0.3)"


def _cmd_check(args) -> int:
    config = _config_from_args(args, use_eps_list=False)
    mini = _mini_config()
    run = run_pipeline(mini, 1e-3)
    checks = (
        ("outer_closed_form", lambda: _check_outer_closed_form(config)),
        ("compat_gate_rejects", lambda: _check_gate_rejects(config)),
        ("pipeline_invariants", lambda: _check_pipeline_invariants(run)),
        ("determinism", lambda: _check_determinism(run, mini)),
        ("rate_fit_power_law", _check_rate_fit),
    )
    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        failures += 0 if ok else 1
        print(f"check {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    print(f"check: {len(checks) - failures}/{len(checks)} passed")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"chemlayer: error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"chemlayer: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"chemlayer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
