"""Study orchestration: per-eps pipeline, sweep fan-out, rate fits, reports.

One pipeline run builds every constituent in dependency order and measures
the error functionals against the fully resolved solve. The study fans the
pipeline out across a decreasing eps ladder, fits log-log slopes, and turns
the recorded numbers into pass/fail flags. Flags are pure functions of the
recorded metrics: re-fitting a written CSV reproduces them.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import scipy

from .composite import (
    CompositeApproximation,
    ErrorMetrics,
    build_composite,
    theorem_errors,
)
from .correctors import CorrectorSeries, build_corrector_series
from .errors import PipelineError
from .full_solver import FullSolution, half_height_width, solve_full
from .layer_solver import (
    LayerProfileSet,
    layer_gap,
    phi_layer_first,
    phi_origin_series,
    solve_layer_leading,
    solve_layer_second,
)
from .outer_solver import (
    OuterCorrection,
    OuterSolution,
    extract_traces,
    solve_outer0,
    solve_outer1,
    store_schedule,
)
from .params_grids import build_half_line_grid, build_layer_grid, derive_iota0
from .transform_compat import (
    InitialData,
    antiderivative_transform,
    bump_data,
    check_compatibility,
    constant_data,
    sample_initial_data,
)

__all__ = [
    "METRIC_COLUMNS",
    "CSV_HEADER",
    "StudyConfig",
    "StudyRow",
    "RunDiagnostics",
    "PipelineRun",
    "ConvergenceReport",
    "canonical_config",
    "config_to_json_dict",
    "config_from_json_dict",
    "load_config",
    "save_config",
    "config_sha256",
    "initial_data_for",
    "dt_for",
    "Hierarchy",
    "build_hierarchy",
    "run_pipeline",
    "run_study",
    "rate_fit",
    "rate_bars",
    "rate_flags",
    "study_flags",
    "render_csv",
    "parse_report_csv",
    "write_report_csv",
    "report_to_json_dict",
    "write_report_json",
]

# CSV schema is fixed; downstream plotting and CI parse it by name.
METRIC_COLUMNS = (
    "eps",
    "e1_sup",
    "e1x_weighted",
    "e2_sup",
    "u_weighted",
    "layer_gap",
    "lambda_sup",
)
CSV_HEADER = ",".join(METRIC_COLUMNS)

# Acceptance bars: theory-derived exponents minus a fit-noise margin.
_RATE_MARGIN = 0.05
_GAP_MARGIN = 0.1
WIDTH_TARGET = 0.5
WIDTH_TOL = 0.1
MASS_TOL = 1e-9
BOUNDARY_TOL = 1e-12

_DATA_KINDS = ("constant", "bump")


@dataclass(frozen=True)
class StudyConfig:
    """Fully deterministic description of one study; no seeds, no clocks.

    ``eps_list`` must be strictly decreasing inside (0, 1) with at least
    three entries so slopes are identifiable. ``dt_override`` bypasses the
    cap-and-halve step policy when set.
    """

    eps_list: tuple
    alpha: float = 1.1
    nu: float = 0.2
    v_star: float = 1.0
    t_end: float = 1.0
    t_min: float = 0.1
    grid_n: int = 512
    shishkin_c: float = 4.0
    layer_cells: int = 480
    z_max: float = 20.0
    dt_cap: float = 2.5e-4
    dt_override: Optional[float] = None
    data_kind: str = "constant"
    data_params: tuple = ()

    def __post_init__(self):
        eps_list = tuple(float(e) for e in self.eps_list)
        if len(eps_list) < 3:
            raise ValueError(f"eps_list needs at least 3 entries, got {len(eps_list)}")
        if any(not 0.0 < e < 1.0 for e in eps_list):
            raise ValueError(f"every eps must lie in (0, 1), got {eps_list}")
        if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
            raise ValueError(f"eps_list must be strictly decreasing, got {eps_list}")
        object.__setattr__(self, "eps_list", eps_list)
        derive_iota0(self.alpha, self.nu)
        for name in ("v_star", "t_end", "t_min", "shishkin_c", "z_max", "dt_cap"):
            if float(getattr(self, name)) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.t_min >= self.t_end:
            raise ValueError(f"t_min must be below t_end, got {self.t_min} >= {self.t_end}")
        grid_n = int(self.grid_n)
        if grid_n < 16 or grid_n % 4 != 0:
            raise ValueError(f"grid_n must be a multiple of 4 and >= 16, got {grid_n}")
        object.__setattr__(self, "grid_n", grid_n)
        layer_cells = int(self.layer_cells)
        if layer_cells < 8:
            raise ValueError(f"layer_cells must be >= 8, got {layer_cells}")
        object.__setattr__(self, "layer_cells", layer_cells)
        if self.dt_override is not None:
            dt = float(self.dt_override)
            if dt <= 0.0:
                raise ValueError(f"dt_override must be positive, got {dt}")
            object.__setattr__(self, "dt_override", dt)
        if self.data_kind not in _DATA_KINDS:
            raise ValueError(
                f"data_kind must be one of {_DATA_KINDS}, got {self.data_kind!r}"
            )
        params = tuple(sorted((str(k), float(v)) for k, v in dict(self.data_params).items()))
        object.__setattr__(self, "data_params", params)


def canonical_config() -> StudyConfig:
    """The pinned in-repo study: constant data on a log-uniform eps ladder."""
    return StudyConfig(eps_list=(1e-2, 3.16e-3, 1e-3, 3.16e-4, 1e-4))


def config_to_json_dict(config: StudyConfig) -> dict:
    return {
        "eps_list": list(config.eps_list),
        "alpha": config.alpha,
        "nu": config.nu,
        "v_star": config.v_star,
        "t_end": config.t_end,
        "t_min": config.t_min,
        "grid_n": config.grid_n,
        "shishkin_c": config.shishkin_c,
        "layer_cells": config.layer_cells,
        "z_max": config.z_max,
        "dt_cap": config.dt_cap,
        "dt_override": config.dt_override,
        "data_kind": config.data_kind,
        "data_params": dict(config.data_params),
    }


def config_from_json_dict(d: dict) -> StudyConfig:
    known = {f.name for f in fields(StudyConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = dict(d)
    if "eps_list" in kwargs:
        kwargs["eps_list"] = tuple(kwargs["eps_list"])
    if "data_params" in kwargs:
        kwargs["data_params"] = tuple(sorted(dict(kwargs["data_params"]).items()))
    return StudyConfig(**kwargs)


def load_config(path) -> StudyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json_dict(json.load(fh))


def save_config(config: StudyConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config_to_json_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_sha256(config: StudyConfig) -> str:
    canonical = json.dumps(config_to_json_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def initial_data_for(config: StudyConfig) -> InitialData:
    params = dict(config.data_params)
    if config.data_kind == "constant":
        return constant_data(**params)
    return bump_data(**params)


def dt_for(config: StudyConfig, eps: float) -> float:
    """Step size: the cap, halved below eps/2, snapped to divide t_end."""
    if config.dt_override is not None:
        raw = config.dt_override
    elif eps == 0.0:
        raw = config.dt_cap
    else:
        raw = min(config.dt_cap, eps / 2.0)
    exact = config.t_end / raw
    n = int(round(exact))
    if n < 1 or abs(exact - n) > 1e-9 * max(1.0, exact):
        n = max(1, int(math.ceil(exact)))
    return config.t_end / n


@dataclass(frozen=True)
class StudyRow:
    """One CSV row: the per-eps error functionals and structure gauges."""

    eps: float
    e1_sup: float
    e1x_weighted: float
    e2_sup: float
    u_weighted: float
    layer_gap: float
    lambda_sup: float


@dataclass(frozen=True)
class RunDiagnostics:
    """Per-eps invariants and provenance that live outside the CSV."""

    eps: float
    width: float
    mass_defect: float
    max_principle_violations: int
    phi_boundary_sup: float
    v_boundary_sup: float
    wall_time: float


@dataclass(frozen=True)
class Hierarchy:
    """Every asymptotic constituent of one eps, without the full solve."""

    eps: float
    M: float
    grid: object
    phi0: np.ndarray
    v0: np.ndarray
    dt: float
    outer0: OuterSolution
    outer1: OuterCorrection
    left: LayerProfileSet
    right: LayerProfileSet
    corr_left: CorrectorSeries
    corr_right: CorrectorSeries
    layer_violations: int


@dataclass(frozen=True)
class PipelineRun:
    """Everything one eps produced: constituents, full solve, metrics."""

    eps: float
    M: float
    outer0: OuterSolution
    outer1: OuterCorrection
    left: LayerProfileSet
    right: LayerProfileSet
    corr_left: CorrectorSeries
    corr_right: CorrectorSeries
    full: FullSolution
    composite: CompositeApproximation
    metrics: ErrorMetrics
    row: StudyRow
    diagnostics: RunDiagnostics


def _run_stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc)) from exc


def build_hierarchy(config: StudyConfig, eps: float) -> Hierarchy:
    """Build the asymptotic constituents in dependency order.

    Stages execute strictly in order (each consumes the previous stage's
    output), and any abort surfaces as a PipelineError naming the stage.
    The vanishing-diffusion limit has no layer hierarchy, so eps must be
    positive here.
    """
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError(f"the hierarchy needs eps > 0, got {eps}; use solve_full for eps = 0")
    dt = dt_for(config, eps)
    data = initial_data_for(config)

    grid = _run_stage("grid", build_layer_grid, config.grid_n, eps, config.shishkin_c)
    u0, v0 = _run_stage("transform", sample_initial_data, data, grid.nodes)
    phi0, M = _run_stage("transform", antiderivative_transform, grid.nodes, u0)

    report = _run_stage("compat_gate", check_compatibility, data, config.v_star)
    if not report.passed:
        raise PipelineError("compat_gate", "; ".join(report.violations))

    sol0 = _run_stage("outer0", solve_outer0, phi0, v0, M, grid, dt, config.t_end)
    tr = sol0.traces

    # Dual-route guard: recomputing wall traces from the thinned fields
    # must agree bit-for-bit with the recorder's full-resolution series.
    sched = store_schedule(tr.times.size - 1)
    recomputed = _run_stage("traces", extract_traces, sol0.phi, sol0.v)
    for name in ("phi_x", "phi_xx", "v", "v_x"):
        if not np.array_equal(getattr(recomputed, name), getattr(tr, name)[sched]):
            raise PipelineError("traces", f"stored and recomputed wall {name} disagree")

    corr = {}
    for side, col, u_wall in (("left", 0, u0[0]), ("right", 1, u0[-1])):
        corr[side] = _run_stage(
            "correctors",
            build_corrector_series,
            side, tr.times, tr.phi_x[:, col] + M, tr.v[:, col],
            float(u_wall), config.v_star, eps, config.alpha,
        )

    zg = {s: build_half_line_grid(config.layer_cells, config.z_max, s) for s in ("left", "right")}
    reg, bl = {}, {}
    for side, col in (("left", 0), ("right", 1)):
        reg[side] = solve_layer_leading(
            side, tr, M, config.v_star, zg[side], dt, corrector=corr[side]
        )
        a_full = tr.phi_x[:, col] + M
        bl[side] = _run_stage("phi_layer", phi_origin_series, reg[side], a_full)

    corr1 = _run_stage("outer1", solve_outer1, sol0, bl["left"], bl["right"])

    sets = {}
    layer_violations = 0
    for side, col in (("left", 0), ("right", 1)):
        sec = solve_layer_second(
            side, tr, corr1.traces, M, config.v_star, zg[side], dt, corrector=corr[side]
        )
        lead = solve_layer_leading(side, tr, M, config.v_star, zg[side], dt)
        layer_violations += reg[side].violations + lead.violations
        a_sched = tr.phi_x[sched, col] + M
        sets[side] = LayerProfileSet(
            side=side,
            v_lead=lead.field,
            v_reg=reg[side].field,
            phi_lead=_run_stage("phi_layer", phi_layer_first, side, lead.field, a_sched),
            phi_reg=_run_stage("phi_layer", phi_layer_first, side, reg[side].field, a_sched),
            phi_second=sec.phi_second,
            v_first=sec.v_first,
        )

    return Hierarchy(
        eps=eps, M=M, grid=grid, phi0=phi0, v0=v0, dt=dt,
        outer0=sol0, outer1=corr1, left=sets["left"], right=sets["right"],
        corr_left=corr["left"], corr_right=corr["right"],
        layer_violations=layer_violations,
    )


def run_pipeline(config: StudyConfig, eps: float) -> PipelineRun:
    """Build the hierarchy, solve the full system, measure the errors."""
    started = time.perf_counter()
    h = build_hierarchy(config, eps)
    eps = h.eps

    full = solve_full(
        h.phi0, h.v0, h.M, eps, config.v_star, h.grid, h.dt, config.t_end
    )

    comp = _run_stage(
        "composite",
        build_composite,
        h.outer0, h.outer1, h.left, h.right, h.corr_left, h.corr_right,
        eps, config.nu, config.v_star,
    )
    metrics = _run_stage(
        "metrics", theorem_errors, full, h.outer0, h.left, h.right, config.t_min
    )

    gap = max(
        layer_gap(s.v_reg, s.v_lead).sup for s in (h.left, h.right)
    )
    lambda_sup = max(
        float(np.max(np.abs(c.values))) for c in (h.corr_left, h.corr_right)
    )
    row = StudyRow(
        eps=eps,
        e1_sup=metrics.e1_sup,
        e1x_weighted=metrics.e1x_weighted,
        e2_sup=metrics.e2_sup,
        u_weighted=metrics.u_weighted,
        layer_gap=gap,
        lambda_sup=lambda_sup,
    )
    diagnostics = RunDiagnostics(
        eps=eps,
        width=_run_stage("metrics", half_height_width, full),
        mass_defect=full.mass_defect_max,
        max_principle_violations=full.max_principle_violations + h.layer_violations,
        phi_boundary_sup=comp.phi_boundary_sup,
        v_boundary_sup=comp.v_boundary_sup,
        wall_time=time.perf_counter() - started,
    )
    return PipelineRun(
        eps=eps, M=h.M, outer0=h.outer0, outer1=h.outer1,
        left=h.left, right=h.right,
        corr_left=h.corr_left, corr_right=h.corr_right,
        full=full, composite=comp, metrics=metrics,
        row=row, diagnostics=diagnostics,
    )


def rate_fit(eps_values, metric_values) -> float:
    """Least-squares slope of log(metric) against log(eps).

    Non-positive entries cannot enter the log fit; they are dropped with a
    warning, and fewer than three surviving points is an error.
    """
    eps_arr = np.asarray(eps_values, dtype=np.float64)
    met_arr = np.asarray(metric_values, dtype=np.float64)
    if eps_arr.ndim != 1 or eps_arr.shape != met_arr.shape:
        raise ValueError(
            f"eps and metric must be equal-length 1D sequences, got {eps_arr.shape} vs {met_arr.shape}"
        )
    keep = (eps_arr > 0.0) & (met_arr > 0.0) & np.isfinite(met_arr)
    dropped = int(eps_arr.size - np.count_nonzero(keep))
    if dropped:
        warnings.warn(f"rate_fit: excluded {dropped} non-positive point(s) from the log fit")
    if np.count_nonzero(keep) < 3:
        raise ValueError(
            f"rate_fit needs at least 3 positive points, got {int(np.count_nonzero(keep))}"
        )
    slope, _ = np.polyfit(np.log(eps_arr[keep]), np.log(met_arr[keep]), 1)
    return float(slope)


def _fit_residual(eps_values, metric_values) -> float:
    """Max absolute log-space deviation from the fitted line (0 if excluded)."""
    eps_arr = np.asarray(eps_values, dtype=np.float64)
    met_arr = np.asarray(metric_values, dtype=np.float64)
    keep = (eps_arr > 0.0) & (met_arr > 0.0) & np.isfinite(met_arr)
    if np.count_nonzero(keep) < 3:
        return math.nan
    x = np.log(eps_arr[keep])
    y = np.log(met_arr[keep])
    slope, intercept = np.polyfit(x, y, 1)
    return float(np.max(np.abs(y - (slope * x + intercept))))


def rate_bars(alpha: float, nu: float) -> dict:
    """Slope acceptance bars: theoretical exponents minus fit margins."""
    rates = derive_iota0(alpha, nu)
    return {
        "e1_sup": rates.phi_sup - _RATE_MARGIN,
        "e1x_weighted": rates.phi_grad_weighted - _RATE_MARGIN,
        "e2_sup": rates.v_sup - _RATE_MARGIN,
        "u_weighted": rates.phi_grad_weighted - _RATE_MARGIN,
        "layer_gap": alpha / 2.0 - _GAP_MARGIN,
        "lambda_sup": alpha - _RATE_MARGIN,
    }


def theoretical_exponents(alpha: float, nu: float) -> dict:
    rates = derive_iota0(alpha, nu)
    return {
        "e1_sup": rates.phi_sup,
        "e1x_weighted": rates.phi_grad_weighted,
        "e2_sup": rates.v_sup,
        "u_weighted": rates.phi_grad_weighted,
        "layer_gap": alpha / 2.0,
        "lambda_sup": alpha,
        "width": WIDTH_TARGET,
    }


def rate_flags(rows, alpha: float, nu: float) -> dict:
    """Slope flags recomputable from the CSV alone; one-sided bars."""
    eps = [r.eps for r in rows]
    bars = rate_bars(alpha, nu)
    return {
        name: bool(rate_fit(eps, [getattr(r, name) for r in rows]) >= bars[name])
        for name in METRIC_COLUMNS[1:]
    }


def study_flags(rows, diagnostics, alpha: float, nu: float) -> dict:
    """All acceptance flags, pure functions of the recorded numbers."""
    flags = rate_flags(rows, alpha, nu)
    width_slope = rate_fit([d.eps for d in diagnostics], [d.width for d in diagnostics])
    flags["width_exponent"] = bool(abs(width_slope - WIDTH_TARGET) <= WIDTH_TOL)
    flags["mass_conservation"] = bool(
        max(d.mass_defect for d in diagnostics) <= MASS_TOL
    )
    flags["max_principle"] = bool(
        sum(d.max_principle_violations for d in diagnostics) == 0
    )
    flags["boundary_identities"] = bool(
        max(max(d.phi_boundary_sup, d.v_boundary_sup) for d in diagnostics)
        <= BOUNDARY_TOL
    )
    return flags


@dataclass(frozen=True)
class ConvergenceReport:
    """The study's recorded numbers, fits, flags, and provenance."""

    config: StudyConfig
    config_digest: str
    rows: tuple
    diagnostics: tuple
    slopes: dict
    fit_residuals: dict
    exponents: dict
    bars: dict
    flags: dict
    versions: dict
    wall_time_total: float

    @property
    def all_pass(self) -> bool:
        return all(self.flags.values())


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get("CHEMLAYER_THREADS", "")
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ValueError(f"CHEMLAYER_THREADS must be a positive integer, got {raw!r}") from exc
        if cap < 1:
            raise ValueError(f"CHEMLAYER_THREADS must be a positive integer, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(n_jobs, cap))


def run_study(config: StudyConfig) -> tuple:
    """Fan the pipeline across the eps ladder and assemble the report.

    Returns (report, runs) with runs in config order. Per-eps pipelines
    share no state, so the report rows are identical for any pool size.
    """
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=_worker_count(len(config.eps_list))) as pool:
        runs = list(pool.map(lambda e: run_pipeline(config, e), config.eps_list))
    rows = tuple(r.row for r in runs)
    diagnostics = tuple(r.diagnostics for r in runs)

    eps = [r.eps for r in rows]
    slopes = {
        name: rate_fit(eps, [getattr(r, name) for r in rows])
        for name in METRIC_COLUMNS[1:]
    }
    residuals = {
        name: _fit_residual(eps, [getattr(r, name) for r in rows])
        for name in METRIC_COLUMNS[1:]
    }
    widths = [d.width for d in diagnostics]
    slopes["width"] = rate_fit(eps, widths)
    residuals["width"] = _fit_residual(eps, widths)

    report = ConvergenceReport(
        config=config,
        config_digest=config_sha256(config),
        rows=rows,
        diagnostics=diagnostics,
        slopes=slopes,
        fit_residuals=residuals,
        exponents=theoretical_exponents(config.alpha, config.nu),
        bars=rate_bars(config.alpha, config.nu),
        flags=study_flags(rows, diagnostics, config.alpha, config.nu),
        versions={
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        wall_time_total=time.perf_counter() - started,
    )
    return report, runs


def render_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join("%.12e" % getattr(r, name) for name in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> tuple:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0] if lines else '(empty)'!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(METRIC_COLUMNS):
            raise ValueError(f"expected {len(METRIC_COLUMNS)} columns, got {len(parts)}")
        rows.append(StudyRow(**{n: float(p) for n, p in zip(METRIC_COLUMNS, parts)}))
    return tuple(rows)


def write_report_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_csv(rows))


def report_to_json_dict(report: ConvergenceReport) -> dict:
    return {
        "config": config_to_json_dict(report.config),
        "config_sha256": report.config_digest,
        "columns": list(METRIC_COLUMNS),
        "rows": [[getattr(r, n) for n in METRIC_COLUMNS] for r in report.rows],
        "diagnostics": [
            {
                "eps": d.eps,
                "width": d.width,
                "mass_defect": d.mass_defect,
                "max_principle_violations": d.max_principle_violations,
                "phi_boundary_sup": d.phi_boundary_sup,
                "v_boundary_sup": d.v_boundary_sup,
                "wall_time": d.wall_time,
            }
            for d in report.diagnostics
        ],
        "slopes": report.slopes,
        "fit_residuals": report.fit_residuals,
        "theoretical_exponents": report.exponents,
        "rate_bars": report.bars,
        "flags": report.flags,
        "all_pass": report.all_pass,
        "versions": report.versions,
        "wall_time_total": report.wall_time_total,
    }


def write_report_json(report: ConvergenceReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report_to_json_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
