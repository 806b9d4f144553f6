"""Boundary-layer profile solvers in stretched wall coordinates.

Each wall carries a hierarchy of profiles on a truncated half-line grid:

* the leading chemical profile, a semilinear parabolic equation whose
  coefficients are the wall traces of the interior solution, marched
  implicitly with a Newton solve per step (with or without the small
  regularizing datum shift);
* the first potential profile, obtained from the leading chemical
  profile by a tail integral of expm1, with slope given in closed form;
* the coupled second-order pair: a first-order ODE in the stretched
  coordinate for the second potential profile's slope (solved by an
  integrating factor and tail quadrature) and a linear parabolic
  equation for the first chemical correction, iterated to a fixed
  point within each time step.

All marches share the time grid of the supplied wall traces and start
from identically zero profiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._stencils import (
    apply_gradient,
    assemble_backward_euler,
    cumtrapz0,
    gradient_weights,
    laplacian_coeffs,
    solve_tridiagonal,
)
from .correctors import CorrectorSeries
from .errors import PipelineError
from .outer_solver import BoundaryTraces, store_schedule
from .params_grids import HalfLineGrid, TimeField

__all__ = [
    "LayerSolveResult",
    "SecondOrderResult",
    "GapSeries",
    "LayerProfileSet",
    "solve_layer_leading",
    "phi_layer_first",
    "layer_density",
    "phi_origin_series",
    "layer_gap",
    "solve_layer_second",
]

_COLUMN = {"left": 0, "right": 1}
_NEWTON_MAX = 8
_NEWTON_TOL = 1e-12
_SWEEP_MAX = 5
_SWEEP_TOL = 1e-10
_BOUND_GUARD = 1e-10


class _NewtonStall(Exception):
    pass


class _SweepStall(Exception):
    pass


class _MarchStats:
    """Mutable accumulator for march diagnostics."""

    def __init__(self, v_hi: float) -> None:
        self.v_hi = v_hi
        self.v_min = np.inf
        self.v_max = -np.inf
        self.violations = 0
        self.newton_max = 0
        self.halvings = 0
        self.tail_sup = 0.0

    def observe(self, v: np.ndarray, tail_index: int) -> None:
        lo = float(v.min())
        hi = float(v.max())
        self.v_min = min(self.v_min, lo)
        self.v_max = max(self.v_max, hi)
        if lo < -_BOUND_GUARD or hi > self.v_hi + _BOUND_GUARD:
            self.violations += 1
        self.tail_sup = max(self.tail_sup, abs(float(v[tail_index])))


def _check_uniform_dt(times: np.ndarray, dt: float) -> None:
    if abs(times[1] - times[0] - dt) > 1e-12 or np.max(
        np.abs(np.diff(times) - dt)
    ) > 1e-12:
        raise ValueError("dt does not match the trace time spacing")


def _implicit_step(v_old, dt, a, b, g, lap, di, fa):
    """One backward-Euler step of the semilinear profile equation.

    The nonlinearity is a*((b + w)*exp(w) - b); Newton iterates on the
    full update with the datum g and the far-end zero pinned exactly.
    Returns (state, iterations) or raises _NewtonStall.
    """
    sub, diag, sup = lap
    w = v_old.copy()
    w[di] = g
    w[fa] = 0.0
    for it in range(1, _NEWTON_MAX + 1):
        ew = np.exp(w)
        nonlin = a * ((b + w) * ew - b)
        reaction = a * (b + w + 1.0) * ew
        lap_w = np.empty_like(w)
        lap_w[1:-1] = sub[1:-1] * w[:-2] + diag[1:-1] * w[1:-1] + sup[1:-1] * w[2:]
        lap_w[0] = 0.0
        lap_w[-1] = 0.0
        residual = w - v_old - dt * (lap_w - nonlin)
        residual[di] = 0.0
        residual[fa] = 0.0
        ab = assemble_backward_euler(lap, dt, reaction=reaction)
        delta = solve_tridiagonal(ab, -residual)
        w = w + delta
        w[di] = g
        w[fa] = 0.0
        if float(np.max(np.abs(delta))) <= _NEWTON_TOL:
            return w, it
    raise _NewtonStall


def _march_leading(A, B, g_series, grid, dt, stats, stage):
    """Generate (level, state) pairs of the leading profile march.

    Yields the live state buffer; consumers must copy rows they keep.
    A Newton stall is retried once with two half steps (midpoint
    coefficients) before aborting.
    """
    nodes = grid.nodes
    lap = laplacian_coeffs(nodes)
    di = grid.data_index
    fa = grid.far_index
    tail = fa - 1 if di < fa else fa + 1
    v = np.zeros(nodes.size)
    stats.observe(v, tail)
    yield 0, v
    for k in range(1, A.size):
        try:
            v_new, its = _implicit_step(v, dt, A[k], B[k], g_series[k], lap, di, fa)
        except _NewtonStall:
            stats.halvings += 1
            a_mid = 0.5 * (A[k - 1] + A[k])
            b_mid = 0.5 * (B[k - 1] + B[k])
            g_mid = 0.5 * (g_series[k - 1] + g_series[k])
            try:
                v_half, it1 = _implicit_step(v, dt / 2, a_mid, b_mid, g_mid, lap, di, fa)
                v_new, it2 = _implicit_step(
                    v_half, dt / 2, A[k], B[k], g_series[k], lap, di, fa
                )
                its = max(it1, it2)
            except _NewtonStall:
                raise PipelineError(
                    stage,
                    f"Newton failed to reach {_NEWTON_TOL} at t={k * dt:.6g} "
                    "even after halving the step",
                ) from None
        v = v_new
        stats.newton_max = max(stats.newton_max, its)
        stats.observe(v, tail)
        yield k, v


@dataclass(frozen=True)
class LayerSolveResult:
    """Leading chemical profile march with full-resolution wall series."""

    side: str
    field: TimeField
    times: np.ndarray
    boundary_integral: np.ndarray
    boundary_value: np.ndarray
    dt: float
    newton_iters_max: int
    step_halvings: int
    v_min: float
    v_max: float
    tail_sup: float
    violations: int

    def __post_init__(self) -> None:
        for name in ("times", "boundary_integral", "boundary_value"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _resolve_inputs(side, traces, M, v_star, grid, dt, corrector):
    if side not in _COLUMN:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if grid.side != side:
        raise ValueError(f"grid side {grid.side!r} does not match requested {side!r}")
    if v_star <= 0.0:
        raise ValueError(f"v_star must be positive, got {v_star}")
    if M <= 0.0:
        raise ValueError(f"M must be positive, got {M}")
    _check_uniform_dt(traces.times, dt)
    col = _COLUMN[side]
    A = traces.phi_x[:, col] + M
    if np.any(A <= 0.0):
        raise ValueError("wall density trace must stay positive")
    B = traces.v[:, col]
    g = v_star - B
    if corrector is not None:
        if corrector.side != side:
            raise ValueError(
                f"corrector side {corrector.side!r} does not match {side!r}"
            )
        if not np.array_equal(corrector.times, traces.times):
            raise ValueError("corrector time levels do not match the traces")
        g = g + corrector.values
    return col, A, B, g


def solve_layer_leading(
    side: str,
    traces: BoundaryTraces,
    M: float,
    v_star: float,
    grid: HalfLineGrid,
    dt: float,
    corrector: CorrectorSeries | None = None,
) -> LayerSolveResult:
    """March the leading chemical profile at one wall.

    The wall datum is v_star minus the wall chemical trace, shifted by
    the corrector series when one is supplied (the regularized variant).
    Per step the cumulative integral of expm1(profile) over the grid is
    recorded; it feeds the interior correction's Dirichlet data.
    """
    col, A, B, g = _resolve_inputs(side, traces, M, v_star, grid, dt, corrector)
    nodes = grid.nodes
    stage = f"layer_leading_{side}"
    stats = _MarchStats(v_hi=v_star)
    schedule = store_schedule(A.size - 1)
    rows = np.empty((schedule.size, nodes.size))
    integral = np.empty(A.size)
    slot = 0
    for k, v in _march_leading(A, B, g, grid, dt, stats, stage):
        integral[k] = cumtrapz0(np.expm1(v), nodes)[-1]
        if slot < schedule.size and k == schedule[slot]:
            rows[slot] = v
            slot += 1
    stored_times = traces.times[schedule]
    return LayerSolveResult(
        side=side,
        field=TimeField(grid, stored_times, rows),
        times=traces.times,
        boundary_integral=integral,
        boundary_value=g,
        dt=float(dt),
        newton_iters_max=stats.newton_max,
        step_halvings=stats.halvings,
        v_min=stats.v_min,
        v_max=stats.v_max,
        tail_sup=stats.tail_sup,
        violations=stats.violations,
    )


def phi_layer_first(side: str, v_field: TimeField, trace_u: np.ndarray) -> TimeField:
    """First potential profile: the tail integral of expm1(chemical profile).

    For the left wall the profile vanishes toward the far end, so each
    row is trace_u * (C - C[far]) with C the cumulative integral from
    the wall; the right wall mirrors this. The slope recovers
    trace_u * expm1(profile) exactly in the continuum.
    """
    grid = v_field.grid
    if not isinstance(grid, HalfLineGrid) or grid.side != side:
        raise ValueError(f"chemical profile field is not on a {side!r} half-line grid")
    trace_u = np.asarray(trace_u, dtype=np.float64)
    if trace_u.shape != v_field.times.shape:
        raise ValueError(
            f"trace_u must have shape {v_field.times.shape}, got {trace_u.shape}"
        )
    nodes = grid.nodes
    rows = np.empty_like(v_field.values)
    for k in range(v_field.times.size):
        C = cumtrapz0(np.expm1(v_field.values[k]), nodes)
        if side == "left":
            rows[k] = trace_u[k] * (C - C[-1])
        else:
            rows[k] = trace_u[k] * C
    return TimeField(grid, v_field.times, rows)


def layer_density(v_field: TimeField, trace_u: np.ndarray) -> TimeField:
    """Closed-form cell-density profile trace_u * expm1(chemical profile)."""
    trace_u = np.asarray(trace_u, dtype=np.float64)
    if trace_u.shape != v_field.times.shape:
        raise ValueError(
            f"trace_u must have shape {v_field.times.shape}, got {trace_u.shape}"
        )
    return TimeField(
        v_field.grid, v_field.times, trace_u[:, None] * np.expm1(v_field.values)
    )


def phi_origin_series(result: LayerSolveResult, trace_u: np.ndarray) -> np.ndarray:
    """Wall value of the first potential profile at every march step.

    Bit-identical to evaluating phi_layer_first at the wall node, but
    available at full step resolution from the recorded integrals.
    """
    trace_u = np.asarray(trace_u, dtype=np.float64)
    if trace_u.shape != result.times.shape:
        raise ValueError(
            f"trace_u must have shape {result.times.shape}, got {trace_u.shape}"
        )
    if result.side == "left":
        return trace_u * (0.0 - result.boundary_integral)
    return trace_u * result.boundary_integral


@dataclass(frozen=True)
class GapSeries:
    """Sup-over-grid distance between two profile fields, per time level."""

    times: np.ndarray
    values: np.ndarray
    sup: float


def layer_gap(v_reg: TimeField, v_lead: TimeField) -> GapSeries:
    """Per-level sup distance between regularized and plain profiles."""
    if not np.array_equal(v_reg.grid.nodes, v_lead.grid.nodes):
        raise ValueError("profile fields live on different grids")
    if not np.array_equal(v_reg.times, v_lead.times):
        raise ValueError("profile fields have different time levels")
    per_level = np.max(np.abs(v_reg.values - v_lead.values), axis=1)
    return GapSeries(
        times=v_reg.times.copy(), values=per_level, sup=float(per_level.max())
    )


def _integrate_slope(side, vreg, gf, nodes):
    """Solve w' - vreg' * w = gf with decay toward the far end.

    Integrating factor exp(-vreg); the quadrature runs inward from the
    truncation end where the homogeneous solution exp(+vreg) is tame,
    so the tail boundary condition w(far) = 0 is enforced exactly.
    """
    C = cumtrapz0(gf * np.exp(-vreg), nodes)
    if side == "left":
        return -np.exp(vreg) * (C[-1] - C)
    return np.exp(vreg) * C


def _integrate_profile(side, w, nodes):
    """Antiderivative of the slope pinned to zero at the truncation end."""
    Cw = cumtrapz0(w, nodes)
    if side == "left":
        return Cw - Cw[-1]
    return Cw


@dataclass(frozen=True)
class SecondOrderResult:
    """Second potential profile, its slope, and the first chemical correction."""

    side: str
    phi_second: TimeField
    v_first: TimeField
    slope: TimeField
    sweeps_max: int
    step_halvings: int


def _second_step(side, v1_prev, vreg, dt, a, b, pxx, vx, px1, v1w, grid, lap, grad_w):
    """One time step of the coupled second-order pair.

    Alternates the slope quadrature (which consumes the current iterate's
    stretched gradient) with one implicit linear step for the chemical
    correction, until the iterate moves less than the sweep tolerance.
    Returns (v1, w, phi2, sweeps) or raises _SweepStall.
    """
    nodes = grid.nodes
    di = grid.data_index
    fa = grid.far_index
    zc = nodes
    lin = pxx * zc + px1
    bc = -v1w
    vreg_z = apply_gradient(grad_w, vreg)
    phi_z_reg = a * np.expm1(vreg)
    reaction = a + phi_z_reg
    iterate = v1_prev.copy()
    iterate[di] = bc
    iterate[fa] = 0.0
    for sweep in range(1, _SWEEP_MAX + 1):
        v1_z = apply_gradient(grad_w, iterate)
        gf = vreg_z * lin + v1_z * (a + phi_z_reg) + phi_z_reg * vx
        w = _integrate_slope(side, vreg, gf, nodes)
        phi2 = _integrate_profile(side, w, nodes)
        forcing = -phi_z_reg * (vx * zc + v1w) - lin * vreg - w * (b + vreg)
        rhs = v1_prev + dt * forcing
        rhs[di] = bc
        rhs[fa] = 0.0
        ab = assemble_backward_euler(lap, dt, reaction=reaction)
        nxt = solve_tridiagonal(ab, rhs)
        nxt[di] = bc
        nxt[fa] = 0.0
        change = float(np.max(np.abs(nxt - iterate)))
        iterate = nxt
        if change <= _SWEEP_TOL:
            # Re-derive the slope pair from the converged iterate so the
            # returned triple satisfies the slope equation together.
            v1_z = apply_gradient(grad_w, iterate)
            gf = vreg_z * lin + v1_z * (a + phi_z_reg) + phi_z_reg * vx
            w = _integrate_slope(side, vreg, gf, nodes)
            phi2 = _integrate_profile(side, w, nodes)
            return iterate, w, phi2, sweep
    raise _SweepStall


def solve_layer_second(
    side: str,
    traces: BoundaryTraces,
    corr_traces: BoundaryTraces,
    M: float,
    v_star: float,
    grid: HalfLineGrid,
    dt: float,
    corrector: CorrectorSeries | None = None,
) -> SecondOrderResult:
    """March the coupled second-order profile pair at one wall.

    The leading (regularized) profile is re-marched internally with the
    same inputs as solve_layer_leading, reproducing its floats. Per step
    the pair is resolved by a short fixed-point iteration; a stalled
    step is retried once with two half steps before aborting.
    """
    col, A, B, g = _resolve_inputs(side, traces, M, v_star, grid, dt, corrector)
    if not np.array_equal(corr_traces.times, traces.times):
        raise ValueError("correction trace time levels do not match the leading traces")
    pxx_series = traces.phi_xx[:, col]
    vx_series = traces.v_x[:, col]
    px1_series = corr_traces.phi_x[:, col]
    v1w_series = corr_traces.v[:, col]
    if v1w_series[0] != 0.0:
        raise ValueError("correction wall series must vanish at t=0 (zero initial data)")

    nodes = grid.nodes
    stage = f"layer_second_{side}"
    lap = laplacian_coeffs(nodes)
    grad_w = gradient_weights(nodes)
    lead_stats = _MarchStats(v_hi=v_star)
    schedule = store_schedule(A.size - 1)
    phi2_rows = np.empty((schedule.size, nodes.size))
    v1_rows = np.empty((schedule.size, nodes.size))
    w_rows = np.empty((schedule.size, nodes.size))
    sweeps_max = 0
    halvings = 0
    v1 = np.zeros(nodes.size)
    vreg_prev = np.zeros(nodes.size)
    slot = 0

    for k, vreg in _march_leading(A, B, g, grid, dt, lead_stats, stage):
        if k == 0:
            phi2_rows[0] = 0.0
            v1_rows[0] = 0.0
            w_rows[0] = 0.0
            slot = 1
            vreg_prev = vreg.copy()
            continue
        args = (A[k], B[k], pxx_series[k], vx_series[k], px1_series[k], v1w_series[k])
        try:
            v1, w, phi2, sweeps = _second_step(
                side, v1, vreg, dt, *args, grid, lap, grad_w
            )
        except _SweepStall:
            halvings += 1
            vreg_mid = 0.5 * (vreg_prev + vreg)
            mid = tuple(
                0.5 * (s[k - 1] + s[k])
                for s in (A, B, pxx_series, vx_series, px1_series, v1w_series)
            )
            try:
                v1, _, _, s1 = _second_step(
                    side, v1, vreg_mid, dt / 2, *mid, grid, lap, grad_w
                )
                v1, w, phi2, s2 = _second_step(
                    side, v1, vreg, dt / 2, *args, grid, lap, grad_w
                )
                sweeps = max(s1, s2)
            except _SweepStall:
                raise PipelineError(
                    stage,
                    f"fixed point failed to reach {_SWEEP_TOL} at t={k * dt:.6g} "
                    "even after halving the step",
                ) from None
        sweeps_max = max(sweeps_max, sweeps)
        vreg_prev = vreg.copy()
        if slot < schedule.size and k == schedule[slot]:
            phi2_rows[slot] = phi2
            v1_rows[slot] = v1
            w_rows[slot] = w
            slot += 1

    stored_times = traces.times[schedule]
    return SecondOrderResult(
        side=side,
        phi_second=TimeField(grid, stored_times, phi2_rows),
        v_first=TimeField(grid, stored_times, v1_rows),
        slope=TimeField(grid, stored_times, w_rows),
        sweeps_max=sweeps_max,
        step_halvings=halvings,
    )


@dataclass(frozen=True)
class LayerProfileSet:
    """The full profile hierarchy of one wall on a shared stretched grid."""

    side: str
    v_lead: TimeField
    v_reg: TimeField
    phi_lead: TimeField
    phi_reg: TimeField
    phi_second: TimeField
    v_first: TimeField

    def __post_init__(self) -> None:
        fields = {
            "v_lead": self.v_lead,
            "v_reg": self.v_reg,
            "phi_lead": self.phi_lead,
            "phi_reg": self.phi_reg,
            "phi_second": self.phi_second,
            "v_first": self.v_first,
        }
        for name, field in fields.items():
            grid = field.grid
            if not isinstance(grid, HalfLineGrid) or grid.side != self.side:
                raise ValueError(f"{name} is not on a {self.side!r} half-line grid")
            if not np.array_equal(grid.nodes, self.v_lead.grid.nodes):
                raise ValueError(f"{name} grid differs from v_lead's grid")
            if not np.array_equal(field.times, self.v_lead.times):
                raise ValueError(f"{name} time levels differ from v_lead's")
