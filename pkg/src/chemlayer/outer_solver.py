"""Marching solvers for the zero-diffusion interior hierarchy.

The leading-order pair (phi, v) solves the system obtained by dropping
chemical diffusion: the cell potential diffuses and is advected by the
chemical gradient, while the chemical decays pointwise at rate phi_x + M.
The first-order correction solves the linearization of that system around
the leading pair, driven by time-dependent wall data handed over by the
boundary-layer stage.

Both marches share one splitting: backward Euler on the potential's
diffusion with the advection source frozen at the previous level, then an
exact exponential (plus source) update for the chemical. Wall series
needed downstream are recorded at every step at full resolution, while
the fields themselves are thinned to a bounded number of stored levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._stencils import (
    apply_gradient,
    assemble_backward_euler,
    cumtrapz0,
    end_derivative_weights,
    gradient_weights,
    laplacian_coeffs,
    solve_tridiagonal,
)
from .errors import PipelineError
from .params_grids import Grid1D, TimeField

__all__ = [
    "BoundaryTraces",
    "OuterSolution",
    "OuterCorrection",
    "step_count",
    "store_schedule",
    "solve_outer0",
    "extract_traces",
    "boundary_formula_defect",
    "solve_outer1",
]


def step_count(t_end: float, dt: float) -> int:
    """Number of uniform steps of size dt covering [0, t_end]."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_end <= 0.0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    n = max(1, int(round(t_end / dt)))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"dt={dt} does not divide t_end={t_end} evenly")
    return n


def store_schedule(n_steps: int, target: int = 500) -> np.ndarray:
    """Indices of time levels to retain: every k-th step plus both ends."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    every = max(1, n_steps // target)
    idx = np.arange(0, n_steps + 1, every, dtype=np.int64)
    if idx[-1] != n_steps:
        idx = np.append(idx, np.int64(n_steps))
    return idx


@dataclass(frozen=True)
class BoundaryTraces:
    """Wall time series of a march, sampled at every step.

    Column 0 is the x=0 wall, column 1 the x=1 wall. First and second
    derivatives come from one-sided cubic-fit stencils; v is nodal.
    """

    times: np.ndarray
    phi_x: np.ndarray
    phi_xx: np.ndarray
    v: np.ndarray
    v_x: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("times must be a 1d array with at least 2 entries")
        if times[0] != 0.0:
            raise ValueError(f"times must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        for name in ("phi_x", "phi_xx", "v", "v_x"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (times.size, 2):
                raise ValueError(
                    f"{name} must have shape {(times.size, 2)}, got {arr.shape}"
                )
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        times_frozen = times.copy()
        times_frozen.setflags(write=False)
        object.__setattr__(self, "times", times_frozen)

    @property
    def n_levels(self) -> int:
        return self.times.size


class _TraceRecorder:
    """Accumulates one-sided wall derivatives and nodal values per step."""

    def __init__(self, nodes: np.ndarray, n_steps: int) -> None:
        self.w1_left, self.w2_left = end_derivative_weights(nodes, "left")
        self.w1_right, self.w2_right = end_derivative_weights(nodes, "right")
        shape = (n_steps + 1, 2)
        self.phi_x = np.empty(shape)
        self.phi_xx = np.empty(shape)
        self.v = np.empty(shape)
        self.v_x = np.empty(shape)

    def record(self, k: int, phi: np.ndarray, v: np.ndarray) -> None:
        head_p, tail_p = phi[:4], phi[-4:]
        head_v, tail_v = v[:4], v[-4:]
        self.phi_x[k, 0] = self.w1_left @ head_p
        self.phi_x[k, 1] = self.w1_right @ tail_p
        self.phi_xx[k, 0] = self.w2_left @ head_p
        self.phi_xx[k, 1] = self.w2_right @ tail_p
        self.v[k, 0] = head_v[0]
        self.v[k, 1] = tail_v[-1]
        self.v_x[k, 0] = self.w1_left @ head_v
        self.v_x[k, 1] = self.w1_right @ tail_v

    def build(self, times: np.ndarray) -> BoundaryTraces:
        return BoundaryTraces(
            times=times, phi_x=self.phi_x, phi_xx=self.phi_xx, v=self.v, v_x=self.v_x
        )


@dataclass(frozen=True)
class OuterSolution:
    """Leading-order interior fields with full-resolution wall traces."""

    phi: TimeField
    v: TimeField
    traces: BoundaryTraces
    M: float
    dt: float
    u_min: float
    u_max: float


@dataclass(frozen=True)
class OuterCorrection:
    """First-order interior correction driven by layer wall data."""

    phi: TimeField
    v: TimeField
    traces: BoundaryTraces
    dirichlet: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.dirichlet, dtype=np.float64)
        if arr.shape != (self.traces.times.size, 2):
            raise ValueError(
                f"dirichlet must have shape {(self.traces.times.size, 2)}, got {arr.shape}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "dirichlet", arr)


def _validate_initial(
    grid: Grid1D, phi0: np.ndarray, v0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    phi0 = np.asarray(phi0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    n = grid.nodes.size
    if phi0.shape != (n,) or v0.shape != (n,):
        raise ValueError(
            f"initial fields must have shape ({n},), got {phi0.shape} and {v0.shape}"
        )
    if phi0[0] != 0.0 or phi0[-1] != 0.0:
        raise ValueError("initial potential must vanish exactly at both walls")
    if np.any(v0 < 0.0):
        raise ValueError("initial chemical must be nonnegative")
    return phi0, v0


def _outer0_step(phi, vv, M, dt, grad_w, ab_template, stage):
    """One splitting step of the leading system.

    Returns the new state plus the old-level gradients so a caller
    marching a correction alongside can reuse them. Shared by the
    leading solver and the correction solver so both produce identical
    floating-point trajectories for the leading pair.
    """
    v_x = apply_gradient(grad_w, vv)
    phi_x = apply_gradient(grad_w, phi)
    rhs = phi + dt * (-(phi_x + M) * v_x)
    rhs[0] = 0.0
    rhs[-1] = 0.0
    phi_new = solve_tridiagonal(ab_template.copy(), rhs)
    phi_new[0] = 0.0
    phi_new[-1] = 0.0
    u_new = apply_gradient(grad_w, phi_new) + M
    u_lo = float(u_new.min())
    if not np.isfinite(u_lo):
        raise PipelineError(stage, "non-finite state in leading march")
    if u_lo <= 0.0:
        raise PipelineError(
            stage, f"cell density lost positivity: min(phi_x + M) = {u_lo:.3e}"
        )
    vv_new = vv * np.exp(-dt * u_new)
    return phi_new, vv_new, u_new, phi_x, v_x


def solve_outer0(
    phi0: np.ndarray,
    v0: np.ndarray,
    M: float,
    grid: Grid1D,
    dt: float,
    t_end: float,
) -> OuterSolution:
    """March the leading interior system on [0, t_end].

    Backward Euler on the potential's diffusion with explicit advection,
    then an exact exponential decay update for the chemical using the
    fresh potential gradient. Aborts if the recovered cell density loses
    positivity. Wall traces are recorded at every step.
    """
    phi0, v0 = _validate_initial(grid, phi0, v0)
    if M <= 0.0:
        raise ValueError(f"total mass M must be positive, got {M}")
    n_steps = step_count(t_end, dt)
    nodes = grid.nodes
    times = dt * np.arange(n_steps + 1)

    grad_w = gradient_weights(nodes)
    ab_template = assemble_backward_euler(laplacian_coeffs(nodes), dt)
    recorder = _TraceRecorder(nodes, n_steps)
    schedule = store_schedule(n_steps)
    phi_rows = np.empty((schedule.size, nodes.size))
    v_rows = np.empty((schedule.size, nodes.size))

    phi = phi0.copy()
    vv = v0.copy()
    u0 = apply_gradient(grad_w, phi) + M
    u_min = float(u0.min())
    u_max = float(u0.max())
    if u_min <= 0.0:
        raise PipelineError(
            "outer0", f"initial cell density not positive: min = {u_min:.3e}"
        )
    recorder.record(0, phi, vv)
    phi_rows[0] = phi
    v_rows[0] = vv
    slot = 1

    for k in range(1, n_steps + 1):
        phi, vv, u_new, _, _ = _outer0_step(
            phi, vv, M, dt, grad_w, ab_template, "outer0"
        )
        u_min = min(u_min, float(u_new.min()))
        u_max = max(u_max, float(u_new.max()))
        recorder.record(k, phi, vv)
        if slot < schedule.size and k == schedule[slot]:
            phi_rows[slot] = phi
            v_rows[slot] = vv
            slot += 1

    stored_times = times[schedule]
    return OuterSolution(
        phi=TimeField(grid, stored_times, phi_rows),
        v=TimeField(grid, stored_times, v_rows),
        traces=recorder.build(times),
        M=float(M),
        dt=float(dt),
        u_min=u_min,
        u_max=u_max,
    )


def extract_traces(phi: TimeField, v: TimeField) -> BoundaryTraces:
    """Recompute wall traces from stored field levels.

    Uses the same one-sided stencils as the in-march recorder, so on the
    stored levels the result matches the recorded series bit for bit.
    """
    if phi.grid is not v.grid and not np.array_equal(phi.grid.nodes, v.grid.nodes):
        raise ValueError("potential and chemical fields live on different grids")
    if not np.array_equal(phi.times, v.times):
        raise ValueError("potential and chemical fields have different time levels")
    recorder = _TraceRecorder(phi.grid.nodes, phi.times.size - 1)
    for k in range(phi.times.size):
        recorder.record(k, phi.values[k], v.values[k])
    return recorder.build(phi.times)


def boundary_formula_defect(traces: BoundaryTraces, M: float) -> float:
    """Max relative defect of the wall decay formula.

    The exact solution satisfies, at each wall, v(t) equal to its initial
    value times exp of minus the time integral of phi_x + M there. Both
    sides are evaluated from the recorded series (trapezoid in time);
    the defect is the largest relative mismatch over both walls.
    """
    worst = 0.0
    for j in (0, 1):
        integral = cumtrapz0(traces.phi_x[:, j] + M, traces.times)
        formula = traces.v[0, j] * np.exp(-integral)
        scale = np.maximum(np.abs(formula), 1e-300)
        worst = max(worst, float(np.max(np.abs(traces.v[:, j] - formula) / scale)))
    return worst


def solve_outer1(
    sol0: OuterSolution,
    bl_left: np.ndarray,
    bl_right: np.ndarray,
) -> OuterCorrection:
    """March the first-order interior correction.

    The correction potential satisfies the leading equation linearized
    around (phi, v), with Dirichlet data equal to minus the supplied
    layer wall series; the correction chemical follows a linear decay
    with source, integrated exactly over each step against the frozen
    new-level coefficients. The leading pair is re-marched internally
    step by step, reproducing solve_outer0's floats.
    """
    bl_left = np.asarray(bl_left, dtype=np.float64)
    bl_right = np.asarray(bl_right, dtype=np.float64)
    n_levels = sol0.traces.times.size
    if bl_left.shape != (n_levels,) or bl_right.shape != (n_levels,):
        raise ValueError(
            f"layer wall series must have shape ({n_levels},) matching the "
            f"leading march, got {bl_left.shape} and {bl_right.shape}"
        )
    grid = sol0.phi.grid
    nodes = grid.nodes
    dt = sol0.dt
    M = sol0.M
    n_steps = n_levels - 1
    times = sol0.traces.times

    grad_w = gradient_weights(nodes)
    ab_template = assemble_backward_euler(laplacian_coeffs(nodes), dt)
    recorder = _TraceRecorder(nodes, n_steps)
    schedule = store_schedule(n_steps)
    phi1_rows = np.empty((schedule.size, nodes.size))
    v1_rows = np.empty((schedule.size, nodes.size))
    dirichlet = np.column_stack((-bl_left, -bl_right))

    phi0 = sol0.phi.values[0].copy()
    v0 = sol0.v.values[0].copy()
    phi1 = np.zeros(nodes.size)
    v1 = np.zeros(nodes.size)
    if dirichlet[0, 0] != 0.0 or dirichlet[0, 1] != 0.0:
        raise ValueError("layer wall series must vanish at t=0 (zero initial data)")
    recorder.record(0, phi1, v1)
    phi1_rows[0] = phi1
    v1_rows[0] = v1
    slot = 1

    for k in range(1, n_steps + 1):
        phi1_x = apply_gradient(grad_w, phi1)
        v1_x = apply_gradient(grad_w, v1)
        phi0, v0, u_new, phi0_x_old, v0_x_old = _outer0_step(
            phi0, v0, M, dt, grad_w, ab_template, "outer1"
        )
        rhs = phi1 + dt * (-(phi0_x_old + M) * v1_x - phi1_x * v0_x_old)
        rhs[0] = dirichlet[k, 0]
        rhs[-1] = dirichlet[k, 1]
        phi1 = solve_tridiagonal(ab_template.copy(), rhs)
        phi1[0] = dirichlet[k, 0]
        phi1[-1] = dirichlet[k, 1]
        source = -apply_gradient(grad_w, phi1) * v0
        v1 = v1 * np.exp(-dt * u_new) + source * (-np.expm1(-dt * u_new)) / u_new
        recorder.record(k, phi1, v1)
        if slot < schedule.size and k == schedule[slot]:
            phi1_rows[slot] = phi1
            v1_rows[slot] = v1
            slot += 1

    stored_times = times[schedule]
    return OuterCorrection(
        phi=TimeField(grid, stored_times, phi1_rows),
        v=TimeField(grid, stored_times, v1_rows),
        traces=recorder.build(times),
        dirichlet=dirichlet,
        dt=dt,
    )
