"""Composite matched approximation and error functionals.

Assembles the interval-wide approximation from the outer pair, the wall
layer profiles re-expressed in interval coordinates, and boundary
homogenizers that cancel the layer tails and corner correctors at the
opposite wall. Also evaluates the sup-norm error functionals comparing
the full solve against the hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correctors import CorrectorSeries
from .full_solver import FullSolution
from .layer_solver import LayerProfileSet, layer_density
from .outer_solver import OuterCorrection, OuterSolution
from .params_grids import TimeField, interp_space
from .transform_compat import recover_u

# Exponent of the time weight on the derivative-level error functionals.
_TIME_WEIGHT_POWER = 1.25


def _wall_values(field: TimeField) -> np.ndarray:
    return field.values[:, field.grid.data_index]


def _lambda_series(corr: CorrectorSeries, times: np.ndarray) -> np.ndarray:
    # exact at stored levels: they are a subset of the corrector's times
    return np.interp(times, corr.times, corr.values)


def homogenizer_b_phi(
    x: np.ndarray,
    eps: float,
    nu: float,
    left: LayerProfileSet,
    right: LayerProfileSet,
) -> np.ndarray:
    """Potential boundary correction, one row per stored time level.

    Cancels each layer's tail at the opposite wall and each second-order
    profile's own wall value, the latter damped into the interior on the
    eps^nu scale.
    """
    x = np.asarray(x, dtype=np.float64)
    root = float(np.sqrt(eps))
    zeta = 1.0 / root
    tail_reg_left = interp_space(left.phi_reg, np.array([zeta]))[:, 0]
    tail_two_left = interp_space(left.phi_second, np.array([zeta]))[:, 0]
    tail_reg_right = interp_space(right.phi_reg, np.array([-zeta]))[:, 0]
    tail_two_right = interp_space(right.phi_second, np.array([-zeta]))[:, 0]
    wall_two_left = _wall_values(left.phi_second)
    wall_two_right = _wall_values(right.phi_second)
    ramp = 1.0 - x
    decay_left = np.exp(-x / eps**nu)
    decay_right = np.exp(-ramp / eps**nu)
    b = -np.outer(root * tail_reg_right + eps * tail_two_right, ramp)
    b -= eps * np.outer(wall_two_left, ramp * decay_left)
    b -= np.outer(root * tail_reg_left + eps * tail_two_left, x)
    b -= eps * np.outer(wall_two_right, x * decay_right)
    return b


def homogenizer_b_v(
    x: np.ndarray,
    eps: float,
    left: LayerProfileSet,
    right: LayerProfileSet,
    corr_left: CorrectorSeries,
    corr_right: CorrectorSeries,
) -> np.ndarray:
    """Chemical boundary correction, one row per stored time level.

    Each wall's bracket removes the opposite layer's tail and that wall's
    own corner corrector, restoring the exact wall datum.
    """
    x = np.asarray(x, dtype=np.float64)
    root = float(np.sqrt(eps))
    zeta = 1.0 / root
    times = left.v_reg.times
    tail_reg_left = interp_space(left.v_reg, np.array([zeta]))[:, 0]
    tail_one_left = interp_space(left.v_first, np.array([zeta]))[:, 0]
    tail_reg_right = interp_space(right.v_reg, np.array([-zeta]))[:, 0]
    tail_one_right = interp_space(right.v_first, np.array([-zeta]))[:, 0]
    lam_left = _lambda_series(corr_left, times)
    lam_right = _lambda_series(corr_right, times)
    bracket_left_wall = tail_reg_right + root * tail_one_right + lam_left
    bracket_right_wall = tail_reg_left + root * tail_one_left + lam_right
    return np.outer(bracket_left_wall, x - 1.0) - np.outer(bracket_right_wall, x)


@dataclass(frozen=True)
class CompositeApproximation:
    """Interval-wide matched approximation with its constituents."""

    Phi_a: TimeField
    V_a: TimeField
    eps: float
    nu: float
    v_star: float
    phi_boundary_sup: float
    v_boundary_sup: float
    outer0: OuterSolution
    outer1: OuterCorrection
    left: LayerProfileSet
    right: LayerProfileSet
    corr_left: CorrectorSeries
    corr_right: CorrectorSeries


def _check_constituents(named: list[tuple[str, object]]) -> None:
    for name, value in named:
        if value is None:
            raise ValueError(f"missing constituent: {name}")


def _stretched(nodes: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    root = float(np.sqrt(eps))
    return nodes / root, (nodes - 1.0) / root


def build_composite(
    outer0: OuterSolution,
    outer1: OuterCorrection,
    left: LayerProfileSet,
    right: LayerProfileSet,
    corr_left: CorrectorSeries,
    corr_right: CorrectorSeries,
    eps: float,
    nu: float,
    v_star: float,
) -> CompositeApproximation:
    """Assemble the composite pair on the outer grid's stored levels."""
    _check_constituents(
        [
            ("outer0", outer0),
            ("outer1", outer1),
            ("left layer set", left),
            ("right layer set", right),
            ("left corrector", corr_left),
            ("right corrector", corr_right),
        ]
    )
    if eps <= 0.0:
        raise ValueError("composite assembly requires eps > 0")
    if left.side != "left" or right.side != "right":
        raise ValueError("layer sets must be a (left, right) pair")
    for name, series in (("left", corr_left), ("right", corr_right)):
        if series.eps != eps:
            raise ValueError(f"{name} corrector was built for eps={series.eps}, not {eps}")
    times = outer0.phi.times
    for name, other in (
        ("first-order outer", outer1.phi.times),
        ("left layer set", left.v_reg.times),
        ("right layer set", right.v_reg.times),
    ):
        if not np.array_equal(times, other):
            raise ValueError(f"{name} stored times do not match the leading outer")

    nodes = outer0.phi.grid.nodes
    z, xi = _stretched(nodes, eps)
    root = float(np.sqrt(eps))

    phi_vals = (
        outer0.phi.values
        + root
        * (
            outer1.phi.values
            + interp_space(left.phi_reg, z)
            + interp_space(right.phi_reg, xi)
        )
        + eps * (interp_space(left.phi_second, z) + interp_space(right.phi_second, xi))
        + homogenizer_b_phi(nodes, eps, nu, left, right)
    )
    v_vals = (
        outer0.v.values
        + interp_space(left.v_reg, z)
        + interp_space(right.v_reg, xi)
        + root
        * (
            outer1.v.values
            + interp_space(left.v_first, z)
            + interp_space(right.v_first, xi)
        )
        + homogenizer_b_v(nodes, eps, left, right, corr_left, corr_right)
    )

    phi_boundary_sup = float(
        max(np.max(np.abs(phi_vals[:, 0])), np.max(np.abs(phi_vals[:, -1])))
    )
    v_boundary_sup = float(
        max(
            np.max(np.abs(v_vals[:, 0] - v_star)),
            np.max(np.abs(v_vals[:, -1] - v_star)),
        )
    )
    grid = outer0.phi.grid
    return CompositeApproximation(
        Phi_a=TimeField(grid=grid, times=times, values=phi_vals),
        V_a=TimeField(grid=grid, times=times, values=v_vals),
        eps=float(eps),
        nu=float(nu),
        v_star=float(v_star),
        phi_boundary_sup=phi_boundary_sup,
        v_boundary_sup=v_boundary_sup,
        outer0=outer0,
        outer1=outer1,
        left=left,
        right=right,
        corr_left=corr_left,
        corr_right=corr_right,
    )


def decomposition_residual(full: FullSolution, comp: CompositeApproximation) -> float:
    """Sup residual of the error-splitting identity (pure rewiring algebra).

    The remainder written as (full minus composite) plus the second-order
    layer block plus the potential homogenizer must coincide with the
    remainder written directly against the first-order truncation.
    """
    nodes = full.phi.grid.nodes
    if not np.array_equal(nodes, comp.Phi_a.grid.nodes):
        raise ValueError("full solve and composite live on different grids")
    if not np.array_equal(full.phi.times, comp.Phi_a.times):
        raise ValueError("full solve and composite store different time levels")
    eps = comp.eps
    root = float(np.sqrt(eps))
    z, xi = _stretched(nodes, eps)
    second_block = eps * (
        interp_space(comp.left.phi_second, z) + interp_space(comp.right.phi_second, xi)
    )
    b_phi = homogenizer_b_phi(nodes, eps, comp.nu, comp.left, comp.right)
    via_composite = (full.phi.values - comp.Phi_a.values) + second_block + b_phi
    via_truncation = full.phi.values - comp.outer0.phi.values - root * (
        comp.outer1.phi.values
        + interp_space(comp.left.phi_reg, z)
        + interp_space(comp.right.phi_reg, xi)
    )
    return float(np.max(np.abs(via_composite - via_truncation)))


@dataclass(frozen=True)
class ErrorMetrics:
    """Sup-norm error functionals of a full solve against the hierarchy."""

    e1_sup: float
    e1x_weighted: float
    e2_sup: float
    u_weighted: float
    t_min: float

    def __post_init__(self) -> None:
        for name in ("e1_sup", "e1x_weighted", "e2_sup", "u_weighted"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


def _stored_trace_density(
    outer0: OuterSolution, side_set: LayerProfileSet, times: np.ndarray
) -> TimeField:
    """Leading-order layer density on the half-line grid at stored levels."""
    col = 0 if side_set.side == "left" else 1
    idx = np.searchsorted(outer0.traces.times, times)
    idx = np.clip(idx, 0, outer0.traces.times.size - 1)
    if not np.array_equal(outer0.traces.times[idx], times):
        raise ValueError("stored times are not a subset of the trace times")
    trace_u = outer0.traces.phi_x[idx, col] + outer0.M
    return layer_density(side_set.v_lead, trace_u)


def theorem_errors(
    full: FullSolution,
    outer0: OuterSolution,
    left: LayerProfileSet,
    right: LayerProfileSet,
    t_min: float,
) -> ErrorMetrics:
    """Evaluate the four error functionals on the full solver's grid.

    The leading-order comparisons use the unregularized layer profiles.
    Weighted metrics run over stored levels with t >= t_min only; the
    time weight is t^(5/4).
    """
    if t_min <= 0.0:
        raise ValueError("t_min must be positive for the weighted metrics")
    nodes = full.phi.grid.nodes
    if not np.array_equal(nodes, outer0.phi.grid.nodes):
        raise ValueError("full solve and outer solve live on different grids")
    times = full.phi.times
    if not np.array_equal(times, outer0.phi.times):
        raise ValueError("full solve and outer solve store different time levels")
    for side_set in (left, right):
        if not np.array_equal(times, side_set.v_lead.times):
            raise ValueError("layer set stored times do not match the solves")
    if full.M != outer0.M:
        raise ValueError("full solve and outer solve carry different total mass")
    window = times >= t_min - 1e-12
    if not np.any(window):
        raise ValueError(f"no stored levels at or after t_min={t_min}")
    weight = times[window] ** _TIME_WEIGHT_POWER

    z, xi = _stretched(nodes, full.eps)
    dens_left = interp_space(_stored_trace_density(outer0, left, times), z)
    dens_right = interp_space(_stored_trace_density(outer0, right, times), xi)
    vlead_left = interp_space(left.v_lead, z)
    vlead_right = interp_space(right.v_lead, xi)

    e1_sup = float(np.max(np.abs(full.phi.values - outer0.phi.values)))

    grad_full = np.gradient(full.phi.values, nodes, axis=1, edge_order=2)
    grad_outer = np.gradient(outer0.phi.values, nodes, axis=1, edge_order=2)
    diff_slope = grad_full - grad_outer - dens_left - dens_right
    rows = np.max(np.abs(diff_slope[window]), axis=1)
    e1x_weighted = float(np.max(weight * rows))

    diff_v = full.v.values - outer0.v.values - vlead_left - vlead_right
    e2_sup = float(np.max(np.abs(diff_v)))

    u_full = recover_u(full.phi, full.M).values
    u_outer = recover_u(outer0.phi, outer0.M).values
    diff_u = u_full - u_outer - dens_left - dens_right
    rows_u = np.max(np.abs(diff_u[window]), axis=1)
    u_weighted = float(np.max(weight * rows_u))

    return ErrorMetrics(
        e1_sup=e1_sup,
        e1x_weighted=e1x_weighted,
        e2_sup=e2_sup,
        u_weighted=u_weighted,
        t_min=float(t_min),
    )
