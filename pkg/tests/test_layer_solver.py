"""Tests for the stretched-coordinate boundary-layer profile solvers."""

import numpy as np
import pytest
from scipy.integrate import quad

import chemlayer.layer_solver as layer_solver
from chemlayer._stencils import apply_gradient, gradient_weights
from chemlayer.correctors import CorrectorSeries, build_corrector_series
from chemlayer.errors import PipelineError
from chemlayer.layer_solver import (
    GapSeries,
    LayerProfileSet,
    _integrate_profile,
    _integrate_slope,
    layer_density,
    layer_gap,
    phi_layer_first,
    phi_origin_series,
    solve_layer_leading,
    solve_layer_second,
)
from chemlayer.outer_solver import BoundaryTraces, store_schedule
from chemlayer.params_grids import HalfLineGrid, TimeField, build_half_line_grid


def constant_traces(M=1.5, v_star=1.0, dt=1e-3, n_steps=200):
    """Wall traces of the constant-data interior solution."""
    t = dt * np.arange(n_steps + 1)
    decay = v_star * np.exp(-M * t)
    zeros = np.zeros((t.size, 2))
    return BoundaryTraces(
        times=t,
        phi_x=zeros,
        phi_xx=zeros,
        v=np.column_stack([decay, decay]),
        v_x=zeros,
    )


def zero_correction_traces(times):
    zeros = np.zeros((times.size, 2))
    return BoundaryTraces(times=times, phi_x=zeros, phi_xx=zeros, v=zeros, v_x=zeros)


class TestLeadingProfile:
    @pytest.mark.parametrize("side", ["left", "right"])
    def test_constant_data_wall_value_oracle(self, side):
        M, v_star, dt = 1.5, 1.0, 1e-3
        traces = constant_traces(M, v_star, dt)
        grid = build_half_line_grid(160, 20.0, side)
        res = solve_layer_leading(side, traces, M, v_star, grid, dt)
        sched = store_schedule(200)
        expected = v_star - v_star * np.exp(-M * traces.times)
        di = grid.data_index
        assert np.array_equal(res.field.values[:, di], expected[sched])
        assert np.array_equal(res.boundary_value, expected)
        # v(0, T) approaches v_star * (1 - e^{-M T}).
        assert abs(res.field.values[-1, di] - v_star * (1 - np.exp(-M * 0.2))) < 1e-14

    def test_corrector_shifts_the_datum_exactly(self):
        M, v_star, dt = 1.5, 1.0, 1e-3
        traces = constant_traces(M, v_star, dt)
        grid = build_half_line_grid(160, 20.0, "left")
        corr = build_corrector_series(
            "left", traces.times, traces.phi_x[:, 0] + M, traces.v[:, 0],
            M, v_star, 1e-3, 1.1,
        )
        res = solve_layer_leading("left", traces, M, v_star, grid, dt, corrector=corr)
        expected = (v_star - traces.v[:, 0]) + corr.values
        assert np.array_equal(res.boundary_value, expected)
        sched = store_schedule(200)
        assert np.array_equal(res.field.values[:, 0], expected[sched])
        assert np.max(np.abs(corr.values)) > 0.0

    def test_zero_initial_row_and_integral(self):
        traces = constant_traces()
        grid = build_half_line_grid(96, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        assert np.all(res.field.values[0] == 0.0)
        assert res.boundary_integral[0] == 0.0

    def test_max_principle_respected(self):
        traces = constant_traces()
        grid = build_half_line_grid(160, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        assert res.violations == 0
        assert res.v_min >= -1e-10
        assert res.v_max <= 1.0 + 1e-10
        assert res.newton_iters_max <= 8

    def test_violation_counter_fires_on_bad_data(self):
        # A negative chemical trace pushes the datum above v_star.
        M, v_star, dt = 1.5, 1.0, 1e-3
        t = dt * np.arange(101)
        zeros = np.zeros((t.size, 2))
        v_trace = np.column_stack([-0.2 * np.tanh(20 * t), -0.2 * np.tanh(20 * t)])
        traces = BoundaryTraces(times=t, phi_x=zeros, phi_xx=zeros, v=v_trace, v_x=zeros)
        grid = build_half_line_grid(96, 20.0, "left")
        res = solve_layer_leading("left", traces, M, v_star, grid, dt)
        assert res.v_max > v_star + 1e-10
        assert res.violations > 0

    def test_far_end_decay(self):
        traces = constant_traces(n_steps=300)
        grid = build_half_line_grid(240, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        assert res.tail_sup <= 1e-8
        assert np.all(res.field.values[:, grid.far_index] == 0.0)

    def test_doubling_zmax_changes_nothing_inside(self):
        traces = constant_traces(n_steps=200)
        base = build_half_line_grid(240, 20.0, "left")
        wide = build_half_line_grid(480, 40.0, "left")
        res_b = solve_layer_leading("left", traces, 1.5, 1.0, base, 1e-3)
        res_w = solve_layer_leading("left", traces, 1.5, 1.0, wide, 1e-3)
        inner = base.nodes[base.nodes <= 15.0]
        vb = np.interp(inner, base.nodes, res_b.field.values[-1])
        vw = np.interp(inner, wide.nodes, res_w.field.values[-1])
        assert np.max(np.abs(vb - vw)) <= 1e-6

    def test_side_grid_mismatch_rejected(self):
        traces = constant_traces()
        grid = build_half_line_grid(96, 20.0, "right")
        with pytest.raises(ValueError, match="side"):
            solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)

    def test_dt_trace_mismatch_rejected(self):
        traces = constant_traces(dt=1e-3)
        grid = build_half_line_grid(96, 20.0, "left")
        with pytest.raises(ValueError, match="spacing"):
            solve_layer_leading("left", traces, 1.5, 1.0, grid, 5e-4)

    def test_corrector_alignment_enforced(self):
        traces = constant_traces()
        grid = build_half_line_grid(96, 20.0, "left")
        bad = CorrectorSeries(
            side="left", eps=1e-3, alpha=1.1,
            times=np.linspace(0.0, 0.1, 7), values=np.zeros(7),
        )
        with pytest.raises(ValueError, match="time levels"):
            solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3, corrector=bad)

    def test_newton_stall_triggers_one_halving(self, monkeypatch):
        real = layer_solver._implicit_step
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                raise layer_solver._NewtonStall
            return real(*args, **kwargs)

        monkeypatch.setattr(layer_solver, "_implicit_step", flaky)
        traces = constant_traces(n_steps=50)
        grid = build_half_line_grid(64, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        assert res.step_halvings == 1

    def test_persistent_newton_stall_aborts_with_stage(self, monkeypatch):
        def always_stall(*args, **kwargs):
            raise layer_solver._NewtonStall

        monkeypatch.setattr(layer_solver, "_implicit_step", always_stall)
        traces = constant_traces(n_steps=50)
        grid = build_half_line_grid(64, 20.0, "left")
        with pytest.raises(PipelineError) as err:
            solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        assert err.value.stage == "layer_leading_left"


class TestPhiProfile:
    def test_zero_chemical_gives_zero_potential(self):
        grid = build_half_line_grid(96, 20.0, "left")
        times = np.array([0.0, 0.1, 0.2])
        field = TimeField(grid, times, np.zeros((3, grid.nodes.size)))
        phi = phi_layer_first("left", field, np.array([1.5, 1.4, 1.3]))
        assert np.all(phi.values == 0.0)

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_synthetic_exponential_against_quadrature(self, side):
        grid = build_half_line_grid(2**17, 20.0, side)
        z = grid.nodes
        c, u_val = 0.8, 1.4
        profile = c * np.exp(-np.abs(z))
        field = TimeField(grid, np.array([0.0, 1.0]), np.vstack([profile, profile]))
        phi = phi_layer_first(side, field, np.array([u_val, u_val]))

        def integrand(y):
            return np.expm1(c * np.exp(-abs(y)))

        check = np.linspace(0.0, 19.0, 12) if side == "left" else np.linspace(-19.0, 0.0, 12)
        for zq in check:
            if side == "left":
                exact = -u_val * quad(integrand, zq, 20.0, epsabs=1e-13, epsrel=1e-13)[0]
            else:
                exact = u_val * quad(integrand, -20.0, zq, epsabs=1e-13, epsrel=1e-13)[0]
            approx = np.interp(zq, z, phi.values[1])
            assert abs(approx - exact) <= 1e-8

    def test_slope_identity_matches_density(self):
        grid = build_half_line_grid(2**17, 20.0, "left")
        z = grid.nodes
        profile = 0.8 * np.exp(-z)
        field = TimeField(grid, np.array([0.0, 1.0]), np.vstack([profile, profile]))
        u_val = np.array([1.4, 1.4])
        phi = phi_layer_first("left", field, u_val)
        dens = layer_density(field, u_val)
        grad = np.gradient(phi.values[1], z, edge_order=2)
        assert np.max(np.abs(grad - dens.values[1])) <= 1e-7

    def test_sign_structure_left(self):
        traces = constant_traces()
        grid = build_half_line_grid(160, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        sched = store_schedule(200)
        trace_u = (traces.phi_x[:, 0] + 1.5)[sched]
        phi = phi_layer_first("left", res.field, trace_u)
        dens = layer_density(res.field, trace_u)
        assert np.all(phi.values <= 0.0)
        assert np.all(dens.values >= -1e-10)
        assert np.all(res.field.values >= -1e-10)

    def test_origin_series_matches_field_wall_value(self):
        traces = constant_traces()
        M = 1.5
        for side in ("left", "right"):
            grid = build_half_line_grid(160, 20.0, side)
            res = solve_layer_leading(side, traces, M, 1.0, grid, 1e-3)
            sched = store_schedule(200)
            col = 0 if side == "left" else 1
            trace_u_full = traces.phi_x[:, col] + M
            origin = phi_origin_series(res, trace_u_full)
            phi = phi_layer_first(side, res.field, trace_u_full[sched])
            assert np.array_equal(phi.values[:, grid.data_index], origin[sched])

    def test_shape_validation(self):
        grid = build_half_line_grid(96, 20.0, "left")
        times = np.array([0.0, 0.1])
        field = TimeField(grid, times, np.zeros((2, grid.nodes.size)))
        with pytest.raises(ValueError, match="shape"):
            phi_layer_first("left", field, np.zeros(5))
        with pytest.raises(ValueError, match="half-line"):
            phi_layer_first("right", field, np.zeros(2))


class TestGap:
    def test_identical_fields_give_zero(self):
        grid = build_half_line_grid(64, 20.0, "left")
        times = np.array([0.0, 0.1])
        rows = np.random.default_rng(7).normal(size=(2, grid.nodes.size))
        rows[0] = 0.0
        f = TimeField(grid, times, rows)
        gap = layer_gap(f, f)
        assert gap.sup == 0.0
        assert np.all(gap.values == 0.0)

    def test_constant_offset_recovered(self):
        grid = build_half_line_grid(64, 20.0, "left")
        times = np.array([0.0, 0.1])
        base = np.vstack([np.zeros(grid.nodes.size), np.exp(-grid.nodes)])
        f1 = TimeField(grid, times, base)
        f2 = TimeField(grid, times, base + 0.25)
        gap = layer_gap(f2, f1)
        assert abs(gap.sup - 0.25) <= 1e-15

    def test_mismatch_rejected(self):
        g1 = build_half_line_grid(64, 20.0, "left")
        g2 = build_half_line_grid(96, 20.0, "left")
        times = np.array([0.0, 0.1])
        f1 = TimeField(g1, times, np.zeros((2, g1.nodes.size)))
        f2 = TimeField(g2, times, np.zeros((2, g2.nodes.size)))
        with pytest.raises(ValueError):
            layer_gap(f1, f2)


class TestSlopeQuadrature:
    @pytest.mark.parametrize("side", ["left", "right"])
    def test_manufactured_solution_second_order(self, side):
        errs = []
        for n in (400, 800, 1600):
            grid = build_half_line_grid(n, 20.0, side)
            s = np.abs(grid.nodes)
            vreg = 0.6 * np.exp(-s)
            w_exact = 0.3 * np.exp(-1.1 * s)
            if side == "right":
                # moving toward the wall at xi = 0 means s decreases
                dw = 0.3 * 1.1 * np.exp(-1.1 * s)
                dv = 0.6 * np.exp(-s)
            else:
                dw = -0.3 * 1.1 * np.exp(-1.1 * s)
                dv = -0.6 * np.exp(-s)
            gf = dw - dv * w_exact
            w = _integrate_slope(side, vreg, gf, grid.nodes)
            errs.append(np.max(np.abs(w - w_exact)))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.9)

    def test_profile_integral_pins_far_end(self):
        grid = build_half_line_grid(400, 20.0, "left")
        w = np.exp(-grid.nodes)
        phi2 = _integrate_profile("left", w, grid.nodes)
        assert phi2[-1] == 0.0
        exact = -(np.exp(-grid.nodes) - np.exp(-20.0))
        # trapezoid error bound: h^2/12 * total variation of the derivative
        assert np.max(np.abs(phi2 - exact)) <= 5e-4


class TestSecondOrder:
    def test_zero_datum_with_nonzero_linear_forcing_stays_zero(self):
        # Chemical trace pinned at v_star makes the leading profile vanish;
        # every forcing term then carries a factor of it or of the zero
        # correction, so the pair must stay identically zero.
        M, v_star, dt = 1.5, 1.0, 1e-3
        t = dt * np.arange(101)
        zeros = np.zeros((t.size, 2))
        traces = BoundaryTraces(
            times=t,
            phi_x=zeros,
            phi_xx=np.full((t.size, 2), 0.7),
            v=np.full((t.size, 2), v_star),
            v_x=np.full((t.size, 2), -0.3),
        )
        corr_tr = zero_correction_traces(t)
        grid = build_half_line_grid(96, 20.0, "left")
        res = solve_layer_second("left", traces, corr_tr, M, v_star, grid, dt)
        assert np.all(res.phi_second.values == 0.0)
        assert np.all(res.v_first.values == 0.0)
        assert np.all(res.slope.values == 0.0)
        assert res.sweeps_max == 1

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_wall_identity_exact(self, side):
        M, v_star, dt = 1.5, 1.0, 1e-3
        traces = constant_traces(M, v_star, dt, n_steps=150)
        t = traces.times
        col = 0 if side == "left" else 1
        v1w = np.zeros((t.size, 2))
        v1w[:, col] = 0.05 * np.sin(3.0 * t)
        px1 = np.full((t.size, 2), 0.02)
        corr_tr = BoundaryTraces(
            times=t, phi_x=px1, phi_xx=np.zeros((t.size, 2)), v=v1w,
            v_x=np.zeros((t.size, 2)),
        )
        grid = build_half_line_grid(128, 20.0, side)
        res = solve_layer_second(side, traces, corr_tr, M, v_star, grid, dt)
        sched = store_schedule(150)
        di = grid.data_index
        assert np.array_equal(res.v_first.values[:, di], -v1w[sched, col])
        fa = grid.far_index
        assert np.all(res.v_first.values[:, fa] == 0.0)
        assert np.all(res.phi_second.values[:, fa] == 0.0)
        assert res.sweeps_max <= 5

    def test_returned_triple_reconstructs_bit_exactly(self):
        # The stored slope and potential rows must be exactly what the
        # quadrature produces from the stored chemical rows, so that the
        # triple satisfies the slope relation as one object.
        M, v_star, dt = 1.5, 1.0, 2.5e-4
        n_steps = 4
        t = dt * np.arange(n_steps + 1)
        decay = v_star * np.exp(-M * t)
        zeros = np.zeros((t.size, 2))
        traces = BoundaryTraces(
            times=t, phi_x=zeros, phi_xx=np.full((t.size, 2), 0.4),
            v=np.column_stack([decay, decay]), v_x=np.full((t.size, 2), -0.2),
        )
        v1w = np.zeros((t.size, 2))
        v1w[:, 0] = 0.08 * t / t[-1]
        corr_tr = BoundaryTraces(
            times=t, phi_x=np.full((t.size, 2), 0.03),
            phi_xx=zeros, v=v1w, v_x=zeros,
        )
        grid = build_half_line_grid(2**14, 8.0, "left")
        res = solve_layer_second("left", traces, corr_tr, M, v_star, grid, dt)
        lead = solve_layer_leading("left", traces, M, v_star, grid, dt)
        grad_w = gradient_weights(grid.nodes)
        for k in (1, n_steps):
            vreg = lead.field.values[k]
            a = traces.phi_x[k, 0] + M
            vreg_z = apply_gradient(grad_w, vreg)
            phi_z_reg = a * np.expm1(vreg)
            lin = traces.phi_xx[k, 0] * grid.nodes + corr_tr.phi_x[k, 0]
            v1_z = apply_gradient(grad_w, res.v_first.values[k])
            gf = vreg_z * lin + v1_z * (a + phi_z_reg) + phi_z_reg * traces.v_x[k, 0]
            w = _integrate_slope("left", vreg, gf, grid.nodes)
            phi2 = _integrate_profile("left", w, grid.nodes)
            assert np.array_equal(res.slope.values[k], w)
            assert np.array_equal(res.phi_second.values[k], phi2)
            # coarse sanity only: a sign or term error would leave an O(1)
            # defect, while honest h^2 noise from the peaked early profile
            # sits orders of magnitude below this ceiling
            residual = apply_gradient(grad_w, w) - vreg_z * w - gf
            assert np.max(np.abs(residual[1:-1])) <= 1e-2

    def test_sweep_stall_halving_and_abort(self, monkeypatch):
        M, v_star, dt = 1.5, 1.0, 1e-3
        traces = constant_traces(M, v_star, dt, n_steps=30)
        corr_tr = zero_correction_traces(traces.times)
        grid = build_half_line_grid(64, 20.0, "left")

        real = layer_solver._second_step
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                raise layer_solver._SweepStall
            return real(*args, **kwargs)

        monkeypatch.setattr(layer_solver, "_second_step", flaky)
        res = solve_layer_second("left", traces, corr_tr, M, v_star, grid, dt)
        assert res.step_halvings == 1

        def always(*args, **kwargs):
            raise layer_solver._SweepStall

        monkeypatch.setattr(layer_solver, "_second_step", always)
        with pytest.raises(PipelineError) as err:
            solve_layer_second("left", traces, corr_tr, M, v_star, grid, dt)
        assert err.value.stage == "layer_second_left"

    def test_time_alignment_enforced(self):
        traces = constant_traces(n_steps=50)
        corr_tr = zero_correction_traces(constant_traces(n_steps=40).times)
        grid = build_half_line_grid(64, 20.0, "left")
        with pytest.raises(ValueError, match="time levels"):
            solve_layer_second("left", traces, corr_tr, 1.5, 1.0, grid, 1e-3)


class TestProfileSet:
    def test_validates_side_and_times(self):
        traces = constant_traces(n_steps=50)
        grid = build_half_line_grid(64, 20.0, "left")
        res = solve_layer_leading("left", traces, 1.5, 1.0, grid, 1e-3)
        sched = store_schedule(50)
        trace_u = (traces.phi_x[:, 0] + 1.5)[sched]
        phi = phi_layer_first("left", res.field, trace_u)
        corr_tr = zero_correction_traces(traces.times)
        second = solve_layer_second("left", traces, corr_tr, 1.5, 1.0, grid, 1e-3)
        ok = LayerProfileSet(
            side="left", v_lead=res.field, v_reg=res.field, phi_lead=phi,
            phi_reg=phi, phi_second=second.phi_second, v_first=second.v_first,
        )
        assert ok.side == "left"
        wrong_grid = build_half_line_grid(96, 20.0, "left")
        bad = TimeField(wrong_grid, res.field.times, np.zeros((res.field.times.size, wrong_grid.nodes.size)))
        with pytest.raises(ValueError, match="grid"):
            LayerProfileSet(
                side="left", v_lead=res.field, v_reg=res.field, phi_lead=phi,
                phi_reg=phi, phi_second=second.phi_second, v_first=bad,
            )
