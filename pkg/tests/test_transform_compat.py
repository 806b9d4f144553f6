"""Tests for the antiderivative transform and the compatibility gate."""
from __future__ import annotations

import numpy as np
import pytest
import sympy as sp

from chemlayer.params_grids import TimeField, build_layer_grid
from chemlayer.transform_compat import (
    _endpoint_jet,
    antiderivative_transform,
    bump_data,
    check_compatibility,
    compat_traces,
    constant_data,
    polynomial_data,
    recover_u,
    sample_initial_data,
    table_data,
)


class TestAntiderivativeTransform:
    def test_constant_data(self):
        nodes = np.linspace(0.0, 1.0, 129)
        u0 = np.full(129, 1.5)
        phi0, M = antiderivative_transform(nodes, u0)
        assert abs(M - 1.5) < 1e-14
        assert np.max(np.abs(phi0)) < 1e-14

    def test_linear_data_closed_form(self):
        # u0 = 1 + x integrates exactly under the trapezoid rule, so the
        # closed forms M = 3/2 and phi0 = x^2/2 - x/2 hold to roundoff.
        nodes = np.linspace(0.0, 1.0, 257)
        phi0, M = antiderivative_transform(nodes, 1.0 + nodes)
        assert abs(M - 1.5) < 1e-13
        exact = nodes**2 / 2.0 - nodes / 2.0
        assert np.max(np.abs(phi0 - exact)) < 1e-13

    def test_endpoints_pinned(self):
        nodes = build_layer_grid(64, 1e-3).nodes
        u0 = 1.5 + 0.4 * np.sin(2.0 * np.pi * nodes)
        phi0, _ = antiderivative_transform(nodes, u0)
        assert phi0[0] == 0.0
        assert phi0[-1] == 0.0

    def test_degenerate_rejected(self):
        nodes = np.linspace(0.0, 1.0, 65)
        with pytest.raises(ValueError, match="strictly positive"):
            antiderivative_transform(nodes, nodes)  # u0(0) = 0


class TestRecoverU:
    def _phi_field(self, nodes, fn, times=(0.0, 0.5, 1.0)):
        times = np.asarray(times, dtype=float)
        grid = build_layer_grid(16, 0.0) if nodes is None else None
        vals = np.array([fn(nodes) for _ in times])
        from chemlayer.params_grids import Grid1D

        grid = Grid1D(nodes=nodes, kind="uniform")
        return TimeField(grid=grid, times=times, values=vals)

    def test_zero_phi(self):
        nodes = np.linspace(0.0, 1.0, 33)
        f = self._phi_field(nodes, lambda x: np.zeros_like(x))
        u = recover_u(f, 2.0)
        assert np.max(np.abs(u.values - 2.0)) == 0.0

    def test_quadratic_exact(self):
        # Centered differences are exact on quadratics; edge stencils at
        # second order are too.
        nodes = np.linspace(0.0, 1.0, 33)
        f = self._phi_field(nodes, lambda x: x**2 / 2.0 - x / 2.0)
        u = recover_u(f, 1.5)
        assert np.max(np.abs(u.values - (1.0 + nodes))) < 1e-12

    def test_round_trip_order(self):
        errors = []
        for n in (64, 128, 256):
            nodes = np.linspace(0.0, 1.0, n + 1)
            u0 = 1.5 + 0.4 * np.sin(2.0 * np.pi * nodes) + 0.2 * nodes
            phi0, M = antiderivative_transform(nodes, u0)
            f = self._phi_field(nodes, lambda x, p=phi0: p, times=(0.0,))
            u = recover_u(f, M)
            errors.append(np.max(np.abs(u.values[0] - u0)))
        order1 = np.log2(errors[0] / errors[1])
        order2 = np.log2(errors[1] / errors[2])
        assert order1 > 1.9 and order2 > 1.9

    def test_mass_identity(self):
        # Any phi with pinned ends recovers a density whose trapezoid mass
        # matches M to quadrature accuracy.
        from scipy.integrate import trapezoid

        rng = np.random.default_rng(3)
        nodes = np.linspace(0.0, 1.0, 257)
        for _ in range(5):
            c = rng.standard_normal(4) * 0.1
            phi = np.sin(np.pi * nodes) * c[0] + np.sin(2 * np.pi * nodes) * c[1]
            phi += np.sin(3 * np.pi * nodes) * (c[2] + c[3])
            f = self._phi_field(nodes, lambda x, p=phi: p, times=(0.0,))
            u = recover_u(f, 1.5)
            assert abs(trapezoid(u.values[0], nodes) - 1.5) < 1e-4


class TestInitialDataConstructors:
    def test_constant(self):
        d = constant_data(1.5, 1.0)
        assert d.analytic
        u, v = sample_initial_data(d, np.linspace(0, 1, 5))
        assert np.all(u == 1.5) and np.all(v == 1.0)

    def test_bump_endpoints(self):
        d = bump_data(1.5, 0.3, 1.0, 0.2)
        ends = np.array([0.0, 1.0])
        u, v = sample_initial_data(d, ends)
        assert np.allclose(u, 1.5, atol=1e-15)
        assert np.allclose(v, 1.0, atol=1e-15)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="strictly positive"):
            polynomial_data([0.0, 1.0], [1.0])

    def test_table_round_trip(self):
        x = np.linspace(0.0, 1.0, 41)
        d = table_data(x, 1.5 + 0.1 * x, 1.0 + 0.0 * x)
        assert not d.analytic
        u, _ = sample_initial_data(d, x)
        assert np.max(np.abs(u - (1.5 + 0.1 * x))) < 1e-15


def _sympy_trace_oracle(u_expr, v_expr):
    """Independent trace oracle: lift time derivatives through the PDE.

    Builds d/dt^i phi at t=0 by Leibniz recurrences on the evolution
    phi_t = phi_xx - (phi_x + M) v_x, v_t = -(phi_x + M) v, never using
    the stacked closed forms under test.
    """
    x = sp.Symbol("x")
    M = sp.integrate(u_expr, (x, 0, 1))
    phi0 = sp.integrate(u_expr - M, (x, 0, x))
    p = [phi0]
    w = [v_expr]
    for i in range(3):
        conv_phi = sp.S(0)
        conv_v = sp.S(0)
        for k in range(i + 1):
            pk_x = sp.diff(p[k], x) + (M if k == 0 else 0)
            conv_phi += sp.binomial(i, k) * pk_x * sp.diff(w[i - k], x)
            conv_v += sp.binomial(i, k) * pk_x * w[i - k]
        p.append(sp.diff(p[i], x, 2) - conv_phi)
        w.append(-conv_v)
    left = [float(sp.N(t.subs(x, 0))) for t in p[1:4]]
    right = [float(sp.N(t.subs(x, 1))) for t in p[1:4]]
    return left, right


_U_POLY = lambda x: 1.5 + 0.5 * x - 0.25 * x**2
_V_POLY = lambda x: 1.0 + 0.25 * x - 0.5 * x**2 + 0.25 * x**3


def _poly_oracle():
    x = sp.Symbol("x")
    return _sympy_trace_oracle(
        sp.Rational(3, 2) + x / 2 - x**2 / 4,
        1 + x / 4 - x**2 / 2 + x**3 / 4,
    )


class TestCompatTraces:
    def test_constant_data_exact_zero(self):
        # Equal samples difference to exact zeros at every stacking level.
        tr = compat_traces(lambda x: np.full_like(x, 1.5), lambda x: np.ones_like(x))
        assert tr.left == (0.0, 0.0, 0.0)
        assert tr.right == (0.0, 0.0, 0.0)
        assert tr.uncertainty_left == (0.0, 0.0, 0.0)
        assert tr.uncertainty_right == (0.0, 0.0, 0.0)

    def test_first_order_affine_formula(self):
        # With constant density the order-1 trace is exactly -M * (jet of
        # v0)' in floating point; for this quartic v0_x vanishes at both
        # ends, so the value is pure differencing error.
        n = 2048
        x = np.linspace(0.0, 1.0, n + 1)
        v = 1.0 + x**2 * (1.0 - x) ** 2
        tr = compat_traces(
            lambda y: np.full_like(y, 1.5),
            lambda y: 1.0 + y**2 * (1.0 - y) ** 2,
            n=n,
        )
        assert tr.left[0] == -(1.5 * _endpoint_jet(v, 1.0 / n, "left")[1])
        assert tr.right[0] == -(1.5 * _endpoint_jet(v, 1.0 / n, "right")[1])
        assert abs(tr.left[0]) < 1e-5
        assert abs(tr.right[0]) < 1e-5

    def test_against_sympy_oracle(self):
        # Generic polynomial data with O(1)..O(10) traces; the stacked
        # differencing must converge at second order toward the symbolic
        # values, with the reported uncertainty covering the final error.
        left, right = _poly_oracle()
        want = np.array(left + right)
        scale = np.maximum(1.0, np.abs(want))
        errs = {}
        uncs = {}
        # Stay below n=256: the order-5 jet roundoff (growing like h^-5)
        # passes the truncation level there and pollutes the ratios.
        for n in (32, 64, 128):
            tr = compat_traces(_U_POLY, _V_POLY, n=n)
            errs[n] = np.abs(np.array(tr.left + tr.right) - want)
            uncs[n] = np.array(tr.uncertainty_left + tr.uncertainty_right)
        floor = 1e-9 * scale
        assert np.all(errs[64] < 0.35 * errs[32] + floor)
        assert np.all(errs[128] < 0.35 * errs[64] + floor)
        assert np.all(errs[128] <= 1e-3 * scale)
        assert np.all(errs[128] <= uncs[128] + floor)

    def test_order_one_accurate_at_default_resolution(self):
        left, right = _poly_oracle()
        tr = compat_traces(_U_POLY, _V_POLY)
        assert abs(tr.left[0] - left[0]) < 1e-5 * max(1.0, abs(left[0]))
        assert abs(tr.right[0] - right[0]) < 1e-5 * max(1.0, abs(right[0]))

    def test_uncertainty_reported_nonnegative(self):
        tr = compat_traces(
            lambda x: 1.5 + 0.01 * np.sin(np.pi * x),
            lambda x: 1.0 + 0.2 * x * (1.0 - x),
        )
        assert all(u >= 0.0 for u in tr.uncertainty_left + tr.uncertainty_right)
        assert tr.uncertainty_left[0] < 1e-4

    def test_resolution_validation(self):
        with pytest.raises(ValueError, match="even integer >= 16"):
            compat_traces(_U_POLY, _V_POLY, n=15)
        with pytest.raises(ValueError, match="even integer >= 16"):
            compat_traces(_U_POLY, _V_POLY, n=8)


class TestCheckCompatibility:
    def test_constant_passes(self):
        rep = check_compatibility(constant_data(1.5, 1.0), v_star=1.0)
        assert rep.passed
        assert rep.violations == ()

    def test_bump_passes(self):
        rep = check_compatibility(bump_data(1.5, 0.3, 1.0, 0.2), v_star=1.0)
        assert rep.passed, rep.violations

    def test_boundary_value_violation_named(self):
        rep = check_compatibility(constant_data(1.5, 0.5), v_star=1.0)
        assert not rep.passed
        assert any("chemical boundary value at x=0" in v for v in rep.violations)
        assert any("chemical boundary value at x=1" in v for v in rep.violations)

    def test_order_one_violation_named(self):
        # v0 = v* at the ends but u0_x(0) != 0 makes the order-1 trace
        # phi0_xx = u0_x nonzero at x = 0.
        data = polynomial_data([1.5, 1.0, -1.0], [1.0])
        rep = check_compatibility(data, v_star=1.0)
        assert not rep.passed
        assert any(v.startswith("order-1 trace at x=0") for v in rep.violations)

    def test_tabulated_uses_loose_tolerance(self):
        x = np.linspace(0.0, 1.0, 2001)
        bump = bump_data(1.5, 0.3, 1.0, 0.2)
        d = table_data(x, bump.u0(x), bump.v0(x))
        rep = check_compatibility(d, v_star=1.0)
        assert rep.tol == 1e-4
        assert rep.passed, rep.violations
