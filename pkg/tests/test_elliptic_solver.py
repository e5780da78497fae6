"""
Tests for the transformed potential solve and the electrostatic load
"""

import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from src.elliptic_solver import (
    PotentialField,
    ScalarField2D,
    compute_f_v,
    g_eps,
    small_gap_load,
    solve_dirichlet,
    solve_potential,
    trace_eta_derivative,
)
from src.errors import DomainError, ParameterError, SolverError
from src.geometry_transform import ModelParams, PlateProfile, RadialGrid, assemble_coefficients
from src.plate_dynamics import w2_norm


def bump(delta):
    return lambda r: delta * (1.0 - r**2) ** 2


def manufactured_problem(grid, eps, delta):
    """Phi_ex = cos(pi r / 2) sin(pi eta) and F = -L_v Phi_ex for v = delta (1 - r^2)^2."""
    r = grid.r[:, None]
    eta = grid.eta[None, :]
    pi = np.pi
    eps2 = eps**2
    v = delta * (1 - r**2) ** 2
    vp = -4.0 * delta * r * (1 - r**2)
    lap_v = delta * (16.0 * r**2 - 8.0)
    gap = 1.0 + v
    a13 = -eps2 * eta * vp / gap
    a33 = (1.0 + eps2 * eta**2 * vp**2) / gap**2
    drift = eps2 * eta * (2.0 * vp**2 / gap**2 - lap_v / gap)

    phi = np.cos(pi * r / 2) * np.sin(pi * eta)
    # Phi_r / r written with sinc so the axis limit is built in
    phi_r_over_r = -(pi**2 / 4) * np.sinc(r / 2) * np.sin(pi * eta)
    lap = -(pi**2 / 4) * phi + phi_r_over_r
    phi_reta = -(pi**2 / 2) * np.sin(pi * r / 2) * np.cos(pi * eta)
    phi_eta = pi * np.cos(pi * r / 2) * np.cos(pi * eta)
    phi_etaeta = -(pi**2) * phi
    source = -(eps2 * lap + 2.0 * a13 * phi_reta + a33 * phi_etaeta + drift * phi_eta)
    return phi, ScalarField2D(grid, source)


def mms_error(n, eps, delta, form="nondivergence"):
    grid = RadialGrid(n, n)
    params = ModelParams(epsilon=eps)
    coeffs = assemble_coefficients(PlateProfile.from_function(grid, bump(delta)), params)
    exact, source = manufactured_problem(grid, eps, delta)
    solution = solve_dirichlet(coeffs, source, form=form)
    return float(np.max(np.abs(solution.values - exact))), solution


class TestSolveDirichlet:
    def test_zero_source(self):
        grid = RadialGrid(17, 9)
        coeffs = assemble_coefficients(
            PlateProfile.from_function(grid, bump(0.1)), ModelParams(epsilon=0.3)
        )
        result = solve_dirichlet(coeffs, ScalarField2D(grid, np.zeros((17, 9))))
        assert not np.any(result.values)

    def test_quadratic_solution_reproduced(self):
        # (1 - r^2) eta (1 - eta) lies in the kernel of the truncation error
        grid = RadialGrid(17, 17)
        eps = 0.3
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=eps))
        r = grid.r[:, None]
        eta = grid.eta[None, :]
        exact = (1 - r**2) * eta * (1 - eta)
        source = 4.0 * eps**2 * eta * (1 - eta) + 2.0 * (1 - r**2)
        result = solve_dirichlet(coeffs, ScalarField2D(grid, source + 0.0 * r))
        np.testing.assert_allclose(result.values, exact, atol=1e-10)

    @pytest.mark.parametrize("delta", [0.0, 0.1])
    def test_manufactured_solution_accuracy(self, delta):
        coarse, _ = mms_error(17, 0.3, delta)
        fine, _ = mms_error(33, 0.3, delta)
        assert fine < 5e-3
        assert coarse / fine > 3.0

    @pytest.mark.slow
    @pytest.mark.parametrize("delta", [0.0, 0.1])
    def test_manufactured_solution_second_order(self, delta):
        errors = [mms_error(n, 0.3, delta)[0] for n in (33, 65, 129)]
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 1.75) and np.all(orders <= 2.25), orders

    def test_divergence_form_agrees(self):
        err_nd, nondiv = mms_error(33, 0.3, 0.1)
        err_div, div = mms_error(33, 0.3, 0.1, form="divergence")
        assert err_nd < 5e-3
        assert err_div < 5e-3
        assert float(np.max(np.abs(nondiv.values - div.values))) < 5e-3

    def test_divergence_form_converges(self):
        coarse, _ = mms_error(17, 0.5, -0.2, form="divergence")
        fine, _ = mms_error(33, 0.5, -0.2, form="divergence")
        assert coarse / fine > 3.0

    def test_unknown_form(self):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams())
        with pytest.raises(ParameterError):
            solve_dirichlet(coeffs, ScalarField2D(grid, np.ones((9, 9))), form="spectral")

    def test_non_admissible_coefficients(self):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams())
        coeffs.gap = coeffs.gap - 2.0
        with pytest.raises(DomainError):
            solve_dirichlet(coeffs, ScalarField2D(grid, np.ones((9, 9))))

    def test_singular_system_reports_grid(self):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=0.0))
        coeffs.a33[:] = 0.0
        with pytest.raises(SolverError, match="9x9"):
            solve_dirichlet(coeffs, ScalarField2D(grid, np.ones((9, 9))))

    def test_non_finite_source_rejected(self):
        grid = RadialGrid(9, 9)
        values = np.zeros((9, 9))
        values[3, 3] = np.nan
        with pytest.raises(ParameterError):
            ScalarField2D(grid, values)


class TestComputeFv:
    def test_flat_and_constant(self):
        grid = RadialGrid(17, 9)
        params = ModelParams(epsilon=0.7)
        assert not np.any(compute_f_v(PlateProfile.zeros(grid), params).values)
        assert not np.any(compute_f_v(PlateProfile(grid, np.full(17, -0.4)), params).values)

    def test_small_gap_limit(self):
        grid = RadialGrid(17, 9)
        v = PlateProfile.from_function(grid, bump(-0.6))
        assert not np.any(compute_f_v(v, ModelParams(epsilon=0.0)).values)

    def test_bump_closed_form(self):
        grid = RadialGrid(65, 9)
        v = PlateProfile.from_function(grid, bump(0.1))
        f_v = compute_f_v(v, ModelParams(epsilon=0.3)).values
        r = grid.r[:, None]
        eta = grid.eta[None, :]
        vv = 0.1 * (1 - r**2) ** 2
        vp = -0.4 * r * (1 - r**2)
        lap_v = -0.8 + 1.6 * r**2
        expected = 0.09 * eta * (2.0 * vp**2 / (1 + vv) ** 2 - lap_v / (1 + vv))
        np.testing.assert_allclose(f_v, expected, atol=1e-4)


class TestSolvePotential:
    @pytest.mark.parametrize("c", [-0.5, -0.2, 0.4])
    @pytest.mark.parametrize("eps", [0.1, 1.0])
    def test_constant_deflection_is_exact(self, c, eps):
        grid = RadialGrid(33, 17)
        phi = solve_potential(PlateProfile(grid, np.full(33, c)), ModelParams(epsilon=eps))
        np.testing.assert_allclose(phi.values, np.broadcast_to(grid.eta, (33, 17)), atol=1e-10)

    def test_small_gap_limit_is_exact(self):
        grid = RadialGrid(33, 17)
        v = PlateProfile.from_function(grid, lambda r: -0.4 * (1 - r**2) ** 2 + 0.1 * r**2 * (1 - r**2) ** 2)
        phi = solve_potential(v, ModelParams(epsilon=0.0))
        np.testing.assert_array_equal(phi.values, np.broadcast_to(grid.eta, (33, 17)))

    def test_boundary_trace_and_range(self):
        grid = RadialGrid(33, 17)
        v = PlateProfile.from_function(grid, bump(-0.3))
        phi = solve_potential(v, ModelParams(epsilon=0.5))
        assert phi.boundary_deviation() <= 1e-14
        assert phi.values.min() >= -1e-12
        assert phi.values.max() <= 1.0 + 1e-12
        assert np.max(np.abs(phi.values - grid.eta[None, :])) > 1e-4

    def test_forms_agree(self):
        grid = RadialGrid(33, 17)
        v = PlateProfile.from_function(grid, bump(-0.3))
        params = ModelParams(epsilon=0.5)
        nondiv = solve_potential(v, params)
        div = solve_potential(v, params, form="divergence")
        assert np.max(np.abs(nondiv.values - div.values)) < 5e-3

    def test_self_convergence(self):
        deviations = []
        for n in (17, 33, 65):
            grid = RadialGrid(n, n)
            v = PlateProfile.from_function(grid, bump(-0.3))
            phi = solve_potential(v, ModelParams(epsilon=0.5))
            deviations.append(float(np.max(np.abs(phi.values - grid.eta[None, :]))))
        steps = np.abs(np.diff(deviations))
        assert steps[1] < steps[0]
        assert steps[1] < 0.05 * deviations[-1]


class TestTraceDerivative:
    def test_linear_and_quadratic_profiles(self):
        grid = RadialGrid(9, 17)
        eta = np.broadcast_to(grid.eta, (9, 17))
        np.testing.assert_allclose(trace_eta_derivative(PotentialField(grid, eta.copy())), 1.0, rtol=1e-12)
        np.testing.assert_allclose(trace_eta_derivative(PotentialField(grid, eta**2)), 2.0, rtol=1e-12)

    def test_constant_deflection(self):
        grid = RadialGrid(17, 17)
        phi = solve_potential(PlateProfile(grid, np.full(17, -0.5)), ModelParams(epsilon=0.8))
        np.testing.assert_allclose(trace_eta_derivative(phi), 1.0, rtol=1e-12)


class TestLoad:
    def test_flat_plate(self):
        grid = RadialGrid(17, 9)
        np.testing.assert_allclose(g_eps(PlateProfile.zeros(grid), ModelParams()), 1.0, rtol=1e-12)

    @pytest.mark.parametrize("eps", [0.0, 0.3, 1.0])
    def test_constant_deflection(self, eps):
        grid = RadialGrid(17, 9)
        v = PlateProfile(grid, np.full(17, -0.5))
        np.testing.assert_allclose(g_eps(v, ModelParams(epsilon=eps)), 4.0, rtol=1e-12)

    def test_small_gap_oracle(self):
        grid = RadialGrid(33, 33)
        rng = np.random.default_rng(1)
        params = ModelParams(epsilon=0.0)
        for _ in range(5):
            c = rng.uniform(-0.45, 0.45, size=3)
            v = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c[0] + c[1] * r**2 + c[2] * r**4))
            if not v.admissible(0.05):
                continue
            np.testing.assert_allclose(g_eps(v, params), small_gap_load(v), atol=1e-8, rtol=0)

    @pytest.mark.slow
    def test_small_gap_oracle_fine_grid(self):
        grid = RadialGrid(129, 129)
        rng = np.random.default_rng(2)
        params = ModelParams(epsilon=0.0)
        checked = 0
        while checked < 20:
            c = rng.uniform(-0.45, 0.45, size=3)
            v = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c[0] + c[1] * r**2 + c[2] * r**4))
            if not v.admissible(0.05):
                continue
            assert np.max(np.abs(g_eps(v, params) - small_gap_load(v))) <= 1e-8
            checked += 1

    def test_epsilon_squared_consistency(self):
        grid = RadialGrid(33, 33)
        v = PlateProfile.from_function(grid, bump(-0.3))
        limit = small_gap_load(v)
        eps_values = np.array([0.4, 0.2, 0.1, 0.05])
        gaps = [np.max(np.abs(g_eps(v, ModelParams(epsilon=eps)) - limit)) for eps in eps_values]
        slope = np.polyfit(np.log(eps_values), np.log(gaps), 1)[0]
        assert 1.7 <= slope <= 2.3

    def test_positive(self):
        grid = RadialGrid(33, 17)
        v = PlateProfile.from_function(grid, bump(-0.6))
        assert np.all(g_eps(v, ModelParams(epsilon=0.5)) > 0.0)

    def test_lipschitz_bound(self):
        # |dg/dv| <= 2/kappa^3 up to eps corrections; kappa = 0.5 here
        grid = RadialGrid(17, 9)
        params = ModelParams(epsilon=0.3)
        rng = np.random.default_rng(3)
        ratios = []
        for _ in range(10):
            c1, c2 = rng.uniform(-0.25, 0.25, size=(2, 2))
            v1 = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c1[0] + c1[1] * r**2))
            v2 = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c2[0] + c2[1] * r**2))
            assert v1.admissible(0.5) and v2.admissible(0.5)
            diff = g_eps(v1, params) - g_eps(v2, params)
            l2 = np.sqrt(2 * np.pi * np.sum(grid.disc_weights * diff**2))
            ratios.append(l2 / w2_norm(PlateProfile(grid, v1.values - v2.values)))
        assert np.all(np.isfinite(ratios))
        assert max(ratios) < 25.0

    def test_small_gap_load_rejects_touchdown(self):
        grid = RadialGrid(9, 9)
        with pytest.raises(DomainError):
            small_gap_load(PlateProfile.from_function(grid, bump(-1.0)))
