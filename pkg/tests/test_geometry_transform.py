"""
Tests for the transformed-cylinder geometry: parameters, grids, coefficient
assembly, ellipticity diagnostics and the physical pull-back
"""

import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

from src.elliptic_solver import PotentialField, solve_potential
from src.errors import DomainError, InternalConsistencyError, ParameterError
from src.geometry_transform import (
    ModelParams,
    PlateProfile,
    RadialGrid,
    apply_operator,
    assemble_coefficients,
    ellipticity_field,
    ellipticity_spectrum,
    map_to_physical,
    radial_derivatives,
)
from src.plate_dynamics import w2_norm


def bump(delta):
    return lambda r: delta * (1.0 - r**2) ** 2


class TestModelParams:
    def test_defaults(self):
        params = ModelParams()
        assert (params.epsilon, params.lam, params.beta, params.tau, params.a) == (
            0.3,
            0.0,
            1.0,
            0.0,
            0.0,
        )
        assert params.load == "full"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"beta": 0.0},
            {"beta": -1.0},
            {"lam": -0.1},
            {"tau": -1.0},
            {"a": -2.0},
            {"epsilon": -0.1},
            {"epsilon": float("nan")},
            {"load": "membrane"},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ParameterError):
            ModelParams(**kwargs)

    def test_small_gap_limit_allowed(self):
        assert ModelParams(epsilon=0.0).epsilon == 0.0

    def test_with_lambda(self):
        params = ModelParams(epsilon=0.1).with_lambda(2.5)
        assert params.lam == 2.5
        assert params.epsilon == 0.1


class TestRadialGrid:
    def test_nodes(self):
        grid = RadialGrid(17, 9)
        assert grid.r[0] == 0.0 and grid.r[-1] == 1.0
        assert grid.eta[0] == 0.0 and grid.eta[-1] == 1.0
        assert grid.h_r == pytest.approx(1.0 / 16)
        assert grid.h_eta == pytest.approx(1.0 / 8)

    @pytest.mark.parametrize("sizes", [(8, 9), (9, 5), (9.5, 9)])
    def test_too_small_rejected(self, sizes):
        with pytest.raises(ParameterError):
            RadialGrid(*sizes)

    def test_disc_weights_cover_half_unit_disc(self):
        for n in (9, 33, 129):
            assert np.sum(RadialGrid(n, 9).disc_weights) == pytest.approx(0.5, rel=1e-13)


class TestPlateProfile:
    def test_from_reduced_clamps_edge(self):
        grid = RadialGrid(9, 9)
        profile = PlateProfile.from_reduced(grid, np.ones(8))
        assert profile.values[-1] == 0.0

    def test_admissibility(self):
        grid = RadialGrid(17, 9)
        assert PlateProfile.from_function(grid, bump(-0.5)).admissible(0.5)
        assert not PlateProfile.from_function(grid, bump(-0.5)).admissible(0.6)
        assert not PlateProfile.from_function(grid, bump(-1.0)).admissible()

    def test_clamped_detection(self):
        grid = RadialGrid(33, 9)
        assert PlateProfile.from_function(grid, bump(0.1)).is_clamped()
        assert not PlateProfile.from_function(grid, lambda r: 0.1 * (1.0 - r**2)).is_clamped()

    def test_shape_checked(self):
        with pytest.raises(ParameterError):
            PlateProfile(RadialGrid(9, 9), np.zeros(5))


class TestRadialDerivatives:
    def test_constant_gives_exact_zeros(self):
        grid = RadialGrid(33, 9)
        d1, d2, lap = radial_derivatives(np.full(grid.n_r, -0.3), grid)
        assert not np.any(d1) and not np.any(d2) and not np.any(lap)

    def test_quadratic_exact(self):
        grid = RadialGrid(17, 9)
        d1, d2, lap = radial_derivatives(grid.r**2, grid)
        np.testing.assert_allclose(d1, 2.0 * grid.r, atol=1e-12)
        np.testing.assert_allclose(d2, 2.0, atol=1e-10)
        np.testing.assert_allclose(lap, 4.0, atol=1e-10)

    def test_two_dimensional_fields(self):
        grid = RadialGrid(17, 9)
        field = (grid.r**2)[:, None] * grid.eta[None, :]
        _, _, lap = radial_derivatives(field, grid)
        np.testing.assert_allclose(lap, 4.0 * np.broadcast_to(grid.eta, lap.shape), atol=1e-10)


class TestAssembleCoefficients:
    def test_zero_deflection(self):
        grid = RadialGrid(17, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=0.4))
        np.testing.assert_allclose(coeffs.a11, 0.16, rtol=1e-15)
        np.testing.assert_array_equal(coeffs.a22, coeffs.a11)
        np.testing.assert_array_equal(coeffs.a33, 1.0)
        for name in ("a13", "a23", "b1", "b2", "b3", "drift"):
            assert not np.any(getattr(coeffs, name)), name

    @pytest.mark.parametrize("c", [-0.5, -0.2, 0.4])
    def test_constant_deflection(self, c):
        grid = RadialGrid(17, 9)
        v = PlateProfile(grid, np.full(grid.n_r, c))
        coeffs = assemble_coefficients(v, ModelParams(epsilon=0.3))
        np.testing.assert_allclose(coeffs.a33, 1.0 / (1.0 + c) ** 2, rtol=1e-15)
        for name in ("a13", "b1", "b3", "drift"):
            assert not np.any(getattr(coeffs, name)), name

    def test_bump_matches_closed_form(self):
        grid = RadialGrid(129, 129)
        eps2 = 0.09
        coeffs = assemble_coefficients(
            PlateProfile.from_function(grid, bump(0.1)), ModelParams(epsilon=0.3)
        )
        i, j = 64, 64
        assert grid.r[i] == 0.5 and grid.eta[j] == 0.5
        r, eta = 0.5, 0.5
        v = 0.1 * (1 - r**2) ** 2
        vp = -0.4 * r * (1 - r**2)
        lap_v = -0.8 + 1.6 * r**2
        gap = 1.0 + v
        expected = {
            "a13": -eps2 * eta * vp / gap,
            "a33": (1.0 + eps2 * eta**2 * vp**2) / gap**2,
            "b1": eps2 * vp / gap,
            "b3": -eps2 * eta * vp**2 / gap**2,
            "drift": eps2 * eta * (2.0 * vp**2 / gap**2 - lap_v / gap),
        }
        for name, value in expected.items():
            assert getattr(coeffs, name)[i, j] == pytest.approx(value, abs=1e-5), name
        assert coeffs.a11[i, j] == pytest.approx(eps2)
        assert coeffs.a23[i, j] == 0.0 and coeffs.b2[i, j] == 0.0

    def test_operator_matches_cartesian_form_along_ray(self):
        # L_v w for w = (1 - r^2) eta^2 from the Cartesian expression at y = 0
        grid = RadialGrid(65, 33)
        eps = 0.3
        coeffs = assemble_coefficients(
            PlateProfile.from_function(grid, bump(0.1)), ModelParams(epsilon=eps)
        )
        r = grid.r[:, None]
        eta = grid.eta[None, :]
        w = (1.0 - r**2) * eta**2
        v = 0.1 * (1 - r**2) ** 2
        vx = -0.4 * r * (1 - r**2)
        lap_v = -0.8 + 1.6 * r**2
        gap = 1.0 + v
        lap_w = -4.0 * eta**2
        w_x_eta = -4.0 * r * eta
        w_eta = 2.0 * eta * (1.0 - r**2)
        w_etaeta = 2.0 * (1.0 - r**2)
        expected = (
            eps**2 * lap_w
            - 2.0 * eps**2 * eta * vx * w_x_eta / gap
            + (1.0 + eps**2 * eta**2 * vx**2) / gap**2 * w_etaeta
            + eps**2 * eta * (2.0 * vx**2 / gap**2 - lap_v / gap) * w_eta
        )
        result = apply_operator(coeffs, w)
        np.testing.assert_allclose(result[:-1], expected[:-1], atol=1e-4)
        # one-sided r-stencils at the edge
        np.testing.assert_allclose(result[-1], expected[-1], atol=2.0 * grid.h_r**2)

    def test_touchdown_rejected(self):
        grid = RadialGrid(17, 9)
        with pytest.raises(DomainError):
            assemble_coefficients(
                PlateProfile.from_function(grid, bump(-1.2)), ModelParams()
            )

    def test_lipschitz_in_second_order_norm(self):
        grid = RadialGrid(33, 9)
        params = ModelParams(epsilon=0.3)
        rng = np.random.default_rng(7)
        ratios = []
        for _ in range(12):
            c1, c2 = rng.uniform(-0.4, 0.4, size=(2, 2))
            v1 = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c1[0] + c1[1] * r**2))
            v2 = PlateProfile.from_function(grid, lambda r: (1 - r**2) ** 2 * (c2[0] + c2[1] * r**2))
            k1 = assemble_coefficients(v1, params)
            k2 = assemble_coefficients(v2, params)
            diff = max(
                float(np.max(np.abs(getattr(k1, name) - getattr(k2, name))))
                for name in ("a33", "a13", "b1", "b3", "drift")
            )
            ratios.append(diff / w2_norm(PlateProfile(grid, v1.values - v2.values)))
        ratios = np.array(ratios)
        assert np.all(np.isfinite(ratios))
        assert ratios.max() < 10.0 * np.median(ratios)


class TestEllipticitySpectrum:
    def test_flat_plate(self):
        grid = RadialGrid(17, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=0.5))
        eig1, mu_minus, mu_plus = ellipticity_spectrum(coeffs, (3, 4))
        assert eig1 == pytest.approx(0.25)
        assert mu_minus == pytest.approx(0.25, rel=1e-12)
        assert mu_plus == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("eps", [0.05, 0.3, 0.9])
    def test_flat_plate_closed_form(self, eps):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=eps))
        _, mu_minus, mu_plus = ellipticity_spectrum(coeffs, (0, 8))
        assert mu_plus == pytest.approx(1.0, rel=1e-12)
        assert mu_minus == pytest.approx(eps**2, rel=1e-10)

    def test_product_identity_on_bump(self):
        grid = RadialGrid(129, 129)
        v = PlateProfile.from_function(grid, bump(0.1))
        coeffs = assemble_coefficients(v, ModelParams(epsilon=0.3))
        _, mu_minus, mu_plus = ellipticity_spectrum(coeffs, (64, 64))
        d = 0.09 / (1.0 + v.values[64]) ** 2
        assert mu_plus * mu_minus == pytest.approx(d, rel=1e-12)
        assert mu_minus > 0.0

    def test_matches_dense_eigenvalues(self):
        grid = RadialGrid(33, 17)
        coeffs = assemble_coefficients(
            PlateProfile.from_function(grid, bump(-0.4)), ModelParams(epsilon=0.7)
        )
        node = (20, 12)
        expected = np.sort(np.linalg.eigvalsh(coeffs.principal_matrix(node)))
        np.testing.assert_allclose(np.sort(ellipticity_spectrum(coeffs, node)), expected, rtol=1e-10)

    def test_field_positive(self):
        grid = RadialGrid(33, 17)
        coeffs = assemble_coefficients(
            PlateProfile.from_function(grid, bump(-0.6)), ModelParams(epsilon=0.3)
        )
        field = ellipticity_field(coeffs)
        assert np.all(field > 0.0)
        assert np.all(field <= 0.09 + 1e-15)

    def test_node_outside_grid(self):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams())
        with pytest.raises(ParameterError):
            ellipticity_spectrum(coeffs, (9, 0))

    def test_corrupted_coefficients_detected(self):
        grid = RadialGrid(9, 9)
        coeffs = assemble_coefficients(PlateProfile.zeros(grid), ModelParams(epsilon=0.5))
        coeffs.a33[2, 2] = 0.0
        with pytest.raises(InternalConsistencyError):
            ellipticity_spectrum(coeffs, (2, 2))


class TestMapToPhysical:
    def identity_potential(self, grid):
        return PotentialField(grid, np.broadcast_to(grid.eta, (grid.n_r, grid.n_eta)).copy())

    def test_flat_plate(self):
        grid = RadialGrid(17, 17)
        value = map_to_physical(self.identity_potential(grid), PlateProfile.zeros(grid), (0.3, -0.5))
        assert value == pytest.approx(0.5, abs=1e-14)

    def test_constant_deflection(self):
        grid = RadialGrid(17, 17)
        v = PlateProfile(grid, np.full(grid.n_r, -0.5))
        value = map_to_physical(self.identity_potential(grid), v, (0.2, -0.75))
        assert value == pytest.approx(0.5, abs=1e-14)

    def test_top_boundary_value(self):
        grid = RadialGrid(17, 9)
        v = PlateProfile.from_function(grid, bump(-0.3))
        phi = solve_potential(v, ModelParams(epsilon=0.5))
        for r in (0.0, 0.37, 0.81, 1.0):
            top = float(np.interp(r, grid.r, v.values))
            assert map_to_physical(phi, v, (r, top)) == pytest.approx(1.0, abs=1e-12)
            assert map_to_physical(phi, v, (r, -1.0)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("sample", [(0.5, 0.2), (0.5, -1.1), (1.2, -0.5), (-0.1, -0.5)])
    def test_outside_gap(self, sample):
        grid = RadialGrid(9, 9)
        with pytest.raises(DomainError):
            map_to_physical(self.identity_potential(grid), PlateProfile.zeros(grid), sample)
