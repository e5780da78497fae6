"""
Geometry of the transformed gap region.

Holds the model constants, the radial discretization of the plate and of the
fixed cylinder r in [0,1], eta in [0,1], and the coefficient fields of the
transformed potential operator L_v restricted to axisymmetric deflections.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, InternalConsistencyError, ParameterError

logger = logging.getLogger("GeometryTransform")

LOAD_MODELS = ("full", "small_gap")

# Relative slack for the analytic identities checked in ellipticity_spectrum
IDENTITY_RTOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    """Physical and tuning constants of the plate/potential model.

    ``epsilon`` is the aspect ratio (0 selects the small-gap limit), ``lam``
    the squared voltage, ``beta`` bending, ``tau`` stretching and ``a``
    self-stretching. ``load`` picks the electrostatic load: the full
    transformed potential or the explicit small-gap formula.
    """

    epsilon: float = 0.3
    lam: float = 0.0
    beta: float = 1.0
    tau: float = 0.0
    a: float = 0.0
    load: str = "full"

    def __post_init__(self):
        for name in ("epsilon", "lam", "beta", "tau", "a"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if self.epsilon < 0:
            raise ParameterError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.beta <= 0:
            raise ParameterError(
                f"beta must be > 0 (fourth-order plate), got {self.beta}"
            )
        for name in ("lam", "tau", "a"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.load not in LOAD_MODELS:
            raise ParameterError(
                f"Unsupported load model '{self.load}', only: {list(LOAD_MODELS)}"
            )

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class RadialGrid:
    """Uniform nodes r_i on [0,1] and eta_j on [0,1], end points included."""

    n_r: int = 129
    n_eta: int = 129

    def __post_init__(self):
        for name in ("n_r", "n_eta"):
            value = getattr(self, name)
            if int(value) != value or value < 9:
                raise ParameterError(f"{name} must be an integer >= 9, got {value}")

    @property
    def h_r(self):
        return 1.0 / (self.n_r - 1)

    @property
    def h_eta(self):
        return 1.0 / (self.n_eta - 1)

    @cached_property
    def r(self):
        return np.linspace(0.0, 1.0, self.n_r)

    @cached_property
    def eta(self):
        return np.linspace(0.0, 1.0, self.n_eta)

    @cached_property
    def disc_weights(self):
        """Annulus areas around each r-node divided by 2*pi (sum = 1/2)."""
        h = self.h_r
        weights = self.r * h
        weights[0] = h * h / 8.0
        weights[-1] = (h - h * h / 4.0) / 2.0
        return weights


@dataclass
class PlateProfile:
    """Radial deflection u(r) sampled on the r-nodes of a grid."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_r,):
            raise ParameterError(
                f"profile needs {self.grid.n_r} values, got shape {self.values.shape}"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n_r))

    @classmethod
    def from_function(cls, grid, func):
        return cls(grid, func(grid.r))

    @classmethod
    def from_reduced(cls, grid, reduced):
        """Profile from the unknowns at r < 1, clamped value u(1)=0 appended."""
        return cls(grid, np.append(np.asarray(reduced, dtype=float), 0.0))

    @property
    def reduced(self):
        return self.values[:-1]

    def min_gap(self):
        return float(np.min(1.0 + self.values))

    def admissible(self, kappa=0.0):
        """Discrete membership test: min(1 + u) >= kappa and strictly positive."""
        if not np.all(np.isfinite(self.values)):
            return False
        gap = self.min_gap()
        return gap > 0.0 and gap >= kappa

    def derivatives(self):
        return radial_derivatives(self.values, self.grid)

    def is_clamped(self, tol=None):
        """u(1)=0 exactly and u'(1)=0 to discretization order."""
        d1, d2, _ = self.derivatives()
        if tol is None:
            tol = 25.0 * self.grid.h_r**2 * (1.0 + float(np.max(np.abs(d2))))
        scale = 1.0 + float(np.max(np.abs(self.values)))
        return abs(self.values[-1]) <= 1e-12 * scale and abs(d1[-1]) <= tol


def _first_axis_derivatives(values, h, mirror_start):
    """Second-order first and second differences along axis 0.

    Differences are formed from forward increments so that constant data give
    exactly zero. ``mirror_start`` applies even symmetry about the first node.
    """
    fwd = np.diff(values, axis=0)
    d1 = np.empty_like(values)
    d2 = np.empty_like(values)
    d1[1:-1] = (fwd[1:] + fwd[:-1]) / (2.0 * h)
    d2[1:-1] = (fwd[1:] - fwd[:-1]) / (h * h)
    if mirror_start:
        d1[0] = 0.0
        d2[0] = 2.0 * fwd[0] / (h * h)
    else:
        d1[0] = (3.0 * fwd[0] - fwd[1]) / (2.0 * h)
        d2[0] = (-2.0 * fwd[0] + 3.0 * fwd[1] - fwd[2]) / (h * h)
    d1[-1] = (3.0 * fwd[-1] - fwd[-2]) / (2.0 * h)
    d2[-1] = (2.0 * fwd[-1] - 3.0 * fwd[-2] + fwd[-3]) / (h * h)
    return d1, d2


def radial_derivatives(values, grid):
    """Return (d/dr, d2/dr2, radial Laplacian) along axis 0.

    The axis is treated with even symmetry; there v'/r is replaced by its
    limit v''(0) so the Laplacian is 2 v''(0).
    """
    v = np.asarray(values, dtype=float)
    d1, d2 = _first_axis_derivatives(v, grid.h_r, mirror_start=True)
    r = grid.r.reshape((-1,) + (1,) * (v.ndim - 1))
    lap = np.empty_like(v)
    lap[1:] = d2[1:] + d1[1:] / r[1:]
    lap[0] = 2.0 * d2[0]
    return d1, d2, lap


def eta_derivatives(values, grid):
    """Return (d/deta, d2/deta2) along the last axis of a nodal field."""
    v = np.moveaxis(np.asarray(values, dtype=float), -1, 0)
    d1, d2 = _first_axis_derivatives(v, grid.h_eta, mirror_start=False)
    return np.moveaxis(d1, 0, -1), np.moveaxis(d2, 0, -1)


@dataclass
class TransformedCoeffs:
    """Divergence-form coefficients of L_v along the ray y = 0.

    L_v w = div(A grad w) + b . grad w with A = [[a11, 0, a13], [0, a22, a23],
    [a13, a23, a33]] and b = (b1, b2, b3). Arrays are indexed [i, j] over
    (r_i, eta_j). Under axisymmetry the x-components coincide with the radial
    ones and the y-components (a23, b2) vanish. ``drift`` is the first-order
    eta coefficient of the non-divergence form of L_v, which also equals
    f_v = L_v eta.
    """

    grid: RadialGrid
    epsilon: float
    gap: np.ndarray
    slope: np.ndarray
    lap_v: np.ndarray
    a11: np.ndarray
    a22: np.ndarray
    a33: np.ndarray
    a13: np.ndarray
    a23: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    drift: np.ndarray = field(repr=False)

    @property
    def a31(self):
        return self.a13

    @property
    def a32(self):
        return self.a23

    def principal_matrix(self, node):
        """The 3x3 symmetric principal part P at node (i, j)."""
        i, j = node
        eps2 = self.epsilon**2
        return np.array(
            [
                [eps2, 0.0, self.a13[i, j]],
                [0.0, eps2, self.a23[i, j]],
                [self.a13[i, j], self.a23[i, j], self.a33[i, j]],
            ]
        )


def assemble_coefficients(v, params):
    """Coefficient fields of -L_v on the fixed cylinder for the deflection v."""
    grid = v.grid
    if not np.all(np.isfinite(v.values)):
        raise DomainError("deflection contains non-finite values")
    gap = 1.0 + v.values
    if np.min(gap) <= 0.0:
        raise DomainError(
            f"deflection touches the ground plate: min(1+u)={np.min(gap):.3e}"
        )
    d1, _, lap = radial_derivatives(v.values, grid)
    eps2 = params.epsilon**2
    eta = grid.eta[None, :]
    slope = (d1 / gap)[:, None]
    slope_sq = (d1 * d1 / (gap * gap))[:, None]
    shape = (grid.n_r, grid.n_eta)

    a33 = (1.0 + eps2 * eta**2 * (d1 * d1)[:, None]) / (gap * gap)[:, None]
    drift = eps2 * eta * (2.0 * slope_sq - (lap / gap)[:, None])

    return TransformedCoeffs(
        grid=grid,
        epsilon=float(params.epsilon),
        gap=gap,
        slope=d1,
        lap_v=lap,
        a11=np.full(shape, eps2),
        a22=np.full(shape, eps2),
        a33=np.broadcast_to(a33, shape).copy(),
        a13=np.broadcast_to(-eps2 * eta * slope, shape).copy(),
        a23=np.zeros(shape),
        b1=np.broadcast_to(eps2 * slope, shape).copy(),
        b2=np.zeros(shape),
        b3=np.broadcast_to(-eps2 * eta * slope_sq, shape).copy(),
        drift=np.broadcast_to(drift, shape).copy(),
    )


def ellipticity_spectrum(coeffs, node):
    """Eigenvalues (eps^2, mu_minus, mu_plus) of the principal matrix at a node."""
    i, j = node
    grid = coeffs.grid
    if not (0 <= i < grid.n_r and 0 <= j < grid.n_eta):
        raise ParameterError(f"node {node} outside the {grid.n_r}x{grid.n_eta} grid")
    eps2 = coeffs.epsilon**2
    t = eps2 + coeffs.a33[i, j]
    d = eps2 / coeffs.gap[i] ** 2
    disc = t * t - 4.0 * d
    if disc < -IDENTITY_RTOL * t * t:
        raise InternalConsistencyError(
            f"negative discriminant {disc:.3e} at node {node} (t={t}, d={d})"
        )
    root = math.sqrt(max(disc, 0.0))
    mu_plus = 0.5 * (t + root)
    # Vieta form avoids cancellation in (t - root)/2 when eps is small
    mu_minus = d / mu_plus if mu_plus > 0.0 else 0.0

    if abs(mu_plus * mu_minus - d) > IDENTITY_RTOL * max(d, np.finfo(float).tiny):
        raise InternalConsistencyError(f"mu+ mu- != d at node {node}")
    if abs(mu_minus - 0.5 * (t - root)) > IDENTITY_RTOL * t:
        raise InternalConsistencyError(f"mu- inconsistent with trace at node {node}")
    if mu_minus < d / t * (1.0 - IDENTITY_RTOL):
        raise InternalConsistencyError(f"mu- < d/t at node {node}")
    return eps2, mu_minus, mu_plus


def ellipticity_field(coeffs):
    """Smallest eigenvalue of the principal matrix at every node."""
    eps2 = coeffs.epsilon**2
    t = eps2 + coeffs.a33
    d = eps2 / (coeffs.gap**2)[:, None]
    root = np.sqrt(np.maximum(t * t - 4.0 * d, 0.0))
    mu_minus = d / (0.5 * (t + root))
    return np.minimum(mu_minus, eps2)


def apply_operator(coeffs, values):
    """L_v w evaluated with the nodal difference stencils of this module."""
    w = np.asarray(values, dtype=float)
    grid = coeffs.grid
    w_r, _, lap_r = radial_derivatives(w, grid)
    w_eta, w_etaeta = eta_derivatives(w, grid)
    w_reta, _ = eta_derivatives(w_r, grid)
    eps2 = coeffs.epsilon**2
    return (
        eps2 * lap_r
        + 2.0 * coeffs.a13 * w_reta
        + coeffs.a33 * w_etaeta
        + coeffs.drift * w_eta
    )


def map_to_physical(phi, v, sample):
    """Pull the cylinder potential back to psi(r, z) in the physical gap."""
    r, z = sample
    grid = phi.grid
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"r={r} outside the plate [0, 1]")
    top = float(np.interp(r, grid.r, v.values))
    if top <= -1.0:
        raise DomainError(f"deflection touches down at r={r}")
    tol = 1e-12 * (1.0 + abs(top))
    if z < -1.0 - tol or z > top + tol:
        raise DomainError(f"z={z} outside the gap [-1, {top}] at r={r}")
    eta = min(max((1.0 + z) / (1.0 + top), 0.0), 1.0)
    interpolator = RegularGridInterpolator(
        (grid.r, grid.eta), phi.values, method="linear"
    )
    return float(interpolator([[r, eta]])[0])
