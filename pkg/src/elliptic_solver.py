"""
Transformed potential problem on the fixed cylinder and the plate load
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import DomainError, ParameterError, SolverError
from .geometry_transform import (
    assemble_coefficients,
    eta_derivatives,
    radial_derivatives,
)

logger = logging.getLogger("EllipticSolver")

SOLVE_FORMS = ("nondivergence", "divergence")
RESIDUAL_RTOL = 1e-10


@dataclass
class ScalarField2D:
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.grid.n_r, self.grid.n_eta)
        if self.values.shape != shape:
            raise ParameterError(
                f"field needs shape {shape}, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("field contains non-finite values")


@dataclass
class PotentialField(ScalarField2D):
    """Potential on the (r, eta) nodes of the fixed cylinder."""

    def boundary_deviation(self):
        """Largest distance of the boundary trace from eta (eta=0, eta=1, r=1)."""
        eta = self.grid.eta
        return max(
            float(np.max(np.abs(self.values[:, 0]))),
            float(np.max(np.abs(self.values[:, -1] - 1.0))),
            float(np.max(np.abs(self.values[-1, :] - eta))),
        )


class _StencilAssembler:
    """Collects stencil weights on the interior unknowns.

    Unknowns are the nodes with 0 <= i <= n_r-2 and 1 <= j <= n_eta-2; the
    axis row i=0 is an unknown, the other three faces carry zero data, so
    weights pointing to them are dropped.
    """

    def __init__(self, grid):
        self.grid = grid
        self.n_i = grid.n_r - 1
        self.n_j = grid.n_eta - 2
        i, j = np.meshgrid(
            np.arange(self.n_i), np.arange(1, grid.n_eta - 1), indexing="ij"
        )
        self.i = i.ravel()
        self.j = j.ravel()
        self.size = self.i.size
        self._rows = []
        self._cols = []
        self._vals = []

    def index(self, i, j):
        return i * self.n_j + (j - 1)

    def add(self, di, dj, weight, where=None):
        weight = np.broadcast_to(np.asarray(weight, dtype=float), self.i.shape)
        ni = self.i + di
        nj = self.j + dj
        keep = (ni >= 0) & (ni < self.n_i) & (nj >= 1) & (nj <= self.n_j)
        if where is not None:
            keep &= where
        keep &= weight != 0.0
        self._rows.append(self.index(self.i[keep], self.j[keep]))
        self._cols.append(self.index(ni[keep], nj[keep]))
        self._vals.append(weight[keep])

    def at(self, field):
        return field[self.i, self.j]

    def matrix(self):
        rows = np.concatenate(self._rows)
        cols = np.concatenate(self._cols)
        vals = np.concatenate(self._vals)
        # duplicate (row, col) pairs are summed by the conversion
        return coo_matrix((vals, (rows, cols)), shape=(self.size, self.size)).tocsc()


def _assemble_nondivergence(coeffs):
    """-L_v with centered differences, 9-point stencil including w_{r eta}."""
    grid = coeffs.grid
    st = _StencilAssembler(grid)
    h, he = grid.h_r, grid.h_eta
    eps2 = coeffs.epsilon**2
    axis = st.i == 0
    off_axis = ~axis
    r = np.where(axis, 1.0, grid.r[st.i])

    # radial Laplacian; at the axis the even ghost w_{-1} = w_1 gives 4(w1-w0)/h^2
    st.add(0, 0, np.where(axis, 4.0 * eps2 / h**2, 2.0 * eps2 / h**2))
    st.add(1, 0, -4.0 * eps2 / h**2, where=axis)
    st.add(1, 0, -(eps2 / h**2 + eps2 / (2.0 * r * h)), where=off_axis)
    st.add(-1, 0, -(eps2 / h**2 - eps2 / (2.0 * r * h)), where=off_axis)

    a33 = st.at(coeffs.a33)
    drift = st.at(coeffs.drift)
    st.add(0, 0, 2.0 * a33 / he**2)
    st.add(0, 1, -(a33 / he**2 + drift / (2.0 * he)))
    st.add(0, -1, -(a33 / he**2 - drift / (2.0 * he)))

    # w_{r eta} vanishes on the axis for even w
    m = -st.at(coeffs.a13) / (2.0 * h * he)
    st.add(1, 1, m, where=off_axis)
    st.add(1, -1, -m, where=off_axis)
    st.add(-1, 1, -m, where=off_axis)
    st.add(-1, -1, m, where=off_axis)
    return st.matrix()


def _assemble_divergence(coeffs):
    """-L_v as -div(A grad w) - b . grad w with fluxes on half nodes."""
    grid = coeffs.grid
    st = _StencilAssembler(grid)
    h, he = grid.h_r, grid.h_eta
    eps2 = coeffs.epsilon**2
    axis = st.i == 0
    off_axis = ~axis
    i, j = st.i, st.j
    r = grid.r[i]

    def a13_at(ii, eta):
        return -eps2 * eta * coeffs.slope[ii] / coeffs.gap[ii]

    def a33_at(ii, eta):
        return (1.0 + eps2 * eta**2 * coeffs.slope[ii] ** 2) / coeffs.gap[ii] ** 2

    a13_east = 0.5 * (coeffs.a13[i, j] + coeffs.a13[np.minimum(i + 1, grid.n_r - 1), j])
    a13_west = 0.5 * (coeffs.a13[i, j] + coeffs.a13[np.maximum(i - 1, 0), j])
    eta_n = grid.eta[j] + 0.5 * he
    eta_s = grid.eta[j] - 0.5 * he
    b_n, b_s = a13_at(i, eta_n), a13_at(i, eta_s)
    c_n, c_s = a33_at(i, eta_n), a33_at(i, eta_s)

    w = []

    def add(di, dj, weight, where=None):
        # collected with the L_v sign and negated below
        w.append((di, dj, weight, where))

    # radial flux, finite-volume form (1/r) d/dr (r F_r); axis cell of radius h/2
    scale = np.where(axis, 4.0 / h, 1.0 / (np.where(axis, 1.0, r) * h))
    r_e = np.where(axis, 1.0, r + 0.5 * h)
    r_w = np.where(axis, 0.0, r - 0.5 * h)
    add(1, 0, scale * r_e * eps2 / h)
    add(0, 0, -scale * (r_e + r_w) * eps2 / h)
    add(-1, 0, scale * r_w * eps2 / h, where=off_axis)
    q_e = scale * r_e * a13_east / (4.0 * he)
    q_w = scale * r_w * a13_west / (4.0 * he)
    add(1, 1, q_e)
    add(1, -1, -q_e)
    add(0, 1, q_e - q_w)
    add(0, -1, -(q_e - q_w))
    add(-1, 1, -q_w, where=off_axis)
    add(-1, -1, q_w, where=off_axis)

    # eta flux a13 w_r + a33 w_eta on eta_{j +- 1/2}
    add(0, 1, c_n / he**2)
    add(0, 0, -(c_n + c_s) / he**2)
    add(0, -1, c_s / he**2)
    p_n = np.where(axis, 0.0, b_n / (4.0 * h * he))
    p_s = np.where(axis, 0.0, b_s / (4.0 * h * he))
    add(1, 1, p_n, where=off_axis)
    add(-1, 1, -p_n, where=off_axis)
    add(1, 0, p_n - p_s, where=off_axis)
    add(-1, 0, -(p_n - p_s), where=off_axis)
    add(1, -1, -p_s, where=off_axis)
    add(-1, -1, p_s, where=off_axis)

    b1 = st.at(coeffs.b1)
    b3 = st.at(coeffs.b3)
    add(1, 0, b1 / (2.0 * h), where=off_axis)
    add(-1, 0, -b1 / (2.0 * h), where=off_axis)
    add(0, 1, b3 / (2.0 * he))
    add(0, -1, -b3 / (2.0 * he))

    for di, dj, weight, where in w:
        st.add(di, dj, -np.asarray(weight), where=where)
    return st.matrix()


def assemble_dirichlet_matrix(coeffs, form="nondivergence"):
    if form not in SOLVE_FORMS:
        raise ParameterError(f"Unsupported discretization '{form}', only: {list(SOLVE_FORMS)}")
    if np.min(coeffs.gap) <= 0.0:
        raise DomainError(
            f"coefficients come from a non-admissible deflection: "
            f"min(1+u)={np.min(coeffs.gap):.3e}"
        )
    if form == "divergence":
        return _assemble_divergence(coeffs)
    return _assemble_nondivergence(coeffs)


def solve_dirichlet(coeffs, F, form="nondivergence"):
    """Solve -L_v Phi = F in the cylinder with Phi = 0 on its boundary.

    The axis r=0 is not a boundary; the even extension of Phi closes the
    stencil there. The discrete residual is checked relative to
    ||M|| ||Phi|| + ||F|| and must not exceed 1e-10.
    """
    grid = coeffs.grid
    if F.grid != grid:
        raise ParameterError("source and coefficients live on different grids")
    matrix = assemble_dirichlet_matrix(coeffs, form)
    st = _StencilAssembler(grid)
    rhs = st.at(F.values)
    values = np.zeros((grid.n_r, grid.n_eta))
    if not np.any(rhs):
        return PotentialField(grid, values)

    kappa = float(np.min(coeffs.gap))
    logger.debug(
        f"Solving {form} Dirichlet problem: {st.size} unknowns, "
        f"{matrix.nnz} nonzeros, kappa={kappa:.3e}"
    )
    try:
        lu = splu(matrix)
        solution = lu.solve(rhs)
    except RuntimeError as e:
        raise SolverError(
            f"factorization failed on the {grid.n_r}x{grid.n_eta} grid "
            f"(kappa={kappa:.3e}): {e}"
        ) from e

    if not np.all(np.isfinite(solution)):
        raise SolverError(
            f"non-finite solution on the {grid.n_r}x{grid.n_eta} grid (kappa={kappa:.3e})"
        )
    residual = matrix @ solution - rhs
    norm_matrix = float(abs(matrix).sum(axis=1).max())
    scale = norm_matrix * np.max(np.abs(solution)) + np.max(np.abs(rhs))
    rel = float(np.max(np.abs(residual)) / scale)
    if rel > RESIDUAL_RTOL:
        raise SolverError(
            f"residual check failed on the {grid.n_r}x{grid.n_eta} grid "
            f"(kappa={kappa:.3e}): relative residual {rel:.3e}"
        )
    values[st.i, st.j] = solution
    return PotentialField(grid, values)


def compute_f_v(v, params):
    """f_v = L_v eta = eps^2 eta [2 v'^2/(1+v)^2 - (v'' + v'/r)/(1+v)]."""
    coeffs = assemble_coefficients(v, params)
    return ScalarField2D(v.grid, coeffs.drift.copy())


def solve_potential(v, params, form="nondivergence"):
    """Potential phi_v = Phi + eta with -L_v Phi = f_v and Phi = 0 on the boundary."""
    grid = v.grid
    coeffs = assemble_coefficients(v, params)
    eta = np.broadcast_to(grid.eta, (grid.n_r, grid.n_eta))
    if not np.any(coeffs.drift):
        return PotentialField(grid, eta.copy())

    correction = solve_dirichlet(coeffs, ScalarField2D(grid, coeffs.drift), form=form)
    phi = PotentialField(grid, correction.values + eta)
    low, high = float(np.min(phi.values)), float(np.max(phi.values))
    if low < -1e-12 or high > 1.0 + 1e-12:
        logger.warning(
            f"Discrete maximum principle violated: potential range [{low:.3e}, {high:.3e}]"
        )
    return phi


def trace_eta_derivative(phi):
    """One-sided d(phi)/d(eta) at eta=1 for every r-node, exact on quadratics."""
    if phi.values.shape[1] < 3:
        raise ParameterError("trace derivative needs at least three eta-nodes")
    d1, _ = eta_derivatives(phi.values, phi.grid)
    return d1[:, -1]


def small_gap_load(v):
    """Explicit load 1/(1+v)^2 of the eps=0 model."""
    gap = 1.0 + v.values
    if np.min(gap) <= 0.0:
        raise DomainError(f"deflection touches the ground plate: min(1+u)={np.min(gap):.3e}")
    return 1.0 / gap**2


def g_eps(v, params, form="nondivergence"):
    """Load (1 + eps^2 v'^2)/(1+v)^2 |d(phi_v)/d(eta)(., 1)|^2 on the r-nodes."""
    phi = solve_potential(v, params, form=form)
    trace = trace_eta_derivative(phi)
    d1, _, _ = radial_derivatives(v.values, v.grid)
    metric = (1.0 + params.epsilon**2 * d1 * d1) / (1.0 + v.values) ** 2
    return metric * trace * trace


def electrostatic_load(v, params):
    """Load selected by params.load: the full model or its small-gap limit."""
    if params.load == "small_gap":
        return small_gap_load(v)
    return g_eps(v, params)
