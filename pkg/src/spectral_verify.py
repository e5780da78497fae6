"""
Clamped-plate eigenpairs, the auxiliary Poisson profile and numerical checks
of the trace inequality and the mixed-derivative identity.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq
from scipy.sparse import identity
from scipy.sparse.linalg import splu
from scipy.special import ive, jv

from .errors import ParameterError, PreconditionError, SolverError, StagnationError
from .geometry_transform import PlateProfile, eta_derivatives, radial_derivatives
from .plate_dynamics import assemble_A, radial_laplacian_matrix

logger = logging.getLogger("SpectralVerify")

EIGEN_TOL = 1e-10
EIGEN_MAX_ITER = 500


@dataclass(frozen=True)
class PlateFrequency:
    alpha: float
    gamma: float
    mu: float


def clamped_plate_frequencies(beta, tau, count=1):
    """Axisymmetric eigenvalues of beta Lap^2 - tau Lap on the clamped unit disc.

    Modes are A J0(alpha r) + B I0(gamma r) with gamma^2 = alpha^2 + tau/beta;
    the clamped conditions leave
        alpha J1(alpha) I0(gamma) + gamma J0(alpha) I1(gamma) = 0,
    solved here after division by I0(gamma). mu = beta alpha^4 + tau alpha^2.
    """
    if beta <= 0 or tau < 0:
        raise ParameterError(f"need beta > 0 and tau >= 0, got beta={beta}, tau={tau}")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")

    def gamma_of(alpha):
        return math.sqrt(alpha * alpha + tau / beta)

    def frequency_equation(alpha):
        gamma = gamma_of(alpha)
        return alpha * jv(1, alpha) + gamma * jv(0, alpha) * ive(1, gamma) / ive(0, gamma)

    roots = []
    step = 0.05
    lo = step
    f_lo = frequency_equation(lo)
    while len(roots) < count:
        hi = lo + step
        f_hi = frequency_equation(hi)
        if f_lo == 0.0 or f_lo * f_hi < 0.0:
            alpha = lo if f_lo == 0.0 else brentq(frequency_equation, lo, hi, xtol=1e-14, rtol=1e-15)
            roots.append(
                PlateFrequency(alpha, gamma_of(alpha), beta * alpha**4 + tau * alpha**2)
            )
        lo, f_lo = hi, f_hi
    return roots


@dataclass
class EigenPair:
    mu: float
    zeta: PlateProfile
    residual: float = math.nan
    iterations: int = 0

    def positive_interior(self):
        return bool(np.all(self.zeta.values[:-1] > 0.0))


def _disc_norm(op, x):
    return math.sqrt(2.0 * math.pi * op.inner(x, x))


def _inverse_iteration(op, solve, start, basis, tol, max_iter):
    """Inverse iteration in the disc inner product.

    ``basis`` holds (zeta, left) pairs of converged modes; they are removed
    with the oblique projector x - (left . x / left . zeta) zeta.
    """
    norm_a = float(abs(op.matrix).sum(axis=1).max())
    floor = 20.0 * np.finfo(float).eps * norm_a

    def project(x):
        for zeta, left in basis:
            x = x - (float(left @ x) / float(left @ zeta)) * zeta
        return x

    x = project(np.asarray(start, dtype=float))
    x = x / _disc_norm(op, x)
    mu, residual = math.nan, math.inf
    for iteration in range(1, max_iter + 1):
        y = project(solve(x))
        y_norm = _disc_norm(op, y)
        if not (math.isfinite(y_norm) and y_norm > 0.0):
            raise StagnationError(f"inverse iteration collapsed at iteration {iteration}")
        x = y / y_norm
        ax = op.matrix @ x
        mu = 2.0 * math.pi * op.inner(x, ax)
        residual = _disc_norm(op, ax - mu * x)
        if residual <= max(tol * abs(mu), floor):
            return mu, x, residual, iteration
    raise StagnationError(
        f"inverse iteration stagnated after {max_iter} iterations: "
        f"mu={mu:.10g}, residual={residual:.3e}"
    )


def _finalize(op, grid, mu, x, residual, iterations):
    if x[0] < 0.0:
        x = -x
    zeta = PlateProfile.from_reduced(grid, x)
    return EigenPair(mu=mu, zeta=zeta, residual=residual, iterations=iterations)


def clamped_eigenpair(params, grid, op=None, tol=EIGEN_TOL, max_iter=EIGEN_MAX_ITER):
    """Smallest eigenpair of the clamped operator by inverse power iteration.

    zeta is normalized to ||zeta||_2 = 1 on the disc with zeta(0) > 0.
    """
    op = assemble_A(params, grid) if op is None else op
    start = (1.0 - grid.r[:-1] ** 2) ** 2
    mu, x, residual, iterations = _inverse_iteration(op, op.solve, start, [], tol, max_iter)
    logger.debug(
        f"Clamped eigenpair: mu1={mu:.10g} after {iterations} iterations, residual={residual:.3e}"
    )
    return _finalize(op, grid, mu, x, residual, iterations)


def _left_vector(op, mu, zeta, sweeps=3):
    """Eigenvector of A^T for the eigenvalue mu, started from W zeta."""
    shift = mu * (1.0 - 1e-7)
    try:
        lu = splu((op.matrix - shift * identity(op.size)).tocsc())
    except RuntimeError as e:
        raise SolverError(f"shifted factorization failed at shift {shift:.6g}: {e}") from e
    y = op.weights * zeta
    for _ in range(sweeps):
        y = lu.solve(y, trans="T")
        y = y / np.max(np.abs(y))
    return y


def clamped_spectrum(params, grid, k, op=None, tol=EIGEN_TOL, max_iter=EIGEN_MAX_ITER):
    """The k smallest eigenpairs, each found by a shifted restart of inverse iteration.

    The shift sits at half the previous eigenvalue. Converged modes are
    projected out with their left eigenvectors, since A is not exactly
    self-adjoint in the disc weights near the axis.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    op = assemble_A(params, grid) if op is None else op
    first = clamped_eigenpair(params, grid, op=op, tol=tol, max_iter=max_iter)
    pairs = [first]
    basis = [(first.zeta.reduced.copy(), _left_vector(op, first.mu, first.zeta.reduced))]
    rng = np.random.default_rng(len(grid.r))
    for _ in range(1, min(k, op.size)):
        shift = 0.5 * pairs[-1].mu
        try:
            lu = splu((op.matrix - shift * identity(op.size)).tocsc())
        except RuntimeError as e:
            raise SolverError(f"shifted factorization failed at shift {shift:.6g}: {e}") from e
        start = rng.standard_normal(op.size)
        mu, x, residual, iterations = _inverse_iteration(
            op, lu.solve, start, basis, tol, max_iter
        )
        pair = _finalize(op, grid, mu, x, residual, iterations)
        pairs.append(pair)
        basis.append((pair.zeta.reduced.copy(), _left_vector(op, pair.mu, pair.zeta.reduced)))
    pairs.sort(key=lambda pair: pair.mu)
    return pairs


@dataclass
class AuxiliaryProfile:
    """Solution of -Lap U = u, U(1) = 0 with U' and U'' on the r-nodes."""

    profile: PlateProfile
    d1: np.ndarray
    d2: np.ndarray


def auxiliary_U(u):
    """Radial Poisson solve for U; U' and U'' follow from integrating the ODE.

    r U'(r) = -int_0^r s u(s) ds and U'' = -u - U'/r, with U''(0) = -u(0)/2.
    """
    grid = u.grid
    if not np.all(np.isfinite(u.values)):
        raise ParameterError("profile contains non-finite values")
    lap = radial_laplacian_matrix(grid)
    reduced = splu(lap.tocsc()).solve(-u.values[:-1])
    profile = PlateProfile.from_reduced(grid, reduced)

    r = grid.r
    moment = cumulative_trapezoid(r * u.values, r, initial=0.0)
    d1 = np.zeros_like(r)
    d1[1:] = -moment[1:] / r[1:]
    d2 = np.empty_like(r)
    d2[1:] = -u.values[1:] - d1[1:] / r[1:]
    d2[0] = -0.5 * u.values[0]
    return AuxiliaryProfile(profile=profile, d1=d1, d2=d2)


def auxiliary_bounds_excess(aux):
    """(max(|U'| - r/2), max(|U''| - 3/2)); both are <= 0 when -1 <= u <= 0."""
    r = aux.profile.grid.r
    return (
        float(np.max(np.abs(aux.d1) - 0.5 * r)),
        float(np.max(np.abs(aux.d2) - 1.5)),
    )


def _cylinder_integral(values, grid):
    """2 pi int_0^1 int_0^1 f r dr deta by the trapezoidal rule."""
    inner = trapezoid(values, grid.eta, axis=1)
    return 2.0 * math.pi * float(trapezoid(inner * grid.r, grid.r))


@dataclass(frozen=True)
class TraceReport:
    p: float
    lhs: float
    rhs: float
    ratio: float


def trace_inequality_check(w, p):
    """Ratio ||w(., 1)||_p^p / (||w||_{W^1_2}^{(3p-4)/2} ||w||_2^{(4-p)/2})."""
    if not 2.0 <= p <= 4.0:
        raise ParameterError(f"p must lie in [2, 4], got {p}")
    grid = w.grid
    values = np.asarray(w.values, dtype=float)
    top = np.abs(values[:, -1]) ** p
    lhs = 2.0 * math.pi * float(trapezoid(top * grid.r, grid.r))
    w_r, _, _ = radial_derivatives(values, grid)
    w_eta, _ = eta_derivatives(values, grid)
    l2_sq = _cylinder_integral(values * values, grid)
    h1_sq = l2_sq + _cylinder_integral(w_r * w_r + w_eta * w_eta, grid)
    rhs = h1_sq ** ((3.0 * p - 4.0) / 4.0) * l2_sq ** ((4.0 - p) / 4.0)
    ratio = 0.0 if rhs == 0.0 else lhs / rhs
    return TraceReport(p=float(p), lhs=lhs, rhs=rhs, ratio=ratio)


@dataclass
class TraceCorpusMember:
    grid: object
    values: np.ndarray
    label: str


def trace_test_corpus(grid, count=100, seed=0):
    """Seeded smooth test functions: even polynomials in r times eta-modes."""
    rng = np.random.default_rng(seed)
    r = grid.r[:, None]
    eta = grid.eta[None, :]
    corpus = []
    for k in range(count):
        radial_coeffs = rng.standard_normal(4)
        mode_coeffs = rng.standard_normal((2, 4))
        radial = sum(c * r ** (2 * n) for n, c in enumerate(radial_coeffs))
        modes = mode_coeffs[0, 0] + sum(
            mode_coeffs[0, m] * np.cos(m * math.pi * eta)
            + mode_coeffs[1, m] * np.sin(m * math.pi * eta)
            for m in range(1, 4)
        )
        corpus.append(TraceCorpusMember(grid, radial * modes, f"seed{seed}-{k:03d}"))
    return corpus


@dataclass
class TraceFamilyReport:
    seed: int
    count: int
    max_ratio: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    @property
    def bounded(self):
        return all(math.isfinite(v) for v in self.max_ratio.values())


def trace_inequality_family(grid, p_values=(2.0, 3.0, 4.0), count=100, seed=0):
    corpus = trace_test_corpus(grid, count=count, seed=seed)
    report = TraceFamilyReport(seed=seed, count=count)
    for p in p_values:
        ratios = np.array([trace_inequality_check(member, p).ratio for member in corpus])
        report.ratios[float(p)] = ratios
        report.max_ratio[float(p)] = float(np.max(ratios))
        logger.info(f"Trace inequality p={p:g}: max ratio {report.max_ratio[float(p)]:.6g} over {count} functions")
    return report


def mixed_derivative_identity_check(Phi):
    """Compare int (Phi_rr + Phi_r/r) Phi_etaeta with int Phi_{r eta}^2 over the cylinder."""
    grid = Phi.grid
    values = np.asarray(Phi.values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(values))))
    boundary = max(
        float(np.max(np.abs(values[:, 0]))),
        float(np.max(np.abs(values[:, -1]))),
        float(np.max(np.abs(values[-1, :]))),
    )
    if boundary > 1e-12 * scale:
        raise PreconditionError(
            f"field must vanish on eta=0, eta=1 and r=1; boundary max {boundary:.3e}"
        )
    w_r, _, lap_r = radial_derivatives(values, grid)
    _, w_etaeta = eta_derivatives(values, grid)
    w_reta, _ = eta_derivatives(w_r, grid)
    lhs = _cylinder_integral(lap_r * w_etaeta, grid)
    rhs = _cylinder_integral(w_reta * w_reta, grid)
    denom = max(abs(lhs), abs(rhs))
    relerr = 0.0 if denom == 0.0 else abs(lhs - rhs) / denom
    return lhs, rhs, relerr
