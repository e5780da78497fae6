"""
Clamped plate operator A = beta Lap^2 - tau Lap, the nonlinear map h and the
IMEX time integration of the plate equation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse import coo_matrix, diags, identity
from scipy.sparse.linalg import splu

from .elliptic_solver import electrostatic_load
from .errors import DomainError, ParameterError, PreconditionError, SolverError
from .geometry_transform import PlateProfile, radial_derivatives
from .utils import progress_bar

logger = logging.getLogger("PlateDynamics")


def radial_laplacian_matrix(grid):
    """Radial Laplacian on the nodes r < 1 with u(1) = 0 and even symmetry at r = 0."""
    n = grid.n_r - 1
    h = grid.h_r
    r = grid.r[:n]
    lower = np.empty(n - 1)
    upper = np.empty(n - 1)
    upper[0] = 4.0 / h**2
    upper[1:] = 1.0 / h**2 + 1.0 / (2.0 * r[1 : n - 1] * h)
    lower[:] = 1.0 / h**2 - 1.0 / (2.0 * r[1:n] * h)
    main = np.full(n, -2.0 / h**2)
    main[0] = -4.0 / h**2
    return diags([lower, main, upper], [-1, 0, 1], format="csc")


def _axis_correction(n, h):
    """Rank-one fix of the first two rows of Lap^2 at the axis.

    Lap^2 misses u''''(0) by +u''''(0)/3 in row 0 and by -u''''(0)/24 in
    row 1; (6 u_0 - 8 u_1 + 2 u_2) / h^4 estimates u''''(0) for even u.
    """
    stencil = np.array([6.0, -8.0, 2.0]) / h**4
    rows = np.repeat([0, 1], 3)
    cols = np.tile([0, 1, 2], 2)
    data = np.concatenate([-stencil / 3.0, stencil / 24.0])
    return coo_matrix((data, (rows, cols)), shape=(n, n))


class ClampedOperator:
    """A = beta Lap^2 - tau Lap acting on the clamped unknowns u_0 .. u_{n_r-2}.

    u(1) = 0 removes the boundary node; u'(1) = 0 enters through the mirror
    ghost u_{N+1} = u_{N-1} in the biharmonic row next to the edge. The two
    biharmonic rows at the axis are corrected so that A is exact for even
    quartics there too; away from those rows the matrix is self-adjoint in
    the inner product weighted by ``weights``.
    """

    def __init__(self, grid, beta, tau):
        if beta <= 0:
            raise ParameterError(f"beta must be > 0 (fourth-order plate), got {beta}")
        if tau < 0:
            raise ParameterError(f"tau must be >= 0, got {tau}")
        self.grid = grid
        self.beta = float(beta)
        self.tau = float(tau)
        n = grid.n_r - 1
        h = grid.h_r
        lap = radial_laplacian_matrix(grid)
        edge = n - 1
        east = 1.0 / h**2 + 1.0 / (2.0 * grid.r[edge] * h)
        ghost = np.zeros(n)
        ghost[edge] = east * 2.0 / h**2
        self.laplacian = lap
        biharmonic = lap @ lap + diags(ghost) + _axis_correction(n, h)
        self.matrix = (self.beta * biharmonic - self.tau * lap).tocsc()
        self.weights = grid.disc_weights[:n].copy()
        self._lu = None
        self._shifted = {}

    @property
    def size(self):
        return self.matrix.shape[0]

    def apply(self, values):
        """A u at the nodes r < 1 for a full nodal profile (u(1) ignored)."""
        return self.matrix @ np.asarray(values, dtype=float)[: self.size]

    def dense(self):
        return self.matrix.toarray()

    def _factor(self, matrix, label):
        try:
            return splu(matrix.tocsc())
        except RuntimeError as e:
            raise SolverError(
                f"factorization of {label} failed on n_r={self.grid.n_r}: {e}"
            ) from e

    def solve(self, rhs):
        """A^{-1} rhs on the reduced nodes."""
        if self._lu is None:
            self._lu = self._factor(self.matrix, "A")
        return self._lu.solve(np.asarray(rhs, dtype=float))

    def shifted_solve(self, dt, rhs):
        """(I + dt A)^{-1} rhs, factorization cached per dt."""
        key = float(dt)
        lu = self._shifted.get(key)
        if lu is None:
            lu = self._factor(identity(self.size) + key * self.matrix, f"I + {key:g} A")
            self._shifted[key] = lu
            logger.debug(f"Factorized I + dt A for dt={key:.3e} ({self.size} unknowns)")
        return lu.solve(np.asarray(rhs, dtype=float))

    def inner(self, x, y):
        return float(np.sum(self.weights * x * y))


def assemble_A(params, grid):
    return ClampedOperator(grid, params.beta, params.tau)


def _disc_integral(values, grid):
    """2 pi int_0^1 f(r) r dr by the trapezoidal rule."""
    return 2.0 * math.pi * float(trapezoid(values * grid.r, grid.r))


def grad_norm_sq(v):
    """||grad v||_2^2 over the unit disc for a radial profile."""
    d1, _, _ = radial_derivatives(v.values, v.grid)
    return _disc_integral(d1 * d1, v.grid)


def l2_norm(v):
    return math.sqrt(_disc_integral(v.values * v.values, v.grid))


def laplacian_norm_sq(v):
    _, _, lap = radial_derivatives(v.values, v.grid)
    return _disc_integral(lap * lap, v.grid)


def w2_norm(v):
    """Discrete second-order Sobolev proxy sqrt(|u|^2 + |grad u|^2 + |Lap u|^2)."""
    return math.sqrt(l2_norm(v) ** 2 + grad_norm_sq(v) + laplacian_norm_sq(v))


def elastic_energy(v, params):
    grad_sq = grad_norm_sq(v)
    return (
        0.5 * params.beta * laplacian_norm_sq(v)
        + 0.5 * params.tau * grad_sq
        + 0.25 * params.a * grad_sq**2
    )


def rhs_h(v, params):
    """h(v) = -lambda g(v) + a ||grad v||^2 Lap v on all r-nodes."""
    if not v.admissible():
        raise DomainError(f"deflection is not admissible: min(1+u)={v.min_gap():.3e}")
    h = np.zeros(v.grid.n_r)
    if params.lam != 0.0:
        h -= params.lam * electrostatic_load(v, params)
    if params.a != 0.0:
        _, _, lap = radial_derivatives(v.values, v.grid)
        h += params.a * grad_norm_sq(v) * lap
    return h


def step(u, dt, params, op):
    """One IMEX Euler step (I + dt A) u_new = u + dt h(u).

    A step that leaves the admissible set is returned, with a warning; the
    caller decides how to terminate.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    if not u.admissible():
        raise DomainError(f"deflection is not admissible: min(1+u)={u.min_gap():.3e}")
    h = rhs_h(u, params)
    reduced = op.shifted_solve(dt, u.reduced + dt * h[:-1])
    new = PlateProfile.from_reduced(u.grid, reduced)
    if not new.admissible():
        logger.warning(
            f"Step of size {dt:.3e} left the admissible set: min(1+u)={new.min_gap():.3e}"
        )
    return new


class SimStatus(StrEnum):
    COMPLETED = "completed"
    TOUCHDOWN = "touchdown"
    NORM_BLOWUP = "norm_blowup"
    CONVERGED_TO_STEADY = "converged_to_steady"


@dataclass(frozen=True)
class SimTolerances:
    touchdown: float = 1e-2
    norm_cap: float = 1e6
    steady: float = 1e-8

    def __post_init__(self):
        for name in ("touchdown", "norm_cap", "steady"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParameterError(f"tolerance {name} must be positive, got {value!r}")
        if self.touchdown >= 1.0:
            raise ParameterError(
                f"touchdown threshold must lie in (0, 1), got {self.touchdown}"
            )


@dataclass(frozen=True)
class SimRecord:
    t: float
    min_u: float
    l2_norm: float
    grad_sq: float
    energy_proxy: float
    w2_norm: float
    deviation: float = math.nan


@dataclass
class SimTrace:
    records: list = field(default_factory=list)
    status: SimStatus = SimStatus.COMPLETED
    final: PlateProfile = None
    dt: float = math.nan

    @property
    def times(self):
        return np.array([rec.t for rec in self.records])

    @property
    def terminal_time(self):
        return self.records[-1].t

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records])


def _record(t, u, params, reference):
    deviation = math.nan
    if reference is not None:
        deviation = float(np.max(np.abs(u.values - reference.values)))
    return SimRecord(
        t=t,
        min_u=float(np.min(u.values)),
        l2_norm=l2_norm(u),
        grad_sq=grad_norm_sq(u),
        energy_proxy=elastic_energy(u, params),
        w2_norm=w2_norm(u),
        deviation=deviation,
    )


def default_dt(params, grid, op=None):
    """0.1 / mu_1 with mu_1 the smallest eigenvalue of the clamped operator."""
    from .spectral_verify import clamped_eigenpair

    return 0.1 / clamped_eigenpair(params, grid, op=op).mu


def simulate(u0, params, t_end, dt=None, tols=None, op=None, reference=None, progress=False):
    """Integrate u_t + A u = h(u) from u0 up to t_end.

    Stops early on touchdown (min(1+u) <= tols.touchdown), on norm blow-up
    (W2 proxy above tols.norm_cap) or once max|u_new - u| / dt <= tols.steady.
    ``reference`` adds the max-norm distance to a given profile to every record.
    """
    tols = SimTolerances() if tols is None else tols
    if not (math.isfinite(t_end) and t_end > 0):
        raise ParameterError(f"t_end must be > 0, got {t_end}")
    grid = u0.grid
    if not u0.admissible():
        raise PreconditionError(f"initial deflection not admissible: min(1+u)={u0.min_gap():.3e}")
    if abs(u0.values[-1]) > 1e-12:
        raise PreconditionError(f"initial deflection violates u(1)=0: u(1)={u0.values[-1]:.3e}")
    if not u0.is_clamped():
        logger.warning("Initial deflection has a nonzero edge slope; clamping enforces u'(1)=0")
    if reference is not None and reference.grid != grid:
        raise ParameterError("reference profile lives on a different grid")
    op = assemble_A(params, grid) if op is None else op
    if dt is None:
        dt = default_dt(params, grid, op=op)
    if not (math.isfinite(dt) and dt > 0):
        raise ParameterError(f"dt must be > 0, got {dt}")

    n_steps = max(1, math.ceil(t_end / dt - 1e-9))
    logger.info(
        f"Simulating to t={t_end:g} with dt={dt:.3e} ({n_steps} steps), "
        f"lambda={params.lam:g}, eps={params.epsilon:g}"
    )
    trace = SimTrace(records=[_record(0.0, u0, params, reference)], dt=dt)
    u = u0
    t = 0.0
    status = SimStatus.COMPLETED
    with progress_bar(n_steps, "simulate", enabled=progress) as bar:
        for k in range(1, n_steps + 1):
            if u.min_gap() <= tols.touchdown:
                status = SimStatus.TOUCHDOWN
                break
            t_next = t_end if k == n_steps else k * dt
            dt_k = t_next - t
            if abs(dt_k - dt) <= 1e-9 * dt:
                dt_k = dt
            new = step(u, dt_k, params, op)
            bar.update(1)
            if not np.all(np.isfinite(new.values)) or new.min_gap() <= 0.0:
                status = SimStatus.TOUCHDOWN
                break
            rate = float(np.max(np.abs(new.values - u.values))) / dt_k
            u, t = new, t_next
            rec = _record(t, u, params, reference)
            trace.records.append(rec)
            if u.min_gap() <= tols.touchdown:
                status = SimStatus.TOUCHDOWN
                break
            if rec.w2_norm > tols.norm_cap:
                status = SimStatus.NORM_BLOWUP
                break
            if rate <= tols.steady:
                status = SimStatus.CONVERGED_TO_STEADY
                break

    trace.status = status
    trace.final = u
    logger.info(f"Simulation ended at t={trace.terminal_time:.6g}: {status}")
    return trace
