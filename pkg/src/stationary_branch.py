"""
Stationary solutions: Newton's method on F(lambda, v) = v - A^{-1} h(v),
continuation in lambda with fold detection, and linearized spectra.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .elliptic_solver import electrostatic_load
from .errors import (
    DomainError,
    NonconvergenceError,
    NumericalError,
    ParameterError,
    SolverError,
)
from .geometry_transform import PlateProfile, RadialGrid
from .plate_dynamics import assemble_A, rhs_h
from .utils import progress_bar

logger = logging.getLogger("StationaryBranch")

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
MAX_DAMPING_HALVINGS = 10
# consecutive residual increases after which Newton gives up early
MAX_GROWTH_STREAK = 8


@dataclass
class BranchPoint:
    lam: float
    profile: PlateProfile
    leading_eig: float = math.nan
    stable: bool = False
    arclength: float = 0.0
    experimental: bool = False

    @property
    def min_u(self):
        return float(np.min(self.profile.values))

    @property
    def max_abs_u(self):
        return float(np.max(np.abs(self.profile.values)))


@dataclass
class Branch:
    """Computed branch points in arclength order plus the fold estimate."""

    points: list = field(default_factory=list)
    lambda_star: float = math.nan
    fold_found: bool = False
    fold_point: BranchPoint = None

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, index):
        return self.points[index]

    @property
    def lower_points(self):
        return [point for point in self.points if not point.experimental]

    @property
    def stable_points(self):
        return [point for point in self.points if point.stable]


def residual_F(lam, v, params, op):
    """F(lambda, v) = v + lambda A^{-1} g(v) - a ||grad v||^2 A^{-1} Lap v on the nodes r < 1."""
    h = rhs_h(v, params.with_lambda(lam))
    if not np.any(h[:-1]):
        return v.reduced.copy()
    return v.reduced - op.solve(h[:-1])


def _fd_jacobian(func, x, f0):
    """Forward-difference Jacobian with step 1e-6 (1 + ||x||_inf)."""
    step = 1e-6 * (1.0 + float(np.max(np.abs(x))))
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        xk = x.copy()
        xk[k] += step
        jac[:, k] = (func(xk) - f0) / step
    return jac


def _admissible(grid, x):
    return PlateProfile.from_reduced(grid, x).admissible()


def _damped(grid, x, dx):
    """Largest x + 2^-k dx (k <= 10) that stays admissible."""
    scale = 1.0
    for _ in range(MAX_DAMPING_HALVINGS + 1):
        candidate = x + scale * dx
        if _admissible(grid, candidate):
            return candidate
        scale *= 0.5
    raise DomainError(
        f"Newton update leaves the admissible set after {MAX_DAMPING_HALVINGS} halvings"
    )


def _dense_solve(jac, rhs):
    try:
        return scipy.linalg.solve(jac, rhs)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SolverError(f"singular Newton Jacobian ({jac.shape[0]} unknowns): {e}") from e


def newton_solve(
    lam,
    guess,
    params,
    op=None,
    tol=NEWTON_TOL,
    max_iter=NEWTON_MAX_ITER,
    history=None,
):
    """Root of F(lam, .) near ``guess`` by Newton's method with an FD Jacobian.

    Converged when ||F||_inf <= tol. Updates are halved until the iterate
    stays admissible. ``history`` collects the residual norms when given.
    """
    grid = guess.grid
    if not guess.admissible():
        raise DomainError(f"initial guess not admissible: min(1+u)={guess.min_gap():.3e}")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    op = assemble_A(params, grid) if op is None else op

    def func(x):
        return residual_F(lam, PlateProfile.from_reduced(grid, x), params, op)

    x = guess.reduced.copy()
    best = math.inf
    streak = 0
    for iteration in range(max_iter + 1):
        f = func(x)
        res = float(np.max(np.abs(f)))
        if history is not None:
            history.append(res)
        logger.debug(f"Newton lambda={lam:.10g} iteration {iteration}: |F|={res:.3e}")
        if not math.isfinite(res):
            raise NonconvergenceError(f"Newton diverged at lambda={lam:.10g}")
        if res <= tol:
            return PlateProfile.from_reduced(grid, x)
        if iteration == max_iter:
            break
        streak = streak + 1 if res > best else 0
        best = min(best, res)
        if streak >= MAX_GROWTH_STREAK:
            break
        jac = _fd_jacobian(func, x, f)
        x = _damped(grid, x, _dense_solve(jac, -f))
    raise NonconvergenceError(
        f"Newton did not converge at lambda={lam:.10g} after {iteration} iterations "
        f"(|F|={res:.3e}); no nearby solution"
    )


def linearized_spectrum(point, params, k=1, op=None):
    """Eigenvalues of -A + Dh(U) with the k largest real parts, in descending order.

    The least stable eigenvalue comes first, so a stable point has a negative
    first entry. Only real parts are returned.

    Dh is built column by column from forward differences of rhs_h. The
    point's leading_eig and stable flag are updated.
    """
    profile = point.profile
    grid = profile.grid
    if not profile.admissible():
        raise DomainError(f"branch point not admissible: min(1+u)={profile.min_gap():.3e}")
    op = assemble_A(params, grid) if op is None else op
    local = params.with_lambda(point.lam)
    x = profile.reduced.copy()

    def h_reduced(y):
        return rhs_h(PlateProfile.from_reduced(grid, y), local)[:-1]

    h0 = h_reduced(x)
    if not np.any(h0) and local.lam == 0.0 and local.a == 0.0:
        dh = np.zeros((x.size, x.size))
    else:
        dh = _fd_jacobian(h_reduced, x, h0)
    try:
        eigs = scipy.linalg.eigvals(-op.dense() + dh)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SolverError(f"eigensolver failed at lambda={point.lam:.10g}: {e}") from e

    order = np.argsort(-eigs.real, kind="stable")
    leading = eigs[order[: max(1, k)]]
    scale = max(1.0, abs(leading[0].real))
    if abs(leading[0].imag) > 1e-8 * scale:
        logger.warning(
            f"Leading eigenvalue at lambda={point.lam:.6g} has imaginary part {leading[0].imag:.3e}"
        )
    point.leading_eig = float(leading[0].real)
    point.stable = point.leading_eig < 0.0
    return [float(value.real) for value in leading]


class _Continuation:
    """Natural-parameter stepping that turns into pseudo-arclength near a fold."""

    def __init__(self, params, grid, op, tol, fold_rtol):
        self.params = params
        self.grid = grid
        self.op = op
        self.tol = tol
        self.fold_rtol = fold_rtol
        self.lam_ref = 1.0

    def newton(self, lam, guess, max_iter=NEWTON_MAX_ITER):
        return newton_solve(lam, guess, self.params, op=self.op, tol=self.tol, max_iter=max_iter)

    def inner(self, a, b):
        return a[0] * b[0] + 2.0 * math.pi * self.op.inner(a[1], b[1])

    def scaled(self, point):
        return (point.lam / self.lam_ref, point.profile.reduced.copy())

    def tangent(self, prev, last):
        ds = last[0] - prev[0]
        dx = last[1] - prev[1]
        norm = math.sqrt(self.inner((ds, dx), (ds, dx)))
        return ds / norm, dx / norm

    def arclength_corrector(self, last, tangent, ds, max_iter=30):
        """Newton on F = 0 plus the hyperplane <t, y - y_pred> = 0."""
        grid, params, op = self.grid, self.params, self.op
        s = last[0] + ds * tangent[0]
        x = last[1] + ds * tangent[1]
        pred = (s, x.copy())
        weights = 2.0 * math.pi * op.weights

        def func(y):
            return residual_F(self.lam_ref * s, PlateProfile.from_reduced(grid, y), params, op)

        for _ in range(max_iter):
            if s < 0:
                raise DomainError("arclength step crossed lambda = 0")
            profile = PlateProfile.from_reduced(grid, x)
            f = func(x)
            c = self.inner(tangent, (s - pred[0], x - pred[1]))
            if max(float(np.max(np.abs(f))), abs(c)) <= self.tol:
                return self.lam_ref * s, profile
            jac = np.empty((x.size + 1, x.size + 1))
            jac[:-1, :-1] = _fd_jacobian(func, x, f)
            jac[:-1, -1] = self.lam_ref * op.solve(electrostatic_load(profile, params)[:-1])
            jac[-1, :-1] = weights * tangent[1]
            jac[-1, -1] = tangent[0]
            delta = _dense_solve(jac, -np.append(f, c))
            x = _damped(grid, x, delta[:-1])
            s = s + delta[-1]
        raise NonconvergenceError(f"arclength corrector failed near lambda={self.lam_ref * s:.10g}")

    def pinned_corrector(self, center, lam, x, max_iter=30):
        """Newton on F = 0 plus u(0) = center with lambda as an unknown; regular at the fold."""
        grid, params, op = self.grid, self.params, self.op
        s = lam / self.lam_ref
        x = x.copy()
        x[0] = center

        def func(y):
            return residual_F(self.lam_ref * s, PlateProfile.from_reduced(grid, y), params, op)

        for _ in range(max_iter):
            if s < 0:
                raise DomainError(f"pinned solve at u(0)={center:.6g} crossed lambda = 0")
            profile = PlateProfile.from_reduced(grid, x)
            f = func(x)
            c = x[0] - center
            if max(float(np.max(np.abs(f))), abs(c)) <= self.tol:
                return self.lam_ref * s, profile
            jac = np.zeros((x.size + 1, x.size + 1))
            jac[:-1, :-1] = _fd_jacobian(func, x, f)
            jac[:-1, -1] = self.lam_ref * op.solve(electrostatic_load(profile, params)[:-1])
            jac[-1, 0] = 1.0
            delta = _dense_solve(jac, -np.append(f, c))
            x = _damped(grid, x, delta[:-1])
            s = s + delta[-1]
        raise NonconvergenceError(f"pinned solve failed at u(0)={center:.6g}")

    def locate_fold(self, below, beyond):
        """Marginal point between ``below`` (stable side) and ``beyond`` (past the turn).

        The branch is parametrized by the center deflection u(0) and the
        leading eigenvalue of the linearization is driven to zero by brentq.
        Returns None when the eigenvalue does not change sign on the bracket.
        """
        c_lo = float(below.profile.values[0])
        c_hi = float(beyond.profile.values[0])
        x_lo, x_hi = below.profile.reduced, beyond.profile.reduced
        solved = {}

        def indicator(center):
            if center not in solved:
                t = (center - c_lo) / (c_hi - c_lo)
                guess = (1.0 - t) * below.lam + t * beyond.lam
                lam, profile = self.pinned_corrector(center, guess, (1.0 - t) * x_lo + t * x_hi)
                point = BranchPoint(lam, profile)
                linearized_spectrum(point, self.params, 1, op=self.op)
                solved[center] = point
            return solved[center].leading_eig

        try:
            e_lo, e_hi = indicator(c_lo), indicator(c_hi)
            if e_lo * e_hi > 0.0:
                logger.warning(
                    f"Leading eigenvalue keeps its sign across the turn ({e_lo:.3e}, {e_hi:.3e}); "
                    "fold point left at the bisection estimate"
                )
                return None
            center = brentq(
                indicator, min(c_lo, c_hi), max(c_lo, c_hi), xtol=self.fold_rtol * abs(c_hi - c_lo)
            )
            indicator(center)
        except NumericalError as e:
            logger.warning(f"Fold point refinement failed ({e}); keeping the bisection estimate")
            return None
        point = solved[center]
        logger.info(f"Fold point at lambda={point.lam:.10g}, u(0)={center:.6g}, eig={point.leading_eig:.3e}")
        return point

    def refine_fold(self, lo, lo_profile, hi_guess):
        """Newton-failure bisection of [lo, hi] to relative width fold_rtol."""
        hi = max(hi_guess, lo * (1.0 + 1e-3))
        for _ in range(40):
            try:
                profile = self.newton(hi, lo_profile, max_iter=30)
            except NumericalError:
                break
            lo, lo_profile = hi, profile
            hi = lo * (1.0 + 1e-3)
        else:
            raise NonconvergenceError(f"could not bracket the fold above lambda={lo:.10g}")
        while hi - lo > self.fold_rtol * lo:
            mid = 0.5 * (lo + hi)
            try:
                profile = self.newton(mid, lo_profile, max_iter=30)
            except NumericalError:
                hi = mid
            else:
                lo, lo_profile = mid, profile
        logger.info(f"Fold refined to lambda*={lo:.10g} (bracket width {hi - lo:.3e})")
        return lo, lo_profile


def _fold_estimate(points):
    """Vertex of the parabola lambda(s) through the three points around the maximum."""
    k = max(range(len(points)), key=lambda i: points[i].lam)
    k = min(max(k, 1), len(points) - 2)
    s = np.array([points[i].arclength for i in (k - 1, k, k + 1)])
    lam = np.array([points[i].lam for i in (k - 1, k, k + 1)])
    coeffs = np.polyfit(s, lam, 2)
    if coeffs[0] >= 0.0:
        return float(np.max(lam))
    vertex = -coeffs[1] / (2.0 * coeffs[0])
    return float(max(np.polyval(coeffs, vertex), np.max(lam)))


def continue_branch(
    params,
    lambda_step_init,
    max_points,
    grid=None,
    op=None,
    tol=NEWTON_TOL,
    fold_rtol=1e-4,
    past_fold=0,
    spectra=True,
    progress=False,
):
    """Trace the minimal branch from (0, 0) and estimate the fold lambda*.

    Natural-parameter steps with a secant predictor are halved on Newton
    failure; once a step falls below lambda_step_init/8 the continuation
    switches to pseudo-arclength in (lambda/lambda_ref, U). A sign change of
    the lambda increment marks the fold. lambda* is refined by bisection to
    relative width fold_rtol, and the fold point is then located as the
    solution with a vanishing leading eigenvalue on the branch parametrized
    by u(0).
    ``past_fold`` further points on the upper branch are flagged experimental.
    """
    if not lambda_step_init > 0:
        raise ParameterError(f"lambda_step_init must be > 0, got {lambda_step_init}")
    if max_points < 2:
        raise ParameterError(f"max_points must be >= 2, got {max_points}")
    if not 0 < fold_rtol < 1:
        raise ParameterError(f"fold_rtol must lie in (0, 1), got {fold_rtol}")
    grid = RadialGrid() if grid is None else grid
    op = assemble_A(params, grid) if op is None else op
    cont = _Continuation(params, grid, op, tol, fold_rtol)

    branch = Branch(points=[BranchPoint(0.0, PlateProfile.zeros(grid))])
    step = float(lambda_step_init)
    min_step = lambda_step_init / 8.0
    upper_left = past_fold
    logger.info(
        f"Continuing branch: eps={params.epsilon:g}, a={params.a:g}, "
        f"step={lambda_step_init:g}, grid {grid.n_r}x{grid.n_eta}"
    )

    def append(lam, profile, experimental=False):
        last = branch.points[-1]
        ds = math.hypot(lam - last.lam, float(np.max(np.abs(profile.values - last.profile.values))))
        point = BranchPoint(lam, profile, arclength=last.arclength + ds, experimental=experimental)
        branch.points.append(point)
        bar.update(1)
        return point

    with progress_bar(max_points, "branch", enabled=progress) as bar:
        bar.update(1)
        # natural-parameter phase
        while len(branch.points) < max_points:
            last = branch.points[-1]
            lam = last.lam + step
            guess = last.profile
            if len(branch.points) >= 2:
                prev = branch.points[-2]
                slope = (last.profile.values - prev.profile.values) / (last.lam - prev.lam)
                trial = PlateProfile(grid, last.profile.values + step * slope)
                if trial.admissible():
                    guess = trial
            try:
                profile = cont.newton(lam, guess)
            except NumericalError as e:
                step *= 0.5
                logger.debug(f"Natural step failed at lambda={lam:.6g} ({e}); step -> {step:.3e}")
                if step < min_step:
                    break
                continue
            append(lam, profile)
            step = min(2.0 * step, lambda_step_init)

        # pseudo-arclength phase
        if len(branch.points) < max_points and len(branch.points) >= 2:
            cont.lam_ref = max(branch.points[-1].lam, 1.0)
            logger.info(f"Switching to pseudo-arclength at lambda={branch.points[-1].lam:.6g}")
            prev, last = cont.scaled(branch.points[-2]), cont.scaled(branch.points[-1])
            tangent = cont.tangent(prev, last)
            ds = math.sqrt(cont.inner(
                (last[0] - prev[0], last[1] - prev[1]), (last[0] - prev[0], last[1] - prev[1])
            ))
            ds_max = ds
            ds_min = ds / 256.0
            turned = False
            while len(branch.points) < max_points:
                try:
                    lam, profile = cont.arclength_corrector(last, tangent, ds)
                except NumericalError as e:
                    ds *= 0.5
                    logger.debug(f"Arclength step failed ({e}); ds -> {ds:.3e}")
                    if ds < ds_min:
                        break
                    continue
                if not turned and lam < branch.points[-1].lam:
                    turned = True
                    logger.info(
                        f"Fold detected between lambda={branch.points[-1].lam:.6g} and {lam:.6g}"
                    )
                append(lam, profile, experimental=turned)
                # the first point past the turn is kept even without past_fold
                if turned and upper_left <= 1:
                    break
                if turned:
                    upper_left -= 1
                prev, last = last, cont.scaled(branch.points[-1])
                tangent = cont.tangent(prev, last)
                ds = min(2.0 * ds, ds_max)

    lower = branch.lower_points
    turned_points = [point for point in branch.points if point.experimental]
    if turned_points:
        branch.fold_found = True
        top = max(lower, key=lambda point: point.lam)
        hi_guess = _fold_estimate(branch.points)
        lam_star, fold_profile = cont.refine_fold(top.lam, top.profile, hi_guess)
        branch.lambda_star = lam_star
        branch.fold_point = BranchPoint(lam_star, fold_profile, arclength=top.arclength)
        # the turn lies between the last two lower points and the first turned one
        below = lower[-2] if len(lower) >= 2 else top
        marginal = cont.locate_fold(below, turned_points[0])
        if marginal is not None:
            branch.lambda_star = max(lam_star, marginal.lam)
            branch.fold_point = BranchPoint(marginal.lam, marginal.profile, arclength=top.arclength)
        if past_fold == 0:
            # the single post-fold point only served detection
            branch.points = [point for point in branch.points if not point.experimental]
    else:
        logger.warning("Continuation ended without a fold (open branch)")

    if spectra:
        for point in branch.points:
            linearized_spectrum(point, params, 1, op=op)
            if point.stable and not point.experimental and point.lam > 0.0:
                interior_max = float(np.max(point.profile.values[:-1]))
                if interior_max > 1e-12:
                    logger.warning(
                        f"Stable point at lambda={point.lam:.6g} has positive deflection {interior_max:.3e}"
                    )
        if branch.fold_point is not None:
            linearized_spectrum(branch.fold_point, params, 1, op=op)

    if not branch.fold_found:
        candidates = branch.stable_points if spectra else branch.lower_points
        branch.lambda_star = max((point.lam for point in candidates), default=0.0)
    logger.info(
        f"Branch finished with {len(branch.points)} points, lambda*={branch.lambda_star:.10g}, "
        f"fold {'found' if branch.fold_found else 'not found'}"
    )
    return branch
