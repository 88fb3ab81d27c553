"""Implicit integration and steady-state solution of M dz/dt = F(t, z).

M is diagonal with ones on differential rows and zeros on algebraic rows
(semi-explicit index 1).  The integrator is a variable-step, variable-order
(1-2) BDF method in backward-difference form: the step size is changed by
re-interpolating the difference array, so the leading coefficient of the
corrector stays fixed and the Newton matrix ``M - c J`` only depends on h.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
MAX_ORDER = 2
NEWTON_MAXITER = 4
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class SolverError(ArithmeticError):
    pass


class SingularJacobianError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Newton iteration failed; ``x`` is the best iterate found."""

    def __init__(self, message, x=None, residual_norm=None):
        super().__init__(message)
        self.x = x
        self.residual_norm = residual_norm


class IntegrationError(SolverError):
    def __init__(self, message, t=None, diagnostics=None):
        super().__init__(message)
        self.t = t
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# finite-difference Jacobian and Newton


def jacobian_fd(fun, x, f0=None, groups=None, sparsity=None, scale=None):
    """Forward-difference Jacobian of ``fun`` at ``x``.

    With ``groups`` (structurally orthogonal column sets) and the boolean
    ``sparsity`` pattern, all columns of a group are perturbed at once and
    each difference is scattered back onto the rows the column can touch;
    entries outside the pattern are exactly zero.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if f0 is None:
        f0 = np.asarray(fun(x), dtype=float)
    if scale is None:
        scale = np.ones(n)
    h = math.sqrt(EPS) * np.maximum(np.abs(x), scale)
    # make the step exactly representable
    h = (x + h) - x
    J = np.zeros((f0.size, n))
    if groups is None:
        groups = [np.array([k]) for k in range(n)]
        sparsity = None
    for cols in groups:
        xp = x.copy()
        xp[cols] += h[cols]
        df = np.asarray(fun(xp), dtype=float) - f0
        if sparsity is None:
            J[:, cols[0]] = df / h[cols[0]]
            continue
        for k in cols:
            rows = sparsity[:, k]
            J[rows, k] = df[rows] / h[k]
    bad = ~np.isfinite(J)
    if np.any(bad):
        i, k = np.argwhere(bad)[0]
        raise SolverError(f"non-finite Jacobian entry at row {i}, column {k}")
    return J


def newton_solve(fun, x0, tol=1e-10, jac=None, max_iter=50, row_scale=None,
                 max_halvings=8):
    """Damped Newton iteration for fun(x) = 0.

    Converges when max|fun(x) / row_scale| < tol.  The step is halved up to
    ``max_halvings`` times while the scaled residual norm does not decrease.
    ``jac(x)`` defaults to a dense forward-difference Jacobian.
    """
    x = np.array(x0, dtype=float)
    if jac is None:
        jac = lambda v: jacobian_fd(fun, v)  # noqa: E731
    if row_scale is None:
        row_scale = 1.0

    def norm(f):
        return float(np.max(np.abs(f / row_scale))) if f.size else 0.0

    f = np.asarray(fun(x), dtype=float)
    fn = norm(f)
    best_x, best_norm = x.copy(), fn
    for it in range(max_iter):
        if fn < tol:
            return x
        J = jac(x)
        try:
            with warnings.catch_warnings():
                # singularity is detected from the pivots below
                warnings.simplefilter("ignore", LinAlgWarning)
                lu = lu_factor(J, check_finite=True)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SingularJacobianError(str(exc)) from exc
        if np.any(np.diag(lu[0]) == 0):
            raise SingularJacobianError("Jacobian is singular")
        dx = lu_solve(lu, -f)
        lam = 1.0
        for _ in range(max_halvings + 1):
            x_try = x + lam * dx
            f_try = np.asarray(fun(x_try), dtype=float)
            fn_try = norm(f_try)
            if np.isfinite(fn_try) and fn_try < fn:
                break
            lam *= 0.5
        else:
            raise ConvergenceError("line search failed to reduce the residual",
                                   best_x, best_norm)
        x, f, fn = x_try, f_try, fn_try
        if fn < best_norm:
            best_x, best_norm = x.copy(), fn
    if fn < tol:
        return x
    raise ConvergenceError(f"no convergence after {max_iter} iterations "
                           f"(residual {best_norm:.3e})", best_x, best_norm)


# ---------------------------------------------------------------------------
# problem and configuration


@dataclass
class DaeProblem:
    """M dz/dt = fun(t, z) with a diagonal 0/1 mass matrix."""

    fun: Callable
    mass: np.ndarray
    jac: Callable | None = None
    groups: Sequence | None = None
    sparsity: np.ndarray | None = None
    typical: np.ndarray | None = None

    @property
    def n(self):
        return self.mass.size


def as_problem(model) -> DaeProblem:
    if isinstance(model, DaeProblem):
        return model
    return DaeProblem(fun=model.fun, mass=model.mass, groups=model.groups,
                      sparsity=model.sparsity, typical=model.typical())


@dataclass
class SolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-8
    first_step: float = 1e-6
    min_step: float = 1e-14
    max_step: float = math.inf
    max_newton: int = NEWTON_MAXITER
    jacobian_refresh: str = "lazy"
    horizon: float = 60.0
    samples: int = 200
    algebraic_tol: float = 1e-9

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.min_step > self.max_step:
            raise ValueError("min_step must not exceed max_step")
        if self.jacobian_refresh not in ("lazy", "always"):
            raise ValueError("jacobian_refresh must be 'lazy' or 'always'")


@dataclass
class StepInfo:
    t: float
    h: float
    order: int
    newton_iterations: int
    algebraic_residual: float


@dataclass
class SolutionTrajectory:
    t: np.ndarray
    z: np.ndarray
    steps: list[StepInfo] = field(default_factory=list)
    n_fun: int = 0
    n_jac: int = 0
    n_lu: int = 0
    n_rejected: int = 0

    @property
    def max_algebraic_residual(self):
        return max((s.algebraic_residual for s in self.steps), default=0.0)


# ---------------------------------------------------------------------------
# BDF machinery


def _compute_R(order, factor):
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1
    return np.cumprod(M, axis=0)


def _change_D(D, order, factor):
    R = _compute_R(order, factor)
    U = _compute_R(order, 1)
    RU = R.dot(U)
    D[: order + 1] = RU.T.dot(D[: order + 1])


def _rms(x):
    return float(np.linalg.norm(x) / math.sqrt(x.size)) if x.size else 0.0


class _Counter:
    def __init__(self, fun):
        self.fun = fun
        self.calls = 0

    def __call__(self, t, z):
        self.calls += 1
        return self.fun(t, z)


def local_tolerances(rtol, atol, reference=1e-4):
    """Per-step tolerances giving a global error roughly proportional to rtol.

    With local error held to tol, the second-order formula's global error
    grows like tol**(2/3); requesting tol * (tol / reference)**0.5 below
    ``reference`` restores proportionality.
    """
    factor = min(1.0, math.sqrt(rtol / reference))
    return rtol * factor, atol * factor


class BdfIntegrator:
    """Orders 1-2 BDF for a semi-explicit index-1 DAE.

    Local error is controlled on differential components only; algebraic
    components are re-projected onto g = 0 after every accepted step.
    """

    gamma = np.array([0.0, 1.0, 1.5])
    error_const = np.array([1.0, 0.5, 1.0 / 3.0, 0.25])

    def __init__(self, problem: DaeProblem, t0, z0, config: SolverConfig):
        self.p = problem
        self.cfg = config
        self.fun = _Counter(problem.fun)
        self.n = problem.n
        self.mass = np.asarray(problem.mass, dtype=float)
        self.diff = self.mass != 0
        self.alg = ~self.diff
        self.typical = problem.typical if problem.typical is not None else np.ones(self.n)
        self.t = float(t0)
        self.n_jac = 0
        self.n_lu = 0
        self.n_rejected = 0
        self.rtol, self.atol = local_tolerances(config.rtol, config.atol)
        self.newton_tol = max(10 * EPS / self.rtol, min(0.03, self.rtol**0.5))

        z0 = np.asarray(z0, dtype=float)
        F0 = self.fun(self.t, z0)
        if not np.all(np.isfinite(F0)):
            raise IntegrationError("non-finite right-hand side at the initial state", self.t)
        self.J = self.jacobian(self.t, z0, F0)
        zdot = np.zeros(self.n)
        zdot[self.diff] = F0[self.diff] / self.mass[self.diff]
        if np.any(self.alg):
            # differentiate g(x, y) = 0 along the flow for the algebraic slope
            Jyy = self.J[np.ix_(self.alg, self.alg)]
            Jyx = self.J[np.ix_(self.alg, self.diff)]
            try:
                zdot[self.alg] = np.linalg.solve(Jyy, -Jyx @ zdot[self.diff])
            except np.linalg.LinAlgError as exc:
                raise IntegrationError(f"algebraic block is singular: {exc}", self.t) from exc
            self._alg_lu = lu_factor(Jyy)
        self.z = z0.copy()
        self.h_abs = min(config.first_step, config.max_step)
        self.order = 1
        self.D = np.zeros((MAX_ORDER + 3, self.n))
        self.D[0] = z0
        self.D[1] = zdot * self.h_abs
        self.n_equal_steps = 0
        self.LU = None

    def jacobian(self, t, z, F=None):
        self.n_jac += 1
        if self.p.jac is not None:
            return np.asarray(self.p.jac(t, z), dtype=float)
        return jacobian_fd(lambda v: self.fun(t, v), z, F, self.p.groups,
                           self.p.sparsity, self.typical)

    def _lu(self, A):
        self.n_lu += 1
        return lu_factor(A, check_finite=False)

    def _newton(self, t_new, z_pred, c, psi, LU, scale):
        d = np.zeros(self.n)
        z = z_pred.copy()
        dz_norm_old = None
        converged = False
        k = 0
        for k in range(self.cfg.max_newton):
            F = self.fun(t_new, z)
            if not np.all(np.isfinite(F)):
                break
            dz = lu_solve(LU, c * F - self.mass * (psi + d), check_finite=False)
            dz_norm = _rms(dz / scale)
            rate = None if dz_norm_old is None else dz_norm / dz_norm_old
            if rate is not None and (rate >= 1 or
                                     rate ** (self.cfg.max_newton - k) / (1 - rate) * dz_norm > self.newton_tol):
                break
            z += dz
            d += dz
            if dz_norm == 0 or (rate is not None and rate / (1 - rate) * dz_norm < self.newton_tol):
                converged = True
                break
            dz_norm_old = dz_norm
        return converged, k + 1, z, d

    def _refresh_alg_lu(self, t, z):
        """Refactor dg/dy at z, differencing only the algebraic columns."""
        idx = np.flatnonzero(self.alg)
        if self.p.groups is not None:
            groups = [g[self.alg[g]] for g in self.p.groups]
            groups = [g for g in groups if g.size]
        else:
            groups = [np.array([k]) for k in idx]
        F = self.fun(t, z)
        Jy = jacobian_fd(lambda v: self.fun(t, v), z, F, groups, self.p.sparsity, self.typical)
        self._alg_lu = lu_factor(Jy[np.ix_(idx, idx)])

    def project(self, t, z):
        """Solve g(x, y) = 0 for y at fixed x; returns (z, max |g|)."""
        if not np.any(self.alg):
            return z, 0.0
        z, gmax = self._project(t, z)
        if gmax > self.cfg.algebraic_tol:
            self._refresh_alg_lu(t, z)
            z, gmax = self._project(t, z)
        return z, gmax

    def _project(self, t, z):
        z = z.copy()
        g = self.fun(t, z)[self.alg]
        gmax = float(np.max(np.abs(g)))
        for _ in range(8):
            dy = lu_solve(self._alg_lu, -g, check_finite=False)
            z[self.alg] += dy
            g_new = self.fun(t, z)[self.alg]
            gmax_new = float(np.max(np.abs(g_new)))
            if not np.isfinite(gmax_new) or gmax_new >= gmax:
                z[self.alg] -= dy
                break
            g, gmax = g_new, gmax_new
            if np.all(np.abs(dy) <= 4 * EPS * np.abs(z[self.alg])):
                break
        return z, gmax

    def step(self, t_bound):
        """Advance one accepted step without passing t_bound."""
        cfg = self.cfg
        t = self.t
        D = self.D
        min_step = max(cfg.min_step, 10 * abs(np.nextafter(t, np.inf) - t))
        if self.h_abs > cfg.max_step:
            _change_D(D, self.order, cfg.max_step / self.h_abs)
            self.h_abs = cfg.max_step
            self.n_equal_steps = 0
            self.LU = None
        h_abs = self.h_abs
        order = self.order
        J = self.J
        LU = self.LU
        current_jac = False
        if cfg.jacobian_refresh == "always":
            J = self.jacobian(t, self.z)
            LU = None
            current_jac = True

        while True:
            if h_abs < min_step:
                raise IntegrationError(f"step size {h_abs:.3e} below minimum at t={t:.6g}", t,
                                       {"order": order, "h": h_abs})
            t_new = t + h_abs
            # stretch the step rather than leave a sliver before t_bound
            if t_new >= t_bound or t_bound - t_new < 1e-3 * h_abs:
                t_new = t_bound
                _change_D(D, order, (t_new - t) / h_abs)
                self.n_equal_steps = 0
                LU = None
            h = t_new - t
            h_abs = h

            z_pred = np.sum(D[: order + 1], axis=0)
            scale = self.atol + self.rtol * np.abs(z_pred)
            psi = np.dot(D[1: order + 1].T, self.gamma[1: order + 1]) / self.gamma[order]
            c = h / self.gamma[order]

            converged = False
            while not converged:
                if LU is None:
                    LU = self._lu(np.diag(self.mass) - c * J)
                converged, n_iter, z_new, d = self._newton(t_new, z_pred, c, psi, LU, scale)
                if not converged:
                    if current_jac:
                        break
                    J = self.jacobian(t_new, z_pred)
                    current_jac = True
                    LU = None
            if not converged:
                self.n_rejected += 1
                h_abs *= 0.5
                _change_D(D, order, 0.5)
                self.n_equal_steps = 0
                LU = None
                continue

            safety = 0.9 * (2 * cfg.max_newton + 1) / (2 * cfg.max_newton + n_iter)
            scale = self.atol + self.rtol * np.abs(z_new)
            error = self.error_const[order] * d
            error_norm = _rms((error / scale)[self.diff])
            if error_norm > 1:
                self.n_rejected += 1
                factor = max(MIN_FACTOR, safety * error_norm ** (-1 / (order + 1)))
                h_abs *= factor
                _change_D(D, order, factor)
                self.n_equal_steps = 0
                continue
            break

        if current_jac and np.any(self.alg):
            self._alg_lu = lu_factor(J[np.ix_(self.alg, self.alg)])
        z_proj, gmax = self.project(t_new, z_new)
        d = d + (z_proj - z_new)
        z_new = z_proj

        self.n_equal_steps += 1
        self.t = t_new
        self.z = z_new
        self.h_abs = h_abs
        self.J = J
        self.LU = LU

        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]

        info = StepInfo(t_new, h, order, n_iter, gmax)
        if self.n_equal_steps < order + 1:
            return info

        if order > 1:
            error_m = self.error_const[order - 1] * D[order]
            error_m_norm = _rms((error_m / scale)[self.diff])
        else:
            error_m_norm = np.inf
        if order < MAX_ORDER:
            error_p = self.error_const[order + 1] * D[order + 2]
            error_p_norm = _rms((error_p / scale)[self.diff])
        else:
            error_p_norm = np.inf

        error_norms = np.array([error_m_norm, error_norm, error_p_norm])
        with np.errstate(divide="ignore"):
            factors = error_norms ** (-1 / np.arange(order, order + 3))
        delta_order = int(np.argmax(factors)) - 1
        self.order = order + delta_order
        factor = min(MAX_FACTOR, safety * float(np.max(factors)))
        self.h_abs *= factor
        _change_D(D, self.order, factor)
        self.n_equal_steps = 0
        self.LU = None
        return info


def integrate(problem, z0, config: SolverConfig | None = None, t_eval=None,
              on_step: Callable | None = None) -> SolutionTrajectory:
    """Integrate from t = 0 over config.horizon, landing exactly on t_eval.

    ``z0`` must be consistent (g(x0, y0) = 0).  ``on_step(t, z, info)`` is
    called after every accepted step.
    """
    config = config or SolverConfig()
    problem = as_problem(problem)
    horizon = config.horizon
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if t_eval is None:
        t_eval = np.linspace(0.0, horizon, max(config.samples, 2)) if horizon > 0 else np.array([0.0])
    t_eval = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")

    z0 = np.asarray(z0, dtype=float)
    out_t = []
    out_z = []
    if horizon == 0 or t_eval[-1] == 0:
        return SolutionTrajectory(np.array([0.0]), z0[None, :].copy())
    bdf = BdfIntegrator(problem, 0.0, z0, config)
    steps = []
    k = 0
    if t_eval[0] == 0.0:
        out_t.append(0.0)
        out_z.append(z0.copy())
        k = 1
    while k < len(t_eval):
        target = t_eval[k]
        try:
            info = bdf.step(target)
        except IntegrationError:
            raise
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise IntegrationError(f"integration failed at t={bdf.t:.6g}: {exc}", bdf.t) from exc
        steps.append(info)
        if on_step is not None:
            on_step(bdf.t, bdf.z, info)
        if bdf.t >= target:
            out_t.append(target)
            out_z.append(bdf.z.copy())
            k += 1
    return SolutionTrajectory(np.array(out_t), np.array(out_z), steps, bdf.fun.calls,
                              bdf.n_jac, bdf.n_lu, bdf.n_rejected)


def steady_state(problem, guess, config: SolverConfig | None = None, tol=1e-10,
                 max_iter=50):
    """Solve F(z) = 0 (dz/dt = 0) by Newton from ``guess``.

    Rows are scaled by the typical magnitude of the variable they advance, so
    ``tol`` is a relative rate per second on differential rows.  Falls back to
    a long-horizon integration if Newton fails; returns (z, used_fallback).
    """
    config = config or SolverConfig()
    problem = as_problem(problem)
    guess = np.asarray(guess, dtype=float)
    typical = problem.typical if problem.typical is not None else np.ones(problem.n)
    row_scale = np.abs(guess) + typical

    def F(v):
        return problem.fun(math.inf, v)

    def jac(v):
        if problem.jac is not None:
            return problem.jac(math.inf, v)
        return jacobian_fd(F, v, None, problem.groups, problem.sparsity, typical)

    try:
        return newton_solve(F, guess, tol=tol, jac=jac, max_iter=max_iter,
                            row_scale=row_scale), False
    except SolverError as exc:
        log.warning("steady-state Newton failed (%s); falling back to long integration", exc)
    long_cfg = SolverConfig(**{**config.__dict__, "horizon": 10 * max(config.horizon, 1.0),
                               "samples": 2})
    traj = integrate(problem, guess, long_cfg)
    z = traj.z[-1]
    try:
        return newton_solve(F, z, tol=tol, jac=jac, max_iter=max_iter, row_scale=row_scale), True
    except SolverError:
        return z, True


def consistent_init(c0, T_s0, T_g0, model):
    """Packed initial state whose algebraic rows vanish; see CalcinerModel.consistent_state."""
    return model.consistent_state(c0, T_s0, T_g0)
