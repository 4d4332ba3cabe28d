"""Box-constrained smooth minimisation and a finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import least_squares, minimize
from scipy.sparse.linalg import spsolve

CONVERGED_GRADIENT = "converged_gradient"
CONVERGED_PROGRESS = "converged_progress"
ITERATION_CAP = "iteration_cap"
SOLVERS = ("lm", "trf", "lbfgsb")


@dataclass(frozen=True)
class MinimizeSettings:
    """Stopping rules shared by both solvers.

    ``solver`` picks how the annealing steps are minimised: ``"lm"``
    (projected Levenberg-Marquardt with a direct sparse solve), ``"trf"``
    (scipy's trust-region reflective least squares) or ``"lbfgsb"``.
    """

    max_iter: int = 1000
    g_tol: float = 1e-8
    f_tol: float = 1e-12
    memory: int = 10
    x_tol: float = 1e-10
    solver: str = "lm"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.g_tol <= 0 or self.f_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    status: str
    n_iter: int
    n_eval: int


def _status(res, settings):
    msg = res.message if isinstance(res.message, str) else res.message.decode()
    if "PROJ" in msg.upper() or "PGTOL" in msg.upper():
        return CONVERGED_GRADIENT
    if "REL_REDUCTION" in msg.upper():
        return CONVERGED_PROGRESS
    if res.nit >= settings.max_iter or "LIMIT" in msg.upper():
        return ITERATION_CAP
    # abnormal line-search termination: no further progress is possible
    return CONVERGED_PROGRESS


def minimize_box(fun_and_grad, x0, lower, upper, settings=None):
    """Minimise ``fun_and_grad(x) -> (f, g)`` inside ``[lower, upper]``.

    Limited-memory BFGS with gradient projection (scipy's L-BFGS-B).
    Non-finite objective values met during the line search are replaced
    by a large penalty so the search backs off; they are never returned.
    """
    settings = settings or MinimizeSettings()
    x0 = np.asarray(x0, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape)
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("start point lies outside the bounds")
    f0, g0 = fun_and_grad(x0)
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise FloatingPointError("objective is not finite at the start point")
    penalty = 1e10 * (1.0 + abs(f0))

    def wrapped(x):
        f, g = fun_and_grad(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return penalty, np.zeros_like(x)
        return f, g

    res = minimize(
        wrapped, x0, jac=True, method="L-BFGS-B",
        bounds=np.column_stack([lower, upper]),
        options={"maxiter": settings.max_iter, "maxfun": 20 * settings.max_iter,
                 "gtol": settings.g_tol, "ftol": settings.f_tol, "maxcor": settings.memory},
    )
    x = np.clip(res.x, lower, upper)
    f = float(res.fun)
    if not np.isfinite(f) or f > f0:
        # never hand back something worse than where we started
        x, f = x0.copy(), float(f0)
    return MinimizeResult(x, f, _status(res, settings), int(res.nit), int(res.nfev))


def minimize_least_squares(residuals, jacobian, x0, lower, upper, settings=None):
    """Minimise ``||residuals(x)||**2`` inside ``[lower, upper]``.

    Trust-region reflective Gauss-Newton steps (scipy's ``least_squares``
    with ``method="trf"``) on a sparse Jacobian. ``fun`` of the result is
    the squared norm, so it is directly comparable with :func:`minimize_box`.
    """
    settings = settings or MinimizeSettings()
    x0 = np.asarray(x0, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape)
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("start point lies outside the bounds")
    r0 = residuals(x0)
    if not np.all(np.isfinite(r0)):
        raise FloatingPointError("objective is not finite at the start point")
    f0 = float(r0 @ r0)
    # least_squares needs a strictly feasible start when the box is degenerate
    fixed = lower == upper
    lo = np.where(fixed, lower - 1e-12, lower)
    hi = np.where(fixed, upper + 1e-12, upper)
    res = least_squares(residuals, x0, jac=jacobian, bounds=(lo, hi), method="trf",
                        x_scale="jac", ftol=settings.f_tol, gtol=settings.g_tol,
                        xtol=settings.x_tol, max_nfev=settings.max_iter)
    x = np.clip(res.x, lower, upper)
    r = residuals(x)
    f = float(r @ r)
    if not np.isfinite(f) or f > f0:
        x, f = x0.copy(), f0
    status = {0: ITERATION_CAP, 1: CONVERGED_GRADIENT}.get(res.status, CONVERGED_PROGRESS)
    return MinimizeResult(x, f, status, int(res.nfev), int(res.nfev + res.njev))


def minimize_projected_lm(residuals, jacobian, x0, lower, upper, settings=None):
    """Projected Levenberg-Marquardt for ``||residuals(x)||**2`` on a box.

    Each trial step solves ``(J^T J + mu diag(J^T J)) d = -J^T r`` over the
    variables not held at a bound, using a sparse LU factorisation, and is
    projected onto the box; the damping ``mu`` follows Nielsen's update.
    """
    settings = settings or MinimizeSettings()
    x = np.asarray(x0, dtype=float).copy()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("start point lies outside the bounds")
    r = residuals(x)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("objective is not finite at the start point")
    f = float(r @ r)
    n_eval = 1
    mu, nu = None, 2.0
    status = ITERATION_CAP
    it = 0
    new_point = True
    while it < settings.max_iter:
        if new_point:
            J = sparse.csr_matrix(jacobian(x))
            g = J.T @ r
            pg = x - np.clip(x - g, lower, upper)
            if np.max(np.abs(pg), initial=0.0) <= settings.g_tol:
                status = CONVERGED_GRADIENT
                break
            A = (J.T @ J).tocsc()
            d = A.diagonal()
            d = np.maximum(d, 1e-12 * max(d.max(initial=0.0), 1e-300))
            if mu is None:
                mu = 1e-3
            new_point = False
            # variables held at a bound by the gradient stay fixed for this point
            free = ~(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)))
            Af = A[free][:, free]
            gf, df = g[free], d[free]
        it += 1
        step = np.zeros_like(x)
        step[free] = spsolve((Af + sparse.diags(mu * df)).tocsc(), -gf)
        x_new = np.clip(x + step, lower, upper)
        dx = x_new - x
        if not np.all(np.isfinite(dx)) or not np.any(dx):
            status = CONVERGED_PROGRESS
            break
        with np.errstate(over="ignore", invalid="ignore"):
            r_new = residuals(x_new)
        n_eval += 1
        f_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
        pred = -(2.0 * g @ dx + dx @ (A @ dx))
        if f_new < f:
            rho = (f - f_new) / pred if pred > 0 else 0.0
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            decrease = f - f_new
            small_step = np.max(np.abs(dx) / (np.abs(x) + 1.0)) <= settings.x_tol
            x, r, f = x_new, r_new, f_new
            new_point = True
            if decrease <= settings.f_tol * f or small_step:
                status = CONVERGED_PROGRESS
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e20:
                status = CONVERGED_PROGRESS
                break
    return MinimizeResult(x, f, status, it, n_eval)


def finite_diff_gradient(fun, x, step=1e-6):
    """Central differences, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xi = x.flat[i]
        x.flat[i] = xi + step
        fp = fun(x)
        x.flat[i] = xi - step
        fm = fun(x)
        x.flat[i] = xi
        g.flat[i] = (fp - fm) / (2.0 * step)
    return g
