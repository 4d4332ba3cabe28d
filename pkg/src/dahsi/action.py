"""Weak-constraint variational action over a Hermite-Simpson discretisation.

The decision vector stacks every state at every time point (row-major
``X.ravel()``) followed by the active model coefficients ``p[mask]``.
The action is ``A_E + R_f * A_M`` with

* ``A_E = (1/N) sum_i sum_{l measured} (X[i, l] - Y[i, l])**2``
* ``A_M = (1/N) sum_{i<N} ||X[i+1] - f(X[i], X[i+1]; p)||**2``

where ``f`` is the Hermite-Simpson map with the midpoint eliminated::

    Xm = (X[i] + X[i+1]) / 2 + dt/8 * (F(X[i]) - F(X[i+1]))
    f  = X[i] + dt/6 * (F(X[i]) + 4 F(Xm) + F(X[i+1]))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy import sparse

from ._kernels import action_value_grad, residuals_jacobian
from .library import CandidateModel, basis_and_jacobian, evaluate_rhs, monomial_tables


@dataclass
class TrajectoryEstimate:
    """State path ``X`` (N, D) paired with coefficients ``params`` (D, q)."""

    X: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.params = np.asarray(self.params, dtype=float)
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.params))):
            raise ValueError("trajectory estimate contains non-finite entries")

    def copy(self):
        return TrajectoryEstimate(self.X.copy(), self.params.copy())


@dataclass(frozen=True)
class ActionValue:
    measurement: float
    model: float
    rf: float

    @property
    def total(self):
        return self.measurement + self.rf * self.model


def _check_lengths(X, Y):
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"estimate has {X.shape[0]} time points, data has {Y.shape[0]}")


def measurement_error(est, data):
    """Mean squared mismatch on the measured columns only."""
    X = est.X if isinstance(est, TrajectoryEstimate) else np.asarray(est, dtype=float)
    Y = data.Y
    _check_lengths(X, Y)
    diff = X[:, list(data.measured_indices)] - Y
    return float(np.sum(diff * diff) / X.shape[0])


def discrete_map(model, X_i, X_next, dt):
    """Hermite-Simpson prediction of the next state; works on single states or batches."""
    X_i = np.asarray(X_i, dtype=float)
    X_next = np.asarray(X_next, dtype=float)
    F0 = evaluate_rhs(model, X_i)
    F1 = evaluate_rhs(model, X_next)
    Xm = 0.5 * (X_i + X_next) + (dt / 8.0) * (F0 - F1)
    Fm = evaluate_rhs(model, Xm)
    return X_i + (dt / 6.0) * (F0 + 4.0 * Fm + F1)


def collocation_residuals(model, X, dt):
    """``X[i+1] - f(X[i], X[i+1])`` for i = 0..N-2, shape (N-1, D)."""
    X = np.asarray(X, dtype=float)
    return X[1:] - discrete_map(model, X[:-1], X[1:], dt)


def model_error(est, model, dt):
    """Collocation residual energy, normalised by N (not N-1)."""
    if isinstance(est, TrajectoryEstimate):
        X = est.X
        if not isinstance(model, CandidateModel):
            raise TypeError("model must be a CandidateModel")
        model = model.with_params(est.params) if model.params is not est.params else model
    else:
        X = np.asarray(est, dtype=float)
    r = collocation_residuals(model, X, dt)
    return float(np.sum(r * r) / X.shape[0])


def action(est, data, model, rf):
    """Assemble ``A_E + R_f A_M`` for the estimate's own coefficients.

    ``model`` supplies the library and mask; coefficients are taken from
    ``est.params``.
    """
    m = CandidateModel(model.library, est.params, model.mask)
    return ActionValue(measurement_error(est, data), model_error(est.X, m, data.dt), float(rf))


class ActionProblem:
    """Action and exact gradient over the stacked decision vector.

    Parameters
    ----------
    data : Dataset
        Measurements, time step and measured column indices.
    library : FunctionLibrary
    mask : array-like of bool, shape (D, q)
        Active coefficients; only these enter the decision vector.
    rf : float
        Weight of the model error.
    """

    def __init__(self, data, library, mask, rf=1.0):
        self.data = data
        self.library = library
        self.mask = np.array(mask, dtype=bool)
        self.rf = float(rf)
        self.dt = float(data.dt)
        self.N = data.Y.shape[0]
        self.D = library.dimension
        self.q = library.n_terms
        self.measured = np.array(data.measured_indices, dtype=np.int64)
        self._exps = np.ascontiguousarray(library.exponents, dtype=np.int64)
        self._Y = np.ascontiguousarray(data.Y, dtype=float)
        self._tables = monomial_tables(self._exps)
        self.n_states = self.N * self.D
        self.n_params = int(self.mask.sum())
        self._act_k, self._act_j = (a.astype(np.int64) for a in np.nonzero(self.mask))
        self._pattern = None

    @property
    def size(self):
        return self.n_states + self.n_params

    def pack(self, X, params):
        X = np.asarray(X, dtype=float)
        params = np.asarray(params, dtype=float)
        return np.concatenate([X.ravel(), params[self.mask]])

    def unpack(self, z):
        X = z[: self.n_states].reshape(self.N, self.D)
        p = np.zeros((self.D, self.q))
        p[self.mask] = z[self.n_states:]
        return X, p

    def _rhs(self, X, p):
        theta, dtheta = basis_and_jacobian(self._exps, X)
        return theta @ p.T, theta, dtheta

    def parts(self, z):
        """``(A_E, A_M)`` at the packed point ``z``."""
        X, p = self.unpack(z)
        ae, am, _, _ = action_value_grad(np.ascontiguousarray(X), p, self._Y, self.measured,
                                         self.dt, self.rf, False, *self._tables)
        return float(ae), float(am)

    def _residuals(self, X, p):
        dt = self.dt
        F, th, dth = self._rhs(X, p)
        F0, F1 = F[:-1], F[1:]
        Xm = 0.5 * (X[:-1] + X[1:]) + (dt / 8.0) * (F0 - F1)
        Fm, thm, dthm = self._rhs(Xm, p)
        r = X[1:] - X[:-1] - (dt / 6.0) * (F0 + 4.0 * Fm + F1)
        return r, th, dth, thm, dthm

    def value(self, z):
        ae, am = self.parts(z)
        return ae + self.rf * am

    def value_and_grad(self, z):
        X, p = self.unpack(z)
        ae, am, gX, gp = action_value_grad(np.ascontiguousarray(X), p, self._Y, self.measured,
                                           self.dt, self.rf, True, *self._tables)
        return float(ae + self.rf * am), np.concatenate([gX.ravel(), gp[self.mask]])

    def _pattern_indices(self):
        if self._pattern is None:
            N, D, L = self.N, self.D, len(self.measured)
            rows = [np.arange(N * L)]
            cols = [(np.arange(N)[:, None] * D + self.measured[None, :]).ravel()]
            i = np.arange(N - 1)[:, None, None]
            k = np.arange(D)[None, :, None]
            row = N * L + i * D + k
            blk = np.concatenate([i * D + np.arange(D)[None, None, :],
                                  (i + 1) * D + np.arange(D)[None, None, :],
                                  N * D + np.broadcast_to(np.arange(self.n_params), (N - 1, 1, self.n_params))],
                                 axis=2)
            blk = np.broadcast_to(blk, (N - 1, D, blk.shape[2]))
            rows.append(np.broadcast_to(row, blk.shape).ravel())
            cols.append(blk.ravel())
            self._pattern = (np.concatenate(rows), np.concatenate(cols))
        return self._pattern

    def _kernel_residuals(self, z, want_jac):
        X, p = self.unpack(z)
        return residuals_jacobian(np.ascontiguousarray(X), p, self._Y, self.measured, self.dt,
                                  self.rf, self._act_k, self._act_j, want_jac, *self._tables)

    def residuals(self, z):
        """Residual vector ``r`` with ``r @ r == value(z)``."""
        return self._kernel_residuals(z, False)[0]

    def jacobian(self, z):
        """Sparse Jacobian of :meth:`residuals` (CSR)."""
        rows, cols = self._pattern_indices()
        vals = self._kernel_residuals(z, True)[1]
        n_rows = self.N * len(self.measured) + (self.N - 1) * self.D
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n_rows, self.size))

    def value_and_grad_reference(self, z):
        """Vectorised numpy evaluation of the same action and gradient."""
        X, p = self.unpack(z)
        N, dt, rf = self.N, self.dt, self.rf
        diff = X[:, self.measured] - self.data.Y
        ae = np.sum(diff * diff) / N
        gX = np.zeros_like(X)
        gX[:, self.measured] = (2.0 / N) * diff

        r, th, dth, thm, dthm = self._residuals(X, p)
        am = np.sum(r * r) / N
        g = (2.0 * rf / N) * r                      # dA/dr, shape (N-1, D)
        a = -g                                      # adjoint of f
        adj_Fm = (4.0 * dt / 6.0) * a
        # vector-Jacobian product through F(Xm) = theta(Xm) p^T
        adj_Xm = np.einsum("nj,njd->nd", adj_Fm @ p, dthm)
        adj_F0 = (dt / 6.0) * a + (dt / 8.0) * adj_Xm
        adj_F1 = (dt / 6.0) * a - (dt / 8.0) * adj_Xm

        adj_F = np.zeros_like(X)
        adj_F[:-1] += adj_F0
        adj_F[1:] += adj_F1
        gX[1:] += g
        gX[:-1] += a + 0.5 * adj_Xm
        gX[1:] += 0.5 * adj_Xm
        gX += np.einsum("nj,njd->nd", adj_F @ p, dth)

        gp = adj_F.T @ th + adj_Fm.T @ thm
        grad = np.concatenate([gX.ravel(), gp[self.mask]])
        return float(ae + rf * am), grad


def action_gradient(est, data, model, rf):
    """Gradient of the action w.r.t. ``(vec X, p[mask])`` at ``est``."""
    prob = ActionProblem(data, model.library, model.mask, rf)
    return prob.value_and_grad(prob.pack(est.X, est.params))[1]
