"""Compiled inner loops for the collocation action.

Monomials are evaluated through the recurrence tables produced by
``library.monomial_tables``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _closure(x, parent, var, E):
    E[0] = 1.0
    for m in range(1, E.shape[0]):
        E[m] = E[parent[m]] * x[var[m]]


@njit(cache=True)
def _rhs(P, E, lib_index, out):
    D, q = P.shape
    for k in range(D):
        s = 0.0
        for j in range(q):
            s += P[k, j] * E[lib_index[j]]
        out[k] = s


@njit(cache=True)
def _vjp(w, E, deriv_index, deriv_coef, out):
    # out[k] += sum_j w[j] d theta_j / d x_k
    q, D = deriv_index.shape
    for j in range(q):
        wj = w[j]
        if wj == 0.0:
            continue
        for k in range(D):
            c = deriv_coef[j, k]
            if c != 0.0:
                out[k] += wj * c * E[deriv_index[j, k]]


@njit(cache=True)
def action_value_grad(X, P, Y, meas, dt, rf, want_grad, parent, var, lib_index, deriv_index, deriv_coef):
    """Return (A_E, A_M, dA/dX, dA/dP) for the Hermite-Simpson action."""
    N, D = X.shape
    q = lib_index.shape[0]
    L = meas.shape[0]
    nE = parent.shape[0]
    gX = np.zeros((N, D))
    gP = np.zeros((D, q))

    ae = 0.0
    for i in range(N):
        for c in range(L):
            d = X[i, meas[c]] - Y[i, c]
            ae += d * d
            gX[i, meas[c]] += 2.0 * d / N
    ae /= N

    E = np.empty((N, nE))
    F = np.empty((N, D))
    for i in range(N):
        _closure(X[i], parent, var, E[i])
        _rhs(P, E[i], lib_index, F[i])

    adjF = np.zeros((N, D))
    xm = np.empty(D)
    Em = np.empty(nE)
    Fm = np.empty(D)
    r = np.empty(D)
    a = np.empty(D)
    adjFm = np.empty(D)
    adjXm = np.empty(D)
    w = np.empty(q)
    am = 0.0
    c6 = dt / 6.0
    c8 = dt / 8.0
    for i in range(N - 1):
        for k in range(D):
            xm[k] = 0.5 * (X[i, k] + X[i + 1, k]) + c8 * (F[i, k] - F[i + 1, k])
        _closure(xm, parent, var, Em)
        _rhs(P, Em, lib_index, Fm)
        for k in range(D):
            r[k] = X[i + 1, k] - X[i, k] - c6 * (F[i, k] + 4.0 * Fm[k] + F[i + 1, k])
            am += r[k] * r[k]
        if not want_grad:
            continue
        for k in range(D):
            g = 2.0 * rf * r[k] / N
            a[k] = -g
            adjFm[k] = 4.0 * c6 * a[k]
            gX[i + 1, k] += g
            adjXm[k] = 0.0
        for j in range(q):
            s = 0.0
            for k in range(D):
                s += adjFm[k] * P[k, j]
            w[j] = s
        _vjp(w, Em, deriv_index, deriv_coef, adjXm)
        for k in range(D):
            adjF[i, k] += c6 * a[k] + c8 * adjXm[k]
            adjF[i + 1, k] += c6 * a[k] - c8 * adjXm[k]
            gX[i, k] += a[k] + 0.5 * adjXm[k]
            gX[i + 1, k] += 0.5 * adjXm[k]
            for j in range(q):
                gP[k, j] += adjFm[k] * Em[lib_index[j]]
    am /= N
    if want_grad:
        for i in range(N):
            for j in range(q):
                s = 0.0
                for k in range(D):
                    s += adjF[i, k] * P[k, j]
                w[j] = s
            _vjp(w, E[i], deriv_index, deriv_coef, gX[i])
            for k in range(D):
                for j in range(q):
                    gP[k, j] += adjF[i, k] * E[i, lib_index[j]]
    return ae, am, gX, gP


@njit(cache=True)
def _jacobian_x(P, E, deriv_index, deriv_coef, J):
    D, q = P.shape
    for k in range(D):
        for l in range(D):
            s = 0.0
            for j in range(q):
                c = deriv_coef[j, l]
                if c != 0.0 and P[k, j] != 0.0:
                    s += P[k, j] * c * E[deriv_index[j, l]]
            J[k, l] = s


@njit(cache=True)
def residuals_jacobian(X, P, Y, meas, dt, rf, act_k, act_j, want_jac,
                       parent, var, lib_index, deriv_index, deriv_coef):
    """Stacked residuals whose squared norm is the action, with Jacobian values.

    Rows: ``N*L`` measurement rows, then ``(N-1)*D`` model rows. Jacobian
    values follow the fixed pattern of ``residual_pattern``.
    """
    N, D = X.shape
    L = meas.shape[0]
    nE = parent.shape[0]
    na = act_k.shape[0]
    sm = 1.0 / np.sqrt(N)
    sr = np.sqrt(rf / N)
    res = np.empty(N * L + (N - 1) * D)
    nnz = N * L + (N - 1) * D * (2 * D + na)
    vals = np.empty(nnz if want_jac else 0)
    for i in range(N):
        for c in range(L):
            res[i * L + c] = sm * (X[i, meas[c]] - Y[i, c])
            if want_jac:
                vals[i * L + c] = sm
    E = np.empty((N, nE))
    F = np.empty((N, D))
    J = np.empty((N, D, D))
    for i in range(N):
        _closure(X[i], parent, var, E[i])
        _rhs(P, E[i], lib_index, F[i])
        if want_jac:
            _jacobian_x(P, E[i], deriv_index, deriv_coef, J[i])
    xm = np.empty(D)
    Em = np.empty(nE)
    Fm = np.empty(D)
    Jm = np.empty((D, D))
    h6 = dt / 6.0
    h8 = dt / 8.0
    off = N * L
    pos = N * L
    for i in range(N - 1):
        for k in range(D):
            xm[k] = 0.5 * (X[i, k] + X[i + 1, k]) + h8 * (F[i, k] - F[i + 1, k])
        _closure(xm, parent, var, Em)
        _rhs(P, Em, lib_index, Fm)
        for k in range(D):
            res[off + i * D + k] = sr * (X[i + 1, k] - X[i, k] - h6 * (F[i, k] + 4.0 * Fm[k] + F[i + 1, k]))
        if not want_jac:
            continue
        _jacobian_x(P, Em, deriv_index, deriv_coef, Jm)
        for k in range(D):
            # d r_k / d X_i
            for l in range(D):
                s = 0.0
                for m in range(D):
                    s += Jm[k, m] * ((0.5 if m == l else 0.0) + h8 * J[i, m, l])
                v = -h6 * (J[i, k, l] + 4.0 * s)
                if k == l:
                    v -= 1.0
                vals[pos] = sr * v
                pos += 1
            # d r_k / d X_{i+1}
            for l in range(D):
                s = 0.0
                for m in range(D):
                    s += Jm[k, m] * ((0.5 if m == l else 0.0) - h8 * J[i + 1, m, l])
                v = -h6 * (J[i + 1, k, l] + 4.0 * s)
                if k == l:
                    v += 1.0
                vals[pos] = sr * v
                pos += 1
            # d r_k / d p[a]
            for a in range(na):
                kk = act_k[a]
                jj = lib_index[act_j[a]]
                t0 = E[i, jj]
                t1 = E[i + 1, jj]
                v = 4.0 * h8 * Jm[k, kk] * (t0 - t1)
                if kk == k:
                    v += t0 + 4.0 * Em[jj] + t1
                vals[pos] = -sr * h6 * v
                pos += 1
    return res, vals
