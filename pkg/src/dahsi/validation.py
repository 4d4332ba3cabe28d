"""Out-of-sample validation of candidate models.

Validation data are cut into short windows (a quarter of a Lyapunov time).
The first points of each window feed a central finite-difference estimate
of a measured derivative, from which the hidden initial condition is solved
algebraically; the model is then integrated with RK4 and scored on the
remaining points. Scores aggregate into AIC/BIC and a Pareto front over
(term count, error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegrationError, lyapunov_time, simulate_rk4
from .library import CandidateModel, evaluate_basis, mask_key

# central first-derivative stencils, offsets -h..h
STENCILS = {
    4: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    8: np.array([3.0, -32.0, 168.0, -672.0, 0.0, 672.0, -168.0, 32.0, -3.0]) / 840.0,
}
BURN_IN = 4


class UnidentifiableICError(ValueError):
    """The chosen equation does not determine the hidden initial value."""


def central_derivative(series, index, dt, order=4):
    """Central finite-difference derivative of ``series`` at ``index``."""
    try:
        w = STENCILS[order]
    except KeyError:
        raise ValueError(f"stencil order must be one of {sorted(STENCILS)}") from None
    half = len(w) // 2
    if index - half < 0 or index + half >= len(series):
        raise ValueError("not enough points around the evaluation index for the stencil")
    return float(np.dot(w, series[index - half: index + half + 1]) / dt)


def _hidden_coefficients(model, eq, hidden, state):
    """Split ``F_eq(state)`` as ``a * h + b`` in the hidden coordinate ``h``.

    Returns ``(a, b, nonlinear)``.
    """
    lib = model.library
    a = b = 0.0
    nonlinear = False
    theta_fixed = state.copy()
    theta_fixed[hidden] = 1.0
    vals = evaluate_basis(lib, theta_fixed)
    for j in np.flatnonzero(model.mask[eq]):
        e = lib.exponents[j, hidden]
        c = model.params[eq, j] * vals[j]
        if e == 0:
            b += c
        elif e == 1:
            a += c
        else:
            nonlinear = True
    return a, b, nonlinear


def _polynomial_in_hidden(model, eq, hidden, state):
    lib = model.library
    st = state.copy()
    st[hidden] = 1.0
    vals = evaluate_basis(lib, st)
    coeffs = np.zeros(int(lib.exponents[:, hidden].max()) + 1)
    for j in np.flatnonzero(model.mask[eq]):
        coeffs[lib.exponents[j, hidden]] += model.params[eq, j] * vals[j]
    return coeffs


def estimate_hidden_ic(model, window, dt, measured_indices, hidden_index, order=4,
                       equation=None, allow_nonlinear=False):
    """Solve ``F_eq(x) = dx_eq/dt`` for the hidden coordinate at the stencil centre.

    Parameters
    ----------
    window : array (n, L)
        Measured columns; the stencil is centred on row ``order // 2``.
    measured_indices : sequence of int
        State index of each window column.
    hidden_index : int
    equation : int, optional
        Measured state whose equation is inverted (default: first measured
        state whose equation involves the hidden one).

    Returns
    -------
    state : ndarray (D,)
        Full state at the stencil centre with the hidden value filled in.
    """
    window = np.asarray(window, dtype=float)
    measured_indices = list(measured_indices)
    centre = order // 2
    D = model.library.dimension
    state = np.zeros(D)
    state[measured_indices] = window[centre]
    if equation is None:
        candidates = [k for k in measured_indices
                      if np.any(model.mask[k] & (model.library.exponents[:, hidden_index] > 0))]
        if not candidates:
            raise UnidentifiableICError("no measured equation involves the hidden variable")
        equation = candidates[0]
    col = measured_indices.index(equation)
    deriv = central_derivative(window[:, col], centre, dt, order)
    a, b, nonlinear = _hidden_coefficients(model, equation, hidden_index, state)
    if nonlinear:
        if not allow_nonlinear:
            raise UnidentifiableICError(
                "equation is nonlinear in the hidden variable; enable allow_nonlinear for the root-finder fallback")
        coeffs = _polynomial_in_hidden(model, equation, hidden_index, state)
        coeffs[0] -= deriv
        roots = np.roots(coeffs[::-1])
        real = roots[np.abs(roots.imag) < 1e-9].real
        if real.size == 0:
            raise UnidentifiableICError("no real root for the hidden initial value")
        state[hidden_index] = real[np.argmin(np.abs(real))]
        return state
    if a == 0.0:
        raise UnidentifiableICError("unidentifiable IC: hidden coefficient vanishes")
    state[hidden_index] = (deriv - b) / a
    return state


@dataclass(frozen=True)
class SegmentSet:
    """Validation windows cut from a dataset.

    Each window has ``M + 4`` rows: four burn-in rows used by the IC
    estimate and ``M`` scored rows.
    """

    windows: np.ndarray        # (S, M + 4, L)
    starts: np.ndarray         # row offset of each window in the source data
    dt: float
    measured_indices: tuple
    n_states: int
    lyapunov_time: float = math.nan

    @property
    def S(self):
        return self.windows.shape[0]

    @property
    def M(self):
        return self.windows.shape[1] - BURN_IN

    def subset(self, idx):
        idx = np.asarray(idx)
        return SegmentSet(self.windows[idx], self.starts[idx], self.dt, self.measured_indices,
                          self.n_states, self.lyapunov_time)


def make_segments(data, window_points=None, lyapunov_time=None, start=0, fraction=0.25):
    """Consecutive non-overlapping windows over ``data`` rows ``start:``.

    The window length is ``window_points`` or ``round(fraction * lyapunov_time / dt)``.
    """
    dt = data.dt
    if window_points is None:
        if lyapunov_time is None or not np.isfinite(lyapunov_time):
            raise ValueError("give window_points or a finite lyapunov_time")
        window_points = int(round(fraction * lyapunov_time / dt))
    if window_points < BURN_IN + 1:
        raise ValueError(f"windows need at least {BURN_IN + 1} points, got {window_points}")
    Y = data.Y[start:]
    S = len(Y) // window_points
    if S < 1:
        raise ValueError("validation data shorter than one window")
    windows = np.stack([Y[s * window_points:(s + 1) * window_points] for s in range(S)])
    starts = start + window_points * np.arange(S)
    return SegmentSet(windows, starts, dt, tuple(data.measured_indices), data.n_states,
                      float(lyapunov_time) if lyapunov_time is not None else math.nan)


def _initial_states(model, segments, order, allow_nonlinear):
    hidden = [k for k in range(segments.n_states) if k not in segments.measured_indices]
    if len(hidden) > 1:
        raise ValueError("hidden initial-condition estimation supports one hidden variable")
    centre = order // 2
    D = segments.n_states
    X0 = np.empty((segments.S, D))
    ok = np.ones(segments.S, dtype=bool)
    for s in range(segments.S):
        w = segments.windows[s]
        if not hidden:
            X0[s, list(segments.measured_indices)] = w[centre]
            continue
        try:
            X0[s] = estimate_hidden_ic(model, w[:order + 1], segments.dt, segments.measured_indices,
                                       hidden[0], order, allow_nonlinear=allow_nonlinear)
        except UnidentifiableICError:
            raise
        except ValueError:
            ok[s] = False
    return X0, ok


def segment_errors(model, segments, order=4, allow_nonlinear=False):
    """Per-window scores ``1/(L M) sum (prediction - data)**2`` over the scored rows.

    Windows whose integration blows up score ``inf``.
    """
    if order // 2 > BURN_IN or order + 1 > segments.windows.shape[1]:
        raise ValueError("stencil does not fit in the window")
    centre = order // 2
    X0, ok = _initial_states(model, segments, order, allow_nonlinear)
    n_steps = segments.windows.shape[1] - centre
    L = len(segments.measured_indices)
    errs = np.full(segments.S, math.inf)
    meas = list(segments.measured_indices)
    try:
        paths = simulate_rk4(model, X0, segments.dt, n_steps)   # (n_steps, S, D)
        good = np.ones(segments.S, dtype=bool)
    except IntegrationError:
        paths, good = _simulate_individually(model, X0, segments.dt, n_steps)
    good &= ok
    # scored rows BURN_IN.. correspond to path index BURN_IN - centre ..
    pred = paths[BURN_IN - centre:, :, :][:, :, meas]       # (M, S, L)
    obs = np.transpose(segments.windows[:, BURN_IN:, :], (1, 0, 2))
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.sum((pred - obs) ** 2, axis=(0, 2)) / (L * segments.M)
    errs[good] = e[good]
    errs[~np.isfinite(errs)] = math.inf
    return errs


def _simulate_individually(model, X0, dt, n_steps):
    S, D = X0.shape
    paths = np.full((n_steps, S, D), np.nan)
    good = np.zeros(S, dtype=bool)
    for s in range(S):
        try:
            paths[:, s, :] = simulate_rk4(model, X0[s], dt, n_steps)
            good[s] = True
        except IntegrationError:
            pass
    return paths, good


def segment_error(model, segment, dt, measured_indices, n_states, order=4, allow_nonlinear=False):
    """Score of one window (array of shape (M + 4, L))."""
    seg = SegmentSet(np.asarray(segment, dtype=float)[None], np.array([0]), dt,
                     tuple(measured_indices), n_states)
    return float(segment_errors(model, seg, order, allow_nonlinear)[0])


def total_error(model, segments, order=4, allow_nonlinear=False):
    """``E_av``: sum of the per-window scores."""
    return float(np.sum(segment_errors(model, segments, order, allow_nonlinear)))


@dataclass
class ModelScore:
    model: CandidateModel
    n_terms: int
    E_av: float
    AIC: float
    BIC: float
    dAIC: float = math.nan
    dBIC: float = math.nan
    pareto: bool = False
    bic_excluded: bool = False

    def to_dict(self):
        def num(v):
            return v if np.isfinite(v) else None
        return {"mask": self.model.mask.tolist(), "n_terms": self.n_terms, "E_av": num(self.E_av),
                "AIC": num(self.AIC), "BIC": num(self.BIC), "dAIC": num(self.dAIC),
                "dBIC": num(self.dBIC), "pareto": self.pareto,
                "params": self.model.params.tolist()}


@dataclass
class ValidationReport:
    scores: list
    S: int
    M: int
    lyapunov_time: float
    stencil_order: int
    subsample_seed: int | None = None
    segment_indices: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        return {"models": [s.to_dict() for s in self.scores], "S": self.S, "M": self.M,
                "lyapunov_time": self.lyapunov_time if np.isfinite(self.lyapunov_time) else None,
                "stencil_order": self.stencil_order, "subsample_seed": self.subsample_seed}

    def best(self, criterion="AIC"):
        key = "dAIC" if criterion.upper() == "AIC" else "dBIC"
        return min(self.scores, key=lambda s: (getattr(s, key), s.n_terms))


def information_criteria(models, segments, subsample=None, seed=None, order=4,
                         allow_nonlinear=False, errors=None):
    """AIC and BIC over the validation windows, rescaled so the best scores zero.

    ``AIC = S log(E_av / S) + 2 N_p`` and ``BIC = S log(E_av / S) + S log(N_p)``.
    When ``subsample`` is below the number of windows, that many windows are
    drawn without replacement using ``seed``. ``errors`` may hold
    precomputed per-window scores (models x windows), in which case
    ``segments`` may be None.
    """
    models = list(models)
    if not models:
        raise ValueError("at least one model is required")
    if errors is None:
        errors = np.array([segment_errors(m, segments, order, allow_nonlinear) for m in models])
    errors = np.asarray(errors, dtype=float)
    idx = np.arange(errors.shape[1])
    if subsample is not None and subsample < errors.shape[1]:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(errors.shape[1], size=subsample, replace=False))
    S = len(idx)
    scores = []
    for m, row in zip(models, errors[:, idx]):
        n_p = m.n_terms
        e_av = float(np.sum(row))
        if not np.isfinite(e_av):
            scores.append(ModelScore(m, n_p, math.inf, math.inf, math.inf))
            continue
        fit = S * math.log(e_av / S) if e_av > 0 else -math.inf
        aic = fit + 2 * n_p
        if n_p == 0:
            bic, excl = math.nan, True
        else:
            bic, excl = fit + S * math.log(n_p), False
        scores.append(ModelScore(m, n_p, e_av, aic, bic, bic_excluded=excl))
    _rescale(scores)
    pareto_front(scores)
    M = segments.M if segments is not None else 0
    tl = segments.lyapunov_time if segments is not None else math.nan
    return ValidationReport(scores, S, M, tl, order,
                            seed if subsample is not None else None, idx)


def _rescale(scores):
    finite_aic = [s.AIC for s in scores if np.isfinite(s.AIC)]
    finite_bic = [s.BIC for s in scores if np.isfinite(s.BIC)]
    amin = min(finite_aic) if finite_aic else math.nan
    bmin = min(finite_bic) if finite_bic else math.nan
    for s in scores:
        s.dAIC = s.AIC - amin if np.isfinite(s.AIC) else math.inf
        s.dBIC = s.BIC - bmin if np.isfinite(s.BIC) else math.inf


def pareto_front(scores):
    """Flag the non-dominated scores under (fewer terms, lower E_av); ties stay on the front."""
    items = scores.scores if isinstance(scores, ValidationReport) else scores
    for s in items:
        s.pareto = np.isfinite(s.E_av) and not any(
            o is not s and np.isfinite(o.E_av) and o.n_terms <= s.n_terms and o.E_av <= s.E_av
            and (o.n_terms < s.n_terms or o.E_av < s.E_av)
            for o in items)
    return scores


def validation_lyapunov_time(models, x0, horizon=200.0, dt=0.01):
    """Shortest finite Lyapunov time among ``models`` started from ``x0``."""
    times = []
    for m in models:
        try:
            times.append(lyapunov_time(m, x0, horizon, dt))
        except IntegrationError:
            continue
    finite = [t for t in times if np.isfinite(t)]
    return min(finite) if finite else math.inf


def recovery_rate(runs, truth):
    """Fraction of runs whose final structure equals ``truth``.

    ``runs`` may be a :class:`~dahsi.anneal.CandidatePool`, a list of run
    records, traces or models. Failed runs count as misses.
    """
    target = mask_key(truth.mask)
    items = getattr(runs, "runs", runs)
    items = list(items)
    if not items:
        return 0.0
    hits = 0
    for r in items:
        if hasattr(r, "key"):
            hits += r.key == target
        elif hasattr(r, "model"):
            hits += mask_key(r.model.mask) == target
        else:
            hits += mask_key(r.mask) == target
    return hits / len(items)


def training_aic(models, data, window_points=10, order=4):
    """AIC of each model over windows cut from the training data itself."""
    seg = make_segments(data, window_points=max(window_points, order + 2))
    report = information_criteria(models, seg, order=order)
    return [s.AIC for s in report.scores]
