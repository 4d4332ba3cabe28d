"""Scikit-learn style front end.

>>> est = DAHSI(lambdas=(0.5,), n_init=4)
>>> est.fit(Y, dt=0.01, measured_indices=(0, 2), n_states=3)   # doctest: +SKIP
>>> est.predict(x0, n_steps=100)                               # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import _checks
from .anneal import AnnealSchedule, Bounds, dahsi_sweep, default_bounds, down_select
from .dynamics import Dataset, simulate_rk4
from .library import build_monomial_library, model_to_text
from .optimize import MinimizeSettings
from .validation import information_criteria, make_segments, total_error


class DAHSI(BaseEstimator):
    """Sparse model identification from partially observed trajectories.

    Parameters
    ----------
    degree : int
        Maximum monomial degree of the candidate library.
    lambdas : sequence of float
        Hard-threshold values swept for every initialisation.
    rf0, alpha, beta_max : annealing ladder ``R_f = rf0 * alpha**beta``.
    n_init : int
        Random initialisations of the hidden states per threshold.
    init : {"uniform", "gradient"}
    param_bound : float
        Symmetric box on every coefficient.
    state_margin : float
        Measured-state box is the data range widened by this many ranges.
    hidden_box : (float, float) or None
        Range for the random hidden-state start (default: the state box).
    cutoff : float or None
        Keep structures whose best action is below this value; ``None``
        keeps everything.
    solver : {"lm", "trf", "lbfgsb"}
    max_iter, f_tol : per-step stopping rules.
    random_state : int
    n_jobs : int
        Worker processes for the sweep.
    """

    def __init__(self, degree=2, lambdas=(0.5,), rf0=1e-2, alpha=1.1, beta_max=30, n_init=10,
                 init="uniform", param_bound=100.0, state_margin=2.0, hidden_box=None,
                 cutoff=None, solver="lm", max_iter=100, f_tol=1e-7, random_state=0, n_jobs=1):
        self.degree = degree
        self.lambdas = lambdas
        self.rf0 = rf0
        self.alpha = alpha
        self.beta_max = beta_max
        self.n_init = n_init
        self.init = init
        self.param_bound = param_bound
        self.state_margin = state_margin
        self.hidden_box = hidden_box
        self.cutoff = cutoff
        self.solver = solver
        self.max_iter = max_iter
        self.f_tol = f_tol
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _dataset(self, Y, dt, measured_indices, n_states):
        if isinstance(Y, Dataset):
            return Y
        Y = _checks.check_series(Y)
        dt = _checks.check_positive(dt, "dt")
        n_states = Y.shape[1] if n_states is None else int(n_states)
        idx = range(Y.shape[1]) if measured_indices is None else measured_indices
        idx = _checks.check_indices(idx, n_states, Y.shape[1])
        return Dataset(dt * np.arange(len(Y)), Y, idx, n_states)

    def _schedule(self):
        return AnnealSchedule(self.rf0, self.alpha, self.beta_max, tuple(sorted(self.lambdas)))

    def fit(self, Y, dt=None, measured_indices=None, n_states=None):
        """Run the threshold sweep and keep the lowest-action non-empty structure.

        ``Y`` is an (N, L) array of measurements on a uniform grid with step
        ``dt``, or a :class:`~dahsi.dynamics.Dataset`.
        """
        data = self._dataset(Y, dt, measured_indices, n_states)
        seed = _checks.check_random_state(self.random_state)
        library = build_monomial_library(data.n_states, self.degree)
        b = default_bounds(data, self.state_margin, self.param_bound)
        settings = MinimizeSettings(max_iter=self.max_iter, f_tol=self.f_tol, solver=self.solver)
        pool = dahsi_sweep(data, library, self._schedule(), self.n_init, seed, init=self.init,
                           bounds=Bounds(b.state_lower, b.state_upper, b.param_lower, b.param_upper),
                           settings=settings, workers=self.n_jobs,
                           hidden_box=None if self.hidden_box is None else tuple(self.hidden_box))
        models = pool.models() if self.cutoff is None else down_select(pool, self.cutoff)
        nonempty = [m for m in models if m.n_terms > 0]
        if not nonempty:
            raise RuntimeError("the sweep produced no non-empty structure below the cutoff")
        self.library_ = library
        self.pool_ = pool
        self.candidates_ = nonempty
        self.model_ = nonempty[0]
        self.n_states_ = data.n_states
        self.measured_indices_ = data.measured_indices
        self.dt_ = data.dt
        return self

    def select(self, Y_val, window_points=None, lyapunov_time=None, criterion="AIC"):
        """Re-pick ``model_`` among the candidates by an information criterion on held-out data."""
        _checks.check_is_fitted(self)
        data = self._dataset(Y_val, self.dt_, self.measured_indices_, self.n_states_)
        seg = make_segments(data, window_points=window_points, lyapunov_time=lyapunov_time)
        report = information_criteria(self.candidates_, seg)
        self.validation_ = report
        self.model_ = report.best(criterion).model
        return self

    def predict(self, x0, n_steps):
        """Integrate the selected model from the full state ``x0`` for ``n_steps`` points."""
        _checks.check_is_fitted(self)
        x0 = np.asarray(x0, dtype=float)
        if x0.shape[-1] != self.n_states_:
            raise ValueError(f"x0 must have {self.n_states_} components")
        return simulate_rk4(self.model_, x0, self.dt_, int(n_steps))

    def score(self, Y, window_points=10):
        """Negative summed window error of the selected model on measurements ``Y``."""
        _checks.check_is_fitted(self)
        data = self._dataset(Y, self.dt_, self.measured_indices_, self.n_states_)
        return -total_error(self.model_, make_segments(data, window_points=window_points))

    def equations(self, digits=4):
        _checks.check_is_fitted(self)
        return model_to_text(self.model_, digits)
