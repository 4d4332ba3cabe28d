"""Variational annealing with interleaved hard thresholding.

One annealing run sweeps ``R_f = rf0 * alpha**beta`` for beta = 0..beta_max,
minimising the action at each step warm-started from the previous
solution and zeroing coefficients whose magnitude drops below ``lambda``.
A sweep repeats this for every (lambda, initialisation) pair and pools the
resulting model structures.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .action import ActionProblem, TrajectoryEstimate
from .library import CandidateModel, mask_key
from .optimize import MinimizeSettings, minimize_box, minimize_least_squares, minimize_projected_lm

log = logging.getLogger(__name__)

INIT_UNIFORM = "uniform"
INIT_GRADIENT = "gradient"


@dataclass(frozen=True)
class AnnealSchedule:
    """Annealing ladder and threshold grid.

    ``rf0`` is the initial model-error weight, multiplied by ``alpha`` at
    each of the ``beta_max`` steps.
    """

    rf0: float = 1e-2
    alpha: float = 1.1
    beta_max: int = 30
    lambdas: tuple = (0.0,)
    readmit: bool = False

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        if not self.rf0 > 0:
            raise ValueError("rf0 must be positive")
        if not self.alpha > 1:
            raise ValueError("alpha must be greater than 1")
        if self.beta_max < 1:
            raise ValueError("beta_max must be >= 1")
        if any(v < 0 for v in lams):
            raise ValueError("lambda values must be non-negative")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("lambda values must be strictly increasing")

    @property
    def rf_values(self):
        return self.rf0 * self.alpha ** np.arange(self.beta_max + 1)

    def with_lambdas(self, lambdas):
        return AnnealSchedule(self.rf0, self.alpha, self.beta_max, tuple(lambdas), self.readmit)


def linear_lambda_grid(start, stop, step):
    """Inclusive arithmetic grid such as 2.5:0.1:5.5."""
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 12) for i in range(n))


def doubling_lambda_grid(start, lambda_max):
    """Geometric grid ``start, 2 start, 4 start, ...`` below ``lambda_max``."""
    if start <= 0:
        raise ValueError("start must be positive for a doubling grid")
    out = []
    lam = start
    while lam < lambda_max:
        out.append(lam)
        lam *= 2
    return tuple(out)


@dataclass(frozen=True)
class Bounds:
    """Box for the stacked decision vector: per-state-column and parameter limits."""

    state_lower: np.ndarray
    state_upper: np.ndarray
    param_lower: float = -100.0
    param_upper: float = 100.0

    def hidden_box(self, k):
        return float(self.state_lower[k]), float(self.state_upper[k])

    def vectors(self, problem):
        lo = np.concatenate([np.tile(self.state_lower, problem.N),
                             np.full(problem.n_params, self.param_lower)])
        hi = np.concatenate([np.tile(self.state_upper, problem.N),
                             np.full(problem.n_params, self.param_upper)])
        return lo, hi


def default_bounds(data, margin=2.0, param_bound=100.0):
    """Measured columns get ``[min - margin*range, max + margin*range]``; hidden
    columns reuse the widest measured box."""
    D = data.n_states
    lo = np.empty(D)
    hi = np.empty(D)
    widths = []
    for col, k in enumerate(data.measured_indices):
        y = data.Y[:, col]
        rng = float(np.ptp(y)) or 1.0
        lo[k] = y.min() - margin * rng
        hi[k] = y.max() + margin * rng
        widths.append((hi[k] - lo[k], lo[k], hi[k]))
    _, wlo, whi = max(widths)
    for k in data.hidden_indices:
        lo[k], hi[k] = wlo, whi
    return Bounds(lo, hi, -param_bound, param_bound)


def init_states(data, bounds, seed, q, hidden_box=None):
    """Measured columns copied from the data, hidden columns uniform in their box, p = 0."""
    N, D = data.n_points, data.n_states
    X = np.zeros((N, D))
    X[:, list(data.measured_indices)] = data.Y
    hidden = data.hidden_indices
    if hidden:
        rng = np.random.default_rng(seed)
        for k in hidden:
            lo, hi = hidden_box if hidden_box is not None else bounds.hidden_box(k)
            X[:, k] = rng.uniform(lo, hi, size=N)
    X = np.clip(X, bounds.state_lower, bounds.state_upper)
    return TrajectoryEstimate(X, np.zeros((D, q)))


def init_hidden_from_gradient(data, bounds, seed, max_redraws=100):
    """Hidden paths obtained by integrating the derivative of a random measured column.

    Returns an array (N, number of hidden states). Each start value is redrawn
    until the whole path stays inside the hidden box.
    """
    if not data.measured_indices:
        raise ValueError("at least one measured column is required")
    rng = np.random.default_rng(seed)
    N, dt = data.n_points, data.dt
    out = np.empty((N, len(data.hidden_indices)))
    for h, k in enumerate(data.hidden_indices):
        col = int(rng.integers(data.Y.shape[1]))
        dX = np.gradient(data.Y[:, col], dt)
        lo, hi = bounds.hidden_box(k)
        # Z[i+1] = dt dX[i] + Z[i]
        increments = np.concatenate([[0.0], np.cumsum(dt * dX[:-1])])
        for _ in range(max_redraws):
            z0 = rng.uniform(lo, hi)
            Z = z0 + increments
            if Z.min() >= lo and Z.max() <= hi:
                out[:, h] = Z
                break
        else:
            raise RuntimeError(f"no in-bounds initial path for hidden state {k} after {max_redraws} draws")
    return out


def hard_threshold(params, mask, lam):
    """Zero coefficients with ``|p| < lam`` and drop them from the mask."""
    params = np.array(params, dtype=float)
    mask = np.array(mask, dtype=bool)
    small = np.abs(params) < lam
    params[small] = 0.0
    mask &= ~small
    params[~mask] = 0.0
    return params, mask


@dataclass
class AnnealTrace:
    actions: np.ndarray
    estimate: TrajectoryEstimate
    model: CandidateModel
    lam: float
    seed: int
    init: str
    final_action: float
    statuses: list = field(default_factory=list)

    @property
    def n_terms(self):
        return self.model.n_terms


def _initial_estimate(data, library, bounds, seed, init, hidden_box):
    est = init_states(data, bounds, seed, library.n_terms, hidden_box)
    if init == INIT_GRADIENT and data.hidden_indices:
        est.X[:, list(data.hidden_indices)] = init_hidden_from_gradient(data, bounds, seed)
    elif init not in (INIT_UNIFORM, INIT_GRADIENT):
        raise ValueError(f"unknown init strategy {init!r}")
    return est


def anneal_once(data, library, lam, schedule, init=INIT_UNIFORM, seed=0, bounds=None,
                allowed_mask=None, settings=None, estimate=None, hidden_box=None):
    """One full annealing ladder at threshold ``lam``.

    Parameters
    ----------
    allowed_mask : bool array (D, q), optional
        Terms permitted at the start; defaults to the whole library.
    estimate : TrajectoryEstimate, optional
        Explicit starting point; overrides ``init`` and ``seed``.
    """
    bounds = bounds or default_bounds(data)
    settings = settings or MinimizeSettings()
    D, q = library.dimension, library.n_terms
    start_mask = np.ones((D, q), dtype=bool) if allowed_mask is None else np.array(allowed_mask, bool)
    est = estimate.copy() if estimate is not None else _initial_estimate(
        data, library, bounds, seed, init, hidden_box)
    X, p = est.X, np.where(start_mask, est.params, 0.0)
    mask = start_mask.copy()
    actions = []
    statuses = []
    rf = schedule.rf_values
    for beta in range(schedule.beta_max + 1):
        prob = ActionProblem(data, library, mask, rf[beta])
        lo, hi = bounds.vectors(prob)
        z0 = np.clip(prob.pack(X, p), lo, hi)
        try:
            if settings.solver == "lm":
                res = minimize_projected_lm(prob.residuals, prob.jacobian, z0, lo, hi, settings)
            elif settings.solver == "trf":
                res = minimize_least_squares(prob.residuals, prob.jacobian, z0, lo, hi, settings)
            else:
                res = minimize_box(prob.value_and_grad, z0, lo, hi, settings)
        except Exception as exc:  # noqa: BLE001 - context is added for the sweep report
            raise RuntimeError(f"minimisation failed (lambda={lam}, seed={seed}, beta={beta}): {exc}") from exc
        X, p = prob.unpack(res.x)
        actions.append(res.fun)
        statuses.append(res.status)
        p, new_mask = hard_threshold(p, mask, lam)
        if schedule.readmit:
            new_mask = start_mask.copy()
        mask = new_mask
    final_prob = ActionProblem(data, library, mask, rf[-1])
    final_action = final_prob.value(final_prob.pack(X, p))
    model = CandidateModel(library, p, mask)
    return AnnealTrace(np.array(actions), TrajectoryEstimate(X, p), model, float(lam),
                       int(seed), init, float(final_action), statuses)


@dataclass
class PoolEntry:
    mask: np.ndarray
    best_action: float
    multiplicity: int
    example_params: np.ndarray
    lambdas: set = field(default_factory=set)

    @property
    def term_count(self):
        return int(self.mask.sum())


@dataclass
class RunRecord:
    lam: float
    init_index: int
    seed: int
    key: tuple | None
    final_action: float
    n_terms: int
    actions: np.ndarray | None = None
    error: str | None = None


@dataclass
class CandidatePool:
    library: object
    entries: dict = field(default_factory=dict)
    runs: list = field(default_factory=list)

    @property
    def failures(self):
        return sum(1 for r in self.runs if r.error is not None)

    def add(self, trace, init_index):
        key = mask_key(trace.model.mask)
        entry = self.entries.get(key)
        if entry is None:
            self.entries[key] = PoolEntry(trace.model.mask.copy(), trace.final_action, 1,
                                          trace.model.params.copy(), {trace.lam})
        else:
            entry.multiplicity += 1
            entry.lambdas.add(trace.lam)
            if trace.final_action < entry.best_action:
                entry.best_action = trace.final_action
                entry.example_params = trace.model.params.copy()
        self.runs.append(RunRecord(trace.lam, init_index, trace.seed, key, trace.final_action,
                                   trace.n_terms, trace.actions))

    def add_failure(self, lam, init_index, seed, message):
        self.runs.append(RunRecord(lam, init_index, seed, None, math.inf, -1, None, message))

    def models(self):
        """Best-action representative of every structure, sorted by action."""
        out = []
        for e in sorted(self.entries.values(), key=lambda e: e.best_action):
            out.append(CandidateModel(self.library, e.example_params, e.mask))
        return out

    def merge(self, other):
        for key, e in other.entries.items():
            mine = self.entries.get(key)
            if mine is None:
                self.entries[key] = PoolEntry(e.mask.copy(), e.best_action, e.multiplicity,
                                              e.example_params.copy(), set(e.lambdas))
            else:
                mine.multiplicity += e.multiplicity
                mine.lambdas |= e.lambdas
                if e.best_action < mine.best_action:
                    mine.best_action = e.best_action
                    mine.example_params = e.example_params.copy()
        self.runs.extend(other.runs)
        return self

    def to_dict(self):
        structures = []
        for e in sorted(self.entries.values(), key=lambda e: (e.best_action, e.term_count)):
            structures.append({
                "mask": e.mask.tolist(),
                "best_action": e.best_action,
                "multiplicity": e.multiplicity,
                "term_count": e.term_count,
                "example_params": e.example_params.tolist(),
            })
        return {"runs": len(self.runs), "failures": self.failures, "structures": structures}


def run_seed(base_seed, init_index):
    """Seed of the ``init_index``-th initialisation; shared by every lambda."""
    ss = np.random.SeedSequence([int(base_seed), int(init_index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _sweep_task(args):
    data, library, lam, schedule, init, seed, bounds, allowed_mask, settings, init_index, hidden_box = args
    try:
        trace = anneal_once(data, library, lam, schedule, init, seed, bounds, allowed_mask,
                            settings, hidden_box=hidden_box)
        return init_index, lam, seed, trace, None
    except Exception as exc:  # noqa: BLE001 - individual failures are tallied, not fatal
        return init_index, lam, seed, None, f"{type(exc).__name__}: {exc}"


def dahsi_sweep(data, library, schedule, n_init, base_seed=0, init=INIT_UNIFORM, bounds=None,
                allowed_mask=None, settings=None, workers=1, hidden_box=None):
    """Anneal every (lambda, initialisation) pair and pool the structures."""
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if not schedule.lambdas:
        raise ValueError("the lambda grid is empty")
    bounds = bounds or default_bounds(data)
    tasks = []
    for lam in schedule.lambdas:
        for i in range(n_init):
            tasks.append((data, library, lam, schedule, init, run_seed(base_seed, i), bounds,
                          allowed_mask, settings, i, hidden_box))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    pool = CandidatePool(library)
    # results come back in task order, so merging is deterministic
    for init_index, lam, seed, trace, err in results:
        if err is not None:
            log.warning("run lambda=%s init=%d failed: %s", lam, init_index, err)
            pool.add_failure(lam, init_index, seed, err)
        else:
            pool.add(trace, init_index)
    return pool


def down_select(pool, cutoff):
    """Structures whose best action is below ``cutoff``, sorted by action."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    return [m for m, e in zip(pool.models(), sorted(pool.entries.values(), key=lambda e: e.best_action))
            if e.best_action < cutoff]


def refit_parameters(mask, data, library, schedule, seed=0, init=INIT_UNIFORM, bounds=None,
                     settings=None, hidden_box=None, estimate=None):
    """Parameter estimation on a frozen structure (annealing with lambda = 0)."""
    mask = np.array(mask, dtype=bool)
    if not mask.any():
        raise ValueError("cannot refit an empty structure")
    trace = anneal_once(data, library, 0.0, schedule, init, seed, bounds, mask, settings,
                        estimate=estimate, hidden_box=hidden_box)
    return trace.model, trace


def iterative_refinement(data, library, schedule, rounds, n_init=1, base_seed=0, score=None,
                         bounds=None, allowed_mask=None, settings=None, workers=1):
    """Sweep, keep the best-scoring structure, restrict the allowed terms to it, repeat.

    ``score(models) -> sequence of floats`` ranks candidates (lower is better);
    the default is AIC on the training window.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    from .validation import training_aic

    score = score or (lambda models: training_aic(models, data))
    allowed = np.ones((library.dimension, library.n_terms), bool) if allowed_mask is None \
        else np.array(allowed_mask, bool)
    history = []
    best = None
    for r in range(rounds):
        pool = dahsi_sweep(data, library, schedule, n_init, base_seed + r, bounds=bounds,
                           allowed_mask=allowed, settings=settings, workers=workers)
        models = [m for m in pool.models() if m.n_terms > 0]
        if not models:
            break
        scores = np.asarray(score(models), dtype=float)
        best = models[int(np.argmin(scores))]
        history.append(best)
        if np.array_equal(best.mask, allowed):
            break
        allowed = best.mask.copy()
    return best, history
