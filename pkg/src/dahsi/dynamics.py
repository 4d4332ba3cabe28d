"""Trajectory generation: RK4 integration, measurement noise, datasets,
largest-Lyapunov-exponent estimates and delay embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .library import CandidateModel, build_monomial_library, evaluate_rhs


class IntegrationError(RuntimeError):
    """Raised when a trajectory leaves the finite floating-point range."""

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"non-finite state at step {self.index}")


@dataclass(frozen=True)
class Dataset:
    """Uniformly sampled measurements of a subset of the state variables.

    Attributes
    ----------
    t : ndarray, shape (N,)
    Y : ndarray, shape (N, L)
        Column ``l`` observes state ``measured_indices[l]``.
    measured_indices : tuple of int
    n_states : int
        Dimension D of the underlying system.
    omega, seed : noise standard deviation and seed for synthetic data.
    rescale : time rescale factor applied at ingestion.
    """

    t: np.ndarray
    Y: np.ndarray
    measured_indices: tuple
    n_states: int
    omega: float | None = None
    seed: int | None = None
    rescale: float = 1.0
    names: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        idx = tuple(int(i) for i in self.measured_indices)
        if t.ndim != 1 or len(t) != len(Y):
            raise ValueError("time grid and measurements must share their first dimension")
        if len(t) < 5:
            raise ValueError("a dataset needs at least 5 time points")
        if len(idx) != Y.shape[1]:
            raise ValueError("one measured index is required per data column")
        if len(set(idx)) != len(idx):
            raise ValueError("measured indices must be distinct")
        if any(i < 0 or i >= self.n_states for i in idx):
            raise ValueError("measured index outside the state dimension")
        steps = np.diff(t)
        if steps.min() <= 0 or np.max(np.abs(steps - steps.mean())) > 1e-9 * abs(steps.mean()) + 1e-15:
            raise ValueError("time grid is not uniform")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "measured_indices", idx)

    @property
    def dt(self):
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    @property
    def n_points(self):
        return len(self.t)

    @property
    def hidden_indices(self):
        return tuple(k for k in range(self.n_states) if k not in self.measured_indices)

    def window(self, start, stop):
        """Sub-dataset on rows ``start:stop``."""
        return replace(self, t=self.t[start:stop], Y=self.Y[start:stop])

    def truncate(self, n_points):
        return self.window(0, n_points)


def simulate_rk4(model, X0, dt, n_points):
    """Classical fixed-step RK4.

    ``X0`` may be one state (D,) or a batch (B, D); the result has shape
    ``(n_points, D)`` or ``(n_points, B, D)`` with the first row equal to X0.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    X0 = np.asarray(X0, dtype=float)
    out = np.empty((n_points,) + X0.shape)
    out[0] = X0
    x = X0.copy()
    h = float(dt)
    f = model.rhs if isinstance(model, CandidateModel) else model
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_points):
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise IntegrationError(i)
            out[i] = x
    return out


def _column_generator(seed, column):
    # Philox is counter based; the (seed, column) key gives each state
    # variable its own stream independent of which columns are kept
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(column)])))


def add_noise(traj, omega, seed, columns=None):
    """Add i.i.d. N(0, omega**2) noise; ``omega`` is the standard deviation.

    ``columns`` names the state index each column of ``traj`` holds (default
    0..L-1) so the same entries receive the same noise however the
    trajectory was sliced.
    """
    if omega < 0:
        raise ValueError("omega must be non-negative")
    traj = np.array(traj, dtype=float)
    if omega == 0:
        return traj
    squeeze = traj.ndim == 1
    T = traj[:, None] if squeeze else traj
    cols = range(T.shape[1]) if columns is None else columns
    for c, state_index in enumerate(cols):
        T[:, c] += omega * _column_generator(seed, state_index).standard_normal(T.shape[0])
    return T[:, 0] if squeeze else T


def make_dataset(traj, measured_indices, dt, t0=0.0, omega=None, seed=None, rescale=1.0):
    traj = np.asarray(traj, dtype=float)
    idx = tuple(int(i) for i in measured_indices)
    n = traj.shape[0]
    t = t0 + dt * np.arange(n)
    return Dataset(t, traj[:, list(idx)], idx, traj.shape[1], omega=omega, seed=seed, rescale=rescale)


def lyapunov_exponent(model, X0, horizon, dt=0.01, renorm_interval=1.0, d0=1e-8, transient=0.1):
    """Largest Lyapunov exponent from two nearby trajectories.

    The pair is integrated together with RK4; every ``renorm_interval``
    time units the separation is logged and reset to ``d0``. The first
    ``transient`` fraction of the horizon is discarded.
    """
    steps_per = max(1, int(round(renorm_interval / dt)))
    n_blocks = max(1, int(round(horizon / (steps_per * dt))))
    skip = int(math.floor(transient * n_blocks))
    X0 = np.asarray(X0, dtype=float)
    direction = np.ones_like(X0) / math.sqrt(X0.size)
    pair = np.stack([X0, X0 + d0 * direction])
    total = 0.0
    counted = 0
    for b in range(n_blocks):
        path = simulate_rk4(model, pair, dt, steps_per + 1)
        pair = path[-1]
        sep = pair[1] - pair[0]
        d = float(np.linalg.norm(sep))
        if d == 0.0:
            return -math.inf
        if b >= skip:
            total += math.log(d / d0)
            counted += 1
        pair = np.stack([pair[0], pair[0] + sep * (d0 / d)])
    return total / (counted * steps_per * dt)


def lyapunov_time(model, X0, horizon, dt=0.01, **kwargs):
    """Inverse largest Lyapunov exponent; ``inf`` for non-chaotic dynamics."""
    lam = lyapunov_exponent(model, X0, horizon, dt=dt, **kwargs)
    return 1.0 / lam if lam > 0 else math.inf


def delay_embed(series, tau_steps, embed_dim):
    """Rows ``(s[i], s[i + tau], ..., s[i + (m-1) tau])``."""
    s = np.asarray(series, dtype=float)
    if tau_steps < 1 or embed_dim < 1:
        raise ValueError("tau_steps and embed_dim must be positive")
    n = len(s) - (embed_dim - 1) * tau_steps
    if n < 1:
        raise ValueError("series too short for the requested embedding")
    return np.stack([s[k * tau_steps: k * tau_steps + n] for k in range(embed_dim)], axis=1)


@dataclass(frozen=True)
class PresetSystem:
    """A benchmark system with its sampling and its calibrated discovery settings.

    ``lambdas`` is the threshold window that recovers the ground truth at
    low noise; ``param_bound`` and ``hidden_box`` are the coefficient box
    and hidden-state start range used with it (``None`` keeps the defaults).
    """

    name: str
    model: CandidateModel
    x0: np.ndarray
    dt: float
    n_points: int
    measured_indices: tuple
    allowed_mask: np.ndarray | None = None
    lambdas: tuple = ()
    param_bound: float | None = None
    hidden_box: tuple | None = None

    def simulate(self, n_points=None, dt=None):
        return simulate_rk4(self.model, self.x0, dt or self.dt, n_points or self.n_points)

    def dataset(self, omega=0.0, seed=0, n_points=None, measured_indices=None):
        """Simulate, add noise to all states, then keep the measured columns."""
        dt = self.dt
        traj = self.simulate(n_points)
        noisy = add_noise(traj, omega, seed)
        idx = self.measured_indices if measured_indices is None else measured_indices
        return make_dataset(noisy, idx, dt, omega=omega, seed=seed)


def lorenz_model(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    lib = build_monomial_library(3, 2)
    return CandidateModel.from_terms(lib, {
        0: {"x": -sigma, "y": sigma},
        1: {"x": rho, "y": -1.0, "xz": -1.0},
        2: {"z": -beta, "xy": 1.0},
    })


def circuit_model():
    """Lorenz-like circuit form with the 7-term fitted coefficients."""
    lib = build_monomial_library(3, 2)
    return CandidateModel.from_terms(lib, {
        0: {"x": -16.9554, "y": 18.7853},
        1: {"x": 24.3535, "y": 0.2580, "xz": -6.7054},
        2: {"z": -3.6835, "xy": 4.8273},
    })


def semiconductor_library():
    return build_monomial_library(3, 2).subset(["1", "x", "y", "z", "x^2", "xz"])


def semiconductor_allowed_mask():
    lib = semiconductor_library()
    mask = np.ones((3, lib.n_terms), dtype=bool)
    mask[2, lib.index_of("x^2")] = False
    return mask


def semiconductor_model(e_n01=0.5, r_n10=0.25):
    lib = semiconductor_library()
    return CandidateModel.from_terms(lib, {
        0: {"y": e_n01, "xz": -r_n10},
        1: {"y": -e_n01, "xz": r_n10},
        2: {"y": e_n01, "xz": -r_n10},
    })


def lotka_volterra_model(a=1.0, b=0.5, c=1.0, d=0.5):
    lib = build_monomial_library(2, 2, ("x", "y"))
    return CandidateModel.from_terms(lib, {0: {"x": a, "xy": -b}, 1: {"y": -c, "xy": d}})


PRESETS = {
    "lorenz": lambda: PresetSystem(
        "lorenz", lorenz_model(), np.array([-8.0, 7.0, 27.0]), 0.01, 501, (0, 2),
        lambdas=(0.1, 0.2, 0.3), param_bound=28.0, hidden_box=(-10.0, 10.0)),
    "circuit": lambda: PresetSystem(
        "circuit", circuit_model(), np.array([-2.0, -2.5, 3.0]), 0.01, 501, (0, 2),
        lambdas=(2.5, 3.0, 3.5)),
    "semiconductor": lambda: PresetSystem(
        "semiconductor", semiconductor_model(), np.array([2.0, 1.0, 1.5]), 0.01, 101, (0, 1),
        allowed_mask=semiconductor_allowed_mask(), lambdas=(0.19,)),
    "lotka_volterra": lambda: PresetSystem(
        "lotka_volterra", lotka_volterra_model(), np.array([3.0, 1.0]), 0.05, 201, (0, 1),
        lambdas=(0.2,)),
}


def get_preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
