"""Experiment configuration loaded from YAML.

Example::

    data:
      preset: lorenz        # or  csv: path/to/file.csv
      n_points: 501
      omega: 0.01
      seed: 1
    library: {degree: 2}
    schedule: {rf0: 1.0, alpha: 1.1, beta_max: 30, lambdas: [0.5, 0.6]}
    n_init: 20
    base_seed: 0
    bounds: {param: 30.0, margin: 2.0}
    validation: {cutoff: 1.0e-3, stencil_order: 4}
    output: runs/lorenz
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .anneal import AnnealSchedule, Bounds, default_bounds, doubling_lambda_grid, linear_lambda_grid
from .dynamics import PRESETS, get_preset
from .io import read_dataset_csv
from .library import build_monomial_library
from .optimize import SOLVERS, MinimizeSettings

MAX_LANDSCAPE_NODES = 10**6


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _defaults():
    return {
        "data": {"preset": None, "csv": None, "n_points": None, "omega": 0.0, "seed": 0,
                 "measured": None, "n_states": None, "validation_points": 2000},
        "library": {"degree": 2, "terms": None},
        "schedule": {"rf0": 1e-2, "alpha": 1.1, "beta_max": 30, "lambdas": None, "readmit": False},
        "n_init": 10,
        "base_seed": 0,
        "init": "uniform",
        "bounds": {"param": 100.0, "margin": 2.0, "hidden_box": None},
        "solver": {"name": "lm", "max_iter": 100, "f_tol": 1e-7, "g_tol": 1e-8},
        "validation": {"cutoff": 1e-3, "stencil_order": 4, "subsample": None, "subsample_seed": 0,
                       "window_points": None, "allow_nonlinear": False},
        "studies": {"omegas": [0.01, 0.05, 0.1], "noise_seeds": 10, "n_list": [501],
                    "alphas": [1.1, 1.2, 1.25, 1.3], "runs": 20,
                    "landscape": {"terms": [[0, "x"], [1, "x"]], "center": None, "half_width": 5.0,
                                  "n_grid": 41, "rf": [0.0, 1.0, 100.0]},
                    "timing": {"term_counts": [7, 10, 13, 16, 19, 30], "repeats": 3}},
        "output": "dahsi_out",
    }


def _merge(base, override, path=""):
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown configuration key '{path}{k}'")
        if isinstance(base[k], dict) and isinstance(v, dict) and base[k] and k != "lambdas":
            _merge(base[k], v, f"{path}{k}.")
        else:
            base[k] = v
    return base


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=_defaults)
    source: Path | None = None

    @classmethod
    def from_dict(cls, d, source=None):
        raw = _defaults()
        preset = (d.get("data") or {}).get("preset")
        if preset in PRESETS:
            pre = PRESETS[preset]()
            if pre.param_bound is not None:
                raw["bounds"]["param"] = pre.param_bound
            if pre.hidden_box is not None:
                raw["bounds"]["hidden_box"] = list(pre.hidden_box)
        cfg = cls(_merge(raw, copy.deepcopy(d or {})), source)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            d = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("top level of the config must be a mapping")
        return cls.from_dict(d, path)

    def override(self, **kw):
        """Apply CLI overrides (``seed``, ``workers``, ``out``)."""
        if kw.get("seed") is not None:
            self.raw["base_seed"] = int(kw["seed"])
        if kw.get("out") is not None:
            self.raw["output"] = str(kw["out"])
        self.workers = int(kw.get("workers") or 1)
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return self

    # validation -------------------------------------------------------
    def check(self):
        d = self.raw["data"]
        if (d["preset"] is None) == (d["csv"] is None):
            raise ConfigError("exactly one data source (data.preset or data.csv) is required")
        if d["preset"] is not None and d["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {d['preset']!r}; choose from {sorted(PRESETS)}")
        if d["csv"] is not None:
            p = Path(d["csv"])
            if self.source is not None and not p.is_absolute():
                p = self.source.parent / p
            d["csv"] = str(p)
        s = self.raw["schedule"]
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        if s["lambdas"] is not None and len(self.lambdas()) == 0:
            raise ConfigError("the lambda grid is empty")
        if int(self.raw["n_init"]) < 1:
            raise ConfigError("n_init must be >= 1")
        if self.raw["init"] not in ("uniform", "gradient"):
            raise ConfigError("init must be 'uniform' or 'gradient'")
        if self.raw["solver"]["name"] not in SOLVERS:
            raise ConfigError(f"solver.name must be one of {SOLVERS}")
        if self.raw["validation"]["stencil_order"] not in (4, 8):
            raise ConfigError("validation.stencil_order must be 4 or 8")
        if not float(self.raw["validation"]["cutoff"]) > 0:
            raise ConfigError("validation.cutoff must be positive")
        b = self.raw["bounds"]
        if not float(b["param"]) > 0:
            raise ConfigError("bounds.param must be positive")
        if b["hidden_box"] is not None and (len(b["hidden_box"]) != 2 or b["hidden_box"][0] >= b["hidden_box"][1]):
            raise ConfigError("bounds.hidden_box must be [low, high] with low < high")
        n = d["n_points"]
        if n is not None and int(n) < 5:
            raise ConfigError("data.n_points must be at least 5")
        for a in self.raw["studies"]["alphas"]:
            if not float(a) > 1:
                raise ConfigError(f"alpha must be greater than 1, got {a}")
        for nn in self.raw["studies"]["n_list"]:
            if int(nn) < 9:
                raise ConfigError(f"n_list entry {nn} is below the finite-difference stencil minimum")
        ls = self.raw["studies"]["landscape"]
        if int(ls["n_grid"]) ** 2 > MAX_LANDSCAPE_NODES:
            raise ConfigError(f"landscape grid has more than {MAX_LANDSCAPE_NODES} nodes")
        if not self.raw["studies"]["timing"]["term_counts"]:
            raise ConfigError("studies.timing.term_counts is empty")

    # builders ---------------------------------------------------------
    @property
    def output(self):
        return Path(self.raw["output"])

    @property
    def base_seed(self):
        return int(self.raw["base_seed"])

    @property
    def n_init(self):
        return int(self.raw["n_init"])

    def preset(self):
        name = self.raw["data"]["preset"]
        return get_preset(name) if name else None

    def lambdas(self):
        lam = self.raw["schedule"]["lambdas"]
        if lam is None:
            pre = self.preset()
            return tuple(pre.lambdas) if pre else ()
        if isinstance(lam, dict):
            if "doubling" in lam:
                return doubling_lambda_grid(float(lam["doubling"]), float(lam["max"]))
            return linear_lambda_grid(float(lam["start"]), float(lam["stop"]), float(lam["step"]))
        return tuple(float(v) for v in lam)

    def schedule(self, alpha=None):
        s = self.raw["schedule"]
        return AnnealSchedule(float(s["rf0"]), float(alpha if alpha is not None else s["alpha"]),
                              int(s["beta_max"]), self.lambdas(), bool(s["readmit"]))

    def settings(self):
        s = self.raw["solver"]
        return MinimizeSettings(max_iter=int(s["max_iter"]), f_tol=float(s["f_tol"]),
                                g_tol=float(s["g_tol"]), solver=s["name"])

    def library(self, n_states):
        lib = build_monomial_library(n_states, int(self.raw["library"]["degree"]))
        terms = self.raw["library"]["terms"]
        if terms:
            try:
                lib = lib.subset(terms)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"library.terms: {exc}") from None
        return lib

    def allowed_mask(self, library):
        pre = self.preset()
        if pre is not None and pre.allowed_mask is not None and pre.allowed_mask.shape == (
                library.dimension, library.n_terms):
            return pre.allowed_mask
        return None

    def bounds(self, data):
        b = self.raw["bounds"]
        db = default_bounds(data, float(b["margin"]), float(b["param"]))
        return Bounds(db.state_lower, db.state_upper, db.param_lower, db.param_upper)

    def hidden_box(self):
        hb = self.raw["bounds"]["hidden_box"]
        return None if hb is None else (float(hb[0]), float(hb[1]))

    def full_trajectory(self, n_points=None, extra=0):
        """Noise-free preset trajectory covering training plus ``extra`` validation rows."""
        pre = self.preset()
        if pre is None:
            raise ConfigError("a preset data source is required for synthetic studies")
        n = int(n_points or self.raw["data"]["n_points"] or pre.n_points)
        return pre, pre.simulate(n + extra)

    def dataset(self, omega=None, seed=None, n_points=None, with_validation=False):
        """Training data, and optionally the following validation rows."""
        d = self.raw["data"]
        if d["csv"] is not None:
            path = Path(d["csv"])
            if not path.exists():
                raise ConfigError(f"data file {path} does not exist")
            full = read_dataset_csv(path, n_states=d["n_states"], measured_indices=d["measured"])
            n = int(n_points or d["n_points"] or full.n_points)
            if n > full.n_points:
                raise ConfigError(f"data.n_points={n} exceeds the {full.n_points} rows available")
            train = full.truncate(n)
            return (train, full.window(n, full.n_points)) if with_validation else train
        pre = self.preset()
        n = int(n_points or d["n_points"] or pre.n_points)
        omega = float(d["omega"] if omega is None else omega)
        seed = int(d["seed"] if seed is None else seed)
        idx = tuple(d["measured"]) if d["measured"] is not None else pre.measured_indices
        extra = int(d["validation_points"]) if with_validation else 0
        from .dynamics import add_noise, make_dataset

        traj = add_noise(pre.simulate(n + extra), omega, seed)
        full = make_dataset(traj, idx, pre.dt, omega=omega, seed=seed)
        train = full.truncate(n)
        if with_validation:
            return train, full.window(n, n + extra)
        return train

    def to_dict(self):
        return copy.deepcopy(self.raw)


def load_config(path=None, preset=None):
    if path is not None:
        return ExperimentConfig.load(path)
    return ExperimentConfig.from_dict({"data": {"preset": preset or "lorenz"}})


def grid_nodes(n_grid):
    return int(n_grid) ** 2


def as_array(x):
    return np.asarray(x, dtype=float)
