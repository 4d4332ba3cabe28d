"""Experiment harness behind the command-line interface.

Every ``cmd_*`` function takes an :class:`~dahsi.config.ExperimentConfig`,
writes its artifacts below ``config.output`` and returns a JSON-ready dict.
Numeric tables are written twice, as ``.json`` and as aligned ``.txt``.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from . import plotting
from .action import ActionProblem
from .anneal import dahsi_sweep, down_select, refit_parameters
from .config import ConfigError
from .dynamics import IntegrationError, lyapunov_time
from .io import pool_from_report, read_json, write_dataset_csv, write_json
from .library import mask_key, model_to_text
from .validation import information_criteria, make_segments, recovery_rate

log = logging.getLogger(__name__)


def _out(cfg, *parts):
    p = cfg.output.joinpath(*parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_table(rows, columns, path_stem):
    """Write ``rows`` (list of dicts) as JSON and as an aligned text table."""
    path_stem = Path(path_stem)
    write_json({"columns": columns, "rows": rows}, path_stem.with_suffix(".json"))
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    path_stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return path_stem


def _fmt(v):
    if isinstance(v, float):
        return "nan" if not np.isfinite(v) else f"{v:.6g}"
    return str(v)


def recovery_by_init(pool, truth):
    """Fraction of initialisations for which some threshold in the window recovers ``truth``."""
    target = mask_key(truth.mask)
    inits = {}
    for r in pool.runs:
        inits.setdefault(r.init_index, False)
        if r.key == target:
            inits[r.init_index] = True
    return sum(inits.values()) / len(inits) if inits else 0.0


def _sweep(cfg, data, library=None, schedule=None, n_init=None, base_seed=None, workers=1):
    library = library or cfg.library(data.n_states)
    return dahsi_sweep(data, library, schedule or cfg.schedule(), n_init or cfg.n_init,
                       cfg.base_seed if base_seed is None else base_seed, init=cfg.raw["init"],
                       bounds=cfg.bounds(data), allowed_mask=cfg.allowed_mask(library),
                       settings=cfg.settings(), workers=workers, hidden_box=cfg.hidden_box())


def _truth(cfg, library):
    pre = cfg.preset()
    if pre is None:
        raise ConfigError("recovery studies need a preset with a known ground truth")
    if pre.model.library != library:
        raise ConfigError("the configured library differs from the preset's ground-truth library")
    return pre.model


# ---------------------------------------------------------------- simulate
def cmd_simulate(cfg, workers=1):
    data = cfg.dataset()
    pre = cfg.preset()
    if pre is None:
        raise ConfigError("simulate needs data.preset")
    names = [pre.model.library.variable_names[k] for k in data.measured_indices]
    path = write_dataset_csv(data, _out(cfg, f"{pre.name}.csv"), names)
    return {"csv": str(path), "n_points": data.n_points, "measured": names,
            "omega": data.omega, "seed": data.seed}


# ---------------------------------------------------------------- discover
def _validation_window(cfg, models, val, estimates):
    vcfg = cfg.raw["validation"]
    if vcfg["window_points"]:
        return make_segments(val, window_points=int(vcfg["window_points"]))
    times = []
    for m, x0 in zip(models, estimates):
        try:
            times.append(lyapunov_time(m, x0, horizon=100.0, dt=val.dt))
        except IntegrationError:
            continue
    finite = [t for t in times if np.isfinite(t) and t > 0]
    tl = min(finite) if finite else 1.0
    n_window = int(round(0.25 * tl / val.dt))
    n_window = max(n_window, int(vcfg["stencil_order"]) + 2)
    seg = make_segments(val, window_points=n_window)
    return type(seg)(seg.windows, seg.starts, seg.dt, seg.measured_indices, seg.n_states, tl)


def cmd_discover(cfg, workers=1):
    train, val = cfg.dataset(with_validation=True)
    library = cfg.library(train.n_states)
    schedule = cfg.schedule()
    t0 = time.perf_counter()
    pool = _sweep(cfg, train, library, schedule, workers=workers)
    sweep_time = time.perf_counter() - t0
    write_json(pool.to_dict(), _out(cfg, "sweep.json"))

    cutoff = float(cfg.raw["validation"]["cutoff"])
    selected = [m for m in down_select(pool, cutoff) if m.n_terms > 0]
    refits, estimates = [], []
    for m in selected:
        try:
            fitted, trace = refit_parameters(m.mask, train, library, schedule.with_lambdas((0.0,)),
                                             seed=cfg.base_seed, bounds=cfg.bounds(train),
                                             settings=cfg.settings(), hidden_box=cfg.hidden_box())
        except RuntimeError as exc:
            log.warning("refit failed for a %d-term structure: %s", m.n_terms, exc)
            continue
        refits.append(fitted)
        estimates.append(trace.estimate.X[-1])
    result = {"n_structures": len(pool.entries),
              "n_selected": len(selected), "n_refit": len(refits)}
    traces = [(r.key, r.actions) for r in pool.runs if r.actions is not None]
    truth_key = None
    pre = cfg.preset()
    if pre is not None and pre.model.library == library:
        truth_key = mask_key(pre.model.mask)
        result["recovery_rate"] = recovery_rate(pool, pre.model)
        result["recovery_by_init"] = recovery_by_init(pool, pre.model)
    plotting.action_traces(traces, _out(cfg, "action_traces.svg"), truth_key)
    plotting.terms_vs_lambda([r.lam for r in pool.runs if r.error is None],
                             [r.n_terms for r in pool.runs if r.error is None],
                             _out(cfg, "terms_vs_lambda.svg"))
    write_json({"models": [{"equations": model_to_text(m), **m.to_dict()} for m in refits]},
               _out(cfg, "candidates.json"))
    if refits:
        seg = _validation_window(cfg, refits, val, estimates)
        vcfg = cfg.raw["validation"]
        report = information_criteria(refits, seg, subsample=vcfg["subsample"],
                                      seed=int(vcfg["subsample_seed"]),
                                      order=int(vcfg["stencil_order"]),
                                      allow_nonlinear=bool(vcfg["allow_nonlinear"]))
        write_json(report.to_dict(), _out(cfg, "validation.json"))
        plotting.pareto([s.n_terms for s in report.scores], [s.E_av for s in report.scores],
                        [s.pareto for s in report.scores], _out(cfg, "pareto.svg"))
        best = report.best("AIC")
        result["best_aic_equations"] = model_to_text(best.model, 4)
        if truth_key is not None:
            result["truth_on_pareto"] = any(mask_key(s.model.mask) == truth_key and s.pareto
                                            for s in report.scores)
    write_json(result, _out(cfg, "discover.json"))
    return {**result, "sweep_time_s": sweep_time}


# ---------------------------------------------------------------- validate
def cmd_validate(cfg, report_path=None, workers=1):
    train, val = cfg.dataset(with_validation=True)
    library = cfg.library(train.n_states)
    path = Path(report_path) if report_path else cfg.output / "sweep.json"
    if not path.exists():
        raise ConfigError(f"sweep report {path} does not exist")
    cutoff = float(cfg.raw["validation"]["cutoff"])
    report = read_json(path)
    models = [m for m, s in zip(pool_from_report(report, library), report["structures"])
              if s["best_action"] is not None and s["best_action"] < cutoff and m.n_terms > 0]
    if not models:
        raise ConfigError("no structures in the report fall below the cutoff")
    x0 = np.zeros(train.n_states)
    x0[list(train.measured_indices)] = val.Y[0]
    seg = _validation_window(cfg, models, val, [x0] * len(models))
    vcfg = cfg.raw["validation"]
    rep = information_criteria(models, seg, subsample=vcfg["subsample"],
                               seed=int(vcfg["subsample_seed"]), order=int(vcfg["stencil_order"]),
                               allow_nonlinear=bool(vcfg["allow_nonlinear"]))
    write_json(rep.to_dict(), _out(cfg, "validation.json"))
    plotting.pareto([s.n_terms for s in rep.scores], [s.E_av for s in rep.scores],
                    [s.pareto for s in rep.scores], _out(cfg, "pareto.svg"))
    return rep.to_dict()


# ---------------------------------------------------------------- robustness
def _rate(cfg, data, schedule=None, workers=1, base_seed=None):
    library = cfg.library(data.n_states)
    truth = _truth(cfg, library)
    pool = _sweep(cfg, data, library, schedule, n_init=int(cfg.raw["studies"]["runs"]),
                  base_seed=base_seed, workers=workers)
    return recovery_rate(pool, truth), pool


def cmd_robust_noise(cfg, workers=1):
    st = cfg.raw["studies"]
    rows, series = [], {}
    for omega in st["omegas"]:
        rates = []
        for s in range(int(st["noise_seeds"])):
            data = cfg.dataset(omega=float(omega), seed=s)
            rate, _ = _rate(cfg, data, workers=workers)
            rates.append(rate)
            rows.append({"omega": float(omega), "seed": s, "recovery": rate})
        series[f"omega={omega}"] = rates
    write_table(rows, ["omega", "seed", "recovery"], _out(cfg, "robust_noise"))
    plotting.cdf(series, _out(cfg, "robust_noise_cdf.svg"))
    return {"rows": rows}


def cmd_robust_manifold(cfg, workers=1):
    st = cfg.raw["studies"]
    rows = []
    for n in st["n_list"]:
        for s in range(int(st["noise_seeds"])):
            data = cfg.dataset(seed=s, n_points=int(n))
            rate, _ = _rate(cfg, data, workers=workers)
            rows.append({"n_points": int(n), "seed": s, "recovery": rate})
    write_table(rows, ["n_points", "seed", "recovery"], _out(cfg, "robust_manifold"))
    ns = sorted({r["n_points"] for r in rows})
    plotting.line(ns, [np.mean([r["recovery"] for r in rows if r["n_points"] == n]) for n in ns],
                  _out(cfg, "robust_manifold.svg"), "N", "mean recovery rate")
    return {"rows": rows}


def cmd_alpha_study(cfg, workers=1):
    alphas = [float(a) for a in cfg.raw["studies"]["alphas"]]
    if any(a <= 1 for a in alphas):
        raise ConfigError("alpha must be greater than 1")
    data = cfg.dataset()
    rows = []
    for a in alphas:
        rate, _ = _rate(cfg, data, cfg.schedule(alpha=a), workers=workers)
        rows.append({"alpha": a, "recovery": rate})
    write_table(rows, ["alpha", "recovery"], _out(cfg, "alpha_study"))
    return {"rows": rows}


# ---------------------------------------------------------------- landscape
def landscape_grid(data, base, coords, center, half_width, n_grid, rf_values, hidden_path):
    """Action on a square grid over two coefficients with everything else held fixed.

    ``coords`` are two ``(equation, term index)`` pairs; states are the
    measurements on measured columns and ``hidden_path`` elsewhere.
    """
    if n_grid ** 2 > 10**6:
        raise ConfigError("landscape grid has more than 10**6 nodes")
    mask = base.mask.copy()
    for k, j in coords:
        mask[k, j] = True
    X = np.array(hidden_path, dtype=float, copy=True)
    X[:, list(data.measured_indices)] = data.Y
    a = center[0] + np.linspace(-half_width, half_width, n_grid)
    b = center[1] + np.linspace(-half_width, half_width, n_grid)
    surfaces = {}
    for rf in rf_values:
        prob = ActionProblem(data, base.library, mask, rf)
        p = base.params.copy()
        Z = np.empty((n_grid, n_grid))
        for ia, va in enumerate(a):
            for ib, vb in enumerate(b):
                p[coords[0]] = va
                p[coords[1]] = vb
                Z[ia, ib] = prob.value(prob.pack(X, p))
        surfaces[float(rf)] = Z
    return a, b, surfaces


def count_local_minima(Z):
    """Interior grid nodes strictly below their eight neighbours."""
    n = 0
    for i in range(1, Z.shape[0] - 1):
        for j in range(1, Z.shape[1] - 1):
            nb = Z[i - 1:i + 2, j - 1:j + 2].copy()
            nb[1, 1] = np.inf
            n += Z[i, j] < nb.min()
    return int(n)


def cmd_landscape(cfg, workers=1):
    ls = cfg.raw["studies"]["landscape"]
    n_grid = int(ls["n_grid"])
    if n_grid ** 2 > 10**6:
        raise ConfigError("landscape grid has more than 10**6 nodes")
    pre, clean = cfg.full_trajectory()
    data = cfg.dataset()
    lib = pre.model.library
    coords = [(int(k), lib.index_of(t) if isinstance(t, str) else int(t)) for k, t in ls["terms"]]
    center = ls["center"] or [float(pre.model.params[c]) for c in coords]
    a, b, surf = landscape_grid(data, pre.model, coords, center, float(ls["half_width"]), n_grid,
                                [float(r) for r in ls["rf"]], clean[:data.n_points])
    out = {"axes": {"a": a.tolist(), "b": b.tolist()}, "coords": [list(c) for c in coords],
           "surfaces": {str(rf): Z.tolist() for rf, Z in surf.items()},
           "local_minima": {str(rf): count_local_minima(Z) for rf, Z in surf.items()}}
    write_json(out, _out(cfg, "landscape.json"))
    names = [f"p[{k},{lib.term_name(j)}]" for k, j in coords]
    for i, (rf, Z) in enumerate(surf.items()):
        plotting.surface(a, b, Z, _out(cfg, f"landscape_{i}.svg"), names[0], names[1], f"R_f = {rf:g}")
    return {"local_minima": out["local_minima"]}


# ---------------------------------------------------------------- timing
def timing_masks(truth, counts):
    """Masks growing from ``truth`` by switching on further terms in a fixed order."""
    D, q = truth.mask.shape
    order = [(k, j) for j in range(q) for k in range(D) if not truth.mask[k, j]]
    out = []
    for c in counts:
        c = int(c)
        if c < 1 or c > D * q:
            raise ConfigError(f"term count {c} outside 1..{D * q}")
        m = np.zeros((D, q), bool)
        base = list(zip(*np.nonzero(truth.mask)))
        for k, j in (base + order)[:c]:
            m[k, j] = True
        out.append(m)
    return out


def cmd_timing(cfg, workers=1):
    tcfg = cfg.raw["studies"]["timing"]
    if not tcfg["term_counts"]:
        raise ConfigError("timing needs at least one term count")
    data = cfg.dataset()
    library = cfg.library(data.n_states)
    truth = _truth(cfg, library)
    rows = []
    for count, mask in zip(tcfg["term_counts"], timing_masks(truth, tcfg["term_counts"])):
        times, per_call = [], []
        for r in range(int(tcfg["repeats"])):
            t0 = time.perf_counter()
            _, trace = refit_parameters(mask, data, library, cfg.schedule().with_lambdas((0.0,)),
                                        seed=cfg.base_seed + r, bounds=cfg.bounds(data),
                                        settings=cfg.settings(), hidden_box=cfg.hidden_box())
            dt = time.perf_counter() - t0
            times.append(dt)
            per_call.append(dt / len(trace.actions))
        rows.append({"terms": int(count), "total_s": float(np.mean(times)),
                     "total_s_std": float(np.std(times)), "per_call_s": float(np.mean(per_call))})
    # wall-clock numbers are the one artifact that differs between reruns
    write_table(rows, ["terms", "total_s", "total_s_std", "per_call_s"], _out(cfg, "timing"))
    return {"rows": rows}


COMMANDS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "robust-noise": cmd_robust_noise,
    "robust-manifold": cmd_robust_manifold,
    "alpha-study": cmd_alpha_study,
    "landscape": cmd_landscape,
    "timing": cmd_timing,
    "validate": cmd_validate,
}

