"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``criterion N: PASS|FAIL|WAIVED`` line, which is
also repeated in the terminal summary. The recovery studies (criteria 4 to 7
and 9) default to a reduced number of initialisations so the suite finishes
on one core; ``DAHSI_ACCEPTANCE_SCALE=full`` restores the stated counts.
Thresholds are identical at both scales.
"""

import math
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from scipy.stats import spearmanr

from dahsi.action import ActionProblem, collocation_residuals
from dahsi.anneal import dahsi_sweep, down_select, refit_parameters
from dahsi.config import ExperimentConfig
from dahsi.dynamics import get_preset, make_dataset
from dahsi.library import CandidateModel, build_monomial_library, mask_key
from dahsi.optimize import finite_diff_gradient
from dahsi.validation import (
    estimate_hidden_ic,
    information_criteria,
    make_segments,
    recovery_rate,
    segment_errors,
    validation_lyapunov_time,
)

FULL = os.environ.get("DAHSI_ACCEPTANCE_SCALE", "reduced") == "full"
N_SEEDS = 10
N_INIT = 20 if FULL else 2
TREND_SEEDS = 20 if FULL else 10
ALPHA_INIT = 34 if FULL else 4          # 3 thresholds per initialisation


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def benchmark(**data):
    return ExperimentConfig.from_dict({"data": {"preset": "lorenz", "validation_points": 4000, **data}})


_SWEEPS = {}


def sweep(omega, seed, alpha=1.1, n_init=N_INIT):
    key = (omega, seed, alpha, n_init)
    if key not in _SWEEPS:
        cfg = benchmark(omega=omega, seed=seed)
        data = cfg.dataset()
        library = cfg.library(3)
        _SWEEPS[key] = dahsi_sweep(data, library, cfg.schedule(alpha=alpha), n_init, base_seed=0,
                                   bounds=cfg.bounds(data), settings=cfg.settings(),
                                   hidden_box=cfg.hidden_box())
    return _SWEEPS[key]


def truth():
    return get_preset("lorenz").model


# ------------------------------------------------------------------ 1
def test_criterion_1_gradient():
    rng = np.random.default_rng(2024)
    lib = build_monomial_library(3, 2)
    N = 20
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        Y = rng.normal(size=(N, 3)) * 5
        data = make_dataset(Y, (0, 2), 0.01)
        z = np.concatenate([rng.uniform(-10, 10, N * 3), rng.uniform(-5, 5, 30)])
        for rf in (0.0, 1.0, 1e4):
            prob = ActionProblem(data, lib, np.ones((3, 10), bool), rf)
            _, g = prob.value_and_grad(z)
            fd = finite_diff_gradient(prob.value, z, 1e-6)
            scale = max(np.abs(fd).max(), 1e-300)
            worst = max(worst, float(np.abs(g - fd).max() / scale))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 60
    assert report(1, ok, f"max relative deviation {worst:.2e} over 300 checks in {elapsed:.1f} s")


# ------------------------------------------------------------------ 2
def test_criterion_2_collocation_order():
    from scipy.linalg import expm

    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    A = A - (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(3)
    x0 = rng.normal(size=3)
    lib = build_monomial_library(3, 1)
    names = ["x", "y", "z"]
    model = CandidateModel.from_terms(lib, {k: {names[j]: A[k, j] for j in range(3)} for k in range(3)})
    norms = [float(np.linalg.norm(collocation_residuals(model, np.stack([x0, expm(A * h) @ x0]), h)))
             for h in (0.1, 0.05, 0.025)]
    ratios = [norms[0] / norms[1], norms[1] / norms[2]]
    ok = all(24 <= r <= 40 for r in ratios)
    assert report(2, ok, f"step-halving ratios {ratios[0]:.1f}, {ratios[1]:.1f} (target 32 +- 8)")


# ------------------------------------------------------------------ 3
def test_criterion_3_refit_fidelity():
    cfg = benchmark(omega=0.0)
    data = cfg.dataset()
    m_true = truth()
    model, trace = refit_parameters(m_true.mask, data, m_true.library, cfg.schedule().with_lambdas((0.0,)),
                                    seed=0, bounds=cfg.bounds(data), settings=cfg.settings(),
                                    hidden_box=cfg.hidden_box())
    idx = m_true.mask
    rel = np.abs(model.params[idx] - m_true.params[idx]) / np.abs(m_true.params[idx])
    lib = m_true.library
    p = model.params
    # products left unchanged by rescaling the hidden coordinate
    inv = (p[0, lib.index_of("y")] * p[1, lib.index_of("x")], p[1, lib.index_of("xz")] * p[2, lib.index_of("xy")])
    ok = bool(np.all(rel <= 0.01))
    detail = (f"max coefficient error {rel.max():.1%} (final action {trace.final_action:.2e}); "
              f"hidden-scale invariants {inv[0]:.4g} (280), {inv[1]:.4g} (-1)")
    assert report(3, ok, detail)


# ------------------------------------------------------------------ 4
def test_criterion_4_low_noise_recovery():
    rates = [recovery_rate(sweep(0.01, s), truth()) for s in range(N_SEEDS)]
    good = sum(r > 0.5 for r in rates)
    ok = good >= 6
    assert report(4, ok, f"{good}/10 seeds above 50% recovery (N_I={N_INIT}); rates {[round(r, 2) for r in rates]}")


# ------------------------------------------------------------------ 5
def test_criterion_5_noise_collapse():
    rates = [recovery_rate(sweep(0.1, s), truth()) for s in range(N_SEEDS)]
    low = sum(r < 0.1 for r in rates)
    ok = low >= 5
    assert report(5, ok, f"{low}/10 seeds below 10% recovery at omega=0.1 (N_I={N_INIT})")


# ------------------------------------------------------------------ 6
def test_criterion_6_alpha_trend():
    r11 = recovery_rate(sweep(0.01, 0, 1.1, ALPHA_INIT), truth())
    r13 = recovery_rate(sweep(0.01, 0, 1.3, ALPHA_INIT), truth())
    ok = (r11 - r13) >= 0.5 and r13 <= 0.1
    assert report(6, ok, f"recovery {r11:.0%} at alpha=1.1, {r13:.0%} at alpha=1.3 "
                          f"({3 * ALPHA_INIT} runs each)")


# ------------------------------------------------------------------ 7
def test_criterion_7_information_criterion_selection():
    cfg = benchmark(omega=0.01, seed=0)
    train, val = cfg.dataset(with_validation=True)
    pool = sweep(0.01, 0)
    library = cfg.library(3)
    target = mask_key(truth().mask)
    refits, starts = [], []
    for m in down_select(pool, 1e-3):
        if m.n_terms == 0:
            continue
        fitted, trace = refit_parameters(m.mask, train, library, cfg.schedule().with_lambdas((0.0,)), seed=0,
                                     bounds=cfg.bounds(train), settings=cfg.settings(),
                                     hidden_box=cfg.hidden_box())
        refits.append(fitted)
        starts.append(trace.estimate.X[-1])
    in_pool = any(mask_key(m.mask) == target for m in refits)
    wins = 0
    S = 0
    if refits:
        # shortest Lyapunov time over the candidates, each from its own final state
        tl = min(validation_lyapunov_time([m], x0, horizon=100.0, dt=val.dt) for m, x0 in zip(refits, starts))
        seg = make_segments(val, lyapunov_time=tl if math.isfinite(tl) else 1.0)
        errors = np.array([segment_errors(m, seg) for m in refits])
        S = min(100, seg.S)
        for rep in range(10):
            r = information_criteria(refits, seg, subsample=S, seed=rep, errors=errors)
            best = [s for s in r.scores if s.dAIC == 0.0]
            wins += any(mask_key(s.model.mask) == target for s in best)
    ok = in_pool and S >= 100 and wins >= 9
    assert report(7, ok, f"{len(refits)} down-selected candidates, ground truth among them: {in_pool}; "
                          f"truth at dAIC=0 in {wins}/10 subsamples of S={S}")


# ------------------------------------------------------------------ 8
def test_criterion_8_hidden_ic_order():
    from scipy.integrate import solve_ivp

    def f(t, u):
        x, y, z = u
        return [10 * (y - x), x * (28 - z) - y, x * y - 8 / 3 * z]

    sol = solve_ivp(f, (0, 2.0), [-8.0, 7.0, 27.0], method="DOP853", rtol=1e-13, atol=1e-13,
                    dense_output=True).sol
    errs = []
    for h in (0.02, 0.01, 0.005):
        window = np.array([sol(1.0 + k * h)[[0, 2]] for k in range(-2, 3)])
        y_est = estimate_hidden_ic(truth(), window, h, (0, 2), 1)[1]
        errs.append(abs(y_est - sol(1.0)[1]))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(r >= 16 for r in ratios)
    assert report(8, ok, f"error ratios {ratios[0]:.2f}, {ratios[1]:.2f} per halving (>= 16)")


# ------------------------------------------------------------------ 9
def test_criterion_9_sparsity_trend():
    lams, counts = [], []
    for s in range(TREND_SEEDS):
        pool = sweep(0.01, s)
        for lam in sorted({r.lam for r in pool.runs}):
            n = [r.n_terms for r in pool.runs if r.lam == lam and r.error is None]
            if n:
                lams.append(lam)
                counts.append(float(np.mean(n)))
    rho, p = spearmanr(lams, counts)
    ok = bool(rho < 0 and p < 0.05)
    assert report(9, ok, f"Spearman rho={rho:.3f}, p={p:.2g} over {TREND_SEEDS} seeds")


# ------------------------------------------------------------------ 10
def test_criterion_10_circuit_waived():
    line = "criterion 10: WAIVED - the experimental circuit recording is not available"
    print(line)
    ACCEPTANCE_LINES.append(line)
    pytest.skip("circuit recording unavailable; criterion waived")
