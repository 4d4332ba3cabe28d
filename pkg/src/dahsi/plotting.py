"""Standalone SVG figures for the experiment harness."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# keep SVG output byte-stable across runs
matplotlib.rcParams["svg.hashsalt"] = "dahsi"
matplotlib.rcParams["svg.fonttype"] = "none"
_META = {"Date": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def action_traces(traces, path, highlight=None):
    """Action against beta for every run; runs matching ``highlight`` (a mask key) in colour."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, actions in traces:
        hit = highlight is not None and key == highlight
        ax.semilogy(np.arange(len(actions)), np.maximum(actions, 1e-300),
                    color="tab:blue" if hit else "0.6", lw=1.2 if hit else 0.6, zorder=3 if hit else 1)
    ax.set_xlabel("beta")
    ax.set_ylabel("action")
    return _save(fig, path)


def terms_vs_lambda(lams, counts, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(lams, counts, s=10, alpha=0.6)
    ax.set_xlabel("lambda")
    ax.set_ylabel("active terms")
    return _save(fig, path)


def pareto(n_terms, errors, on_front, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    n_terms = np.asarray(n_terms)
    errors = np.asarray(errors, dtype=float)
    on_front = np.asarray(on_front, dtype=bool)
    ok = np.isfinite(errors)
    ax.scatter(n_terms[ok & ~on_front], errors[ok & ~on_front], color="0.6", s=14)
    ax.scatter(n_terms[ok & on_front], errors[ok & on_front], color="tab:red", s=18)
    if np.any(ok & (errors > 0)):
        ax.set_yscale("log")
    ax.set_xlabel("active terms")
    ax.set_ylabel("E_av")
    return _save(fig, path)


def cdf(series, path, xlabel="recovery rate"):
    """Empirical CDFs; ``series`` maps a label to a list of values."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, vals in series.items():
        v = np.sort(np.asarray(vals, dtype=float))
        ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post", label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel("CDF")
    ax.legend(frameon=False)
    return _save(fig, path)


def line(x, y, path, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return _save(fig, path)


def surface(a, b, Z, path, xlabel, ylabel, title=""):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    cs = ax.contourf(a, b, np.log10(np.maximum(Z.T, 1e-300)), levels=30)
    fig.colorbar(cs, ax=ax, label="log10 action")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _save(fig, path)
