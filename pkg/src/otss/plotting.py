"""PNG figures rendered next to the CSV outputs (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}
# pinned so re-rendering the same data gives the same bytes
META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=META)
    plt.close(fig)


def plot_panel(agg, path, title=""):
    """Bar chart of mean regret with +-1 sd error bars per method."""
    rows = [r for r in agg if r.get("n_seeds")]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.0))
        x = np.arange(len(rows))
        ax.bar(x, [r["regret_mean"] for r in rows], yerr=[r["regret_sd"] for r in rows],
               color="0.6", edgecolor="0.2", capsize=3)
        best = int(np.argmin([r["regret_mean"] for r in rows])) if rows else None
        if best is not None:
            ax.patches[best].set_facecolor("tab:blue")
        ax.set_xticks(x, [r["method"] for r in rows], rotation=30, ha="right")
        ax.set_ylabel("mean regret")
        ax.set_title(title)
        _save(fig, path)


def plot_sweep(rows, axis, path):
    """Seed-mean regret against the swept value, one line per method."""
    ok = [r for r in rows if r.get("status") == "ok"]
    methods = list(dict.fromkeys(r["method"] for r in ok))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for m in methods:
            vals = sorted({r["value"] for r in ok if r["method"] == m})
            means = [np.mean([r["mean_regret"] for r in ok if r["method"] == m and r["value"] == v]) for v in vals]
            ax.plot(vals, means, marker="o", ms=3, label=m)
        if axis == "n_train":
            ax.set_xscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("mean regret")
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_rates(n_grid, hard_mse, soft_mse, path):
    """Log-log weight MSE of the balanced hard and oracle-gate soft estimators."""
    n = np.asarray(n_grid, dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.2))
        for mse, lab, ref in ((hard_mse, "balanced hard", -2 / 3), (soft_mse, "oracle-gate soft", -1.0)):
            line, = ax.loglog(n, mse, marker="o", ms=3, label=lab)
            ax.loglog(n, mse[0] * (n / n[0]) ** ref, ls=":", color=line.get_color(), lw=0.8)
        ax.set_xlabel("n")
        ax.set_ylabel("weight MSE")
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_runtime(rows, path):
    benches = list(dict.fromkeys(r["benchmark"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    width = 0.8 / max(1, len(methods))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        x = np.arange(len(benches))
        for i, m in enumerate(methods):
            secs = [next((r["seconds_mean"] for r in rows if r["benchmark"] == b and r["method"] == m), np.nan) for b in benches]
            ax.bar(x + i * width, secs, width, label=m)
        ax.set_yscale("log")
        ax.set_xticks(x + width * (len(methods) - 1) / 2, benches)
        ax.set_ylabel("seconds per fit")
        ax.legend(fontsize=7)
        _save(fig, path)
