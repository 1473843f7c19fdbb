"""Figures written next to the CSV reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss(rows, path, title="training loss"):
    """Loss per epoch, learning rate on a twin axis when present."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        epochs = [r["epoch"] for r in rows]
        ax.plot(epochs, [r["loss"] for r in rows], color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        if rows and "lr" in rows[0]:
            ax2 = ax.twinx()
            ax2.plot(epochs, [r["lr"] for r in rows], color="C1", lw=0.8, ls="--")
            ax2.set_ylabel("learning rate", color="C1")
        return _save(fig, path)


def plot_eval(report, path):
    rows = report.rows()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.6 * len(rows) + 1.5), 3))
        x = np.arange(len(rows))
        ax.bar(x, [r["mean_auc"] for r in rows], yerr=[r["std_auc"] for r in rows], color="C0", capsize=3)
        ax.axhline(0.5, color="grey", lw=0.8, ls=":")
        ax.set_xticks(x, [r["category"] for r in rows], rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("AUC")
        ax.set_title(f"mean AUC {report.mean_auc:.3f} ± {report.trial_std:.3f}")
        return _save(fig, path)


def plot_sweep(rows, path):
    """Mean AUC and mean std against support size, one line per (n_g, o)."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
        groups = sorted({(r["n_g"], r["o"]) for r in rows})
        for k, (g, o) in enumerate(groups):
            pts = sorted((r for r in rows if r["n_g"] == g and r["o"] == o), key=lambda r: r["n_s"])
            ns = [r["n_s"] for r in pts]
            label = f"N_g={g}" + (f", O={o}" if len({gg[1] for gg in groups}) > 1 else "")
            a1.plot(ns, [r["mean_auc"] for r in pts], marker="o", color=f"C{k}", label=label)
            a2.plot(ns, [r["mean_std"] for r in pts], marker="o", color=f"C{k}", label=label)
        a1.set_xlabel("support size N_s")
        a1.set_ylabel("mean AUC")
        a2.set_xlabel("support size N_s")
        a2.set_ylabel("mean std")
        a1.legend()
        return _save(fig, path)
