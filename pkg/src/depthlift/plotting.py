"""Figure rendering for the CLI report paths (PNG files next to the CSV/JSON outputs)."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .skeleton import JOINT_SHORT  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
# fixed metadata so repeated runs write identical bytes
PNG_META = {"Software": None}


def _figure(width=6.0, height=None):
    height = height or width * (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_loss_history(history, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        ax.plot(np.arange(1, len(history) + 1), history, color="k", lw=1.2)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss (standardized units)")
        return _save(fig, path)


def plot_per_joint(reports, path):
    """Grouped bars of per-joint MPJPE, one group member per report."""
    with plt.rc_context(RC):
        fig, ax = _figure(7.0)
        x = np.arange(len(JOINT_SHORT))
        width = 0.8 / max(len(reports), 1)
        for i, r in enumerate(reports):
            label = f"{r.protocol} {'aligned' if r.aligned else 'raw'} (avg {r.avg_mpjpe:.1f} mm)"
            ax.bar(x + i * width - 0.4 + width / 2, r.per_joint, width, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels(JOINT_SHORT)
        ax.set_ylabel("MPJPE (mm)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_correlation_histogram(rhos, path, threshold=0.3):
    with plt.rc_context(RC):
        fig, ax = _figure()
        rhos = np.asarray(rhos, dtype=float)
        rhos = rhos[np.isfinite(rhos)]
        ax.hist(rhos, bins=np.linspace(-1, 1, 41), color="0.5", edgecolor="k", lw=0.5)
        ax.axvline(threshold, color="C3", ls="--", lw=1, label=f"moderate ({threshold:g})")
        ax.axvline(0, color="k", lw=0.5)
        ax.set_xlabel("Spearman correlation of depth vs camera z, per (camera, action, joint)")
        ax.set_ylabel("cells")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_trend(rho, err, fit, path, baseline=None):
    """Error against measured correlation with its least-squares line."""
    with plt.rc_context(RC):
        fig, ax = _figure()
        rho = np.asarray(rho, dtype=float)
        ax.plot(rho, err, "o", color="k", ms=5, label="depth-input runs")
        xs = np.linspace(min(rho.min(), 0.0), max(rho.max(), 1.0), 50)
        ax.plot(xs, fit.slope * xs + fit.intercept, color="C3", lw=1.2,
                label=f"fit: slope {fit.slope:.1f} mm, r = {fit.r:.2f}")
        if baseline is not None:
            ax.axhline(baseline, color="C0", ls=":", lw=1.2, label=f"2D-only ({baseline:.1f} mm)")
        ax.set_xlabel("measured depth/z correlation")
        ax.set_ylabel("test MPJPE (mm)")
        ax.legend(frameon=False)
        return _save(fig, path)
