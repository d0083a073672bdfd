"""Report figures rendered to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def figsize(width=5.0, ratio=GOLDEN):
    return (width, width * ratio)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_history(history, path, title="training") -> Path:
    """Train/validation MSE per epoch, best epoch marked."""
    epochs = [h["epoch"] for h in history]
    tr = [h["train_loss"] for h in history]
    va = [h["val_loss"] for h in history]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(epochs, tr, label="train", lw=1.2)
        ax.plot(epochs, va, label="validation", lw=1.2)
        best = int(np.argmin(va))
        ax.axvline(epochs[best], color="0.6", ls=":", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE (normalized units)")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_probe(report, path) -> Path:
    """E[M1|Z] per bin with 4-SE band, plus the Gaussian closed form when present."""
    r = report.reliable
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize())
        z = report.mean_z[r]
        ax.fill_between(z, report.e_m1_given_z[r] - 4 * report.stderr[r],
                        report.e_m1_given_z[r] + 4 * report.stderr[r], color="C0", alpha=0.25, lw=0)
        ax.plot(z, report.e_m1_given_z[r], "o-", ms=3, lw=1, label="E[M1|Z] (Monte Carlo)")
        ax.plot(z, (report.e_y_given_z - report.e_x_given_z)[r], "x", ms=4, color="C3",
                label="E[Y|Z] - E[X|Z]")
        if report.closed_form_m1 is not None:
            ax.plot(z, report.closed_form_m1[r], "k--", lw=1, label="Gaussian closed form")
        ax.axhline(0, color="0.7", lw=0.8)
        ax.set_xlabel("z")
        ax.set_ylabel("conditional mean")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_panels(rows, path, vmax=255.0) -> Path:
    """Grid of grayscale images; ``rows`` is a list of lists of ``(title, array)``."""
    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.6 * n_cols, 1.75 * n_rows), squeeze=False)
        for ax in axes.ravel():
            ax.axis("off")
        for i, row in enumerate(rows):
            for j, (title, arr) in enumerate(row):
                axes[i, j].imshow(np.clip(arr, 0, vmax), cmap="gray", vmin=0, vmax=vmax, interpolation="nearest")
                axes[i, j].set_title(title, fontsize=7)
        fig.tight_layout(pad=0.3)
        return _save(fig, path)


def plot_metric_bars(summary, path) -> Path:
    """Mean +- std PSNR and SSIM per method, in the order given."""
    names = [s["method"] for s in summary]
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=figsize(7.0, 0.35))
        x = np.arange(len(names))
        a1.bar(x, [s["psnr_mean"] for s in summary], yerr=[s["psnr_std"] for s in summary], color="C0", capsize=2)
        a2.bar(x, [s["ssim_mean"] for s in summary], yerr=[s["ssim_std"] for s in summary], color="C1", capsize=2)
        for ax, lab in ((a1, "PSNR (dB)"), (a2, "SSIM")):
            ax.set_xticks(x)
            ax.set_xticklabels(names, rotation=30, ha="right")
            ax.set_ylabel(lab)
        fig.tight_layout()
        return _save(fig, path)
