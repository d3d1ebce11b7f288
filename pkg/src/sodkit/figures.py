"""Matplotlib renderings of the delimited reports.

Every CLI command that writes a CSV or JSON report also renders the
matching figure next to it; these helpers hold the plotting so the
command handlers stay thin. The Agg backend keeps everything headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def pr_curve_figure(report, path) -> str:
    """Precision-recall sweep from a MetricsReport."""
    rec = [r for _, _, r in report.pr_curve]
    pre = [p for _, p, _ in report.pr_curve]
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    ax.plot(rec, pre, lw=1.8)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(f"max F$_\\beta$ {report.f_beta_max:.3f}, "
                 f"MAE {report.mae:.3f}, S$_\\alpha$ {report.s_alpha:.3f}",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def training_curves_figure(log_rows, path) -> str:
    """Loss per step plus both learning-rate ramps, from the train log
    rows (epoch, step, lr_backbone, lr_rest, loss)."""
    steps = [r[1] for r in log_rows]
    loss = [r[4] for r in log_rows]
    lr_b = [r[2] for r in log_rows]
    lr_r = [r[3] for r in log_rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.2, 5.4), sharex=True)
    ax1.plot(steps, loss, lw=1.0)
    ax1.set_ylabel("loss")
    ax1.grid(alpha=0.3)
    ax2.plot(steps, lr_r, lw=1.4, label="rest")
    ax2.plot(steps, lr_b, lw=1.4, label="backbone")
    ax2.set_ylabel("learning rate")
    ax2.set_xlabel("step")
    ax2.legend(loc="upper right", fontsize=9)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def ablation_figure(rows, path) -> str:
    """Bar chart over ablation rows: [(label, f_beta, mae, s_alpha)]."""
    labels = [r[0] for r in rows]
    fb = [r[1] for r in rows]
    sa = [r[3] for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(rows)), 4.2))
    ax.bar(x - 0.18, fb, width=0.36, label="max F$_\\beta$")
    ax.bar(x + 0.18, sa, width=0.36, label="S$_\\alpha$")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def interp_figure(panels, path) -> str:
    """Grayscale panel grid: [(title, 2-d array)]."""
    n = len(panels)
    cols = 3 if n > 4 else 2
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.0 * cols, 3.0 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[n:]:
        ax.axis("off")
    for ax, (title, img) in zip(axes, panels):
        ax.imshow(img, cmap="gray", vmin=0.0, vmax=max(1e-12, float(img.max())))
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)
