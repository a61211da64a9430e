"""Figures written next to the text reports (PNG, non-interactive backend)."""
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

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


def new(width=6.0, nrows=1, ncols=1, height=None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    with plt.rc_context(RC):
        fig, ax = plt.subplots(nrows, ncols, figsize=(width, height or width * golden),
                               squeeze=False)
    return fig, ax


def save(fig, path, dpi=120):
    with plt.rc_context(RC):
        fig.tight_layout()
        fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def _smooth(y, k=10):
    if len(y) < k:
        return y
    return np.convolve(y, np.ones(k) / k, mode="valid")


def plot_training(stats, path):
    """Branch losses and pseudo-label coverage against iteration."""
    fig, ax = new(7.0, 1, 2, height=2.8)
    if stats.iterations:
        it = stats.column("iteration")
        for key, label in (("loss_s_to_t", "s→t"), ("loss_t_to_s", "t→s"),
                           ("loss_tot", "total")):
            y = _smooth(stats.column(key))
            ax[0, 0].plot(it[len(it) - len(y):], y, label=label, lw=1)
        ax[0, 1].plot(it, stats.column("coverage"), lw=1, color="C3")
        ax[0, 0].legend(frameon=False)
    ax[0, 0].set(xlabel="iteration", ylabel="Dice loss")
    ax[0, 1].set(xlabel="iteration", ylabel="pseudo-label coverage", ylim=(0, 1.02))
    return save(fig, path)


def plot_iou(report, path, classes=None):
    names = [classes.name_of(c) if classes else str(c) for c in report.per_class]
    fig, ax = new(max(3.0, 0.6 * len(names) + 1.5), height=2.8)
    a = ax[0, 0]
    a.bar(names, list(report.per_class.values()), color="C0")
    a.axhline(report.miou, color="k", lw=0.8, ls="--", label=f"mIoU {report.miou:.3f}")
    a.set(ylabel="IoU", ylim=(0, 1))
    a.legend(frameon=False)
    return save(fig, path)


def plot_sweep(param, values, mious, path, coverage=None):
    fig, ax = new(4.5)
    a = ax[0, 0]
    a.plot(values, mious, "o-", label="target mIoU")
    if coverage is not None:
        a.plot(values, coverage, "s--", label="pseudo-label coverage")
    a.set(xlabel=param, ylim=(0, 1.02))
    a.legend(frameon=False)
    return save(fig, path)
