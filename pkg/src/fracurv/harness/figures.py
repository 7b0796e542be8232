"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..rasterlab import BinaryMask  # noqa: E402

_K_LABELS = {0: r"$c_0$", 1: r"$c_1$", 2: r"$c_2$"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_mean_curve(curve, D: float, path, averages: dict | None = None):
    """Rescaled mean curves ``eps**(D-k) * mean_k`` with 1-sigma bands."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for k, ax in enumerate(axes):
        g, se = curve.rescaled(k, D)
        ax.fill_between(curve.eps, g - se, g + se, color="C0", alpha=0.25, lw=0)
        ax.plot(curve.eps, g, "o-", ms=3, color="C0")
        if averages and k in averages:
            ax.axhline(averages[k], color="C3", ls="--", lw=1, label="log average")
            ax.legend(fontsize=8)
        ax.set_xscale("log", base=2)
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_title(rf"$\varepsilon^{{D-{k}}}\,$mean {_K_LABELS[k]}")
    fig.suptitle(f"n_mc = {curve.n_mc}, D = {D:.6f}", fontsize=9)
    _save(fig, path)


def plot_rk(rk, D: float, path):
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for k, ax in enumerate(axes):
        w = rk.r ** (D - k)
        g, se = w * rk.rk(k), w * rk.stderr(k)
        ax.fill_between(rk.r, g - se, g + se, color="C2", alpha=0.25, lw=0)
        ax.plot(rk.r, g, ".-", color="C2")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("r")
        ax.set_title(rf"$r^{{D-{k}}} R_{k}(r)$")
    _save(fig, path)


def plot_stop_mass(radii, mean, stderr, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(radii, mean, yerr=3 * np.asarray(stderr), fmt="o", capsize=3, label=r"mean $\pm 3\sigma$")
    ax.axhline(1.0, color="C3", lw=1)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("r")
    ax.set_ylabel(r"$\sum r_\sigma^D$ over the stop")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_lattice(sums, path):
    """Partial sums of the lattice series and the direct sequence, one panel per ``s``."""
    fig, axes = plt.subplots(1, len(sums), figsize=(5 * len(sums), 3.6), squeeze=False)
    for ax, item in zip(axes[0], sums):
        ax.errorbar(item.n, item.partial, yerr=item.partial_stderr, fmt="o-", ms=3, label="partial sum")
        if len(item.n_values):
            ax.errorbar(item.n_values, item.direct, yerr=item.direct_stderr, fmt="s", ms=4, label="direct")
        ax.set_xlabel("m, n")
        ax.set_title(f"s = {item.s:.4g}")
        ax.legend(fontsize=8)
    _save(fig, path)


def plot_cover(mask: BinaryMask, path, title: str = ""):
    fig, ax = plt.subplots(figsize=(5, 5))
    x0, y0 = mask.origin
    extent = (x0, x0 + mask.width * mask.h, y0, y0 + mask.height * mask.h)
    ax.imshow(mask.bits, origin="lower", extent=extent, cmap="Greys", interpolation="nearest")
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    _save(fig, path)
