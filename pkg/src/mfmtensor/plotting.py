"""Matplotlib figures written next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Wedge  # noqa: E402

from .tensor import DIRECTION_NAMES  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def k_histograms(hists, path, true_k=None):
    """One bar chart of the posterior cluster-number frequencies per direction."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.6), sharey=True)
        for l, (ax, hist) in enumerate(zip(axes, hists)):
            ks = sorted(hist)
            colors = ["C1" if true_k and k == true_k[l] else "C0" for k in ks]
            ax.bar(ks, [hist[k] for k in ks], color=colors)
            ax.set_xticks(ks)
            ax.set_title(DIRECTION_NAMES[l + 1])
            ax.set_xlabel("K")
        axes[0].set_ylabel("frequency")
        return _save(fig, path)


def trace(log_post, burn_in, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 2.5))
        ax.plot(np.arange(len(log_post)), log_post, lw=0.6)
        ax.axvline(burn_in, color="grey", ls="--", lw=0.8)
        ax.set_xlabel("recorded sample")
        ax.set_ylabel("log posterior")
        return _save(fig, path)


def effect_profiles(effects, path):
    """Natural-scale main effects of each cluster, one panel per direction."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.6))
        for l, (ax, E) in enumerate(zip(axes, effects)):
            E = np.atleast_2d(E)
            for c, row in enumerate(E):
                ax.plot(np.arange(1, row.size + 1), np.exp(row), marker="o", ms=3,
                        label=f"cluster {c + 1}")
            ax.set_xticks(np.arange(1, E.shape[1] + 1))
            ax.set_title(DIRECTION_NAMES[l + 1])
            ax.set_xlabel("bin")
        axes[0].set_ylabel("gamma")
        axes[-1].legend(frameon=False, fontsize=7)
        return _save(fig, path)


def ri_boxplots(rows_by_method, path):
    """Box plots of per-replicate Rand indices, ``{method: (n_rep, 3) array}``."""
    methods = list(rows_by_method)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3), sharey=True)
        for l, ax in enumerate(axes):
            ax.boxplot([np.asarray(rows_by_method[m])[:, l] for m in methods])
            ax.set_xticks(range(1, len(methods) + 1), methods, rotation=45, ha="right")
            ax.set_title(DIRECTION_NAMES[l + 1])
        axes[0].set_ylabel("Rand index")
        return _save(fig, path)


def membership(mbar, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 3.2))
        im = ax.imshow(mbar, vmin=0, vmax=1, cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_xlabel("unit")
        ax.set_ylabel("unit")
        return _save(fig, path)


def shot_chart(cells, scheme, path, title=None):
    """Half-court chart of an angle x distance matrix on the polar partition.

    The residual outer bin is drawn as a band just beyond the last ring.
    """
    cells = np.asarray(cells, dtype=float)
    n_angle, n_dist = cells.shape
    radii = np.concatenate([[0.0], scheme.ring_radii, [scheme.radius * 1.25]])
    x0, y0 = scheme.basket_origin
    cmap = plt.get_cmap("magma_r")
    vmax = cells.max() if cells.max() > 0 else 1.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        width = 180.0 / n_angle
        for a in range(n_angle):
            for d in range(n_dist):
                ax.add_patch(Wedge((x0, y0), radii[d + 1], a * width, (a + 1) * width,
                                   width=radii[d + 1] - radii[d],
                                   facecolor=cmap(cells[a, d] / vmax), edgecolor="white", lw=0.3))
        xmin, xmax, ymin, ymax = scheme.court_bounds
        ax.plot([xmin, xmax, xmax, xmin, xmin], [ymin, ymin, ymax, ymax, ymin], color="k", lw=0.8)
        ax.set_xlim(min(xmin, x0 - radii[-1]), max(xmax, x0 + radii[-1]))
        ax.set_ylim(ymin, max(ymax, y0 + radii[-1]))
        ax.set_aspect("equal")
        ax.axis("off")
        sm = plt.cm.ScalarMappable(cmap=cmap, norm=plt.Normalize(0, vmax))
        fig.colorbar(sm, ax=ax, shrink=0.7, label="attempts")
        if title:
            ax.set_title(title)
        return _save(fig, path)
