"""Matplotlib figures for the run and sweep reports.

Figures are built with the object-oriented Agg API, never through pyplot,
so no GUI backend or global figure registry is involved.
"""

from __future__ import annotations

import functools
from collections import defaultdict

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
}
FIGSIZE = (7.0, 3.0)


def _styled(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(RC):
            return func(*args, **kwargs)

    return wrapper


def _figure(ncols=1):
    fig = Figure(figsize=FIGSIZE if ncols > 1 else (3.6, 3.0), layout="constrained")
    FigureCanvasAgg(fig)
    return fig, fig.subplots(1, ncols)


def _save(fig, path):
    # drop the matplotlib version stamp so reruns are byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})


@_styled
def plot_rates(rows, path, title=""):
    """Left: ``lambda_k - lambda1`` on a log scale. Right: observed step ratio
    against ``q(lambda_k)`` and the two asymptotic rates."""
    fig, (ax_gap, ax_rate) = _figure(2)
    k = np.array([r[0] for r in rows], dtype=float)
    gap = np.array([r[1] for r in rows], dtype=float)
    ratio = np.array([np.nan if r[2] is None else r[2] for r in rows], dtype=float)
    qk = np.array([r[3] for r in rows], dtype=float)
    positive = gap > 0
    if positive.any():
        ax_gap.semilogy(k[positive], gap[positive], "o-", ms=3, label=r"$\lambda_k-\lambda_1$")
    ax_gap.set_xlabel("step k")
    ax_gap.set_ylabel(r"$\lambda_k-\lambda_1$")
    ax_gap.grid(True, which="both", alpha=0.3)

    ax_rate.plot(k, ratio, "o", ms=3, label="observed ratio")
    ax_rate.plot(k, qk, "-", label=r"$q(\lambda_k)$")
    if rows:
        ax_rate.axhline(rows[0][4], ls="--", color="k", lw=0.8, label=r"$q(\lambda_1)$")
        ax_rate.axhline(rows[0][5], ls=":", color="k", lw=0.8, label="sharp matrix rate")
    ax_rate.set_xlabel("step k")
    ax_rate.set_ylabel("error reduction per step")
    ax_rate.set_ylim(0, 1.05)
    ax_rate.legend(loc="lower right")
    if title:
        fig.suptitle(title)
    _save(fig, path)


@_styled
def plot_sweep(rows, path):
    """Median steps to tolerance against eta, one line per gap fraction."""
    fig, ax = _figure(1)
    by_gap = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["steps_to_tol"] is not None:
            by_gap[r["gap_fraction"]][r["eta"]].append(r["steps_to_tol"])
    for gap in sorted(by_gap):
        etas = sorted(by_gap[gap])
        med = [float(np.median(by_gap[gap][e])) for e in etas]
        ax.plot(etas, med, "o-", ms=3, label=f"gap fraction {gap:g}")
    ax.set_xlabel(r"$\eta$")
    ax.set_ylabel("median steps to tolerance")
    ax.grid(True, alpha=0.3)
    if by_gap:
        ax.legend(loc="upper left")
    _save(fig, path)

