"""Figure rendering for run reports.

Uses the object-oriented matplotlib API with the Agg canvas, so rendering
never opens pyplot windows or depends on the configured backend.
"""
from __future__ import annotations

import functools
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(STYLE):
            return fn(*args, **kwargs)
    return wrapper


def _figure(width=6.4, height=4.0, **kw):
    fig = Figure(figsize=(width, height), dpi=120, **kw)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps PNG bytes reproducible
    fig.savefig(path, metadata={"Software": None})
    return path


@_styled
def plot_stage_evolution(time_s, planes, detuning_hz, path, max_planes: int = 9):
    """Temporal amplitude/phase and spectrum after each stage.

    ``planes`` is a list of complex time-domain arrays, input first.
    """
    planes = list(planes)
    if len(planes) > max_planes:
        idx = np.unique(np.linspace(0, len(planes) - 1, max_planes).round().astype(int))
        planes = [planes[i] for i in idx]
    else:
        idx = np.arange(len(planes))
    n = len(planes)
    fig = _figure(7.5, 1.4 * n + 0.6)
    order = np.argsort(detuning_hz)
    t_ns = np.asarray(time_s) * 1e9
    for row, (k, x) in enumerate(zip(idx, planes)):
        ax_t = fig.add_subplot(n, 2, 2 * row + 1)
        ax_t.plot(t_ns, np.abs(x), lw=0.6, color="C0")
        ax_p = ax_t.twinx()
        ax_p.plot(t_ns, np.angle(x), lw=0.4, color="C1", alpha=0.6)
        ax_p.set_ylim(-np.pi, np.pi)
        ax_t.set_ylabel("input" if k == 0 else f"stage {k}")
        ax_f = fig.add_subplot(n, 2, 2 * row + 2)
        spec = np.abs(np.fft.fft(x)) ** 2
        spec_db = 10 * np.log10(np.maximum(spec / spec.max(), 1e-12))
        ax_f.plot(np.asarray(detuning_hz)[order] * 1e-9, spec_db[order], lw=0.6)
        ax_f.set_ylim(-60, 3)
        if row == n - 1:
            ax_t.set_xlabel("time (ns)")
            ax_f.set_xlabel("detuning (GHz)")
    fig.tight_layout()
    return _save(fig, path)


@_styled
def plot_constellation(points, path, title=""):
    pts = np.asarray(points, dtype=complex)
    fig = _figure(3.6, 3.6)
    ax = fig.add_subplot(1, 1, 1)
    lim = 1.6 * max(np.max(np.abs(pts)) if len(pts) else 1.0, 1e-12)
    ax.hist2d(pts.real, pts.imag, bins=80, range=[[-lim, lim], [-lim, lim]], cmap="viridis")
    ax.set_aspect("equal")
    ax.set_xlabel("I")
    ax.set_ylabel("Q")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


@_styled
def plot_xcorr_matrix(matrix, path, labels=None):
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    labels = labels or [f"ch{i + 1}" for i in range(n)]
    fig = _figure(3.8, 3.2)
    ax = fig.add_subplot(1, 1, 1)
    im = ax.imshow(m, vmin=0, vmax=1, cmap="magma")
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center",
                    color="k" if m[i, j] > 0.5 else "w", fontsize=8)
    ax.set_xticks(range(n), labels)
    ax.set_yticks(range(n), labels)
    fig.colorbar(im, ax=ax, label="correlation")
    fig.tight_layout()
    return _save(fig, path)


@_styled
def plot_convergence(history, path):
    h = np.asarray(history, dtype=float)
    fig = _figure(4.5, 3.0)
    ax = fig.add_subplot(1, 1, 1)
    ax.semilogy(np.arange(1, len(h) + 1), np.maximum(1 - h, 1e-16))
    ax.set_xlabel("sweep")
    ax.set_ylabel("1 - |Tr O| / n")
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    return _save(fig, path)


@_styled
def plot_masks(time_s, masks, path):
    masks = np.atleast_2d(masks)
    fig = _figure(6.4, 0.9 * len(masks) + 0.8)
    t_ns = np.asarray(time_s) * 1e9
    for k, m in enumerate(masks):
        ax = fig.add_subplot(len(masks), 1, k + 1)
        ax.plot(t_ns, m, lw=0.5)
        ax.set_ylabel(f"$\\Phi_{{{k + 1}}}$", rotation=0, labelpad=14)
        if k < len(masks) - 1:
            ax.set_xticklabels([])
    ax.set_xlabel("time (ns)")
    fig.tight_layout()
    return _save(fig, path)
