"""PNG figures written next to the CLI's CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({"figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3, "font.size": 9})


def figure_path(out, suffix: str) -> Path:
    """``results/report.json`` -> ``results/report_<suffix>.png``."""
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}.png")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_eigenvalues(values, path, discrete: bool = True, title: str = "") -> Path:
    values = np.asarray(values, dtype=complex)
    fig, ax = plt.subplots(figsize=(4, 4))
    if discrete:
        th = np.linspace(0, 2 * np.pi, 400)
        ax.plot(np.cos(th), np.sin(th), color="0.6", lw=0.8)
        ax.set_aspect("equal")
    else:
        ax.axvline(0.0, color="0.6", lw=0.8)
    ax.scatter(values.real, values.imag, s=18, color="C3", zorder=3)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_trajectory(times, states, path, labels=None) -> Path:
    states = np.atleast_2d(states)
    fig, ax = plt.subplots(figsize=(6, 3))
    for i, row in enumerate(states):
        ax.plot(times, row, lw=0.9, label=labels[i] if labels else f"x{i + 1}")
    ax.set_xlabel("t")
    ax.legend(loc="upper right", frameon=False)
    return _save(fig, path)


def plot_tracking(runs, path, y_bounds=None, title: str = "") -> Path:
    """Output and input traces for a list of ``(label, ClosedLoopResult)`` pairs."""
    fig, (ax_y, ax_u) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ref_drawn = False
    for label, res in runs:
        if res is None:
            continue
        if not ref_drawn:
            ax_y.plot(res.times, res.reference[0], "k--", lw=1.0, label="reference")
            ref_drawn = True
        ax_y.plot(res.times, res.outputs[0], lw=1.0, label=label)
        ax_u.step(res.times[:-1], res.inputs[0], where="post", lw=0.9, label=label)
    if y_bounds is not None:
        for b in y_bounds:
            if b is not None and np.isfinite(b):
                ax_y.axhline(b, color="0.5", lw=0.8, ls=":")
    ax_y.set_ylabel("y")
    ax_u.set_ylabel("u")
    ax_u.set_xlabel("t")
    ax_y.legend(loc="best", frameon=False, fontsize=7)
    if title:
        ax_y.set_title(title)
    return _save(fig, path)


def plot_costs(summaries, path, title: str = "") -> Path:
    labels = [s["model"] for s in summaries]
    J = [s["J"] if s["J"] is not None else np.nan for s in summaries]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(labels, J, color="C0")
    ax.set_yscale("log")
    ax.set_ylabel("J")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_sweep(x1, x2, J, path, title: str = "") -> Path:
    x1 = np.asarray(x1)
    x2 = np.asarray(x2)
    J = np.asarray(J, dtype=float)
    g1 = np.unique(x1)
    g2 = np.unique(x2)
    grid = np.full((g2.size, g1.size), np.nan)
    grid[np.searchsorted(g2, x2), np.searchsorted(g1, x1)] = np.where(np.isfinite(J), J, np.nan)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.pcolormesh(g1, g2, np.log10(grid), shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="log10 J")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_forcing(times, forcing, path, threshold: float | None = None) -> Path:
    forcing = np.asarray(forcing)
    fig, ax = plt.subplots(figsize=(6, 2.5))
    ax.plot(times, forcing, lw=0.6, color="C3")
    if threshold is not None:
        c = forcing.mean()
        s = forcing.std()
        for sign in (-1, 1):
            ax.axhline(c + sign * threshold * s, color="0.4", lw=0.8, ls=":")
    ax.set_xlabel("t")
    ax.set_ylabel("forcing")
    return _save(fig, path)


def plot_matrix(M, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(np.asarray(M, dtype=float), cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    return _save(fig, path)
