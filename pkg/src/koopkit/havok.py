"""Hankel matrices, delay DMD and the forced-linear HAVOK model."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from ._files import atomic_open, fmt
from .dmd import DmdModel, fit_exact_dmd
from .edmd import central_difference_derivative
from .errors import InvalidInput
from .numerics import lstsq

LOW_CONFIDENCE_R2 = 0.5


@dataclass
class HankelMatrix:
    H: np.ndarray
    q: int
    p: int
    dt: float = 1.0
    source: str = ""


def build_hankel(series, q: int, dt: float = 1.0, source: str = "") -> HankelMatrix:
    """``q x (m - q + 1)`` Hankel matrix with ``H[i, j] = series[i + j]``."""
    x = np.asarray(series, dtype=float).reshape(-1)
    if q < 1 or x.size < q + 1:
        raise InvalidInput(f"series of length {x.size} too short for {q} rows")
    H = np.lib.stride_tricks.sliding_window_view(x, x.size - q + 1).copy()
    return HankelMatrix(H, q, H.shape[1], float(dt), source)


def fit_delay_dmd(hankel: HankelMatrix, rule=None) -> DmdModel:
    """Exact DMD on consecutive Hankel columns."""
    H = hankel.H
    if H.shape[1] < 2:
        raise InvalidInput("Hankel matrix needs at least two columns")
    return fit_exact_dmd(H[:, :-1], H[:, 1:], hankel.dt, rule)


@dataclass
class HavokModel:
    U: np.ndarray = field(repr=False)
    S: np.ndarray
    V: np.ndarray = field(repr=False)
    r: int
    A: np.ndarray
    B: np.ndarray
    dt: float
    q: int
    residual: np.ndarray
    r2: np.ndarray

    @property
    def forcing(self) -> np.ndarray:
        return self.V[:, self.r - 1]

    @property
    def low_confidence(self) -> bool:
        return bool(np.mean(self.r2) < LOW_CONFIDENCE_R2)


def fit_havok(series, dt: float, q: int, r: int) -> HavokModel:
    """Linear model on the first r-1 eigen-time-delay coordinates forced by the r-th.

    Derivatives of the V columns use fourth-order central differences; the
    regression uses interior samples only.
    """
    if r < 2 or r > q:
        raise InvalidInput("need 2 <= r <= q")
    hankel = build_hankel(series, q, dt)
    if hankel.p < 9:
        raise InvalidInput("too few Hankel columns for the derivative stencil")
    U, S, Vh = np.linalg.svd(hankel.H, full_matrices=False)
    V = Vh[:r].T.copy()
    dV = central_difference_derivative(V.T, dt)
    inner = slice(2, V.shape[0] - 2)
    regressors = V[inner].T  # (r, N)
    targets = dV[: r - 1, inner]
    G = lstsq(regressors.T, targets.T).T
    A, B = G[:, : r - 1], G[:, r - 1]
    resid = targets - G @ regressors
    ss_res = np.sum(resid**2, axis=1)
    centered = targets - targets.mean(axis=1, keepdims=True)
    ss_tot = np.sum(centered**2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)
    rms = np.sqrt(ss_res / targets.shape[1])
    return HavokModel(U[:, :r], S[:r], V, r, A, B, float(dt), q, rms, r2)


def simulate_havok(model: HavokModel, start: int, n_steps: int) -> np.ndarray:
    """Integrate ``v' = A v + B v_r`` from the recorded state at ``start``.

    RK4 at the sampling step; the forcing is linearly interpolated at the
    half steps. Returns ``(r-1, n_steps+1)``.
    """
    V = model.V
    if start < 0 or start + n_steps >= V.shape[0]:
        raise InvalidInput("simulation window exceeds the record")
    A, B, h = model.A, model.B, model.dt
    f = model.forcing
    v = V[start, : model.r - 1].copy()
    out = np.empty((model.r - 1, n_steps + 1))
    out[:, 0] = v
    for k in range(n_steps):
        f0 = f[start + k]
        f1 = f[start + k + 1]
        fm = 0.5 * (f0 + f1)
        k1 = A @ v + B * f0
        k2 = A @ (v + 0.5 * h * k1) + B * fm
        k3 = A @ (v + 0.5 * h * k2) + B * fm
        k4 = A @ (v + h * k3) + B * f1
        v = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[:, k + 1] = v
    return out


@dataclass
class ForcingStats:
    kurtosis: float
    tail_fraction: float
    gaussian_tail: float
    events: list
    degenerate: bool


def forcing_stats(model_or_series, threshold: float = 2.0) -> ForcingStats:
    """Excess kurtosis, fraction of |v_r| beyond ``threshold`` std, and the crossing intervals.

    Intervals are half-open sample ranges ``(start, stop)`` where the
    centered forcing exceeds the threshold in magnitude.
    """
    v = model_or_series.forcing if isinstance(model_or_series, HavokModel) else np.asarray(model_or_series, float)
    v = v.reshape(-1)
    gaussian = float(erfc(threshold / np.sqrt(2.0)))
    c = v - v.mean()
    std = float(np.sqrt(np.mean(c**2)))
    if std <= 1e-14 * max(1.0, float(np.max(np.abs(v)))):
        return ForcingStats(float("nan"), 0.0, gaussian, [], True)
    kurt = float(np.mean(c**4) / std**4 - 3.0)
    above = np.abs(c) > threshold * std
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    events = [(int(a), int(b)) for a, b in zip(starts, stops)]
    return ForcingStats(kurt, float(np.mean(above)), gaussian, events, False)


def write_havok_csv(model: HavokModel, path, t0: float = 0.0) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"v{i + 1}" for i in range(model.r)])
        for k in range(model.V.shape[0]):
            w.writerow([fmt(t0 + k * model.dt)] + [fmt(v) for v in model.V[k, : model.r]])
