"""Snapshot regression: exact DMD, forward-backward DMD, companion DMD, DMDc."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BackwardSingular, DegenerateData, InvalidInput, RankDeficient
from .numerics import as_matrix, coerce_rule, eig_dense, eig_order, lstsq, numerical_rank, svd_truncated

NYQUIST_FRACTION = 0.9


@dataclass
class DmdModel:
    Phi: np.ndarray
    Lambda: np.ndarray
    Omega: np.ndarray
    b: np.ndarray
    r: int
    dt: float
    Atilde: np.ndarray
    Ur: np.ndarray = field(repr=False)
    real_data: bool = True
    exact: np.ndarray | None = None
    kind: str = "dmd"
    backward_singular: bool = False

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    def operator(self) -> np.ndarray:
        """Full-space operator ``U_r Atilde U_r^H`` implied by the projection."""
        return self.Ur @ self.Atilde @ self.Ur.conj().T


def _pair(X, Xp):
    X = as_matrix(X, "X")
    Xp = as_matrix(Xp, "Xp")
    if X.shape != Xp.shape:
        raise InvalidInput(f"X {X.shape} and Xp {Xp.shape} must have the same shape")
    if X.shape[1] < 1:
        raise InvalidInput("need at least one snapshot pair")
    return X, Xp


def continuous_eigenvalues(Lambda, dt: float) -> np.ndarray:
    Lambda = np.asarray(Lambda, dtype=complex)
    with np.errstate(divide="ignore"):
        Omega = np.log(Lambda) / dt
    aliased = np.abs(Omega.imag) * dt > NYQUIST_FRACTION * np.pi
    if np.any(aliased & np.isfinite(Omega)):
        warnings.warn(
            "eigenvalue phase close to the Nyquist limit; continuous frequencies may be aliased",
            RuntimeWarning,
            stacklevel=3,
        )
    return Omega


def fit_exact_dmd(X, Xp, dt: float = 1.0, rule=None) -> DmdModel:
    """Exact DMD of the snapshot pairs ``(X, Xp)``.

    ``rule`` selects the SVD truncation (default: hard threshold at
    1e-10 * S_max). Modes are ``Xp V_r S_r^{-1} W``; modes belonging to zero
    eigenvalues fall back to the projected ``U_r W`` and are flagged non-exact.
    """
    X, Xp = _pair(X, Xp)
    if not np.any(X) or not np.any(Xp):
        raise DegenerateData("snapshot data is identically zero")
    svd = svd_truncated(X, coerce_rule(rule))
    if svd.r == 0:
        raise DegenerateData("rank rule retained no singular values")
    Ur, S, Vr = svd.U, svd.S, svd.V
    B = Xp @ Vr / S
    Atilde = Ur.conj().T @ B
    eig = eig_dense(Atilde)
    Lam, W = eig.values, eig.vectors
    Phi = B @ W
    scale = np.max(np.abs(Lam)) if Lam.size else 0.0
    exact = np.abs(Lam) > 1e-12 * max(scale, 1e-300)
    if not np.all(exact):
        Phi[:, ~exact] = Ur @ W[:, ~exact]
    b = lstsq(Phi, X[:, 0].astype(complex))
    real = not (np.iscomplexobj(X) or np.iscomplexobj(Xp))
    return DmdModel(Phi, Lam, continuous_eigenvalues(Lam, dt), b, svd.r, float(dt), Atilde, Ur, real, exact)


def dmd_predict(model: DmdModel, k=None, t=None, return_imag: bool = False):
    """Evaluate the DMD expansion at step ``k`` (1-based: k=1 is the first snapshot) or time ``t``.

    Vector ``k``/``t`` gives one column per entry. For models fitted to real
    data the real part is returned; ``return_imag=True`` also returns the norm
    of the discarded imaginary part.
    """
    if (k is None) == (t is None):
        raise InvalidInput("give exactly one of k or t")
    scalar = np.ndim(k if k is not None else t) == 0
    if k is not None:
        steps = np.atleast_1d(np.asarray(k, dtype=float)) - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            powers = model.Lambda[:, None] ** steps[None, :]
        powers = np.where(np.isfinite(powers), powers, 0.0)
    else:
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        with np.errstate(over="ignore", invalid="ignore"):
            powers = np.exp(model.Omega[:, None] * tt[None, :])
        powers = np.where(np.isfinite(powers), powers, 0.0)
    x = model.Phi @ (model.b[:, None] * powers)
    imag = float(np.linalg.norm(x.imag)) if model.real_data else 0.0
    if model.real_data:
        x = x.real
    if scalar:
        x = x[:, 0]
    return (x, imag) if return_imag else x


def fit_fb_dmd(X, Xp, dt: float = 1.0, rule=None, on_singular: str = "raise") -> DmdModel:
    """Forward-backward DMD: average of forward and inverted backward projected operators.

    Both operators live on the POD subspace of ``X``. If the backward operator
    is singular there, ``on_singular="raise"`` raises BackwardSingular and
    ``"fallback"`` returns the forward-only model with ``backward_singular`` set.
    """
    X, Xp = _pair(X, Xp)
    if on_singular not in ("raise", "fallback"):
        raise InvalidInput("on_singular must be 'raise' or 'fallback'")
    if not np.any(X):
        raise DegenerateData("snapshot data is identically zero")
    svd = svd_truncated(X, coerce_rule(rule))
    if svd.r == 0:
        raise DegenerateData("rank rule retained no singular values")
    Ur = svd.U
    Xt = Ur.conj().T @ X
    Xpt = Ur.conj().T @ Xp
    A1 = lstsq(Xt.T, Xpt.T).T
    A2 = lstsq(Xpt.T, Xt.T).T
    s2 = np.linalg.svd(A2, compute_uv=False)
    singular = s2.size == 0 or s2[0] == 0.0 or s2[-1] <= 1e-10 * s2[0]
    if singular:
        if on_singular == "raise":
            raise BackwardSingular("backward operator is singular on the retained subspace", best=A1)
        warnings.warn("backward operator singular; returning forward DMD", RuntimeWarning, stacklevel=2)
        Atilde = A1
    else:
        Atilde = 0.5 * (A1 + np.linalg.inv(A2))
    eig = eig_dense(Atilde)
    Phi = Ur @ eig.vectors
    b = lstsq(Phi, X[:, 0].astype(complex))
    real = not (np.iscomplexobj(X) or np.iscomplexobj(Xp))
    return DmdModel(
        Phi,
        eig.values,
        continuous_eigenvalues(eig.values, dt),
        b,
        svd.r,
        float(dt),
        Atilde,
        Ur,
        real,
        np.zeros(svd.r, dtype=bool),
        kind="fbdmd",
        backward_singular=singular,
    )


def companion_dmd(series, ridge: float = 0.0):
    """Companion (Krylov) form ``X' = X S`` of a snapshot sequence.

    ``series`` holds snapshots x_1..x_{m+1} as columns. S has ones on the
    sub-diagonal and last column ``a = argmin ||X a - x_{m+1}||^2 + ridge ||a||^2``.
    Returns ``(S, eigenvalues)`` with eigenvalues in the package ordering.
    """
    Y = as_matrix(series, "series")
    if Y.shape[1] < 2:
        raise InvalidInput("companion DMD needs at least 2 snapshots")
    X, last = Y[:, :-1], Y[:, -1]
    m = X.shape[1]
    if ridge > 0:
        G = X.conj().T @ X + ridge * np.eye(m)
        a = np.linalg.solve(G, X.conj().T @ last)
    else:
        a = lstsq(X, last)
    S = np.zeros((m, m), dtype=a.dtype)
    S[np.arange(1, m), np.arange(m - 1)] = 1.0
    S[:, -1] = a
    w = np.linalg.eigvals(S)
    return S, w[eig_order(w)]


@dataclass
class DmdcModel:
    A: np.ndarray
    B: np.ndarray
    r: int
    dt: float
    kind: str = "dmdc"

    def step(self, x, u):
        return self.A @ x + self.B @ np.atleast_1d(u)

    def rollout(self, x0, U) -> np.ndarray:
        U = np.asarray(U, dtype=float).reshape(self.B.shape[1], -1)
        out = np.empty((self.A.shape[0], U.shape[1] + 1))
        out[:, 0] = x0
        for k in range(U.shape[1]):
            out[:, k + 1] = self.step(out[:, k], U[:, k])
        return out


def fit_dmdc(X, Xp, Upsilon, dt: float = 1.0, rule=None, allow_rank_deficient: bool = False) -> DmdcModel:
    """Joint least squares ``[A B] = X' [X; Upsilon]^+``.

    With ``rule=None`` the full-dimension solve is used and insufficient
    excitation (rank of the stacked data below n + q) raises RankDeficient
    unless ``allow_rank_deficient`` (then the minimum-norm fit is returned).
    A rank rule gives the truncated-SVD variant.
    """
    X, Xp = _pair(X, Xp)
    n, m = X.shape
    U = np.asarray(Upsilon, dtype=float)
    if U.ndim == 1:
        U = U[None, :] if U.size == m else U.reshape(0, m)
    if U.size == 0:
        U = np.zeros((0, m))
    U = as_matrix(U, "Upsilon") if U.shape[0] else U
    if U.shape[1] != m:
        raise InvalidInput(f"Upsilon has {U.shape[1]} columns, expected {m}")
    q = U.shape[0]
    Om = np.vstack([X, U])
    if rule is None:
        rank = numerical_rank(Om, 1e-10)
        if rank < n + q and not allow_rank_deficient:
            raise RankDeficient(
                f"stacked [X; Upsilon] has rank {rank} < n + q = {n + q}; input not exciting", rank, n + q
            )
        G = lstsq(Om.T, Xp.T).T
        r = min(rank, n + q)
    else:
        svd = svd_truncated(Om, coerce_rule(rule))
        if svd.r == 0:
            raise DegenerateData("rank rule retained no singular values")
        G = (Xp @ svd.V / svd.S) @ svd.U.conj().T
        r = svd.r
    return DmdcModel(G[:, :n], G[:, n:], r, float(dt))
