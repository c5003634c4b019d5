"""Controllability checks: Kalman matrix, PBH eigenvalue test and Lie-bracket rank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInput
from ..numerics import eig_dense
from ..systems import SystemSpec

RANK_TOL = 1e-8


def _rank(M: np.ndarray, rel_tol: float) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def _pair(A, B):
    A = np.atleast_2d(np.asarray(A))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput("A must be square")
    B = np.asarray(B)
    B = B.reshape(A.shape[0], -1)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise InvalidInput("A and B must be finite")
    return A, B


@dataclass
class ControllabilityResult:
    rank: int
    matrix: np.ndarray

    @property
    def full(self) -> bool:
        return self.rank == self.matrix.shape[0]


def koopman_controllability(A, B, rel_tol: float = RANK_TOL) -> ControllabilityResult:
    """``[B, AB, ..., A^{p-1} B]`` and its numerical rank at ``rel_tol * sigma_max``."""
    A, B = _pair(A, B)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    M = np.hstack(blocks)
    return ControllabilityResult(_rank(M, rel_tol), M)


@dataclass
class PbhEntry:
    eigenvalue: complex
    rank: int


def pbh_test(A, B, rel_tol: float = RANK_TOL) -> list[PbhEntry]:
    """Rank of ``[(A - alpha I), B]`` at every eigenvalue alpha of A.

    Repeated eigenvalues are reported once per occurrence. The rank
    tolerance is relative to the largest singular value of ``[A, B]``.
    """
    A, B = _pair(A, B)
    n = A.shape[0]
    scale = np.linalg.norm(np.hstack([A, B]), 2)
    alphas = eig_dense(A).values
    out = []
    for a in alphas:
        M = np.hstack([A - a * np.eye(n), B])
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > rel_tol * max(scale, 1e-300))) if scale > 0 else 0
        if abs(a.imag) <= 1e-12 * max(1.0, abs(a)):
            a = complex(a.real, 0.0)
        out.append(PbhEntry(complex(a), rank))
    return out


def _jvp(g, x: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros_like(g(x))
    eps = h / nv
    return (g(x + eps * v) - g(x - eps * v)) / (2.0 * eps)


def lie_bracket(f, g, h: float = 1e-2):
    """``[f, g](x) = Dg(x) f(x) - Df(x) g(x)`` via central-difference directional derivatives."""

    def bracket(x):
        return _jvp(g, x, f(x), h) - _jvp(f, x, g(x), h)

    return bracket


@dataclass
class LieResult:
    rank: int
    columns: np.ndarray


def lie_bracket_controllability(
    sys: SystemSpec, x, k_max: int = 3, t: float = 0.0, h: float = 1e-2, rel_tol: float = 1e-6
) -> LieResult:
    """Columns ``f_j, ad_{f0} f_j, ..., ad_{f0}^{k_max} f_j`` at x and their numerical rank.

    Nested brackets use finite differences of finite differences; the step
    ``h`` is a perturbation length, kept moderate so rounding does not
    compound with depth (the differences are exact for quadratic fields).
    """
    if k_max < 0:
        raise InvalidInput("k_max must be nonnegative")
    if sys.q == 0:
        raise InvalidInput("system has no inputs")
    x = np.asarray(x, dtype=float).reshape(sys.n)

    def f0(p):
        return sys.drift(p, t)

    cols = []
    for j in range(sys.q):

        def g(p, j=j):
            return sys.input_field(j, p, t)

        field = g
        cols.append(field(x))
        for _ in range(k_max):
            field = lie_bracket(f0, field, h)
            cols.append(field(x))
    M = np.column_stack(cols)
    return LieResult(_rank(M, rel_tol), M)
