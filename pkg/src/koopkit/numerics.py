"""Dense linear-algebra and box-QP kernels shared by the fitting and control code.

Everything here is a pure function of its inputs. SVD and eigen-decompositions
are delegated to LAPACK through numpy/scipy; rank selection, ordering and the
box-constrained QP solver are implemented here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInput, InvalidProblem, InvalidRank, NumericalFailure

DEFAULT_SV_THRESHOLD = 1e-10


def as_matrix(M, name: str = "matrix", allow_complex: bool = True) -> np.ndarray:
    """Coerce ``M`` to a finite 2-D array (1-D input becomes a column)."""
    A = np.asarray(M)
    if A.dtype == object:
        raise InvalidInput(f"{name}: non-numeric entries")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise InvalidInput(f"{name}: expected 2-D array, got shape {A.shape}")
    if np.iscomplexobj(A):
        if not allow_complex:
            raise InvalidInput(f"{name}: complex entries not allowed")
        A = A.astype(complex, copy=False)
    else:
        A = A.astype(float, copy=False)
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name}: contains NaN or Inf")
    return A


@dataclass(frozen=True)
class RankRule:
    """How many singular triplets to keep.

    kind is one of ``"threshold"`` (keep S_i > value * S_max), ``"fixed"``
    (keep exactly ``value``) or ``"energy"`` (smallest r whose cumulative
    squared-singular-value fraction reaches ``value``).
    """

    kind: str = "threshold"
    value: float = DEFAULT_SV_THRESHOLD

    def __post_init__(self):
        if self.kind not in ("threshold", "fixed", "energy"):
            raise InvalidInput(f"unknown rank rule kind {self.kind!r}")
        if self.kind == "fixed" and (int(self.value) != self.value or self.value < 0):
            raise InvalidRank(f"fixed rank must be a nonnegative integer, got {self.value}")
        if self.kind == "energy" and not (0.0 < self.value <= 1.0):
            raise InvalidInput(f"energy fraction must lie in (0, 1], got {self.value}")
        if self.kind == "threshold" and self.value < 0:
            raise InvalidInput("threshold must be nonnegative")

    @classmethod
    def fixed(cls, k: int) -> "RankRule":
        return cls("fixed", int(k))

    @classmethod
    def energy(cls, tau: float) -> "RankRule":
        return cls("energy", float(tau))

    @classmethod
    def threshold(cls, tol: float = DEFAULT_SV_THRESHOLD) -> "RankRule":
        return cls("threshold", float(tol))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "RankRule":
        return cls(d["kind"], d["value"])


def coerce_rule(rule) -> RankRule:
    """Accept a RankRule, an int (fixed rank), a dict, or None (default threshold)."""
    if rule is None:
        return RankRule()
    if isinstance(rule, RankRule):
        return rule
    if isinstance(rule, (int, np.integer)):
        return RankRule.fixed(int(rule))
    if isinstance(rule, dict):
        return RankRule.from_dict(rule)
    raise InvalidInput(f"cannot interpret rank rule {rule!r}")


def select_rank(S: np.ndarray, rule: RankRule) -> int:
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0
    if rule.kind == "fixed":
        k = int(rule.value)
        if k > S.size:
            raise InvalidRank(f"requested rank {k} exceeds min dimension {S.size}")
        return k
    if rule.kind == "threshold":
        if S[0] == 0.0:
            return 0
        return int(np.count_nonzero(S > rule.value * S[0]))
    energy = np.cumsum(S**2)
    total = energy[-1]
    if total == 0.0:
        return 0
    frac = energy / total
    return int(min(np.searchsorted(frac, rule.value - 1e-12) + 1, S.size))


@dataclass
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    r: int
    all_singular_values: np.ndarray = field(repr=False, default=None)

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.conj().T


def svd_truncated(M, rule=None) -> SvdResult:
    """Rank-r truncated SVD ``M ~= U diag(S) V^H`` under ``rule``."""
    A = as_matrix(M, "M")
    if A.size == 0:
        raise InvalidInput("svd of an empty matrix")
    rule = coerce_rule(rule)
    if rule.kind == "fixed" and rule.value > min(A.shape):
        raise InvalidRank(f"requested rank {int(rule.value)} exceeds min dimension {min(A.shape)}")
    try:
        U, S, Vh = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    r = select_rank(S, rule)
    return SvdResult(U[:, :r], S[:r].copy(), Vh[:r].conj().T, r, S)


@dataclass
class EigResult:
    values: np.ndarray
    vectors: np.ndarray
    left_vectors: np.ndarray | None = None


def eig_order(values: np.ndarray) -> np.ndarray:
    """Permutation sorting eigenvalues by |lambda| descending, then arg ascending."""
    values = np.asarray(values, dtype=complex)
    mod = np.round(np.abs(values), 10)
    arg = np.round(np.angle(values), 10)
    return np.lexsort((arg, -mod))


def _unit_columns(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=0)
    norms[norms == 0] = 1.0
    return V / norms


def eig_dense(M, want_left: bool = False) -> EigResult:
    """Full eigen-decomposition with deterministic ordering.

    Right vectors satisfy ``M v = lambda v``; left vectors (rows of the
    returned ``left_vectors.T``) satisfy ``xi^T M = lambda xi^T``. Both sets
    have unit 2-norm columns.
    """
    A = as_matrix(M, "M")
    if A.shape[0] != A.shape[1]:
        raise InvalidInput(f"eig of non-square matrix {A.shape}")
    try:
        if want_left:
            w, vl, vr = scipy.linalg.eig(A, left=True, right=True)
        else:
            w, vr = scipy.linalg.eig(A)
            vl = None
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"eigenvalue iteration failed: {exc}", diagnostic={"shape": A.shape}) from exc
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("non-finite eigenvalues", diagnostic={"values": w})
    order = eig_order(w)
    w = w[order].astype(complex)
    vr = _unit_columns(vr[:, order].astype(complex))
    left = None
    if want_left:
        # scipy returns vl with vl^H M = lambda vl^H; xi = conj(vl) gives xi^T M = lambda xi^T
        left = _unit_columns(np.conj(vl[:, order]).astype(complex))
    return EigResult(w, vr, left)


def lstsq(A, B, rcond: float = 1e-12) -> np.ndarray:
    """Minimum-norm solution of min ||B - A X||_F via truncated pseudo-inverse."""
    A = as_matrix(A, "A")
    B_in = np.asarray(B)
    vector_rhs = B_in.ndim == 1
    B = as_matrix(B_in, "B")
    if A.shape[0] != B.shape[0]:
        raise InvalidInput(f"row mismatch: A has {A.shape[0]} rows, B has {B.shape[0]}")
    if A.size == 0:
        X = np.zeros((A.shape[1], B.shape[1]), dtype=np.result_type(A, B))
        return X[:, 0] if vector_rhs else X
    U, S, Vh = np.linalg.svd(A, full_matrices=False)
    keep = S > rcond * S[0] if S.size and S[0] > 0 else np.zeros(S.shape, bool)
    X = (Vh[keep].conj().T / S[keep]) @ (U[:, keep].conj().T @ B)
    return X[:, 0] if vector_rhs else X


def numerical_rank(M, rel_tol: float = 1e-8) -> int:
    A = as_matrix(M, "M")
    if A.size == 0:
        return 0
    S = np.linalg.svd(A, compute_uv=False)
    if S.size == 0 or S[0] == 0.0:
        return 0
    return int(np.count_nonzero(S > rel_tol * S[0]))


# --------------------------------------------------------------------------
# box-constrained QP
# --------------------------------------------------------------------------


@dataclass
class QpInfo:
    iterations: int
    residual: float
    polished: bool


def projected_gradient_residual(P, q, u, lower, upper) -> float:
    g = P @ u + q
    return float(np.linalg.norm(u - np.clip(u - g, lower, upper)))


def _check_qp(P, q, lower, upper):
    P = as_matrix(P, "P", allow_complex=False)
    n = P.shape[0]
    if P.shape != (n, n):
        raise InvalidProblem(f"P must be square, got {P.shape}")
    q = np.asarray(q, dtype=float).reshape(-1)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
    if q.shape != (n,):
        raise InvalidProblem(f"q has length {q.size}, expected {n}")
    if not np.all(np.isfinite(q)):
        raise InvalidProblem("q contains NaN or Inf")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
        raise InvalidProblem("bounds must satisfy lower <= upper")
    scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
    if np.max(np.abs(P - P.T), initial=0.0) > 1e-10 * scale:
        raise InvalidProblem("P is not symmetric")
    P = 0.5 * (P + P.T)
    return P, q, lower, upper, scale


def solve_box_qp(
    P,
    q,
    lower,
    upper,
    x0=None,
    tol: float = 1e-10,
    max_iter: int = 20000,
    return_info: bool = False,
):
    """Minimize ``0.5 u^T P u + q^T u`` subject to ``lower <= u <= upper``.

    Accelerated projected gradient (FISTA with adaptive restart) is used to
    identify the active set; every few iterations the free variables are
    polished by solving the reduced stationarity system exactly. The returned
    point is always feasible (it is a projection).

    Raises InvalidProblem for an indefinite or unbounded problem and
    NumericalFailure (with ``best``) if ``max_iter`` is exhausted.
    """
    P, q, lower, upper, scale = _check_qp(P, q, lower, upper)
    n = q.size
    if n == 0:
        out = np.zeros(0)
        return (out, QpInfo(0, 0.0, False)) if return_info else out

    w, V = np.linalg.eigh(P)
    if w[0] < -1e-10 * scale:
        raise InvalidProblem(f"P is indefinite (min eigenvalue {w[0]:.3e})")
    if w[0] < 0:
        P = (V * np.clip(w, 0.0, None)) @ V.T
        P = 0.5 * (P + P.T)
        w = np.clip(w, 0.0, None)
    L = float(w[-1])

    def finish(u, it, polished):
        u = np.clip(u, lower, upper)
        res = projected_gradient_residual(P, q, u, lower, upper)
        return (u, QpInfo(it, res, polished)) if return_info else u

    if L <= 0.0:
        # linear objective over a box
        u = np.where(q > 0, lower, np.where(q < 0, upper, np.clip(0.0, lower, upper)))
        if not np.all(np.isfinite(u)):
            raise InvalidProblem("unbounded linear objective over an open box")
        return finish(u, 0, False)

    tol_abs = tol * max(1.0, float(np.linalg.norm(q)), L)

    def objective(u):
        return 0.5 * u @ P @ u + q @ u

    def polish(u):
        g = P @ u + q
        at_lo = (u <= lower) & (g > 0)
        at_hi = (u >= upper) & (g < 0)
        free = ~(at_lo | at_hi)
        cand = u.copy()
        cand[at_lo] = lower[at_lo]
        cand[at_hi] = upper[at_hi]
        if np.any(free):
            rhs = -(q[free] + P[np.ix_(free, ~free)] @ cand[~free])
            cand[free] = lstsq(P[np.ix_(free, free)], rhs, rcond=1e-13)
        return cand

    if x0 is None:
        u = np.clip(np.zeros(n), lower, upper)
    else:
        u = np.clip(np.asarray(x0, dtype=float).reshape(n), lower, upper)

    best = u.copy()
    best_res = projected_gradient_residual(P, q, u, lower, upper)
    if best_res <= tol_abs:
        return finish(u, 0, False)

    y = u.copy()
    t = 1.0
    f_prev = objective(u)
    for it in range(1, max_iter + 1):
        u_new = np.clip(y - (P @ y + q) / L, lower, upper)
        f_new = objective(u_new)
        if f_new > f_prev:
            # adaptive restart
            t = 1.0
            y = u.copy()
            u_new = np.clip(y - (P @ y + q) / L, lower, upper)
            f_new = objective(u_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = u_new + ((t - 1.0) / t_new) * (u_new - u)
        u, t, f_prev = u_new, t_new, f_new

        if it % 10 == 0 or it == 1:
            res = projected_gradient_residual(P, q, u, lower, upper)
            if res < best_res:
                best, best_res = u.copy(), res
            if res <= tol_abs:
                return finish(u, it, False)
            cand = polish(u)
            if np.all(cand >= lower - 1e-12) and np.all(cand <= upper + 1e-12):
                cand = np.clip(cand, lower, upper)
                cres = projected_gradient_residual(P, q, cand, lower, upper)
                if cres <= tol_abs:
                    return finish(cand, it, True)
                if cres < best_res:
                    best, best_res = cand.copy(), cres
    if best_res <= 1e-6:
        return finish(best, max_iter, False)
    raise NumericalFailure(
        f"box QP did not converge in {max_iter} iterations (residual {best_res:.3e})",
        best=np.clip(best, lower, upper),
        diagnostic={"residual": best_res},
    )
