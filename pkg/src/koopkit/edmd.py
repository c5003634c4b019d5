"""Dictionary-lifted Koopman approximation.

Covers eDMD / eDMDc regression, eigenfunction extraction with held-out
linearity validation, continuous-time eigenfunctions from the generator
(``Gamma``) regression, harmonic averages and Ulam transfer matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IllPosed, InvalidInput, NoGradient
from .numerics import as_matrix, eig_dense, lstsq
from .observables import Dictionary
from .systems import SystemSpec, Trajectory, advance, _n_steps

SPURIOUS_THRESHOLD = 1e-3


def lifted_regression(Y, Xs, ridge: float = 0.0) -> np.ndarray:
    """Solve ``Y ~= G Xs`` in least squares with optional relative ridge.

    Rows of ``Xs`` are scaled to unit RMS before solving; ``ridge`` is
    relative to the trace of the scaled Gram matrix divided by its size.
    """
    Y = np.asarray(Y, dtype=float)
    Xs = np.asarray(Xs, dtype=float)
    m = Xs.shape[1]
    d = np.sqrt(np.mean(Xs**2, axis=1))
    d[d == 0] = 1.0
    Xh = Xs / d[:, None]
    if ridge > 0:
        alpha = ridge * float(np.sum(Xh**2)) / Xh.shape[0]
        lhs = np.vstack([Xh.T, np.sqrt(alpha) * np.eye(Xh.shape[0])])
        rhs = np.vstack([Y.T, np.zeros((Xh.shape[0], Y.shape[0]))])
        Gh = lstsq(lhs, rhs, rcond=1e-14).T
    else:
        if Xs.shape[0] > m:
            raise IllPosed(f"{Xs.shape[0]} regressors but only {m} samples; use ridge > 0")
        Gh = lstsq(Xh.T, Y.T, rcond=1e-13).T
    return Gh / d[None, :]


@dataclass
class EdmdModel:
    A: np.ndarray
    dictionary: Dictionary
    C: np.ndarray
    dt: float
    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    Xi: np.ndarray = field(repr=False)
    B: np.ndarray | None = None
    scores: np.ndarray | None = None
    kind: str = "edmd"

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def continuous_eigenvalues(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.eigenvalues.astype(complex)) / self.dt

    def lift(self, X) -> np.ndarray:
        return self.dictionary.batch(X)

    def predict(self, x0, steps: int, U=None) -> np.ndarray:
        """Roll the lifted model forward and map back with C; returns ``(n_out, steps+1)``."""
        z = self.dictionary(x0)
        out = [self.C @ z]
        for k in range(steps):
            z = self.A @ z
            if self.B is not None and U is not None:
                z = z + self.B @ np.atleast_1d(np.asarray(U)[..., k])
            out.append(self.C @ z)
        return np.column_stack(out)


def _eigen(A):
    eig = eig_dense(A, want_left=True)
    return eig.values, eig.vectors, eig.left_vectors.T


def _recovery(dictionary: Dictionary, X, Z, ridge):
    C = dictionary.recovery_matrix()
    if C is not None:
        return C
    # least-squares estimate of the map from observables back to the state
    return lifted_regression(X, Z, ridge if ridge > 0 else 0.0)


def fit_edmd(X, Xp, dictionary: Dictionary, dt: float = 1.0, ridge: float = 0.0) -> EdmdModel:
    """``A_Z = argmin ||Z' - A_Z Z||_F`` with ``Z = g(X)``, ``Z' = g(X')``."""
    X = as_matrix(X, "X", allow_complex=False)
    Xp = as_matrix(Xp, "Xp", allow_complex=False)
    if X.shape != Xp.shape:
        raise InvalidInput("X and Xp must have the same shape")
    Z = dictionary.batch(X)
    Zp = dictionary.batch(Xp)
    if dictionary.p > Z.shape[1] and ridge <= 0:
        raise IllPosed(f"dictionary size {dictionary.p} exceeds {Z.shape[1]} snapshots; use ridge > 0")
    A = lifted_regression(Zp, Z, ridge)
    lam, modes, Xi = _eigen(A)
    C = _recovery(dictionary, X, Z, ridge)
    return EdmdModel(A, dictionary, C, float(dt), lam, modes, Xi)


def fit_edmdc(X, Xp, Upsilon, dictionary: Dictionary, dt: float = 1.0, ridge: float = 0.0) -> EdmdModel:
    """Lifted control model ``Z' ~= A Z + B Upsilon``.

    ``X``/``Xp`` are dictionary inputs (states or delay vectors); the current
    input enters only through ``B``.
    """
    X = as_matrix(X, "X", allow_complex=False)
    Xp = as_matrix(Xp, "Xp", allow_complex=False)
    U = np.atleast_2d(np.asarray(Upsilon, dtype=float))
    if X.shape != Xp.shape or U.shape[1] != X.shape[1]:
        raise InvalidInput("X, Xp and Upsilon must have matching column counts")
    Z = dictionary.batch(X)
    Zp = dictionary.batch(Xp)
    p, q = dictionary.p, U.shape[0]
    if p + q > Z.shape[1] and ridge <= 0:
        raise IllPosed(f"{p + q} regressors exceed {Z.shape[1]} snapshots; use ridge > 0")
    G = lifted_regression(Zp, np.vstack([Z, U]), ridge)
    A, B = G[:, :p], G[:, p:]
    lam, modes, Xi = _eigen(A)
    C = _recovery(dictionary, X, Z, ridge)
    return EdmdModel(A, dictionary, C, float(dt), lam, modes, Xi, B=B, kind="edmdc")


# --------------------------------------------------------------------------
# eigenfunctions
# --------------------------------------------------------------------------


@dataclass
class Eigenfunction:
    coeffs: np.ndarray
    lam: complex | None
    mu: complex
    score: float
    spurious: bool

    def __call__(self, dictionary: Dictionary, X) -> np.ndarray:
        return self.coeffs @ dictionary.batch(X)


def normalize_coeffs(xi) -> np.ndarray:
    """Unit 2-norm with the largest-magnitude entry made real and positive."""
    xi = np.asarray(xi, dtype=complex)
    xi = xi / np.linalg.norm(xi)
    j = int(np.argmax(np.abs(xi)))
    return xi * np.exp(-1j * np.angle(xi[j]))


def linearity_score(phi: np.ndarray, lam: complex) -> float:
    """max_k |phi_{k+1} - lam phi_k| / max_k |phi_k| along one trajectory."""
    phi = np.asarray(phi)
    top = np.max(np.abs(phi))
    if top == 0:
        return float("inf")
    return float(np.max(np.abs(phi[1:] - lam * phi[:-1])) / top)


def _holdout_states(holdout):
    if isinstance(holdout, Trajectory):
        return [holdout.states]
    if isinstance(holdout, (list, tuple)):
        return [h.states if isinstance(h, Trajectory) else np.asarray(h, dtype=float) for h in holdout]
    return [np.asarray(holdout, dtype=float)]


def extract_eigenfunctions(model: EdmdModel, holdout, threshold: float = SPURIOUS_THRESHOLD) -> list[Eigenfunction]:
    """One eigenfunction per left eigenvector of ``A_Z``, validated on held-out data.

    ``holdout`` is a Trajectory (or list of them, or raw column matrices) in
    the dictionary's input coordinates, not used for fitting. The score is the
    worst one-step linearity defect over all held-out trajectories.
    """
    segments = _holdout_states(holdout)
    lifted = [model.dictionary.batch(S) for S in segments]
    out = []
    for i, lam in enumerate(model.eigenvalues):
        xi = normalize_coeffs(model.Xi[i])
        score = max(linearity_score(xi @ Z, lam) for Z in lifted)
        with np.errstate(divide="ignore"):
            mu = np.log(complex(lam)) / model.dt
        out.append(Eigenfunction(xi, complex(lam), mu, score, score > threshold))
    return out


def gamma_matrix(dictionary: Dictionary, X, Xdot) -> np.ndarray:
    """Columns ``grad g(x_j) . xdot_j`` (directional derivatives of the dictionary)."""
    if not dictionary.has_gradient:
        raise NoGradient(f"{dictionary.kind} dictionary has no gradient")
    X = as_matrix(X, "X", allow_complex=False)
    Xdot = as_matrix(Xdot, "Xdot", allow_complex=False)
    if X.shape != Xdot.shape:
        raise InvalidInput("X and Xdot must have the same shape")
    G = np.empty((dictionary.p, X.shape[1]))
    for j in range(X.shape[1]):
        G[:, j] = dictionary.grad(X[:, j]) @ Xdot[:, j]
    return G


def generator_residual(xi, mu, Z, Gamma) -> float:
    """||mu xi^T Z - xi^T Gamma|| / ||xi^T Z||."""
    num = np.linalg.norm(mu * (xi @ Z) - xi @ Gamma)
    den = np.linalg.norm(xi @ Z)
    return float(num / den) if den > 0 else float("inf")


def fit_continuous_eigenfunctions(
    X,
    Xdot,
    dictionary: Dictionary,
    candidates="solve",
    threshold: float = SPURIOUS_THRESHOLD,
) -> list[Eigenfunction]:
    """Eigenfunctions of the generator from ``xi^T Gamma = mu xi^T Z``.

    With ``candidates="solve"`` the left eigenproblem of ``Gamma Z^+`` is
    solved. Passing an array of candidate eigenvalues instead returns, for
    each, the best unit ``xi`` (smallest singular direction of
    ``mu Z - Gamma``) and its residual.
    """
    Gamma = gamma_matrix(dictionary, X, Xdot)
    Z = dictionary.batch(X)
    out = []
    if isinstance(candidates, str):
        if candidates != "solve":
            raise InvalidInput("candidates must be 'solve' or an array of eigenvalues")
        L = lstsq(Z.T, Gamma.T).T
        eig = eig_dense(L, want_left=True)
        for i, mu in enumerate(eig.values):
            xi = normalize_coeffs(eig.left_vectors[:, i])
            res = generator_residual(xi, mu, Z, Gamma)
            out.append(Eigenfunction(xi, None, complex(mu), res, res > threshold))
        return out
    for mu in np.atleast_1d(candidates):
        M = mu * Z - Gamma
        _, _, Vh = np.linalg.svd(M.T, full_matrices=False)
        xi = normalize_coeffs(Vh[-1].conj())
        res = generator_residual(xi, mu, Z, Gamma)
        out.append(Eigenfunction(xi, None, complex(mu), res, res > threshold))
    return out


def central_difference_derivative(Y, dt: float) -> np.ndarray:
    """Time derivative of the columns of ``Y`` (samples along axis 1).

    Fourth-order central differences in the interior, second-order one-sided
    differences on the two samples at each end.
    """
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[None, :]
    m = Y.shape[1]
    if m < 5:
        raise InvalidInput("need at least 5 samples for the derivative stencil")
    D = np.empty_like(Y)
    D[:, 2:-2] = (Y[:, :-4] - 8 * Y[:, 1:-3] + 8 * Y[:, 3:-1] - Y[:, 4:]) / (12 * dt)
    D[:, 0] = (-3 * Y[:, 0] + 4 * Y[:, 1] - Y[:, 2]) / (2 * dt)
    D[:, 1] = (Y[:, 2] - Y[:, 0]) / (2 * dt)
    D[:, -2] = (Y[:, -1] - Y[:, -3]) / (2 * dt)
    D[:, -1] = (3 * Y[:, -1] - 4 * Y[:, -2] + Y[:, -3]) / (2 * dt)
    return D[0] if squeeze else D


# --------------------------------------------------------------------------
# harmonic averages
# --------------------------------------------------------------------------


@dataclass
class HarmonicAverage:
    value: complex | np.ndarray
    tail: float


def harmonic_average(series, omega: float, dt: float = 1.0) -> HarmonicAverage:
    """Finite-time Fourier average ``(1/K) sum_k g_k exp(-i omega k dt)``.

    ``series`` is ``(K,)`` or ``(n, K)``. ``tail`` is the distance between the
    full-length and half-length averages, a convergence indicator.
    """
    g = np.asarray(series)
    vector = g.ndim == 2
    if not vector:
        g = g[None, :]
    K = g.shape[1]
    if K < 2:
        raise InvalidInput("need at least 2 samples")
    phase = np.exp(-1j * omega * dt * np.arange(K))
    weighted = g * phase[None, :]
    full = weighted.mean(axis=1)
    half = weighted[:, : K // 2].mean(axis=1)
    tail = float(np.max(np.abs(full - half)))
    return HarmonicAverage(full if vector else complex(full[0]), tail)


# --------------------------------------------------------------------------
# Ulam matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxGrid:
    lower: tuple
    upper: tuple
    shape: tuple

    @classmethod
    def make(cls, lower, upper, shape) -> "BoxGrid":
        lower = tuple(float(v) for v in np.atleast_1d(lower))
        upper = tuple(float(v) for v in np.atleast_1d(upper))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if not (len(lower) == len(upper) == len(shape)):
            raise InvalidInput("lower, upper, shape must have equal length")
        if any(u <= lo for lo, u in zip(lower, upper)) or any(s < 1 for s in shape):
            raise InvalidInput("degenerate partition")
        return cls(lower, upper, shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.shape)

    def cell_lower(self, j: int) -> np.ndarray:
        idx = np.array(np.unravel_index(j, self.shape))
        return np.array(self.lower) + idx * self.widths

    def locate(self, P: np.ndarray) -> np.ndarray:
        """Flat cell index of each column of ``P``; -1 outside the grid."""
        lo = np.array(self.lower)[:, None]
        idx = np.floor((P - lo) / self.widths[:, None]).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(self.shape)[:, None]), axis=0)
        flat = np.full(P.shape[1], -1, dtype=np.int64)
        if np.any(inside):
            flat[inside] = np.ravel_multi_index(tuple(idx[:, inside]), self.shape)
        return flat


@dataclass
class UlamMatrix:
    U: np.ndarray
    partition: BoxGrid
    T: float | None
    samples_per_cell: int
    escaped: np.ndarray
    flagged: np.ndarray


def flow_map(sys: SystemSpec, T: float, dt: float, substeps: int = 1) -> Callable:
    """Vectorized time-T flow map of an autonomous system via RK4."""
    steps = _n_steps(0.0, T, dt)

    def F(P):
        x = np.asarray(P, dtype=float)
        for k in range(steps):
            x = advance(sys, x, None, k * dt, dt, substeps)
        return x

    return F


def ulam_matrix(mapping, partition: BoxGrid, samples_per_cell: int = 1000, seed=0, T=None, dt=None) -> UlamMatrix:
    """Monte-Carlo Ulam matrix: ``U[i, j]`` is the fraction of cell-j samples landing in cell i.

    ``mapping`` is a callable acting on ``(d, N)`` point arrays, or an
    autonomous SystemSpec together with ``T`` and ``dt``. Each cell draws from
    its own seeded stream. Samples leaving the grid are counted in
    ``escaped``; columns are renormalized over the retained mass and a column
    with no retained samples is left zero and flagged.
    """
    if isinstance(mapping, SystemSpec):
        if T is None or dt is None:
            raise InvalidInput("SystemSpec mapping needs T and dt")
        mapping = flow_map(mapping, T, dt)
    N = partition.n_cells
    d = partition.dim
    streams = np.random.SeedSequence(seed).spawn(N)
    widths = partition.widths
    pts = np.empty((d, N * samples_per_cell))
    for j in range(N):
        rng = np.random.default_rng(streams[j])
        r = rng.random((d, samples_per_cell)) * (1.0 - 1e-12)
        pts[:, j * samples_per_cell : (j + 1) * samples_per_cell] = partition.cell_lower(j)[:, None] + widths[:, None] * r
    images = np.asarray(mapping(pts), dtype=float).reshape(d, -1)
    dest = partition.locate(images)
    U = np.zeros((N, N))
    escaped = np.zeros(N, dtype=np.int64)
    for j in range(N):
        block = dest[j * samples_per_cell : (j + 1) * samples_per_cell]
        kept = block[block >= 0]
        escaped[j] = samples_per_cell - kept.size
        if kept.size:
            U[:, j] = np.bincount(kept, minlength=N) / kept.size
    return UlamMatrix(U, partition, T, samples_per_cell, escaped, escaped == samples_per_cell)
