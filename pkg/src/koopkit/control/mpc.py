"""Condensed receding-horizon tracking MPC on linear (lifted) predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergedTrajectory, InvalidInput, NumericalFailure
from ..numerics import solve_box_qp
from ..systems import SystemSpec, advance
from .model import History, LiftedLinearModel

SOFT_WEIGHT_FACTOR = 1e4
MAX_OUTER = 50


@dataclass
class Reference:
    """``offset + amplitude * wave(omega * t + phase)`` with ``wave`` cos or sin."""

    amplitude: float = 1.0
    omega: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    wave: str = "cos"

    def __post_init__(self):
        if self.wave not in ("cos", "sin", "const"):
            raise InvalidInput("wave must be cos, sin or const")

    def __call__(self, t) -> np.ndarray:
        if self.wave == "const":
            return np.atleast_1d(self.offset + self.amplitude + 0.0 * np.asarray(t, dtype=float))
        fn = np.cos if self.wave == "cos" else np.sin
        return np.atleast_1d(self.offset + self.amplitude * fn(self.omega * np.asarray(t, dtype=float) + self.phase))

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "omega": self.omega, "phase": self.phase, "offset": self.offset, "wave": self.wave}

    @classmethod
    def from_dict(cls, d: dict) -> "Reference":
        unknown = set(d) - {"amplitude", "omega", "phase", "offset", "wave"}
        if unknown:
            raise InvalidInput(f"unknown reference keys: {sorted(unknown)}")
        return cls(**d)


def _weight(W, dim: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        W = W * np.eye(dim)
    elif W.ndim == 1:
        W = np.diag(W)
    if W.shape != (dim, dim):
        raise InvalidInput(f"{name} must be scalar or {dim}x{dim}")
    if np.any(np.linalg.eigvalsh(0.5 * (W + W.T)) < -1e-14):
        raise InvalidInput(f"{name} must be positive semidefinite")
    return 0.5 * (W + W.T)


def _bounds(b, dim: int, name: str):
    if b is None:
        return np.full(dim, -np.inf), np.full(dim, np.inf)
    lo, hi = b
    lo = np.broadcast_to(np.asarray(-np.inf if lo is None else lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(np.inf if hi is None else hi, dtype=float), (dim,)).copy()
    if np.any(lo > hi):
        raise InvalidInput(f"{name} bounds must be ordered")
    return lo, hi


@dataclass
class MpcProblem:
    """Tracking problem ``min sum_k |y_k - r_k|_Q^2 + |u_k|_R^2 + |u_k - u_{k-1}|_Rd^2``.

    Output bounds are softened with weight ``soft_factor * Q_ii``; input
    bounds are hard. ``model`` is a LiftedLinearModel or any provider with a
    ``local_model(history)`` method.
    """

    N: int
    model: object
    reference: object
    Q: object = 1.0
    R: object = 0.0
    R_delta: object = 0.0
    y_bounds: tuple | None = None
    u_bounds: tuple | None = None
    soft_factor: float = SOFT_WEIGHT_FACTOR
    dt: float | None = None
    n_y: int = field(init=False)
    n_u: int = field(init=False)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidInput("horizon N must be a positive integer")
        self.N = int(self.N)
        C = np.atleast_2d(self.model.C)
        self.n_y = C.shape[0]
        if hasattr(self.model, "B"):
            self.n_u = np.asarray(self.model.B).reshape(np.asarray(self.model.A).shape[0], -1).shape[1]
        else:
            self.n_u = self.model.sys.q
        self.Q = _weight(self.Q, self.n_y, "Q")
        self.R = _weight(self.R, self.n_u, "R")
        self.R_delta = _weight(self.R_delta, self.n_u, "R_delta")
        self.y_lo, self.y_hi = _bounds(self.y_bounds, self.n_y, "output")
        self.u_lo, self.u_hi = _bounds(self.u_bounds, self.n_u, "input")
        if self.soft_factor < 0:
            raise InvalidInput("soft_factor must be nonnegative")
        if self.dt is None:
            self.dt = float(self.model.dt)
        if not math.isclose(self.dt, float(self.model.dt), rel_tol=1e-12):
            raise InvalidInput("problem and model sampling steps differ")

    @staticmethod
    def horizon_steps(T: float, dt: float) -> int:
        return max(1, int(round(T / dt)))

    @property
    def soft_weights(self) -> np.ndarray:
        return self.soft_factor * np.diag(self.Q)


@dataclass
class CondensedQp:
    """``0.5 U^T P U + q^T U + const`` over the stacked inputs, with prediction maps.

    ``Sy U + y_free`` are the predicted outputs y_1..y_N (stacked by step);
    ``active`` lists the softened output bounds ``(row, bound)`` included.
    """

    P: np.ndarray
    q: np.ndarray
    const: float
    lower: np.ndarray
    upper: np.ndarray
    Sy: np.ndarray
    y_free: np.ndarray
    ref: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray
    active: tuple = ()

    def predict(self, U) -> np.ndarray:
        return self.Sy @ U + self.y_free

    def violations(self, U, tol: float = 0.0) -> frozenset:
        Y = self.predict(U)
        hi = np.flatnonzero(Y > self.y_hi + tol)
        lo = np.flatnonzero(Y < self.y_lo - tol)
        return frozenset([(int(i), 1) for i in hi] + [(int(i), -1) for i in lo])


def _prediction(model: LiftedLinearModel, z0, N: int):
    A, B, C, c = model.A, model.B, model.C, model.c
    ny, q = C.shape[0], B.shape[1]
    W = C.copy()
    H = []
    for _ in range(N):
        H.append(W @ B)
        W = W @ A
    Sy = np.zeros((N * ny, N * q))
    for k in range(1, N + 1):
        for j in range(k):
            Sy[(k - 1) * ny : k * ny, j * q : (j + 1) * q] = H[k - 1 - j]
    z = np.asarray(z0, dtype=float).reshape(-1)
    y_free = np.empty(N * ny)
    for k in range(1, N + 1):
        z = A @ z + c
        y_free[(k - 1) * ny : k * ny] = C @ z
    return Sy, y_free


def build_condensed_qp(prob: MpcProblem, z0, u_prev=None, t0: float = 0.0, active=(), model=None) -> CondensedQp:
    """Eliminate the lifted states and return the box QP in ``u_0..u_{N-1}``.

    ``active`` holds ``(row, side)`` pairs of predicted outputs whose bound is
    enforced by the quadratic penalty ``w_s (y - bound)^2``.
    """
    model = prob.model if model is None else model
    N, ny, nu = prob.N, prob.n_y, prob.n_u
    u_prev = np.zeros(nu) if u_prev is None else np.atleast_1d(np.asarray(u_prev, dtype=float)).reshape(nu)
    Sy, y_free = _prediction(model, z0, N)
    times = t0 + prob.dt * np.arange(1, N + 1)
    ref = np.concatenate([np.broadcast_to(prob.reference(t), (ny,)) for t in times]).astype(float)
    Qb = np.kron(np.eye(N), prob.Q)
    Rb = np.kron(np.eye(N), prob.R)
    Rdb = np.kron(np.eye(N), prob.R_delta)
    D = np.eye(N * nu) - np.eye(N * nu, k=-nu)
    e0 = np.zeros(N * nu)
    e0[:nu] = u_prev
    err = y_free - ref
    P = 2.0 * (Sy.T @ Qb @ Sy + Rb + D.T @ Rdb @ D)
    qv = 2.0 * (Sy.T @ Qb @ err - D.T @ Rdb @ e0)
    const = float(err @ Qb @ err + e0 @ Rdb @ e0)
    y_lo = np.tile(prob.y_lo, N)
    y_hi = np.tile(prob.y_hi, N)
    ws = np.tile(prob.soft_weights, N)
    for row, side in sorted(active):
        bound = y_hi[row] if side > 0 else y_lo[row]
        s = Sy[row]
        gap = y_free[row] - bound
        P += 2.0 * ws[row] * np.outer(s, s)
        qv += 2.0 * ws[row] * gap * s
        const += ws[row] * gap * gap
    P = 0.5 * (P + P.T)
    return CondensedQp(
        P, qv, const, np.tile(prob.u_lo, N), np.tile(prob.u_hi, N), Sy, y_free, ref, y_lo, y_hi, tuple(sorted(active))
    )


@dataclass
class StepInfo:
    status: str
    outer_iterations: int
    active: int
    predicted_violation: float


class MpcController:
    """Stateful receding-horizon controller (warm start of the planned sequence).

    Each step solves the softened problem by an outer active-set loop: the
    penalty set is the set of predicted outputs violating their bounds at the
    current plan, iterated to a fixed point from the empty set.
    """

    def __init__(self, prob: MpcProblem, warm_start: bool = True, tol: float = 1e-10, max_iter: int = 20000):
        self.prob = prob
        self.warm_start = warm_start
        self.tol = tol
        self.max_iter = max_iter
        self.plan: np.ndarray | None = None
        self.info: list[StepInfo] = []
        self.last_qp: CondensedQp | None = None

    def _initial_guess(self):
        if not self.warm_start or self.plan is None:
            return None
        nu = self.prob.n_u
        return np.concatenate([self.plan[nu:], self.plan[-nu:]])

    def solve(self, z0, u_prev, t0: float, model=None):
        """Return ``(plan, qp, info)`` for one planning problem."""
        prob = self.prob
        x0 = self._initial_guess()
        active: frozenset = frozenset()
        seen = {}
        status = "max_outer"
        U = qp = None
        for it in range(1, MAX_OUTER + 1):
            qp = build_condensed_qp(prob, z0, u_prev, t0, active, model)
            U = solve_box_qp(qp.P, qp.q, qp.lower, qp.upper, x0=x0, tol=self.tol, max_iter=self.max_iter)
            seen[active] = (U, qp)
            x0 = U
            nxt = qp.violations(U)
            if nxt == active:
                status = "optimal"
                break
            if nxt in seen:
                status = "cycle"
                U, qp = min(seen.values(), key=lambda pair: _penalized(prob, pair[1], pair[0], u_prev))
                break
            active = nxt
        Y = qp.predict(U)
        viol = float(np.max(np.maximum(0.0, np.maximum(Y - qp.y_hi, qp.y_lo - Y)), initial=0.0))
        return U, qp, StepInfo(status, it, len(qp.active), viol)

    def step(self, history: History) -> np.ndarray:
        prob = self.prob
        nu = prob.n_u
        u_prev = history.u[-1] if history.u else np.zeros(nu)
        try:
            model = prob.model.local_model(history)
            z0 = model.lift_history(history)
            U, qp, info = self.solve(z0, u_prev, history.t, model)
        except NumericalFailure:
            self.info.append(StepInfo("failed", 0, 0, float("nan")))
            return np.clip(u_prev, prob.u_lo, prob.u_hi)
        self.plan = U
        self.last_qp = qp
        self.info.append(info)
        return np.clip(U[:nu], prob.u_lo, prob.u_hi)


def _penalized(prob: MpcProblem, qp: CondensedQp, U, u_prev) -> float:
    N, nu = prob.N, prob.n_u
    Y = qp.predict(U)
    err = Y - qp.ref
    val = float(err @ np.kron(np.eye(N), prob.Q) @ err + U @ np.kron(np.eye(N), prob.R) @ U)
    dU = U - np.concatenate([np.atleast_1d(u_prev), U[:-nu]])
    val += float(dU @ np.kron(np.eye(N), prob.R_delta) @ dU)
    ws = np.tile(prob.soft_weights, N)
    over = np.maximum(0.0, Y - qp.y_hi) + np.maximum(0.0, qp.y_lo - Y)
    return val + float(np.sum(ws * over * over))


def mpc_step(prob: MpcProblem, history: History, controller: MpcController | None = None) -> np.ndarray:
    """First input of the optimal plan for the current measurement history."""
    controller = MpcController(prob) if controller is None else controller
    return controller.step(history)


@dataclass
class ClosedLoopResult:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    reference: np.ndarray
    J: float
    violation: np.ndarray
    status: list
    runtime: float = 0.0

    @property
    def max_violation(self) -> float:
        return float(np.max(self.violation, initial=0.0))

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.outputs - self.reference)))


def realized_cost(outputs, inputs, reference, Q, R, R_delta=None) -> float:
    """``|y_K - r_K|_Q^2 + sum_{k<K} |y_k - r_k|_Q^2 + |u_k|_R^2`` (plus ``|du_k|_Rd^2`` if given).

    ``outputs``/``reference`` are ``(n_y, K+1)``, ``inputs`` ``(q, K)``.
    """
    Y = np.atleast_2d(outputs)
    Rf = np.atleast_2d(reference)
    U = np.atleast_2d(inputs)
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    E = Y - Rf
    J = float(np.einsum("ik,ij,jk->", E, Q, E) + np.einsum("ik,ij,jk->", U, R, U))
    if R_delta is not None and np.any(R_delta):
        dU = np.diff(np.concatenate([np.zeros((U.shape[0], 1)), U], axis=1), axis=1)
        J += float(np.einsum("ik,ij,jk->", dU, np.atleast_2d(R_delta), dU))
    return J


def run_closed_loop(
    plant: SystemSpec,
    prob: MpcProblem,
    x0,
    T_total: float,
    substeps: int = 1,
    warm_start: bool = True,
    controller: MpcController | None = None,
) -> ClosedLoopResult:
    """Apply the MPC to the plant for ``round(T_total/dt)`` steps under zero-order hold.

    Raises DivergedTrajectory carrying the partial ClosedLoopResult if the
    plant state becomes non-finite.
    """
    import time

    start = time.perf_counter()
    dt = prob.dt
    K = int(round(T_total / dt))
    if K < 1:
        raise InvalidInput("T_total shorter than one sampling step")
    ctrl = MpcController(prob, warm_start) if controller is None else controller
    x = np.asarray(x0, dtype=float).reshape(plant.n)
    hist = History(0.0, dt)
    X = np.empty((plant.n, K + 1))
    Y = np.empty((prob.n_y, K + 1))
    U = np.empty((prob.n_u, K))
    Rf = np.empty((prob.n_y, K + 1))
    J = 0.0
    u_last = np.zeros(prob.n_u)

    def stage(k, y):
        e = y - Rf[:, k]
        return float(e @ prob.Q @ e)

    for k in range(K + 1):
        t = k * dt
        X[:, k] = x
        Y[:, k] = plant.output(x)
        Rf[:, k] = np.broadcast_to(prob.reference(t), (prob.n_y,))
        J += stage(k, Y[:, k])
        if k == K:
            break
        hist.push(Y[:, k], x)
        u = ctrl.step(hist)
        hist.record_input(u)
        U[:, k] = u
        du = u - u_last
        J += float(u @ prob.R @ u + du @ prob.R_delta @ du)
        u_last = u
        x = advance(plant, x, u, t, dt, substeps)
        if not np.all(np.isfinite(x)):
            viol = _violation(Y[:, : k + 1], prob)
            partial = ClosedLoopResult(
                X[:, : k + 1], X[:, : k + 1], Y[:, : k + 1], U[:, : k + 1], Rf[:, : k + 1], J, viol,
                [i.status for i in ctrl.info], time.perf_counter() - start,
            )
            partial.times = dt * np.arange(k + 1)
            raise DivergedTrajectory(f"plant diverged after step {k}", k, partial)
    return ClosedLoopResult(
        dt * np.arange(K + 1), X, Y, U, Rf, J, _violation(Y, prob), [i.status for i in ctrl.info], time.perf_counter() - start
    )


def _violation(Y, prob: MpcProblem) -> np.ndarray:
    over = np.maximum(0.0, np.maximum(Y - prob.y_hi[:, None], prob.y_lo[:, None] - Y))
    return np.max(over, axis=0)
