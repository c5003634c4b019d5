"""Linear predictors used by the MPC: lifted Koopman models and local linearizations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..dmd import DmdcModel
from ..edmd import EdmdModel
from ..errors import InvalidInput
from ..observables import DelayDictionary, Dictionary, IdentityDictionary
from ..systems import SystemSpec


@dataclass
class History:
    """Measurements seen by a controller: states (if measured), outputs and applied inputs.

    ``x[k]``/``y[k]`` are the samples at step k and ``u[k]`` the input applied
    over [t_k, t_{k+1}).
    """

    t0: float = 0.0
    dt: float = 1.0
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    u: list = field(default_factory=list)

    def push(self, y, x=None):
        self.y.append(np.atleast_1d(np.asarray(y, dtype=float)).copy())
        self.x.append(None if x is None else np.asarray(x, dtype=float).copy())

    def record_input(self, u):
        self.u.append(np.atleast_1d(np.asarray(u, dtype=float)).copy())

    @property
    def k(self) -> int:
        return len(self.y) - 1

    @property
    def t(self) -> float:
        return self.t0 + self.k * self.dt

    def delay_vector(self, m: int, n_y: int, n_u: int) -> np.ndarray:
        """``[y_k, (y,u)_{k-1}, ..., (y,u)_{k-m}]`` with missing samples filled by zeros."""
        k = self.k
        parts = [self.y[k]]
        for j in range(1, m + 1):
            idx = k - j
            parts.append(self.y[idx] if idx >= 0 else np.zeros(n_y))
            if n_u:
                parts.append(self.u[idx] if 0 <= idx < len(self.u) else np.zeros(n_u))
        return np.concatenate(parts)


@dataclass
class LiftedLinearModel:
    """``z_{k+1} = A z_k + B u_k + c``, ``y_k = C z_k``.

    ``source`` is ``"state"`` when the lift acts on the measured plant state and
    ``"delay"`` when it acts on the delay vector of outputs and inputs.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    lift: Dictionary
    dt: float
    source: str = "state"
    m: int = 0
    n_y: int = 1
    n_u: int = 1
    c: np.ndarray | None = None
    kind: str = "lifted"

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        p = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(p, -1)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.A.shape != (p, p) or self.C.shape[1] != p or self.lift.p != p:
            raise InvalidInput("inconsistent lifted model dimensions")
        self.c = np.zeros(p) if self.c is None else np.asarray(self.c, dtype=float).reshape(p)
        if self.source not in ("state", "delay"):
            raise InvalidInput("source must be 'state' or 'delay'")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    def local_model(self, history: History) -> "LiftedLinearModel":
        return self

    def lift_history(self, history: History) -> np.ndarray:
        if self.source == "state":
            x = history.x[history.k]
            if x is None:
                raise InvalidInput("state-lifted model needs full-state measurements")
            return self.lift(x)
        return self.lift(history.delay_vector(self.m, self.n_y, self.n_u))

    def step(self, z, u):
        return self.A @ z + self.B @ np.atleast_1d(u) + self.c


def from_dmdc(model: DmdcModel, sys: SystemSpec) -> LiftedLinearModel:
    """Full-state DMDc model; the output is read through the plant's selector."""
    return LiftedLinearModel(model.A, model.B, sys.C, IdentityDictionary(sys.n), model.dt, "state", kind="dmdc")


def from_edmdc(model: EdmdModel, m: int, n_y: int = 1, n_u: int = 1, kind: str = "edmdc") -> LiftedLinearModel:
    """Delay-coordinate eDMDc (or DDMDc) model; ``y_k`` is the first observable."""
    C = model.C
    if C.shape[0] != n_y:
        C = C[:n_y]
    return LiftedLinearModel(model.A, model.B, C, model.dictionary, model.dt, "delay", m, n_y, n_u, kind=kind)


def jacobians(sys: SystemSpec, x_op, u_op=None, t: float = 0.0, h: float = 1e-6):
    """Central-difference Jacobians ``(df/dx, df/du)`` at an operating point."""
    x_op = np.asarray(x_op, dtype=float).reshape(sys.n)
    u_op = np.zeros(sys.q) if u_op is None else np.atleast_1d(np.asarray(u_op, dtype=float)).reshape(sys.q)
    Ac = np.empty((sys.n, sys.n))
    for j in range(sys.n):
        step = h * max(1.0, abs(x_op[j]))
        e = np.zeros(sys.n)
        e[j] = step
        Ac[:, j] = (sys.f(x_op + e, u_op, t) - sys.f(x_op - e, u_op, t)) / (2 * step)
    Bc = np.empty((sys.n, sys.q))
    for j in range(sys.q):
        step = h * max(1.0, abs(u_op[j]))
        e = np.zeros(sys.q)
        e[j] = step
        Bc[:, j] = (sys.f(x_op, u_op + e, t) - sys.f(x_op, u_op - e, t)) / (2 * step)
    return Ac, Bc


@dataclass
class LocalLinearization(LiftedLinearModel):
    Ac: np.ndarray | None = None
    Bc: np.ndarray | None = None


def linearize_local(sys: SystemSpec, x_op, u_op=None, dt: float = 0.1, t: float = 0.0, h: float = 1e-6) -> LocalLinearization:
    """Zero-order-hold discretization of the linearization about ``(x_op, u_op)``.

    The drift at the operating point is kept as an affine term, so the model
    is valid away from equilibria: ``x_{k+1} = A x_k + B u_k + c``.
    """
    x_op = np.asarray(x_op, dtype=float).reshape(sys.n)
    u_op = np.zeros(sys.q) if u_op is None else np.atleast_1d(np.asarray(u_op, dtype=float)).reshape(sys.q)
    Ac, Bc = jacobians(sys, x_op, u_op, t, h)
    f0 = sys.f(x_op, u_op, t)
    n, q = sys.n, sys.q
    M = np.zeros((n + q + 1, n + q + 1))
    M[:n, :n] = Ac
    M[:n, n : n + q] = Bc
    M[:n, -1] = f0
    E = scipy.linalg.expm(M * dt)
    Phi, Gam, d = E[:n, :n], E[:n, n : n + q], E[:n, -1]
    c = x_op - Phi @ x_op - Gam @ u_op + d
    return LocalLinearization(
        Phi, Gam, sys.C, IdentityDictionary(n), dt, "state", c=c, kind="lmpc", Ac=Ac, Bc=Bc
    )


class Relinearizing:
    """Model provider that relinearizes the plant about the current measured state."""

    kind = "lmpc"
    source = "state"

    def __init__(self, sys: SystemSpec, dt: float, h: float = 1e-6):
        self.sys = sys
        self.dt = dt
        self.h = h
        self.C = sys.C

    def local_model(self, history: History) -> LiftedLinearModel:
        x = history.x[history.k]
        if x is None:
            raise InvalidInput("local linearization needs full-state measurements")
        u_op = history.u[-1] if history.u else np.zeros(self.sys.q)
        return linearize_local(self.sys, x, u_op, self.dt, history.t, self.h)


def delay_state_dictionary(m: int, n_y: int = 1, n_u: int = 1) -> DelayDictionary:
    return DelayDictionary(m, n_y, n_u)
