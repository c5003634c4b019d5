"""Benchmark dynamical systems, fixed-step RK4 integration and training data.

Right-hand sides are written so they work on a single state of shape ``(n,)``
or on a batch of states stacked as columns, shape ``(n, B)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._files import atomic_open, fmt
from .errors import DivergedTrajectory, InvalidInput, UnknownSystem


@dataclass(frozen=True)
class SystemSpec:
    name: str
    n: int
    q: int
    rhs: Callable = field(repr=False)
    output_indices: tuple = (0,)
    params: dict = field(default_factory=dict)

    def f(self, x, u=None, t: float = 0.0):
        x = np.asarray(x, dtype=float)
        if self.q == 0:
            u = None
        elif u is None:
            u = np.zeros((self.q,) + x.shape[1:])
        else:
            u = np.asarray(u, dtype=float)
            if u.ndim == 0:
                u = np.full((self.q,) + x.shape[1:], float(u))
            elif u.ndim == 1 and x.ndim == 2:
                u = np.broadcast_to(u[:, None], (self.q,) + x.shape[1:])
        return np.asarray(self.rhs(x, u, t), dtype=float)

    @property
    def C(self) -> np.ndarray:
        C = np.zeros((len(self.output_indices), self.n))
        for row, idx in enumerate(self.output_indices):
            C[row, idx] = 1.0
        return C

    def output(self, x):
        x = np.asarray(x, dtype=float)
        return x[list(self.output_indices)]

    def drift(self, x, t: float = 0.0):
        """f0(x) = f(x, 0, t)."""
        return self.f(x, None, t)

    def input_field(self, j: int, x, t: float = 0.0):
        """f_j(x) = f(x, e_j, t) - f(x, 0, t); exact for control-affine systems."""
        e = np.zeros(self.q)
        e[j] = 1.0
        return self.f(x, e, t) - self.f(x, None, t)


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------

_DEFAULTS = {
    "slow_manifold": {"mu": -0.05, "lam": 1.0, "controlled": False},
    "duffing_forced": {"a": 1.0, "b": -1.0, "d": -0.3, "f0": 0.5, "omega": 1.2},
    "van_der_pol": {"mu": 2.0},
    "dc_motor_bilinear": {
        "La": 0.314,
        "Ra": 12.345,
        "km": 0.253,
        "J": 0.00441,
        "B": 0.00732,
        "tau_l": 1.47,
        "u_a": 60.0,
    },
    "lorenz63": {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    "pendulum": {"g": 9.81, "l": 1.0, "damping": 0.0},
    "linear_generic": {"A": [[0.0]], "B": None, "output": None},
}

SYSTEM_NAMES = tuple(_DEFAULTS)


def _slow_manifold(p):
    mu, lam = p["mu"], p["lam"]

    def rhs(x, u, t):
        dx2 = lam * (x[1] - x[0] ** 2)
        if u is not None:
            dx2 = dx2 + u[0]
        return np.stack([mu * x[0], dx2])

    q = 1 if p["controlled"] else 0
    return SystemSpec("slow_manifold", 2, q, rhs, (0, 1), p)


def _duffing(p):
    a, b, d, f0, w = p["a"], p["b"], p["d"], p["f0"], p["omega"]

    def rhs(x, u, t):
        acc = a * x[0] + b * x[0] ** 3 + d * x[1] + f0 * np.cos(w * t)
        if u is not None:
            acc = acc + u[0]
        return np.stack([x[1], acc])

    return SystemSpec("duffing_forced", 2, 1, rhs, (0,), p)


def _van_der_pol(p):
    mu = p["mu"]

    def rhs(x, u, t):
        acc = mu * (1.0 - x[0] ** 2) * x[1] - x[0]
        if u is not None:
            acc = acc + u[0]
        return np.stack([x[1], acc])

    return SystemSpec("van_der_pol", 2, 1, rhs, (0,), p)


def _dc_motor(p):
    La, Ra, km, J, B, tl, ua = (p[k] for k in ("La", "Ra", "km", "J", "B", "tau_l", "u_a"))

    def rhs(x, u, t):
        uu = 0.0 if u is None else u[0]
        dx1 = -(Ra / La) * x[0] - (km / La) * x[1] * uu + ua / La
        dx2 = -(B / J) * x[1] + (km / J) * x[0] * uu - tl / J
        return np.stack([dx1, dx2])

    return SystemSpec("dc_motor_bilinear", 2, 1, rhs, (1,), p)


def _lorenz(p):
    s, r, b = p["sigma"], p["rho"], p["beta"]

    def rhs(x, u, t):
        return np.stack([s * (x[1] - x[0]), x[0] * (r - x[2]) - x[1], x[0] * x[1] - b * x[2]])

    return SystemSpec("lorenz63", 3, 0, rhs, (0,), p)


def _pendulum(p):
    g, length, c = p["g"], p["l"], p["damping"]

    def rhs(x, u, t):
        acc = -(g / length) * np.sin(x[0]) - c * x[1]
        if u is not None:
            acc = acc + u[0]
        return np.stack([x[1], acc])

    return SystemSpec("pendulum", 2, 1, rhs, (0,), p)


def _linear(p):
    A = np.atleast_2d(np.asarray(p["A"], dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidInput("linear_generic: A must be square")
    B = None if p.get("B") is None else np.asarray(p["B"], dtype=float).reshape(n, -1)
    q = 0 if B is None else B.shape[1]
    out = tuple(range(n)) if p.get("output") is None else tuple(int(i) for i in p["output"])

    def rhs(x, u, t):
        dx = np.tensordot(A, x, axes=(1, 0))
        if u is not None and B is not None:
            dx = dx + np.tensordot(B, u, axes=(1, 0))
        return dx

    return SystemSpec("linear_generic", n, q, rhs, out, p)


_BUILDERS = {
    "slow_manifold": _slow_manifold,
    "duffing_forced": _duffing,
    "van_der_pol": _van_der_pol,
    "dc_motor_bilinear": _dc_motor,
    "lorenz63": _lorenz,
    "pendulum": _pendulum,
    "linear_generic": _linear,
}


def make_system(name: str, params: dict | None = None) -> SystemSpec:
    """Build a catalog system; ``params`` overrides the default parameter record."""
    if name not in _BUILDERS:
        raise UnknownSystem(f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}")
    merged = dict(_DEFAULTS[name])
    for key, value in (params or {}).items():
        if key not in merged:
            raise InvalidInput(f"{name}: unknown parameter {key!r}")
        merged[key] = value
    return _BUILDERS[name](merged)


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def n_samples(self) -> int:
        return self.states.shape[1]


def rk4_step(sys: SystemSpec, x, u, t: float, h: float):
    k1 = sys.f(x, u, t)
    k2 = sys.f(x + 0.5 * h * k1, u, t + 0.5 * h)
    k3 = sys.f(x + 0.5 * h * k2, u, t + 0.5 * h)
    k4 = sys.f(x + h * k3, u, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def advance(sys: SystemSpec, x, u, t: float, dt: float, substeps: int = 1):
    """Advance one sample interval with the input held constant."""
    h = dt / substeps
    for s in range(substeps):
        x = rk4_step(sys, x, u, t + s * h, h)
    return x


def _n_steps(t0: float, t1: float, dt: float) -> int:
    if dt <= 0:
        raise InvalidInput("dt must be positive")
    ratio = (t1 - t0) / dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)) or steps < 0:
        raise InvalidInput(f"(t1 - t0)/dt = {ratio} is not an integer")
    return steps


def _input_schedule(sys: SystemSpec, u, steps: int):
    """Return a per-step input getter ``get(k, t, x) -> (q,)`` and a static array or None."""
    q = sys.q
    if q == 0:
        return (lambda k, t, x: None), np.zeros((0, steps))
    if u is None:
        arr = np.zeros((q, steps))
        return (lambda k, t, x: arr[:, k]), arr
    if callable(u):
        return (lambda k, t, x: np.asarray(u(t, x), dtype=float).reshape(q)), None
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0 or (arr.ndim == 1 and arr.size == q):
        arr = np.repeat(arr.reshape(q, 1), steps, axis=1)
    elif arr.ndim == 1 and q == 1:
        arr = arr.reshape(1, -1)
    if arr.shape != (q, steps):
        raise InvalidInput(f"input signal shape {arr.shape} != ({q}, {steps})")
    return (lambda k, t, x: arr[:, k]), arr


def integrate_rk4(sys: SystemSpec, x0, u=None, t0: float = 0.0, t1: float = 1.0, dt: float = 1e-3, substeps: int = 1) -> Trajectory:
    """Classical RK4 on a uniform grid with zero-order-hold inputs.

    ``u`` may be None, a constant (scalar or length-q), a ``(q, steps)`` array,
    or a callable ``u(t, x)`` evaluated at the start of each step.
    """
    steps = _n_steps(t0, t1, dt)
    x = np.asarray(x0, dtype=float).reshape(sys.n)
    if not np.all(np.isfinite(x)):
        raise InvalidInput("x0 must be finite")
    get_u, _ = _input_schedule(sys, u, steps)
    times = t0 + dt * np.arange(steps + 1)
    states = np.empty((sys.n, steps + 1))
    inputs = np.empty((sys.q, steps))
    states[:, 0] = x
    for k in range(steps):
        uk = get_u(k, times[k], x)
        if sys.q:
            inputs[:, k] = uk
        x = advance(sys, x, uk, times[k], dt, substeps)
        if not np.all(np.isfinite(x)):
            partial = Trajectory(times[: k + 1], states[:, : k + 1].copy(), inputs[:, :k].copy())
            raise DivergedTrajectory(f"{sys.name}: non-finite state at step {k + 1}", k, partial)
        states[:, k + 1] = x
    return Trajectory(times, states, inputs)


# --------------------------------------------------------------------------
# training data
# --------------------------------------------------------------------------


@dataclass
class TrainingSet:
    trajectories: list
    domain: np.ndarray
    input_box: np.ndarray
    seed: int
    dt: float

    @property
    def total_samples(self) -> int:
        return sum(tr.n_samples for tr in self.trajectories)

    def snapshot_pairs(self):
        """Stack (X, X', U) over all trajectories; pairs never straddle trajectories."""
        X = np.hstack([tr.states[:, :-1] for tr in self.trajectories])
        Xp = np.hstack([tr.states[:, 1:] for tr in self.trajectories])
        U = np.hstack([tr.inputs for tr in self.trajectories])
        return X, Xp, U


def _as_box(box, dim: int, name: str) -> np.ndarray:
    B = np.asarray(box, dtype=float)
    if dim == 0:
        return np.zeros((0, 2))
    if B.shape == (2,):
        B = np.tile(B, (dim, 1))
    if B.shape != (dim, 2):
        raise InvalidInput(f"{name} must have shape ({dim}, 2), got {B.shape}")
    if np.any(B[:, 0] > B[:, 1]):
        raise InvalidInput(f"{name} has lower > upper")
    return B


def binary_input_sequence(rng: np.random.Generator, box: np.ndarray, steps: int, switch_prob: float = 0.1) -> np.ndarray:
    """Random telegraph signal between the box extremes, one channel per row."""
    q = box.shape[0]
    out = np.empty((q, steps))
    for j in range(q):
        level = rng.integers(0, 2)
        switches = rng.random(steps) < switch_prob
        levels = (level + np.cumsum(switches)) % 2
        out[j] = np.where(levels == 0, box[j, 0], box[j, 1])
    return out


def generate_training_set(
    sys: SystemSpec,
    n_ic: int,
    n_samples: int,
    dt: float,
    domain,
    input_box=None,
    seed: int = 0,
    switch_prob: float = 0.1,
    substeps: int = 1,
) -> TrainingSet:
    """Trajectories from uniform random initial conditions with binary actuation.

    All trajectories are integrated together as one batch; the RNG draws
    (initial conditions, then inputs per trajectory) are in index order so a
    fixed seed reproduces the set bit for bit.
    """
    if n_ic < 1 or n_samples < 1:
        raise InvalidInput("n_ic and n_samples must be >= 1")
    domain = _as_box(domain, sys.n, "domain")
    input_box = _as_box(np.zeros((sys.q, 2)) if input_box is None else input_box, sys.q, "input_box")
    rng = np.random.default_rng(seed)
    x0 = domain[:, 0][:, None] + (domain[:, 1] - domain[:, 0])[:, None] * rng.random((sys.n, n_ic))
    steps = n_samples - 1
    U = np.zeros((sys.q, n_ic, steps))
    for i in range(n_ic):
        if sys.q:
            U[:, i, :] = binary_input_sequence(rng, input_box, steps, switch_prob)

    states = np.empty((sys.n, n_ic, n_samples))
    states[:, :, 0] = x0
    x = x0.copy()
    for k in range(steps):
        uk = U[:, :, k] if sys.q else None
        x = advance(sys, x, uk, k * dt, dt, substeps)
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=0))[0])
            raise DivergedTrajectory(f"{sys.name}: training trajectory {bad} diverged at step {k + 1}", k)
        states[:, :, k + 1] = x

    times = dt * np.arange(n_samples)
    trajs = [Trajectory(times, states[:, i, :].copy(), U[:, i, :].copy()) for i in range(n_ic)]
    return TrainingSet(trajs, domain, input_box, seed, dt)


# --------------------------------------------------------------------------
# CSV interchange
# --------------------------------------------------------------------------


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n, m = traj.states.shape
    q = traj.inputs.shape[0]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(q)]
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(m):
            row = [fmt(traj.times[k])] + [fmt(v) for v in traj.states[:, k]]
            if q:
                row += [fmt(v) for v in traj.inputs[:, k]] if k < m - 1 else [""] * q
            w.writerow(row)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInput(f"{path}: empty CSV")
    header = rows[0]
    if not header or header[0] != "t":
        raise InvalidInput(f"{path}: header must start with 't'")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u")]
    body = rows[1:]
    times = np.array([float(r[0]) for r in body])
    states = np.array([[float(r[i]) for i in xcols] for r in body]).T.reshape(len(xcols), len(body))
    if ucols:
        inputs = np.array([[float(r[i]) for i in ucols] for r in body[:-1]]).T.reshape(len(ucols), len(body) - 1)
    else:
        inputs = np.zeros((0, max(len(body) - 1, 0)))
    return Trajectory(times, states, inputs)


def write_training_csv(data: TrainingSet, path) -> None:
    """All trajectories in one CSV with a leading ``traj`` index column."""
    first = data.trajectories[0]
    n, q = first.states.shape[0], first.inputs.shape[0]
    header = ["traj", "t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(q)]
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for idx, tr in enumerate(data.trajectories):
            m = tr.n_samples
            for k in range(m):
                row = [str(idx), fmt(tr.times[k])] + [fmt(v) for v in tr.states[:, k]]
                if q:
                    row += [fmt(v) for v in tr.inputs[:, k]] if k < m - 1 else [""] * q
                w.writerow(row)


def read_trajectories_csv(path) -> list[Trajectory]:
    """Read a trajectory CSV, with or without a leading ``traj`` column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InvalidInput(f"{path}: CSV has no data rows")
    header = rows[0]
    grouped = header[0] == "traj"
    if header[int(grouped)] != "t":
        raise InvalidInput(f"{path}: expected a 't' column")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ucols = [i for i, h in enumerate(header) if h.startswith("u")]
    groups: dict = {}
    for r in rows[1:]:
        if not r:
            continue
        groups.setdefault(r[0] if grouped else "0", []).append(r)
    out = []
    tcol = int(grouped)
    try:
        for body in groups.values():
            times = np.array([float(r[tcol]) for r in body])
            states = np.array([[float(r[i]) for i in xcols] for r in body]).T.reshape(len(xcols), len(body))
            if ucols:
                inputs = np.array([[float(r[i]) for i in ucols] for r in body[:-1]]).T.reshape(len(ucols), len(body) - 1)
            else:
                inputs = np.zeros((0, len(body) - 1))
            out.append(Trajectory(times, states, inputs))
    except (ValueError, IndexError) as exc:
        raise InvalidInput(f"{path}: malformed CSV ({exc})") from exc
    return out
