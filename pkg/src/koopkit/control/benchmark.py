"""Tracking benchmarks: train models on random binary-actuated data, then run MPC for each."""

from __future__ import annotations

import copy
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..dmd import fit_dmdc
from ..edmd import fit_edmdc
from ..errors import DivergedTrajectory, InvalidInput
from ..observables import DelayDictionary, delay_embed, tps_rbf_dictionary
from ..systems import SystemSpec, TrainingSet, generate_training_set, make_system
from .model import Relinearizing, from_dmdc, from_edmdc
from .mpc import ClosedLoopResult, MpcProblem, Reference, realized_cost, run_closed_loop

MODEL_KINDS = ("dmdc", "ddmdc", "edmdc", "lmpc")

_TOP_KEYS = {"name", "system", "params", "dt", "substeps", "training", "models", "control", "run", "sweep"}
_TRAINING_KEYS = {"n_ic", "n_samples", "domain", "input_box", "seed", "switch_prob"}
_MODEL_KEYS = {"kind", "m", "n_centers", "seed", "ridge", "center_box", "label"}
_CONTROL_KEYS = {"reference", "horizon", "Q", "R", "R_delta", "y_bounds", "u_bounds", "soft_factor"}
_RUN_KEYS = {"x0", "duration"}
_SWEEP_KEYS = {"model", "grid", "duration", "box", "workers"}


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise InvalidInput(f"{where} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInput(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class BenchmarkConfig:
    name: str
    system: str
    params: dict
    dt: float
    substeps: int
    training: dict
    models: list
    control: dict
    run: dict
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        _check_keys(d, _TOP_KEYS, "config")
        for key in ("system", "dt", "training", "models", "control", "run"):
            if key not in d:
                raise InvalidInput(f"config missing {key!r}")
        _check_keys(d["training"], _TRAINING_KEYS, "training")
        _check_keys(d["control"], _CONTROL_KEYS, "control")
        _check_keys(d["run"], _RUN_KEYS, "run")
        _check_keys(d.get("sweep", {}), _SWEEP_KEYS, "sweep")
        if not isinstance(d["models"], list) or not d["models"]:
            raise InvalidInput("models must be a non-empty list")
        for spec in d["models"]:
            _check_keys(spec, _MODEL_KEYS, "model entry")
            if spec.get("kind") not in MODEL_KINDS:
                raise InvalidInput(f"model kind must be one of {MODEL_KINDS}")
        if float(d["dt"]) <= 0:
            raise InvalidInput("dt must be positive")
        return cls(
            d.get("name", d["system"]),
            d["system"],
            dict(d.get("params", {})),
            float(d["dt"]),
            int(d.get("substeps", 1)),
            dict(d["training"]),
            [dict(m) for m in d["models"]],
            dict(d["control"]),
            dict(d["run"]),
            dict(d.get("sweep", {})),
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(
            {
                "name": self.name,
                "system": self.system,
                "params": self.params,
                "dt": self.dt,
                "substeps": self.substeps,
                "training": self.training,
                "models": self.models,
                "control": self.control,
                "run": self.run,
                "sweep": self.sweep,
            }
        )


BUNDLED = {
    "dcmotor": "table61_dcmotor.json",
    "duffing": "table61_duffing.json",
    "vanderpol": "table61_vanderpol.json",
}


def load_config(path_or_name) -> BenchmarkConfig:
    """Read a benchmark config from a path, a bundled file name, or a short alias."""
    p = Path(str(path_or_name))
    if p.is_file():
        text = p.read_text()
    else:
        stem = BUNDLED.get(str(path_or_name), p.name)
        try:
            text = resources.files("koopkit.configs").joinpath(stem).read_text()
        except (FileNotFoundError, OSError) as exc:
            raise FileNotFoundError(f"no config file or bundled config named {path_or_name!r}") from exc
    return BenchmarkConfig.from_dict(json.loads(text))


def bundled_config_names() -> list[str]:
    return sorted(BUNDLED.values())


def training_set(cfg: BenchmarkConfig, sys: SystemSpec | None = None) -> TrainingSet:
    sys = make_system(cfg.system, cfg.params) if sys is None else sys
    tr = cfg.training
    return generate_training_set(
        sys,
        int(tr.get("n_ic", 100)),
        int(tr.get("n_samples", 1000)),
        cfg.dt,
        tr["domain"],
        tr.get("input_box"),
        int(tr.get("seed", 0)),
        float(tr.get("switch_prob", 0.1)),
        cfg.substeps,
    )


def delay_data(data: TrainingSet, sys: SystemSpec, m: int):
    """Stacked delay-vector snapshot pairs ``(W, W', U)`` over all trajectories."""
    parts = [delay_embed(sys.C @ tr.states, tr.inputs, m) for tr in data.trajectories]
    return (
        np.hstack([p.X for p in parts]),
        np.hstack([p.Xp for p in parts]),
        np.hstack([p.U for p in parts]),
    )


def _center_box(cfg: BenchmarkConfig, sys: SystemSpec, m: int, spec: dict) -> np.ndarray:
    if "center_box" in spec:
        return np.asarray(spec["center_box"], dtype=float)
    dom = np.asarray(cfg.training["domain"], dtype=float)
    ubox = np.asarray(cfg.training.get("input_box", np.zeros((sys.q, 2))), dtype=float).reshape(sys.q, 2)
    ybox = dom[list(sys.output_indices)]
    rows = [ybox]
    for _ in range(m):
        rows += [ybox, ubox]
    return np.vstack(rows)


def fit_model(spec: dict, cfg: BenchmarkConfig, sys: SystemSpec, data: TrainingSet):
    """Build the MPC predictor described by one ``models`` entry."""
    kind = spec["kind"]
    ny, nu = len(sys.output_indices), sys.q
    if kind == "dmdc":
        X, Xp, U = data.snapshot_pairs()
        return from_dmdc(fit_dmdc(X, Xp, U, cfg.dt), sys)
    if kind == "lmpc":
        return Relinearizing(sys, cfg.dt)
    m = int(spec.get("m", 1))
    W, Wp, U = delay_data(data, sys, m)
    base = DelayDictionary(m, ny, nu)
    ridge = float(spec.get("ridge", 0.0))
    if kind == "ddmdc":
        return from_edmdc(fit_edmdc(W, Wp, U, base, cfg.dt, ridge), m, ny, nu, kind="ddmdc")
    dictionary = tps_rbf_dictionary(base, int(spec.get("n_centers", 100)), _center_box(cfg, sys, m, spec), spec.get("seed", 1))
    return from_edmdc(fit_edmdc(W, Wp, U, dictionary, cfg.dt, ridge), m, ny, nu, kind="edmdc")


def make_problem(cfg: BenchmarkConfig, model) -> MpcProblem:
    c = cfg.control
    return MpcProblem(
        N=MpcProblem.horizon_steps(float(c["horizon"]), cfg.dt),
        model=model,
        reference=Reference.from_dict(c["reference"]),
        Q=c.get("Q", 1.0),
        R=c.get("R", 0.0),
        R_delta=c.get("R_delta", 0.0),
        y_bounds=tuple(c["y_bounds"]) if c.get("y_bounds") is not None else None,
        u_bounds=tuple(c["u_bounds"]) if c.get("u_bounds") is not None else None,
        soft_factor=float(c.get("soft_factor", 1e4)),
        dt=cfg.dt,
    )


def model_label(spec: dict) -> str:
    if "label" in spec:
        return spec["label"]
    if spec["kind"] in ("ddmdc", "edmdc"):
        return f"{spec['kind']}-{int(spec.get('m', 1))}"
    return spec["kind"]


def model_size(model) -> int:
    return int(model.A.shape[0]) if hasattr(model, "A") else int(model.sys.n)


@dataclass
class BenchmarkRun:
    label: str
    spec: dict
    p: int
    result: ClosedLoopResult | None
    fit_runtime: float
    error: str | None = None

    def summary(self, cfg: BenchmarkConfig, prob: MpcProblem | None) -> dict:
        out = {
            "system": cfg.system,
            "model": self.label,
            "kind": self.spec["kind"],
            "params": self.spec,
            "p": self.p,
            "fit_runtime": self.fit_runtime,
        }
        res = self.result
        if res is None:
            out.update({"J": None, "mean_abs_error": None, "max_violation": None, "runtime": None, "error": self.error})
            return out
        out.update(
            {
                "J": res.J,
                "J_recomputed": realized_cost(res.outputs, res.inputs, res.reference, prob.Q, prob.R, prob.R_delta),
                "mean_abs_error": res.mean_abs_error,
                "max_violation": res.max_violation,
                "runtime": res.runtime,
                "inputs_within_bounds": bool(
                    np.all(res.inputs >= prob.u_lo[:, None]) and np.all(res.inputs <= prob.u_hi[:, None])
                ),
                "qp_status": {s: res.status.count(s) for s in sorted(set(res.status))},
                "error": self.error,
            }
        )
        return out


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    runs: list
    problems: list
    training_runtime: float
    total_runtime: float

    def to_dict(self) -> dict:
        return {
            "schema": "koopkit.bench/1",
            "name": self.config.name,
            "system": self.config.system,
            "config": self.config.to_dict(),
            "training_runtime": self.training_runtime,
            "total_runtime": self.total_runtime,
            "runs": [r.summary(self.config, p) for r, p in zip(self.runs, self.problems)],
        }

    def run_for(self, label: str) -> BenchmarkRun:
        for r in self.runs:
            if r.label == label:
                return r
        raise KeyError(label)


def run_benchmark(cfg: BenchmarkConfig, models: list[str] | None = None) -> BenchmarkReport:
    """Generate the training set once, then fit and run closed loop for each model entry."""
    t_start = time.perf_counter()
    sys = make_system(cfg.system, cfg.params)
    data = training_set(cfg, sys)
    t_train = time.perf_counter() - t_start
    x0 = np.asarray(cfg.run["x0"], dtype=float)
    duration = float(cfg.run["duration"])
    runs, problems = [], []
    for spec in cfg.models:
        label = model_label(spec)
        if models is not None and label not in models and spec["kind"] not in models:
            continue
        t0 = time.perf_counter()
        model = fit_model(spec, cfg, sys, data)
        fit_time = time.perf_counter() - t0
        prob = make_problem(cfg, model)
        try:
            res = run_closed_loop(sys, prob, x0, duration, cfg.substeps)
            err = None
        except DivergedTrajectory as exc:
            res, err = exc.partial, str(exc)
        runs.append(BenchmarkRun(label, spec, model_size(model), res, fit_time, err))
        problems.append(prob)
    return BenchmarkReport(cfg, runs, problems, t_train, time.perf_counter() - t_start)


@dataclass
class SweepResult:
    x1: np.ndarray
    x2: np.ndarray
    J: np.ndarray
    label: str


def sweep_grid(cfg: BenchmarkConfig, model_spec: str | None = None, grid=None, duration=None, workers: int | None = None) -> SweepResult:
    """Closed-loop cost over a grid of initial conditions (first two state components).

    Each grid point runs with its own controller; results are merged in grid
    order (x1 fastest). Diverged runs report ``J = inf``.
    """
    sw = cfg.sweep
    label = model_spec or sw.get("model", "edmdc")
    spec = next((s for s in cfg.models if model_label(s) == label or s["kind"] == label), None)
    if spec is None:
        raise InvalidInput(f"no model {label!r} in config")
    shape = grid or sw.get("grid", [11, 11])
    duration = float(duration if duration is not None else sw.get("duration", cfg.run["duration"]))
    box = np.asarray(sw.get("box", cfg.training["domain"]), dtype=float)
    sys = make_system(cfg.system, cfg.params)
    if sys.n < 2:
        raise InvalidInput("grid sweep needs at least two states")
    data = training_set(cfg, sys)
    model = fit_model(spec, cfg, sys, data)
    g1 = np.linspace(box[0, 0], box[0, 1], int(shape[0]))
    g2 = np.linspace(box[1, 0], box[1, 1], int(shape[1]))
    X2, X1 = np.meshgrid(g2, g1, indexing="ij")
    points = np.column_stack([X1.ravel(), X2.ravel()])
    rest = np.zeros(sys.n - 2)

    def one(pt):
        prob = make_problem(cfg, model)
        try:
            return run_closed_loop(sys, prob, np.concatenate([pt, rest]), duration, cfg.substeps).J
        except DivergedTrajectory:
            return float("inf")

    n_workers = int(workers if workers is not None else sw.get("workers", 1))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            J = list(pool.map(one, points))
    else:
        J = [one(pt) for pt in points]
    return SweepResult(points[:, 0], points[:, 1], np.asarray(J, dtype=float), model_label(spec))
