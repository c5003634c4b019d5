"""Command-line entry point: ``koopkit <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
Outputs are written atomically; a PNG figure is rendered next to the main
output unless ``--no-figures`` is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._files import atomic_open, fmt
from .errors import (
    DegenerateData,
    DivergedTrajectory,
    IllPosed,
    InvalidInput,
    InvalidProblem,
    KoopkitError,
    ModelFileError,
    NoGradient,
    NumericalFailure,
    RankDeficient,
    UnknownSystem,
    VersionError,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------


def _floats(text) -> np.ndarray:
    """Parse ``"1,2,3"`` or a JSON number/list into a float array."""
    if isinstance(text, (list, tuple, int, float)):
        return np.asarray(text, dtype=float)
    try:
        return np.asarray(json.loads(text), dtype=float)
    except (json.JSONDecodeError, TypeError, ValueError):
        try:
            return np.asarray([float(v) for v in str(text).split(",") if v.strip()], dtype=float)
        except ValueError as exc:
            raise UsageError(f"cannot parse numbers from {text!r}") from exc


def _box(text, dim: int | None = None) -> np.ndarray:
    """``"lo,hi;lo,hi"`` or JSON ``[[lo,hi],...]``."""
    if isinstance(text, str) and ";" in text:
        B = np.array([_floats(part) for part in text.split(";")], dtype=float)
    else:
        B = np.atleast_2d(_floats(text))
    if B.shape[-1] != 2:
        raise UsageError(f"box {text!r} must list [lo, hi] pairs")
    if dim is not None and B.shape[0] == 1 and dim > 1:
        B = np.tile(B, (dim, 1))
    return B


def _exponents(text):
    """``"1,0;0,1;2,0"`` or JSON ``[[1,0],[0,1],[2,0]]`` -> list of exponent tuples."""
    if text is None:
        return None
    if isinstance(text, str) and not text.lstrip().startswith("["):
        rows = [[int(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    else:
        rows = _json_arg(text)
    try:
        return [tuple(int(v) for v in row) for row in rows]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"cannot parse monomial exponents {text!r}") from exc


def _json_arg(text):
    if text is None or isinstance(text, (dict, list)):
        return text
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON: {text!r}") from exc


def _common(p: argparse.ArgumentParser, need_in: bool = False, need_out: bool = False):
    p.add_argument("--in", dest="inp", default=None, required=need_in, help="input file")
    p.add_argument("--out", default=None, required=need_out, help="output file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file with option values")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _apply_config(args, parser_defaults: dict, reserved=("inp", "out", "config", "command", "sub", "func", "no_figures")):
    """Fill options not given on the command line from ``--config``, then from defaults."""
    cfg = {}
    if args.config is not None and not getattr(args, "config_is_benchmark", False):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {args.config} not found")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = set(parser_defaults) | {"seed", "inp", "out"}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for key in ("inp", "out"):
            if key in cfg and getattr(args, key) is None:
                setattr(args, key, cfg.pop(key))
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, default))
    if args.seed is None:
        args.seed = cfg.get("seed", 0)


def _validate_paths(args, need_in: bool, need_out: bool):
    if need_in and not args.inp:
        raise UsageError("--in is required")
    if need_out and not args.out:
        raise UsageError("--out is required")
    if args.inp:
        p = Path(args.inp)
        if not p.is_file():
            raise FileNotFoundError(f"input file {args.inp} not found")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if args.inp and out.resolve() == Path(args.inp).resolve():
            raise UsageError("--out must differ from --in (inputs are never modified)")


def _figures(args) -> bool:
    return bool(args.out) and not args.no_figures


def _side(out, suffix: str, ext: str) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}.{ext}")


def _write_rows(path, header, rows):
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def _emit_rows(args, header, rows):
    if args.out:
        _write_rows(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])


def _emit_json(args, payload):
    from .io import write_json

    if args.out:
        write_json(payload, args.out)
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _c(z) -> list:
    return [float(np.real(z)), float(np.imag(z))]


# --------------------------------------------------------------------------
# data loading
# --------------------------------------------------------------------------


def _load_trajectories(path):
    from .systems import read_trajectories_csv

    return read_trajectories_csv(path)


def _pairs(trajs, need_inputs: bool = False):
    X = np.hstack([t.states[:, :-1] for t in trajs])
    Xp = np.hstack([t.states[:, 1:] for t in trajs])
    U = np.hstack([t.inputs for t in trajs])
    if need_inputs and U.shape[0] == 0:
        raise UsageError("input CSV has no u columns")
    return X, Xp, U


def _dt(args, trajs) -> float:
    if args.dt is not None:
        return float(args.dt)
    dt = trajs[0].dt
    if dt <= 0:
        raise UsageError("cannot infer dt from a single sample; pass --dt")
    return dt


def _rank_rule(args):
    from .numerics import RankRule

    chosen = [v is not None for v in (args.rank, args.energy, args.threshold)]
    if sum(chosen) > 1:
        raise UsageError("give at most one of --rank, --energy, --threshold")
    if args.rank is not None:
        return RankRule.fixed(int(args.rank))
    if args.energy is not None:
        return RankRule.energy(float(args.energy))
    if args.threshold is not None:
        return RankRule.threshold(float(args.threshold))
    return None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

SIM_DEFAULTS = {"system": None, "params": None, "x0": None, "t": 10.0, "t0": 0.0, "dt": 1e-3, "substeps": 1, "u": None}


def cmd_simulate(args):
    from .systems import integrate_rk4, make_system, write_trajectory_csv

    _apply_config(args, SIM_DEFAULTS)
    if not args.system:
        raise UsageError("--system is required")
    _validate_paths(args, False, True)
    sys_ = make_system(args.system, _json_arg(args.params))
    x0 = np.ones(sys_.n) if args.x0 is None else _floats(args.x0)
    if x0.size != sys_.n:
        raise UsageError(f"--x0 needs {sys_.n} values")
    u = None if args.u is None else _floats(args.u)
    traj = integrate_rk4(sys_, x0, u, float(args.t0), float(args.t0) + float(args.t), float(args.dt), int(args.substeps))
    write_trajectory_csv(traj, args.out)
    if _figures(args):
        from .plotting import plot_trajectory

        plot_trajectory(traj.times, traj.states, _side(args.out, "states", "png"))
    print(f"wrote {traj.n_samples} samples of {sys_.name} to {args.out}")


GEN_DEFAULTS = {
    "system": None,
    "params": None,
    "n_ic": 100,
    "n_samples": 1000,
    "dt": 0.01,
    "domain": None,
    "input_box": None,
    "switch_prob": 0.1,
    "substeps": 1,
}


def cmd_gen_training(args):
    from .systems import generate_training_set, make_system, write_training_csv

    _apply_config(args, GEN_DEFAULTS)
    if not args.system or args.domain is None:
        raise UsageError("--system and --domain are required")
    _validate_paths(args, False, True)
    sys_ = make_system(args.system, _json_arg(args.params))
    domain = _box(args.domain, sys_.n)
    ibox = None if args.input_box is None else _box(args.input_box, sys_.q)
    data = generate_training_set(
        sys_, int(args.n_ic), int(args.n_samples), float(args.dt), domain, ibox, int(args.seed), float(args.switch_prob), int(args.substeps)
    )
    write_training_csv(data, args.out)
    print(f"wrote {data.total_samples} samples ({len(data.trajectories)} trajectories) to {args.out}")


FIT_DEFAULTS = {
    "dt": None,
    "rank": None,
    "energy": None,
    "threshold": None,
    "on_singular": "raise",
    "allow_rank_deficient": False,
    "dictionary": "monomial",
    "degree": 2,
    "monomials": None,
    "centers": 100,
    "ridge": 0.0,
    "domain": None,
    "delays": None,
    "output": 1,
    "state": 1,
    "q": 100,
    "r": 15,
    "tail": 2.0,
}


def _make_dictionary(args, X):
    from .observables import DelayDictionary, IdentityDictionary, monomial_dictionary, tps_rbf_dictionary

    n = X.shape[0]
    kind = args.dictionary
    if kind == "identity":
        return IdentityDictionary(n)
    if kind == "monomial":
        exps = _exponents(args.monomials)
        if exps is not None:
            return monomial_dictionary(n, exponents=exps)
        return monomial_dictionary(n, int(args.degree))
    if kind in ("tps", "delay-tps"):
        base = DelayDictionary(int(args.delays), 1, args._n_u) if args.delays is not None else IdentityDictionary(n)
        if args.domain is not None:
            box = _box(args.domain, base.p)
        else:
            box = np.column_stack([X.min(axis=1), X.max(axis=1)])
            flat = box[:, 1] <= box[:, 0]
            box[flat, 1] = box[flat, 0] + 1.0
        return tps_rbf_dictionary(base, int(args.centers), box, int(args.seed))
    if kind == "delay":
        return DelayDictionary(int(args.delays or 0), 1, args._n_u)
    raise UsageError(f"unknown dictionary {kind!r}")


def _write_spectrum(args, values, dt):
    if not args.out:
        return
    path = _side(args.out, "eigs", "csv")
    with np.errstate(divide="ignore"):
        omega = np.log(np.asarray(values, dtype=complex)) / dt
    _write_rows(path, ["re", "im", "abs", "omega_re", "omega_im"], [(v.real, v.imag, abs(v), w.real, w.imag) for v, w in zip(values, omega)])
    if _figures(args):
        from .plotting import plot_eigenvalues

        plot_eigenvalues(values, _side(args.out, "eigs", "png"))


def cmd_fit(args):
    from .io import serialize_model

    _apply_config(args, FIT_DEFAULTS)
    _validate_paths(args, True, True)
    trajs = _load_trajectories(args.inp)
    dt = _dt(args, trajs)
    kind = args.sub
    if kind in ("dmd", "fbdmd"):
        from .dmd import fit_exact_dmd, fit_fb_dmd

        X, Xp, _ = _pairs(trajs)
        rule = _rank_rule(args)
        model = fit_exact_dmd(X, Xp, dt, rule) if kind == "dmd" else fit_fb_dmd(X, Xp, dt, rule, args.on_singular)
        serialize_model(model, args.out)
        _write_spectrum(args, model.Lambda, dt)
        _write_rows(
            _side(args.out, "modes", "csv"),
            ["row"] + [f"abs_phi{j + 1}" for j in range(model.r)],
            [[str(i)] + list(np.abs(model.Phi[i])) for i in range(model.n)],
        )
        print(f"{kind}: rank {model.r}, {len(model.Lambda)} eigenvalues -> {args.out}")
    elif kind == "dmdc":
        from .dmd import fit_dmdc

        X, Xp, U = _pairs(trajs, need_inputs=True)
        model = fit_dmdc(X, Xp, U, dt, _rank_rule(args), bool(args.allow_rank_deficient))
        serialize_model(model, args.out)
        _write_spectrum(args, np.linalg.eigvals(model.A), dt)
        print(f"dmdc: A {model.A.shape}, B {model.B.shape} -> {args.out}")
    elif kind in ("edmd", "edmdc"):
        from .edmd import fit_edmd, fit_edmdc
        from .observables import delay_embed

        args._n_u = trajs[0].inputs.shape[0] if kind == "edmdc" else 0
        if args.delays is not None:
            idx = int(args.output) - 1
            parts = [delay_embed(t.states[idx], t.inputs if args._n_u else None, int(args.delays)) for t in trajs]
            X = np.hstack([p.X for p in parts])
            Xp = np.hstack([p.Xp for p in parts])
            U = np.hstack([p.U for p in parts])
        else:
            X, Xp, U = _pairs(trajs, need_inputs=(kind == "edmdc"))
        dictionary = _make_dictionary(args, X)
        ridge = float(args.ridge)
        model = fit_edmd(X, Xp, dictionary, dt, ridge) if kind == "edmd" else fit_edmdc(X, Xp, U, dictionary, dt, ridge)
        serialize_model(model, args.out)
        _write_spectrum(args, model.eigenvalues, dt)
        print(f"{kind}: {dictionary.kind} dictionary, p = {dictionary.p} -> {args.out}")
    elif kind == "havok":
        from .havok import fit_havok, forcing_stats
        from .io import write_json

        series = np.concatenate([t.states[int(args.state) - 1] for t in trajs[:1]])
        model = fit_havok(series, dt, int(args.q), int(args.r))
        serialize_model(model, args.out)
        stats = forcing_stats(model, float(args.tail))
        times = dt * np.arange(model.V.shape[0])
        _write_rows(_side(args.out, "forcing", "csv"), ["t", "forcing"], zip(times, model.forcing))
        write_json(
            {
                "kurtosis": stats.kurtosis,
                "tail_fraction": stats.tail_fraction,
                "gaussian_tail": stats.gaussian_tail,
                "threshold": float(args.tail),
                "events": stats.events,
                "r2": model.r2.tolist(),
                "low_confidence": model.low_confidence,
            },
            _side(args.out, "stats", "json"),
        )
        if _figures(args):
            from .plotting import plot_forcing

            plot_forcing(times, model.forcing, _side(args.out, "forcing", "png"), float(args.tail))
        print(f"havok: q={model.q}, r={model.r}, forcing kurtosis {stats.kurtosis:.3f} -> {args.out}")
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown fit kind {kind}")


EIG_DEFAULTS = {
    "model": None,
    "threshold": 1e-3,
    "system": None,
    "params": None,
    "degree": 3,
    "monomials": None,
    "dt": None,
    "candidates": None,
}


def _eigfun_rows(efs):
    p = len(efs[0].coeffs) if efs else 0
    header = ["index", "lambda_re", "lambda_im", "mu_re", "mu_im", "score", "spurious"]
    header += [f"c{j + 1}_{part}" for j in range(p) for part in ("re", "im")]
    rows = []
    for i, ef in enumerate(efs):
        lam = ef.lam if ef.lam is not None else complex("nan")
        row = [str(i), lam.real, lam.imag, ef.mu.real, ef.mu.imag, ef.score, str(int(ef.spurious))]
        for c in ef.coeffs:
            row += [c.real, c.imag]
        rows.append(row)
    return header, rows


def cmd_eigfun(args):
    _apply_config(args, EIG_DEFAULTS)
    if args.sub == "extract":
        from .edmd import EdmdModel, extract_eigenfunctions
        from .io import load_model

        if not args.model:
            raise UsageError("--model is required")
        _validate_paths(args, True, False)
        if not Path(args.model).is_file():
            raise FileNotFoundError(f"model file {args.model} not found")
        model = load_model(args.model)
        if not isinstance(model, EdmdModel):
            raise UsageError("eigfun extract needs an edmd/edmdc model")
        trajs = _load_trajectories(args.inp)
        efs = extract_eigenfunctions(model, [t.states for t in trajs], float(args.threshold))
    else:
        from .edmd import central_difference_derivative, fit_continuous_eigenfunctions
        from .observables import monomial_dictionary
        from .systems import make_system

        _validate_paths(args, True, False)
        trajs = _load_trajectories(args.inp)
        X = np.hstack([t.states for t in trajs])
        if args.system:
            sys_ = make_system(args.system, _json_arg(args.params))
            Xdot = np.column_stack([sys_.f(X[:, j]) for j in range(X.shape[1])])
        else:
            Xdot = np.hstack([central_difference_derivative(t.states, _dt(args, [t])) for t in trajs])
        exps = _exponents(args.monomials)
        if exps is not None:
            dictionary = monomial_dictionary(X.shape[0], exponents=exps)
        else:
            dictionary = monomial_dictionary(X.shape[0], int(args.degree))
        cand = "solve" if args.candidates is None else _floats(args.candidates).astype(complex)
        efs = fit_continuous_eigenfunctions(X, Xdot, dictionary, cand, float(args.threshold))
    header, rows = _eigfun_rows(efs)
    _emit_rows(args, header, rows)
    n_ok = sum(not e.spurious for e in efs)
    print(f"{len(efs)} eigenfunctions, {n_ok} validated", file=sys.stderr)


PRED_DEFAULTS = {"model": None, "steps": 10, "x0": None, "u": None}


def cmd_predict(args):
    from .dmd import DmdcModel, DmdModel, dmd_predict
    from .edmd import EdmdModel
    from .havok import HavokModel, simulate_havok
    from .io import load_model
    from .numerics import lstsq

    _apply_config(args, PRED_DEFAULTS)
    if not args.model:
        raise UsageError("--model is required")
    if not Path(args.model).is_file():
        raise FileNotFoundError(f"model file {args.model} not found")
    _validate_paths(args, False, False)
    model = load_model(args.model)
    steps = int(args.steps)
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    x0 = None
    U = None
    if args.inp:
        tr = _load_trajectories(args.inp)[0]
        x0 = tr.states[:, 0]
        if tr.inputs.shape[0] and tr.inputs.shape[1] >= steps:
            U = tr.inputs[:, :steps]
    if args.x0 is not None:
        x0 = _floats(args.x0)
    ks = np.arange(1, steps + 1)
    if isinstance(model, DmdModel):
        if x0 is not None:
            model.b = lstsq(model.Phi, np.asarray(x0, dtype=complex))
        Y = dmd_predict(model, k=ks + 1)
        dt = model.dt
    elif isinstance(model, HavokModel):
        Y = simulate_havok(model, 0, steps)[:, 1:]
        dt = model.dt
    else:
        if x0 is None:
            raise UsageError("this model kind needs --x0 or --in")
        q = model.B.shape[1] if model.B is not None else 0
        if U is None:
            U = np.zeros((q, steps)) if args.u is None else np.tile(_floats(args.u).reshape(q, 1), (1, steps))
        if isinstance(model, DmdcModel):
            Y = model.rollout(x0, U)[:, 1:]
        elif isinstance(model, EdmdModel):
            Y = model.predict(x0, steps, U if q else None)[:, 1:]
        else:  # pragma: no cover
            raise UsageError("unsupported model")
        dt = model.dt
    Y = np.atleast_2d(np.real(Y))
    header = ["k", "t"] + [f"x{i + 1}" for i in range(Y.shape[0])]
    rows = [[str(int(k)), k * dt] + list(Y[:, j]) for j, k in enumerate(ks)]
    _emit_rows(args, header, rows)


HARM_DEFAULTS = {"omega": None, "dt": None, "columns": None}


def cmd_harmonic(args):
    from .edmd import harmonic_average

    _apply_config(args, HARM_DEFAULTS)
    if args.omega is None:
        raise UsageError("--omega is required")
    _validate_paths(args, True, False)
    tr = _load_trajectories(args.inp)[0]
    dt = _dt(args, [tr])
    cols = range(tr.states.shape[0]) if args.columns is None else [int(c) - 1 for c in _floats(args.columns)]
    rows = []
    for c in cols:
        h = harmonic_average(tr.states[c], float(args.omega), dt)
        rows.append([f"x{c + 1}", h.value.real, h.value.imag, abs(h.value), h.tail])
    _emit_rows(args, ["observable", "re", "im", "abs", "tail"], rows)


ULAM_DEFAULTS = {"map": "doubling", "alpha": 0.1, "system": None, "params": None, "T": None, "dt": None, "bounds": "0,1", "shape": "2", "samples": 1000}


def _builtin_map(name: str, alpha: float):
    if name == "identity":
        return lambda P: P.copy()
    if name == "doubling":
        return lambda P: np.mod(2.0 * P, 1.0)
    if name == "rotation":
        return lambda P: np.mod(P + alpha, 1.0)
    raise UsageError(f"unknown map {name!r} (identity, doubling, rotation, system)")


def cmd_ulam(args):
    from .edmd import BoxGrid, ulam_matrix
    from .systems import make_system

    _apply_config(args, ULAM_DEFAULTS)
    _validate_paths(args, False, True)
    bounds = _box(args.bounds)
    shape = _floats(args.shape).astype(int)
    if bounds.shape[0] == 1 and shape.size > 1:
        bounds = np.tile(bounds, (shape.size, 1))
    grid = BoxGrid.make(bounds[:, 0], bounds[:, 1], shape)
    if args.map == "system":
        if not args.system or args.T is None or args.dt is None:
            raise UsageError("--map system needs --system, --T and --dt")
        mapping = make_system(args.system, _json_arg(args.params))
        res = ulam_matrix(mapping, grid, int(args.samples), int(args.seed), float(args.T), float(args.dt))
    else:
        res = ulam_matrix(_builtin_map(args.map, float(args.alpha)), grid, int(args.samples), int(args.seed))
    N = grid.n_cells
    _write_rows(args.out, [f"c{j}" for j in range(N)], res.U.tolist())
    from .io import write_json

    write_json(
        {"shape": list(grid.shape), "escaped": res.escaped.tolist(), "flagged": res.flagged.tolist(), "samples_per_cell": res.samples_per_cell},
        _side(args.out, "info", "json"),
    )
    if _figures(args):
        from .plotting import plot_matrix

        plot_matrix(res.U, _side(args.out, "matrix", "png"), "Ulam matrix")
    print(f"ulam: {N} cells, {int(res.flagged.sum())} flagged -> {args.out}")


CTRB_DEFAULTS = {"A": None, "B": None, "model": None, "system": None, "params": None, "x": None, "k_max": 3, "step": 1e-2}


def _pair_from_args(args):
    from .dmd import DmdcModel
    from .edmd import EdmdModel
    from .io import load_model

    if args.model:
        if not Path(args.model).is_file():
            raise FileNotFoundError(f"model file {args.model} not found")
        m = load_model(args.model)
        if isinstance(m, (DmdcModel, EdmdModel)) and m.B is not None:
            return m.A, m.B
        raise UsageError("--model must be a dmdc or edmdc model")
    if args.inp:
        d = json.loads(Path(args.inp).read_text())
        return np.asarray(d["A"], dtype=float), np.asarray(d["B"], dtype=float)
    if args.A is None or args.B is None:
        raise UsageError("give --A and --B, --in, or --model")
    A = np.atleast_2d(_floats(args.A))
    return A, _floats(args.B).reshape(A.shape[0], -1)


def cmd_ctrb(args):
    from .control.controllability import koopman_controllability, lie_bracket_controllability, pbh_test
    from .systems import make_system

    _apply_config(args, CTRB_DEFAULTS)
    _validate_paths(args, False, False)
    if args.sub == "koopman":
        A, B = _pair_from_args(args)
        res = koopman_controllability(A, B)
        payload = {"rank": res.rank, "n": int(A.shape[0]), "controllable": res.full, "matrix": res.matrix.tolist()}
    elif args.sub == "pbh":
        A, B = _pair_from_args(args)
        entries = pbh_test(A, B)
        payload = {
            "n": int(A.shape[0]),
            "eigenvalues": [{"alpha": _c(e.eigenvalue), "rank": e.rank} for e in entries],
            "controllable": all(e.rank == A.shape[0] for e in entries),
        }
    else:
        if not args.system:
            raise UsageError("ctrb lie needs --system")
        sys_ = make_system(args.system, _json_arg(args.params))
        x = np.zeros(sys_.n) if args.x is None else _floats(args.x)
        res = lie_bracket_controllability(sys_, x, int(args.k_max), h=float(args.step))
        payload = {"rank": res.rank, "n": sys_.n, "columns": res.columns.tolist()}
    _emit_json(args, payload)


BENCH_DEFAULTS = {"models": None}
SWEEP_DEFAULTS = {"model": None, "grid": None, "duration": None, "workers": None}


def cmd_bench(args):
    from .control.benchmark import load_config, run_benchmark
    from .io import write_json

    args.config_is_benchmark = True
    _apply_config(args, BENCH_DEFAULTS)
    if not args.config:
        raise UsageError("bench mpc needs --config (file or bundled name)")
    _validate_paths(args, False, True)
    cfg = load_config(args.config)
    models = None if args.models is None else [m.strip() for m in str(args.models).split(",")]
    report = run_benchmark(cfg, models)
    payload = report.to_dict()
    write_json(payload, args.out)
    rows = []
    for run in report.runs:
        res = run.result
        if res is None:
            continue
        for k, t in enumerate(res.times):
            u = res.inputs[0, k] if k < res.inputs.shape[1] else ""
            rows.append([run.label, t, res.outputs[0, k], res.reference[0, k], u])
    _write_rows(_side(args.out, "traces", "csv"), ["model", "t", "y", "r", "u"], rows)
    if _figures(args):
        from .plotting import plot_costs, plot_tracking

        yb = cfg.control.get("y_bounds")
        plot_tracking([(r.label, r.result) for r in report.runs], _side(args.out, "tracking", "png"), yb, cfg.name)
        plot_costs(payload["runs"], _side(args.out, "costs", "png"), cfg.name)
    for s in payload["runs"]:
        J = "nan" if s["J"] is None else f"{s['J']:.6g}"
        print(f"{cfg.name:>12s} {s['model']:>10s}  p={s['p']:<4d} J={J}")


def cmd_sweep(args):
    from .control.benchmark import load_config, sweep_grid

    args.config_is_benchmark = True
    _apply_config(args, SWEEP_DEFAULTS)
    if not args.config:
        raise UsageError("sweep mpc-grid needs --config")
    _validate_paths(args, False, True)
    cfg = load_config(args.config)
    grid = None if args.grid is None else [int(v) for v in _floats(args.grid)]
    res = sweep_grid(cfg, args.model, grid, args.duration, args.workers)
    _write_rows(args.out, ["x1", "x2", "J"], zip(res.x1, res.x2, res.J))
    if _figures(args):
        from .plotting import plot_sweep

        plot_sweep(res.x1, res.x2, res.J, _side(args.out, "heatmap", "png"), f"{cfg.name} {res.label}")
    print(f"sweep: {res.J.size} initial conditions -> {args.out}")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="koopkit", description="Koopman operator models and Koopman MPC.")
    p.add_argument("--version", action="version", version=f"koopkit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate a catalog system")
    _common(s)
    s.add_argument("--system")
    s.add_argument("--params", help="JSON object of parameter overrides")
    s.add_argument("--x0")
    s.add_argument("--t", type=float, help="duration")
    s.add_argument("--t0", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--substeps", type=int)
    s.add_argument("--u", help="constant input")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gen-training", help="random binary-actuated training trajectories")
    _common(s)
    s.add_argument("--system")
    s.add_argument("--params")
    s.add_argument("--n-ic", dest="n_ic", type=int)
    s.add_argument("--n-samples", dest="n_samples", type=int)
    s.add_argument("--dt", type=float)
    s.add_argument("--domain")
    s.add_argument("--input-box", dest="input_box")
    s.add_argument("--switch-prob", dest="switch_prob", type=float)
    s.add_argument("--substeps", type=int)
    s.set_defaults(func=cmd_gen_training)

    s = sub.add_parser("fit", help="fit a model from trajectory CSV")
    s.add_argument("sub", choices=["dmd", "fbdmd", "dmdc", "edmd", "edmdc", "havok"])
    _common(s)
    s.add_argument("--dt", type=float)
    s.add_argument("--rank", type=int)
    s.add_argument("--energy", type=float)
    s.add_argument("--threshold", type=float)
    s.add_argument("--on-singular", dest="on_singular", choices=["raise", "fallback"])
    s.add_argument("--allow-rank-deficient", dest="allow_rank_deficient", action="store_const", const=True)
    s.add_argument("--dictionary", choices=["identity", "monomial", "tps", "delay"])
    s.add_argument("--degree", type=int)
    s.add_argument("--monomials", help='explicit exponents, e.g. "1,0;0,1;2,0" for x1, x2, x1^2')
    s.add_argument("--centers", type=int)
    s.add_argument("--ridge", type=float)
    s.add_argument("--domain", help="center box for TPS features")
    s.add_argument("--delays", type=int, help="use delay coordinates of one output")
    s.add_argument("--output", type=int, help="1-based state index used as output with --delays")
    s.add_argument("--state", type=int, help="1-based state index for havok")
    s.add_argument("--q", type=int, help="Hankel rows for havok")
    s.add_argument("--r", type=int, help="havok rank")
    s.add_argument("--tail", type=float, help="forcing tail threshold in std units")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eigfun", help="Koopman eigenfunctions")
    s.add_argument("sub", choices=["extract", "continuous"])
    _common(s)
    s.add_argument("--model")
    s.add_argument("--threshold", type=float)
    s.add_argument("--system", help="evaluate the vector field exactly (continuous)")
    s.add_argument("--params")
    s.add_argument("--degree", type=int)
    s.add_argument("--monomials", help='explicit exponents, e.g. "1,0;0,1;2,0"')
    s.add_argument("--dt", type=float)
    s.add_argument("--candidates", help="candidate eigenvalues instead of solving")
    s.set_defaults(func=cmd_eigfun)

    s = sub.add_parser("predict", help="roll a saved model forward")
    _common(s)
    s.add_argument("--model")
    s.add_argument("--steps", type=int)
    s.add_argument("--x0")
    s.add_argument("--u")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("harmonic-avg", help="harmonic (Fourier) time average")
    _common(s)
    s.add_argument("--omega", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--columns", help="1-based state indices")
    s.set_defaults(func=cmd_harmonic)

    s = sub.add_parser("ulam", help="Monte-Carlo Ulam matrix")
    _common(s)
    s.add_argument("--map", choices=["identity", "doubling", "rotation", "system"])
    s.add_argument("--alpha", type=float)
    s.add_argument("--system")
    s.add_argument("--params")
    s.add_argument("--T", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--bounds")
    s.add_argument("--shape")
    s.add_argument("--samples", type=int)
    s.set_defaults(func=cmd_ulam)

    s = sub.add_parser("ctrb", help="controllability analysis")
    s.add_argument("sub", choices=["koopman", "pbh", "lie"])
    _common(s)
    s.add_argument("--A")
    s.add_argument("--B")
    s.add_argument("--model")
    s.add_argument("--system")
    s.add_argument("--params")
    s.add_argument("--x")
    s.add_argument("--k-max", dest="k_max", type=int)
    s.add_argument("--step", type=float)
    s.set_defaults(func=cmd_ctrb)

    s = sub.add_parser("bench", help="closed-loop MPC benchmark")
    s.add_argument("sub", choices=["mpc"])
    _common(s)
    s.add_argument("--models", help="comma-separated model labels or kinds")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="closed-loop cost over an initial-condition grid")
    s.add_argument("sub", choices=["mpc-grid"])
    _common(s)
    s.add_argument("--model")
    s.add_argument("--grid")
    s.add_argument("--duration", type=float)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args.func(args)
        return EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, InvalidInput, InvalidProblem, UnknownSystem, NoGradient) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, DivergedTrajectory, DegenerateData, IllPosed, RankDeficient, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, VersionError, ModelFileError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KoopkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
