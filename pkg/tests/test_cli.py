import csv
import hashlib
import json

import numpy as np
import pytest

from koopkit.cli import main
from koopkit.control.benchmark import load_config


def run(*argv):
    return main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def small_bench(tmp_path):
    cfg = load_config("dcmotor").to_dict()
    cfg["training"].update(n_ic=5, n_samples=200)
    cfg["models"] = [{"kind": "dmdc"}, {"kind": "ddmdc", "m": 1}]
    cfg["sweep"] = {"model": "dmdc", "grid": [2, 2], "duration": 0.1}
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(cfg))
    return path


def test_simulate_lorenz_row_count(tmp_path):
    out = tmp_path / "traj.csv"
    assert run("simulate", "--system", "lorenz63", "--t", 10, "--dt", 1e-3, "--out", out, "--no-figures") == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x1,x2,x3"
    assert len(lines) == 10001 + 1


def test_fit_then_predict(tmp_path, capsys):
    traj = tmp_path / "traj.csv"
    model = tmp_path / "model.json"
    run("simulate", "--system", "lorenz63", "--t", 1, "--dt", 1e-3, "--out", traj, "--no-figures")
    assert run("fit", "dmd", "--in", traj, "--rank", 3, "--out", model, "--no-figures") == 0
    pred = tmp_path / "pred.csv"
    assert run("predict", "--model", model, "--steps", 5, "--out", pred) == 0
    table = rows(pred)
    assert table[0][0] == "k"
    assert len(table) == 1 + 5


def test_fit_writes_figures_and_plot_data(tmp_path):
    traj = tmp_path / "traj.csv"
    model = tmp_path / "model.json"
    run("simulate", "--system", "van_der_pol", "--t", 5, "--dt", 0.01, "--out", traj)
    assert (tmp_path / "traj_states.png").stat().st_size > 0
    run("fit", "dmd", "--in", traj, "--rank", 2, "--out", model)
    assert (tmp_path / "model_eigs.png").read_bytes()[:4] == b"\x89PNG"
    eigs = rows(tmp_path / "model_eigs.csv")
    assert len(eigs) == 3


def test_bench_report_schema(tmp_path, small_bench):
    out = tmp_path / "report.json"
    assert run("bench", "mpc", "--config", small_bench, "--out", out, "--no-figures") == 0
    report = json.loads(out.read_text())
    assert report["schema"] == "koopkit.bench/1"
    assert [r["model"] for r in report["runs"]] == ["dmdc", "ddmdc-1"]
    for r in report["runs"]:
        assert {"J", "mean_abs_error", "max_violation", "runtime", "params"} <= set(r)
        assert r["inputs_within_bounds"] is True
        assert abs(r["J"] - r["J_recomputed"]) <= 1e-9 * max(1.0, abs(r["J"]))


def test_sweep_grid_csv(tmp_path, small_bench):
    out = tmp_path / "sweep.csv"
    assert run("sweep", "mpc-grid", "--config", small_bench, "--out", out, "--no-figures") == 0
    table = rows(out)
    assert table[0] == ["x1", "x2", "J"]
    assert len(table) == 1 + 4


def test_ctrb_pbh_json(tmp_path):
    out = tmp_path / "pbh.json"
    assert run("ctrb", "pbh", "--A", "[[1,0],[0,2]]", "--B", "[[1],[0]]", "--out", out, "--no-figures") == 0
    d = json.loads(out.read_text())
    assert {round(e["alpha"][0]): e["rank"] for e in d["eigenvalues"]} == {1: 2, 2: 1}
    assert d["controllable"] is False


def test_ulam_doubling(tmp_path):
    out = tmp_path / "u.csv"
    assert run("ulam", "--map", "doubling", "--bounds", "[[0,1]]", "--shape", 2, "--samples", 10000,
               "--seed", 0, "--out", out, "--no-figures") == 0
    U = np.array(rows(out)[1:], dtype=float)
    assert np.all(np.abs(U - 0.5) <= 0.02)


def test_eigfun_continuous_growth(tmp_path):
    traj = tmp_path / "traj.csv"
    run("simulate", "--system", "linear_generic", "--params", '{"A": [[1.0]]}', "--x0=-1", "--t", 0.69,
        "--dt", 0.01, "--out", traj, "--no-figures")
    out = tmp_path / "ef.csv"
    assert run("eigfun", "continuous", "--in", traj, "--system", "linear_generic", "--params", '{"A": [[1.0]]}',
               "--degree", 3, "--out", out, "--no-figures") == 0
    table = rows(out)
    mu_col = table[0].index("mu_re")
    np.testing.assert_allclose(sorted(float(r[mu_col]) for r in table[1:]), [1, 2, 3], atol=1e-6)


def test_exit_codes(tmp_path):
    assert run("simulate", "--bogus") == 1
    assert run("simulate", "--system", "nope", "--out", tmp_path / "x.csv") == 1
    assert run("predict", "--model", tmp_path / "missing.json", "--steps", 2) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "koopkit.model", "version": 99, "kind": "dmd"}')
    assert run("predict", "--model", bad, "--steps", 2) == 3
    traj = tmp_path / "flat.csv"
    traj.write_text("t,x1\n0,0\n1,0\n2,0\n")
    assert run("fit", "dmd", "--in", traj, "--out", tmp_path / "m.json", "--no-figures") == 2


def test_inputs_not_mutated(tmp_path):
    traj = tmp_path / "traj.csv"
    run("simulate", "--system", "van_der_pol", "--t", 2, "--dt", 0.01, "--out", traj, "--no-figures")
    before = digest(traj)
    model = tmp_path / "m.json"
    run("fit", "edmd", "--in", traj, "--dictionary", "monomial", "--degree", 2, "--out", model, "--no-figures")
    run("harmonic-avg", "--in", traj, "--omega", 0.0, "--out", tmp_path / "h.csv", "--no-figures")
    model_before = digest(model)
    run("predict", "--model", model, "--steps", 3, "--out", tmp_path / "p.csv")
    assert digest(traj) == before
    assert digest(model) == model_before


def test_seeded_commands_reproducible(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        run("gen-training", "--system", "duffing_forced", "--n-ic", 3, "--n-samples", 20, "--dt", 0.1,
            "--domain=-1,1", "--seed", 7, "--out", out, "--no-figures")
        outs.append(digest(out))
    assert outs[0] == outs[1]
    again = tmp_path / "c.csv"
    run("gen-training", "--system", "duffing_forced", "--n-ic", 3, "--n-samples", 20, "--dt", 0.1,
        "--domain=-1,1", "--seed", 8, "--out", again, "--no-figures")
    assert digest(again) != outs[0]


def test_no_partial_output_on_failure(tmp_path):
    traj = tmp_path / "flat.csv"
    traj.write_text("t,x1\n0,0\n1,0\n2,0\n")
    out = tmp_path / "m.json"
    run("fit", "dmd", "--in", traj, "--out", out, "--no-figures")
    assert not out.exists()
    assert not list(tmp_path.glob("*.tmp"))
