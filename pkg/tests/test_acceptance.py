"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records one ``ACCEPTANCE <id> PASS|FAIL`` line before asserting;
pytest prints them together in an "acceptance criteria" summary section.
Run ``python tests/test_acceptance.py`` for the verdict lines alone.
"""

import os
import subprocess
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import conftest
import numpy as np
import pytest

from koopkit.control import (
    koopman_controllability,
    lie_bracket_controllability,
    pbh_test,
    realized_cost,
)
from koopkit.control.benchmark import load_config, run_benchmark
from koopkit.dmd import fit_dmdc, fit_exact_dmd, fit_fb_dmd
from koopkit.edmd import (
    BoxGrid,
    extract_eigenfunctions,
    fit_continuous_eigenfunctions,
    fit_edmd,
    harmonic_average,
    ulam_matrix,
)
from koopkit.havok import build_hankel, fit_delay_dmd, fit_havok, forcing_stats
from koopkit.observables import monomial_dictionary
from koopkit.systems import generate_training_set, integrate_rk4, make_system

TESTS_DIR = Path(__file__).resolve().parent
MODULE_START = time.perf_counter()


def verdict(cid, ok, detail, elapsed=None):
    timing = "" if elapsed is None else f" [{elapsed:.2f} s]"
    line = f"ACCEPTANCE {cid:>3} {'PASS' if ok else 'FAIL'}  {detail}{timing}"
    print(line, flush=True)
    conftest.ACCEPTANCE_LINES.append(line)
    return ok, line


def check(cid, ok, detail, elapsed=None):
    ok, line = verdict(cid, ok, detail, elapsed)
    assert ok, line


# ---------------------------------------------------------------- 1


def criterion_1():
    t0 = time.perf_counter()
    sys_ = make_system("slow_manifold", {"mu": -0.05, "lam": 1.0})
    box = [[-1, 1], [-1, 1]]
    data = generate_training_set(sys_, 20, 50, 0.1, box, seed=0, substeps=10)
    X, Xp, _ = data.snapshot_pairs()
    model = fit_edmd(X, Xp, monomial_dictionary(2, exponents=[(1, 0), (0, 1), (2, 0)]), 0.1)
    hold = generate_training_set(sys_, 3, 50, 0.1, box, seed=99, substeps=10)
    efs = extract_eigenfunctions(model, hold.trajectories)
    elapsed = time.perf_counter() - t0

    mu = np.sort(model.continuous_eigenvalues.real)
    eig_err = float(np.max(np.abs(mu - [-0.1, -0.05, 1.0])) + np.max(np.abs(model.continuous_eigenvalues.imag)))
    ef = min(efs, key=lambda e: abs(e.mu - 1.0))
    expected = np.array([0.0, 1.0, -1.0 / 1.1])
    expected /= np.linalg.norm(expected)
    coeff = ef.coeffs * np.sign(ef.coeffs[1].real)
    coef_err = float(np.max(np.abs(coeff - expected)))
    ok = eig_err < 1e-6 and coef_err < 1e-4 and elapsed < 2.0
    return ok, f"slow-manifold eDMD: eigenvalue error {eig_err:.1e} (<1e-6), coefficient error {coef_err:.1e} (<1e-4)", elapsed


# ---------------------------------------------------------------- 2


def criterion_2():
    t0 = time.perf_counter()
    X = np.linspace(-1, 1, 201)[None, :]
    growth = fit_continuous_eigenfunctions(X, X, monomial_dictionary(1, 3))
    quad = fit_continuous_eigenfunctions(X, X**2, monomial_dictionary(1, 3))
    elapsed = time.perf_counter() - t0
    mu = np.sort([e.mu.real for e in growth])
    err = float(np.max(np.abs(mu - [1, 2, 3])) + max(abs(e.mu.imag) for e in growth))
    min_res = min(e.score for e in quad)
    ok = err < 1e-6 and min_res > 0.1 and elapsed < 1.0
    return ok, f"continuous eigenfunctions: x'=x eigenvalue error {err:.1e} (<1e-6); x'=x^2 smallest residual {min_res:.3f} (>0.1)", elapsed


# ---------------------------------------------------------------- 3


def criterion_3():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n, m, dt = 64, 200, 0.05
    omegas = np.array([-0.1 + 2j, 0.05 + 5j])
    Q, _ = np.linalg.qr(rng.standard_normal((n, 4)))
    v = [Q[:, 0] + 1j * Q[:, 1], Q[:, 2] + 1j * Q[:, 3]]
    c = [1.3 - 0.4j, 0.7 + 0.2j]
    t = dt * np.arange(m + 1)
    D = 2 * sum(ci * vi[:, None] * np.exp(w * t) for ci, vi, w in zip(c, v, omegas)).real
    X, Xp = D[:, :-1], D[:, 1:]
    model = fit_exact_dmd(X, Xp, dt)
    elapsed = time.perf_counter() - t0
    truth = np.concatenate([omegas, omegas.conj()])
    spec_err = max(float(np.min(np.abs(model.Omega - w))) for w in truth)
    A = Xp @ np.linalg.pinv(X)
    normA = np.linalg.norm(A, 2)
    resid = max(
        float(np.linalg.norm(A @ model.Phi[:, j] - model.Lambda[j] * model.Phi[:, j]) / np.linalg.norm(model.Phi[:, j]))
        for j in range(model.r)
    )
    ok = model.r == 4 and spec_err < 1e-8 and resid < 1e-6 * normA and elapsed < 1.0
    return ok, f"exact DMD two modes: spectral error {spec_err:.1e} (<1e-8), eigenpair residual {resid:.1e} (<1e-6*|A|)", elapsed


# ---------------------------------------------------------------- 4


def criterion_4():
    t0 = time.perf_counter()
    dt, w = 0.01, 2.0
    x = np.sin(w * np.arange(1000) * dt)
    raw = fit_delay_dmd(build_hankel(x, 1, dt))
    delayed = fit_delay_dmd(build_hankel(x, 2, dt))
    elapsed = time.perf_counter() - t0
    real_raw = raw.Lambda.size == 1 and raw.Lambda[0].imag == 0.0
    err = float(np.max(np.abs(np.sort_complex(delayed.Omega) - np.array([-2j, 2j]))))
    ok = real_raw and err < 1e-6 and elapsed < 1.0
    return ok, f"delay paradox: q=1 eigenvalue {raw.Lambda[0].real:.6f} real={real_raw}; q=2 error vs +-2i {err:.1e} (<1e-6)", elapsed


# ---------------------------------------------------------------- 5


def criterion_5():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    M = rng.standard_normal((4, 4))
    A = 0.9 * M / np.max(np.abs(np.linalg.eigvals(M)))
    B = rng.standard_normal((4, 1))
    X = np.empty((4, 501))
    X[:, 0] = rng.standard_normal(4)
    U = rng.choice([-1.0, 1.0], (1, 500))
    for k in range(500):
        X[:, k + 1] = A @ X[:, k] + B @ U[:, k]
    model = fit_dmdc(X[:, :-1], X[:, 1:], U)
    elapsed = time.perf_counter() - t0
    ea = float(np.linalg.norm(model.A - A))
    eb = float(np.linalg.norm(model.B - B))
    ok = ea < 1e-8 and eb < 1e-8 and elapsed < 1.0
    return ok, f"DMDc identification: |A-A*|_F {ea:.1e}, |B-B*|_F {eb:.1e} (<1e-8)", elapsed


# ---------------------------------------------------------------- 6


def criterion_6():
    t0 = time.perf_counter()
    sigma, dt, m = 1e-2, 0.1, 500
    true = -0.1 + 1j
    r = np.exp(true.real * dt)
    th = true.imag * dt
    A = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    X = np.empty((2, m))
    X[:, 0] = [1.0, 0.0]
    for k in range(m - 1):
        X[:, k + 1] = A @ X[:, k]
    err_f, err_b = [], []
    for seed in range(100):
        Y = X + sigma * np.random.default_rng(seed).standard_normal(X.shape)
        f = fit_exact_dmd(Y[:, :-1], Y[:, 1:], dt)
        b = fit_fb_dmd(Y[:, :-1], Y[:, 1:], dt)
        err_f.append(np.min(np.abs(f.Omega.real - true.real)))
        err_b.append(np.min(np.abs(b.Omega.real - true.real)))
    elapsed = time.perf_counter() - t0
    mf, mb = float(np.median(err_f)), float(np.median(err_b))
    ok = mb < mf and elapsed < 30.0
    return ok, f"fb-DMD bias over 100 seeds: median growth-rate error fb {mb:.2e} vs forward {mf:.2e}", elapsed


# ---------------------------------------------------------------- 7


def criterion_7():
    t0 = time.perf_counter()
    tr = integrate_rk4(make_system("lorenz63"), [-8.0, 8.0, 27.0], t1=200.0, dt=1e-3)
    stats = forcing_stats(fit_havok(tr.states[0], 1e-3, q=100, r=15), threshold=2.0)
    elapsed = time.perf_counter() - t0
    ok = stats.kurtosis > 1.0 and stats.tail_fraction > stats.gaussian_tail and elapsed < 60.0
    return ok, (
        f"HAVOK Lorenz forcing: excess kurtosis {stats.kurtosis:.1f} (>1), "
        f"2-sigma tail fraction {100 * stats.tail_fraction:.2f}% (>{100 * stats.gaussian_tail:.2f}%)"
    ), elapsed


# ---------------------------------------------------------------- 8


def criterion_8():
    t0 = time.perf_counter()
    alpha, theta0, K = 0.7, 0.4, 100_000
    g = np.exp(1j * (theta0 + alpha * np.arange(K)))
    res = abs(harmonic_average(g, alpha).value - np.exp(1j * theta0))
    off = abs(harmonic_average(g, 1.0).value)
    elapsed = time.perf_counter() - t0
    ok = res < 1e-3 and off < 1e-3 and elapsed < 1.0
    return ok, f"harmonic average K=1e5: resonance error {res:.1e}, off-resonance |avg| {off:.1e} (<1e-3)", elapsed


# ---------------------------------------------------------------- 9


def criterion_9():
    t0 = time.perf_counter()
    grid = BoxGrid.make([0.0, 0.0], [1.0, 1.0], [4, 4])
    ident = ulam_matrix(lambda P: P, grid, 100, seed=0).U
    line = BoxGrid.make([0.0], [1.0], [2])
    dbl = ulam_matrix(lambda P: (2 * P) % 1.0, line, 10_000, seed=0).U
    elapsed = time.perf_counter() - t0
    exact_identity = bool(np.array_equal(ident, np.eye(16)))
    dev = float(np.max(np.abs(dbl - 0.5)))
    colsum = float(max(np.max(np.abs(ident.sum(0) - 1)), np.max(np.abs(dbl.sum(0) - 1))))
    ok = exact_identity and dev <= 0.02 and colsum <= 1e-12 and elapsed < 5.0
    return ok, f"Ulam: identity exact={exact_identity}, doubling max |U-0.5| {dev:.4f} (<=0.02), column-sum error {colsum:.1e}", elapsed


# ---------------------------------------------------------------- 10


def criterion_10():
    t0 = time.perf_counter()
    mu, lam = -0.05, 1.0
    b = lam / (lam - 2 * mu)
    A = np.array([[mu, 0, 0], [0, lam, -lam * b], [0, 0, 2 * mu]])
    B = np.array([[0.0], [1.0], [0.0]])
    sys_ = make_system("slow_manifold", {"mu": mu, "lam": lam, "controlled": True})
    lie = [lie_bracket_controllability(sys_, [0.7, -0.4], k_max=k).rank for k in range(5)]
    kalman = koopman_controllability(A, B).rank
    pbh = {}
    for e in pbh_test(A, B):
        key = min(("lambda", lam), ("mu", mu), ("2mu", 2 * mu), key=lambda kv: abs(e.eigenvalue - kv[1]))[0]
        pbh[key] = e.rank
    elapsed = time.perf_counter() - t0
    ok = all(r == 1 for r in lie) and kalman == 1 and pbh == {"lambda": 3, "mu": 1, "2mu": 1} and elapsed < 1.0
    return ok, (
        f"controllability: Lie ranks k=0..4 {lie} (all 1), Kalman rank {kalman} (1), "
        f"PBH {pbh} (expected lambda:3 mu:1 2mu:1)"
    ), elapsed


# ---------------------------------------------------------------- 11


@pytest.fixture(scope="module")
def benchmarks():
    t0 = time.perf_counter()
    reports = {name: run_benchmark(load_config(name)) for name in ("dcmotor", "duffing", "vanderpol")}
    return reports, time.perf_counter() - t0


def criterion_11a(reports):
    rep = reports["dcmotor"]
    j_dmdc = rep.run_for("dmdc").result.J
    j_edmdc = rep.run_for("edmdc-1").result.J
    ratio = j_dmdc / j_edmdc
    return ratio >= 5.0, f"DC motor: J(DMDc) {j_dmdc:.6g} / J(eDMDc) {j_edmdc:.6g} = {ratio:.4f} (>=5)"


def criterion_11b(reports):
    run = reports["vanderpol"].run_for("edmdc-1")
    err = run.result.mean_abs_error
    return run.p == 103 and err < 0.15, f"Van der Pol eDMDc (p={run.p}): mean |y-r| {err:.4f} over 3 time units (<0.15)"


def criterion_11c(reports):
    worst_j, all_in = 0.0, True
    count = 0
    for rep in reports.values():
        for run, prob in zip(rep.runs, rep.problems):
            res = run.result
            count += 1
            all_in &= bool(np.all(res.inputs >= prob.u_lo[:, None]) and np.all(res.inputs <= prob.u_hi[:, None]))
            J = realized_cost(res.outputs, res.inputs, res.reference, prob.Q, prob.R, prob.R_delta)
            worst_j = max(worst_j, abs(J - res.J) / max(1.0, abs(J)))
    return all_in and worst_j <= 1e-9, f"{count} closed-loop runs: inputs within bounds={all_in}, worst J mismatch {worst_j:.1e} (<=1e-9)"


# ---------------------------------------------------------------- 12

INVARIANT_TESTS = [
    "test_numerics::test_svd_orthonormal_columns",
    "test_numerics::test_eig_real_matrix_properties",
    "test_numerics::test_lstsq_null_space_free",
    "test_numerics::test_qp_feasible_and_kkt",
    "test_systems::test_rk4_order_on_exponential",
    "test_systems::test_duffing_hamiltonian_conserved",
    "test_systems::test_zero_order_hold_piecewise_constant",
    "test_systems::test_training_set_reproducible",
    "test_observables::test_monomial_gradient_matches_finite_differences",
    "test_observables::test_thin_plate_continuous_near_zero",
    "test_observables::test_delay_embed_causal",
    "test_observables::test_monomial_state_recovery_exact",
    "test_dmd::test_exact_mode_eigenpairs",
    "test_dmd::test_reconstruction_linear_rank_r",
    "test_dmd::test_conjugate_symmetry",
    "test_dmd::test_companion_shift_residual",
    "test_dmd::test_dmdc_without_inputs_equals_dmd",
    "test_edmd::test_non_spurious_one_step_linearity",
    "test_edmd::test_slow_manifold_product_lattice",
    "test_edmd::test_ulam_flow_map_columns_stochastic",
    "test_edmd::test_harmonic_linearity",
    "test_edmd::test_identity_dictionary_matches_dmd",
    "test_havok::test_hankel_anti_diagonals_constant",
    "test_havok::test_havok_v_columns_orthonormal",
    "test_havok::test_delay_dmd_pure_tone_on_unit_circle",
    "test_havok::test_havok_lorenz_reconstruction_window",
    "test_control::test_closed_loop_inputs_in_bounds_and_cost_recomputes",
    "test_control::test_soft_weight_monotone_on_dc_motor",
    "test_control::test_warm_and_cold_start_agree",
    "test_control::test_kalman_and_pbh_agree_on_random_pairs",
    "test_cli::test_seeded_commands_reproducible",
    "test_cli::test_inputs_not_mutated",
]


def criterion_12(tmp_dir, acceptance_seconds):
    """Run every other suite headless in a subprocess and check the invariants executed."""
    xml = Path(tmp_dir) / "suite.xml"
    env = {k: v for k, v in os.environ.items() if k != "DISPLAY"}
    env["MPLBACKEND"] = "Agg"
    others = sorted(str(p) for p in TESTS_DIR.glob("test_*.py") if p.name != "test_acceptance.py")
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", f"--junitxml={xml}", *others],
        cwd=TESTS_DIR.parent, env=env, capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - t0
    outcomes = {}
    for case in ET.parse(xml).getroot().iter("testcase"):
        module = case.get("classname", "").rsplit(".", 1)[-1]
        name = case.get("name", "").split("[")[0]
        if case.find("failure") is not None or case.find("error") is not None:
            state = "failed"
        elif case.find("skipped") is not None:
            state = "xfail" if "xfail" in (case.find("skipped").get("type", "") + case.find("skipped").get("message", "")) else "skipped"
        else:
            state = "passed"
        prev = outcomes.get(f"{module}::{name}")
        outcomes[f"{module}::{name}"] = state if prev in (None, "passed") else prev
    missing = [t for t in INVARIANT_TESTS if t not in outcomes]
    failing = [t for t in INVARIANT_TESTS if outcomes.get(t) not in ("passed", None)]
    total = elapsed + acceptance_seconds
    ok = proc.returncode == 0 and not missing and total < 600.0
    detail = (
        f"headless suites exit {proc.returncode}, {len(outcomes)} tests, {len(INVARIANT_TESTS)} invariant tests executed "
        f"(missing {missing or 'none'}; not passing {failing or 'none'}); suite time {total:.0f} s (<600)"
    )
    return ok, detail, elapsed


# ---------------------------------------------------------------- pytest entry points


@pytest.mark.parametrize(
    "cid,fn",
    [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
    ],
)
def test_criterion(cid, fn):
    check(cid, *fn())


def test_criterion_11a(benchmarks):
    reports, _ = benchmarks
    check("11a", *criterion_11a(reports))


def test_criterion_11b(benchmarks):
    reports, _ = benchmarks
    check("11b", *criterion_11b(reports))


def test_criterion_11c(benchmarks):
    reports, _ = benchmarks
    check("11c", *criterion_11c(reports))


def test_criterion_11_runtime(benchmarks):
    _, elapsed = benchmarks
    check("11t", elapsed < 300.0, "three benchmarks incl. 1e5-sample training sets (<300 s)", elapsed)


def test_criterion_12(tmp_path):
    ok, detail, elapsed = criterion_12(tmp_path, time.perf_counter() - MODULE_START)
    check("12", ok, detail, elapsed)


if __name__ == "__main__":
    import tempfile

    results = [verdict(cid, *fn()) for cid, fn in [
        ("1", criterion_1), ("2", criterion_2), ("3", criterion_3), ("4", criterion_4), ("5", criterion_5),
        ("6", criterion_6), ("7", criterion_7), ("8", criterion_8), ("9", criterion_9), ("10", criterion_10),
    ]]
    t0 = time.perf_counter()
    reps = {name: run_benchmark(load_config(name)) for name in ("dcmotor", "duffing", "vanderpol")}
    bench_time = time.perf_counter() - t0
    results += [verdict("11a", *criterion_11a(reps)), verdict("11b", *criterion_11b(reps)), verdict("11c", *criterion_11c(reps))]
    results.append(verdict("11t", bench_time < 300.0, "three benchmarks incl. 1e5-sample training sets (<300 s)", bench_time))
    with tempfile.TemporaryDirectory() as d:
        results.append(verdict("12", *criterion_12(d, time.perf_counter() - MODULE_START)))
    sys.exit(0 if all(ok for ok, _ in results) else 1)
