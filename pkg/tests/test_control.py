import numpy as np
import pytest
import scipy.linalg

from conftest import random_stable
from koopkit.control import (
    History,
    LiftedLinearModel,
    MpcController,
    MpcProblem,
    Reference,
    build_condensed_qp,
    koopman_controllability,
    lie_bracket_controllability,
    linearize_local,
    mpc_step,
    pbh_test,
    realized_cost,
    run_closed_loop,
)
from koopkit.control.model import jacobians
from koopkit.control.benchmark import fit_model, load_config, make_problem, training_set
from koopkit.errors import InvalidInput
from koopkit.numerics import solve_box_qp
from koopkit.observables import IdentityDictionary
from koopkit.systems import integrate_rk4, make_system


def chain_model(dt=1.0):
    # z_{k+1} = u_k, y = z
    return LiftedLinearModel([[0.0]], [[1.0]], [[1.0]], IdentityDictionary(1), dt)


def state_history(x, dt=1.0):
    h = History(0.0, dt)
    h.push(np.atleast_1d(x)[:1], x)
    return h


# ---------------------------------------------------------------- condensed QP


def test_one_step_chain_tracks_exactly():
    prob = MpcProblem(1, chain_model(), Reference(0.3, 0.0, 0.0, 0.0, "const"), Q=1, R=0, u_bounds=(-1, 1))
    qp = build_condensed_qp(prob, [0.0])
    u = solve_box_qp(qp.P, qp.q, qp.lower, qp.upper)
    assert abs(u[0] - 0.3) < 1e-12


def test_zero_output_weight_gives_zero_input():
    prob = MpcProblem(5, chain_model(), Reference(2.0, 0.0, wave="const"), Q=0, R=1)
    qp = build_condensed_qp(prob, [1.0])
    np.testing.assert_array_equal(solve_box_qp(qp.P, qp.q, qp.lower, qp.upper), np.zeros(5))


def test_unconstrained_qp_matches_kkt_oracle(rng):
    A = random_stable(rng, 2)
    B = rng.standard_normal((2, 1))
    C = np.array([[1.0, 0.0]])
    model = LiftedLinearModel(A, B, C, IdentityDictionary(2), 0.1)
    prob = MpcProblem(10, model, Reference(1.0, 2.0), Q=1.0, R=0.1, R_delta=0.05, dt=0.1)
    z0 = rng.standard_normal(2)
    u_prev = np.array([0.4])
    qp = build_condensed_qp(prob, z0, u_prev, t0=0.3)
    U = solve_box_qp(qp.P, qp.q, qp.lower, qp.upper)

    # oracle: stacked least squares over the explicit trajectory
    N = 10
    rows, rhs = [], []
    Apow = [np.linalg.matrix_power(A, k) for k in range(N + 1)]
    for k in range(1, N + 1):
        row = np.zeros(N)
        for j in range(k):
            row[j] = (C @ Apow[k - 1 - j] @ B)[0, 0]
        rows.append(row)
        rhs.append(np.cos(2.0 * (0.3 + 0.1 * k)) - (C @ Apow[k] @ z0)[0])
    rows += list(np.sqrt(0.1) * np.eye(N))
    rhs += [0.0] * N
    D = np.eye(N) - np.eye(N, k=-1)
    rows += list(np.sqrt(0.05) * D)
    rhs += [np.sqrt(0.05) * 0.4] + [0.0] * (N - 1)
    oracle = np.linalg.solve(np.array(rows).T @ np.array(rows), np.array(rows).T @ np.array(rhs))
    assert np.max(np.abs(U - oracle)) < 1e-8


def test_qp_constant_reproduces_cost(rng):
    A = random_stable(rng, 2)
    model = LiftedLinearModel(A, [[0.0], [1.0]], [[1.0, 0.0]], IdentityDictionary(2), 0.1)
    prob = MpcProblem(6, model, Reference(0.5, 1.0), Q=2.0, R=0.3, R_delta=0.1, dt=0.1)
    qp = build_condensed_qp(prob, [0.2, -0.1], [0.3])
    U = rng.standard_normal(6)
    Y = qp.predict(U)
    dU = np.diff(np.concatenate([[0.3], U]))
    direct = 2.0 * np.sum((Y - qp.ref) ** 2) + 0.3 * U @ U + 0.1 * dU @ dU
    assert abs(0.5 * U @ qp.P @ U + qp.q @ U + qp.const - direct) < 1e-10


def test_problem_validation():
    with pytest.raises(InvalidInput):
        MpcProblem(0, chain_model(), Reference())
    with pytest.raises(InvalidInput):
        MpcProblem(3, chain_model(), Reference(), Q=-1.0)
    with pytest.raises(InvalidInput):
        MpcProblem(3, chain_model(), Reference(), u_bounds=(1, -1))


# ---------------------------------------------------------------- mpc_step


def test_already_on_track_gives_zero_input():
    a = 0.8
    model = LiftedLinearModel([[a]], [[1.0]], [[1.0]], IdentityDictionary(1), 1.0)
    # reference equals the free response y_k = a^k
    class FreeResponse:
        def __call__(self, t):
            return np.atleast_1d(a ** np.asarray(t, dtype=float))

    prob = MpcProblem(8, model, FreeResponse(), Q=1, R=0.1)
    u = mpc_step(prob, state_history([1.0]))
    assert abs(u[0]) < 1e-6


def test_saturating_step_hits_bound_exactly():
    prob = MpcProblem(3, chain_model(), Reference(10.0, wave="const"), Q=1, R=0.01, u_bounds=(-0.5, 0.5))
    assert mpc_step(prob, state_history([0.0]))[0] == 0.5


def test_step_caches_plan_for_warm_start():
    prob = MpcProblem(4, chain_model(), Reference(0.3, wave="const"), Q=1, R=0.01, u_bounds=(-1, 1))
    ctrl = MpcController(prob)
    ctrl.step(state_history([0.0]))
    assert ctrl.plan.shape == (4,)
    assert ctrl.info[-1].status == "optimal"


@pytest.fixture(scope="module")
def dc_motor():
    cfg = load_config("dcmotor")
    cfg.training["n_ic"] = 20
    sys = make_system(cfg.system, cfg.params)
    data = training_set(cfg, sys)
    model = fit_model({"kind": "dmdc"}, cfg, sys, data)
    return cfg, sys, model


def test_dc_motor_first_step_is_qp_composition(dc_motor):
    cfg, sys, model = dc_motor
    prob = make_problem(cfg, model)
    x0 = np.asarray(cfg.run["x0"], dtype=float)
    hist = History(0.0, cfg.dt)
    hist.push(sys.output(x0), x0)
    ctrl = MpcController(prob)
    u = ctrl.step(hist)
    qp = build_condensed_qp(prob, x0, np.zeros(1), 0.0, active=ctrl.last_qp.active)
    U = solve_box_qp(qp.P, qp.q, qp.lower, qp.upper)
    assert qp.violations(U) == frozenset(qp.active)
    assert abs(u[0] - U[0]) < 1e-9


@pytest.mark.xfail(
    strict=True,
    reason="the bilinear motor leaves the output bounds whatever the input; the violation drifts up by ~1e-6 relative",
)
def test_soft_weight_monotone_on_dc_motor():
    cfg = load_config("dcmotor")
    sys = make_system(cfg.system, cfg.params)
    model = fit_model({"kind": "dmdc"}, cfg, sys, training_set(cfg, sys))
    x0 = np.asarray(cfg.run["x0"], dtype=float)
    viol = []
    for factor in (1e3, 1e4, 1e5):
        prob = make_problem(cfg, model)
        prob.soft_factor = factor
        viol.append(run_closed_loop(sys, prob, x0, float(cfg.run["duration"])).max_violation)
    assert viol[1] <= viol[0]
    assert viol[2] <= viol[1]


# ---------------------------------------------------------------- closed loop


def damped_plant():
    A = np.array([[0.0, 1.0], [-1.0, -0.4]])
    return make_system("linear_generic", {"A": A.tolist(), "B": [[0.0], [1.0]], "output": [0]})


def plant_problem(dt=0.1, **kw):
    sys = damped_plant()
    model = linearize_local(sys, [0.0, 0.0], [0.0], dt)
    opts = dict(Q=1.0, R=0.01, R_delta=0.0, u_bounds=(-1.0, 1.0), y_bounds=(-0.6, 0.6))
    opts.update(kw)
    return sys, MpcProblem(10, model, Reference(0.8, 1.5), dt=dt, **opts)


def test_zero_input_bounds_reproduce_free_response():
    sys, prob = plant_problem(u_bounds=(0.0, 0.0))
    res = run_closed_loop(sys, prob, [1.0, 0.0], 2.0)
    assert np.all(res.inputs == 0.0)
    free = integrate_rk4(sys, [1.0, 0.0], np.zeros((1, 20)), t1=2.0, dt=0.1)
    np.testing.assert_array_equal(res.states, free.states)
    oracle = realized_cost(free.states[:1], np.zeros((1, 20)), res.reference, prob.Q, prob.R)
    assert abs(res.J - oracle) <= 1e-9 * max(1.0, oracle)


def test_closed_loop_inputs_in_bounds_and_cost_recomputes():
    sys, prob = plant_problem(R_delta=0.05)
    res = run_closed_loop(sys, prob, [0.0, 0.0], 5.0)
    assert np.all(res.inputs >= -1.0) and np.all(res.inputs <= 1.0)
    J = realized_cost(res.outputs, res.inputs, res.reference, prob.Q, prob.R, prob.R_delta)
    assert abs(J - res.J) <= 1e-9 * max(1.0, abs(J))
    assert res.states.shape == (2, 51) and res.inputs.shape == (1, 50)
    assert all(s in ("optimal", "cycle", "max_outer") for s in res.status)


def test_warm_and_cold_start_agree():
    sys, prob = plant_problem()
    warm = run_closed_loop(sys, prob, [0.2, 0.0], 3.0, warm_start=True)
    cold = run_closed_loop(sys, prob, [0.2, 0.0], 3.0, warm_start=False)
    assert np.max(np.abs(warm.states - cold.states)) < 1e-6
    assert np.max(np.abs(warm.inputs - cold.inputs)) < 1e-6


def test_soft_weight_monotone_when_bounds_reachable():
    viol = []
    for factor in (1e2, 1e3, 1e4):
        sys, prob = plant_problem(y_bounds=(-0.5, 0.5), soft_factor=factor)
        viol.append(run_closed_loop(sys, prob, [0.0, 0.0], 5.0).max_violation)
    assert viol[0] > 0
    assert viol[1] <= viol[0]
    assert viol[2] <= viol[1]


def test_soft_bounds_reduce_violation():
    sys, loose = plant_problem(y_bounds=None)
    _, tight = plant_problem(y_bounds=(-0.5, 0.5))
    a = run_closed_loop(sys, loose, [0.0, 0.0], 5.0)
    b = run_closed_loop(sys, tight, [0.0, 0.0], 5.0)
    over = lambda r: float(np.max(np.maximum(0, np.abs(r.outputs) - 0.5)))  # noqa: E731
    assert over(b) < over(a)


# ---------------------------------------------------------------- local linearization


def test_linearize_linear_plant_is_exact_discretization():
    sys = damped_plant()
    lin = linearize_local(sys, [0.3, -0.2], [0.1], 0.1)
    A = np.array([[0.0, 1.0], [-1.0, -0.4]])
    B = np.array([[0.0], [1.0]])
    M = scipy.linalg.expm(np.block([[A, B], [np.zeros((1, 3))]]) * 0.1)
    np.testing.assert_allclose(lin.A, M[:2, :2], atol=1e-8)
    np.testing.assert_allclose(lin.B, M[:2, 2:], atol=1e-8)
    np.testing.assert_allclose(lin.c, 0.0, atol=1e-8)


def test_duffing_jacobian_at_origin():
    Ac, Bc = jacobians(make_system("duffing_forced"), [0.0, 0.0], [0.0])
    np.testing.assert_allclose(Ac, [[0, 1], [1, -0.3]], atol=1e-9)
    np.testing.assert_allclose(Bc, [[0], [1]], atol=1e-9)


def test_jacobian_step_sweep(rng):
    sys = make_system("van_der_pol")
    x = rng.uniform(-1, 1, 2)
    a, _ = jacobians(sys, x, [0.2], h=1e-4)
    b, _ = jacobians(sys, x, [0.2], h=1e-5)
    assert np.max(np.abs(a - b)) < 1e-5


def test_local_model_one_step_error_is_third_order():
    sys = make_system("van_der_pol")
    x = np.array([0.5, -0.3])
    errs = []
    for dt in (0.02, 0.01):
        lin = linearize_local(sys, x, [0.2], dt)
        exact = integrate_rk4(sys, x, [[0.2]], t1=dt, dt=dt, substeps=20).states[:, -1]
        errs.append(np.linalg.norm(lin.step(x, [0.2]) - exact))
    assert 6 <= errs[0] / errs[1] <= 10


# ---------------------------------------------------------------- controllability


def slow_manifold_lifted(mu=-0.05, lam=1.0):
    b = lam / (lam - 2 * mu)
    A = np.array([[mu, 0, 0], [0, lam, -lam * b], [0, 0, 2 * mu]])
    B = np.array([[0.0], [1.0], [0.0]])
    return A, B


def test_kalman_rank_examples():
    A, B = slow_manifold_lifted()
    assert koopman_controllability(A, B).rank == 1
    assert koopman_controllability([[0, 1], [0, 0]], [[0], [1]]).rank == 2
    assert koopman_controllability(np.eye(3), np.zeros((3, 1))).rank == 0


def test_kalman_matrix_columns():
    A = np.array([[1.0, 2.0], [0.0, 3.0]])
    B = np.array([[1.0], [1.0]])
    np.testing.assert_array_equal(koopman_controllability(A, B).matrix, np.column_stack([B, A @ B]))


def test_pbh_diagonal():
    ranks = {round(e.eigenvalue.real): e.rank for e in pbh_test(np.diag([1.0, 2.0]), [[1.0], [0.0]])}
    assert ranks == {1: 2, 2: 1}


def test_pbh_controllable_pair_full_everywhere():
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    assert all(e.rank == 2 for e in pbh_test(A, [[0.0], [1.0]]))


def test_kalman_and_pbh_agree_on_random_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, 1))
        if rng.random() < 0.5:
            # make the pair uncontrollable by decoupling a block
            k = int(rng.integers(1, n))
            A[k:, :k] = 0.0
            B[k:] = 0.0
        full_k = koopman_controllability(A, B).full
        full_p = all(e.rank == n for e in pbh_test(A, B))
        assert full_k == full_p


def test_lie_brackets_slow_manifold():
    sys = make_system("slow_manifold", {"controlled": True})
    for k in range(5):
        res = lie_bracket_controllability(sys, [0.7, -0.4], k_max=k)
        assert res.rank == 1
        np.testing.assert_allclose(res.columns[:, k], [0.0, (-1.0) ** k], atol=1e-6)


def test_lie_brackets_linear_pair_match_kalman(rng):
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 1))
    sys = make_system("linear_generic", {"A": A.tolist(), "B": B.tolist()})
    res = lie_bracket_controllability(sys, rng.standard_normal(3), k_max=2)
    assert res.rank == koopman_controllability(A, B).rank == 3


def test_lie_brackets_double_integrator():
    sys = make_system("linear_generic", {"A": [[0, 1], [0, 0]], "B": [[0], [1]]})
    assert lie_bracket_controllability(sys, [0.3, 0.1], k_max=1).rank == 2
    assert lie_bracket_controllability(sys, [0.3, 0.1], k_max=0).rank == 1
