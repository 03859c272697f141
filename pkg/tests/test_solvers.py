import math

import numpy as np
import pytest

from _oracles import BruteForceMiso, BruteForceSag, newton_logistic

from miso.cli import gen_data
from miso.numlin import Dataset, normalize_rows
from miso.problems import LinearModelProblem, LogisticL2Problem, SparseLogPenaltyProblem
from miso.solvers import (
    DivergenceError,
    InvariantError,
    SolverConfig,
    batch_mm,
    heuristic_L_search,
    initialize_surrogates,
    miso_composite_step,
    miso_step,
    run,
    sag_step,
)
from miso.terms import PenaltyTerm


def logistic(T=40, p=5, lam=0.05, seed=0, sparse=False, normalize=True):
    d = gen_data("sparse_bernoulli_gaussian" if sparse else "dense_gaussian", T, p,
                 density=0.4 if sparse else 1.0, seed=seed)
    if normalize:
        d = normalize_rows(d)
    return LogisticL2Problem(d, lam)


def squared_1d(y, penalty=None):
    y = np.asarray(y, float)
    return LinearModelProblem(Dataset(np.ones((len(y), 1)), y), "squared", 0.0, penalty)


# ---------------------------------------------------------------------------
# batch scheme
# ---------------------------------------------------------------------------

def test_batch_trivial_examples():
    prob = squared_1d([3.0])
    th, _ = batch_mm(prob, "lipschitz_gradient", [0.0], 1, L=1.0)
    assert th[0] == pytest.approx(3.0)
    comp = squared_1d([3.0], PenaltyTerm("l1", 2.0))
    th, _ = batch_mm(comp, "proximal_gradient", [0.0], 1, L=1.0)
    assert th[0] == pytest.approx(1.0)


def test_batch_detects_invalid_L():
    prob = squared_1d([3.0])
    with pytest.raises(InvariantError):
        batch_mm(prob, "lipschitz_gradient", [0.0], 5, L=0.3)


def test_batch_quadratic_family_solves_least_squares_in_one_step():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4))
    y = rng.standard_normal(30)
    prob = LinearModelProblem(Dataset(X, y), "squared", 0.1)
    th, _ = batch_mm(prob, "quadratic", np.zeros(4), 1)
    exact = np.linalg.solve(X.T @ X / 30 + 0.1 * np.eye(4), X.T @ y / 30)
    np.testing.assert_allclose(th, exact, atol=1e-12)


def test_batch_fixed_point():
    prob = logistic()
    theta, _ = newton_logistic(prob.data.X, prob.data.y, prob.l2)
    th, _ = batch_mm(prob, None, theta, 3)
    np.testing.assert_allclose(th, theta, atol=1e-12)


def test_batch_family_validation():
    prob = squared_1d([1.0], PenaltyTerm("l1", 0.1))
    with pytest.raises(ValueError):
        batch_mm(prob, "lipschitz_gradient", [0.0], 1)
    with pytest.raises(ValueError):
        batch_mm(prob, "dc_linearized", [0.0], 1)
    with pytest.raises(ValueError):
        batch_mm(squared_1d([1.0], PenaltyTerm("log_penalty", 0.1)), "proximal_gradient", [0.0], 1)


# ---------------------------------------------------------------------------
# incremental steps against the brute-force oracle
# ---------------------------------------------------------------------------

def test_deterministic_pass_hand_instance():
    prob = squared_1d([3.0, 6.0, 9.0])
    st = initialize_surrogates(prob, [0.0], "quadratic_at_theta0", L=1.0)
    seen = [miso_step(st, prob, t)[0] for t in range(3)]
    np.testing.assert_allclose(seen, [1.0, 3.0, 6.0])
    st2 = initialize_surrogates(prob, [0.0], "deterministic_pass", L=1.0)
    assert st2.theta[0] == pytest.approx(6.0) and st2.iteration == 3


@pytest.mark.parametrize("penalty,lam", [(None, 0.0), ("l1", 0.02), ("l2", 0.1), ("log", 0.01)])
def test_miso_matches_brute_force(penalty, lam):
    rng = np.random.default_rng(3)
    T, p = 12, 4
    X = rng.standard_normal((T, p))
    if penalty in (None, "l2"):
        y = np.sign(rng.standard_normal(T))
        loss, l2 = "logistic", 0.05
    else:
        y = rng.standard_normal(T)
        loss, l2 = "squared", 0.0
    kind = {"l1": "l1", "l2": "l2", "log": "log_penalty"}.get(penalty)
    pen = PenaltyTerm(kind, lam) if kind else None
    prob = LinearModelProblem(Dataset(X, y), loss, l2, pen)
    L = 1.5 * prob.component_lipschitz().max()
    st = initialize_surrogates(prob, np.zeros(p), "quadratic_at_theta0", L=L)
    ref = BruteForceMiso(loss, X, y, l2, L, np.zeros(p), penalty, lam, anchored=False)
    np.testing.assert_allclose(st.theta, ref.theta, atol=1e-12)
    for t in rng.integers(0, T, size=60):
        np.testing.assert_allclose(miso_step(st, prob, int(t)), ref.step(int(t)), atol=1e-10)


def test_sag_matches_brute_force():
    prob = logistic(T=10, p=3)
    alpha = 0.3
    st = initialize_surrogates(prob, np.zeros(3), "anchor_at_theta0", scheme="sag")
    ref = BruteForceSag("logistic", prob.data.X, prob.data.y, prob.l2, alpha, np.zeros(3))
    for t in np.random.default_rng(0).integers(0, 10, size=40):
        np.testing.assert_allclose(sag_step(st, prob, int(t), alpha), ref.step(int(t)), atol=1e-12)


def test_sag_full_gradient_step_when_all_anchors_agree():
    prob = logistic(T=15, p=4)
    theta0 = np.random.default_rng(1).standard_normal(4)
    st = initialize_surrogates(prob, theta0, "anchor_at_theta0", scheme="sag")
    np.testing.assert_allclose(st.theta, theta0)
    new = sag_step(st, prob, 7, 0.5)
    np.testing.assert_allclose(new, theta0 - 0.5 * prob.smooth_gradient(theta0), atol=1e-12)


def test_single_component_reductions():
    X = np.array([[1.0, -2.0]])
    y = np.array([1.0])
    prob = LogisticL2Problem(Dataset(X, y), 0.1)
    theta = np.array([0.3, 0.2])
    L = 2.0
    st = initialize_surrogates(prob, theta, "quadratic_at_theta0", L=L)
    new = miso_step(st, prob, 0)
    np.testing.assert_allclose(new, theta - prob.smooth_gradient(theta) / L, atol=1e-14)

    lasso = LinearModelProblem(Dataset(X, [2.0]), "squared", 0.0, PenaltyTerm("l1", 0.4))
    st = initialize_surrogates(lasso, theta, "quadratic_at_theta0", L=L)
    new = miso_composite_step(st, lasso, 0, lasso.penalty)
    ref, _ = batch_mm(lasso, "proximal_gradient", theta, 1, L=L, check_monotone=False)
    np.testing.assert_allclose(new, ref, atol=1e-14)

    st = initialize_surrogates(prob, theta, "anchor_at_theta0", scheme="sag")
    np.testing.assert_allclose(sag_step(st, prob, 0, 0.7), theta - 0.7 * prob.smooth_gradient(theta), atol=1e-14)


def test_miso_fixed_point():
    prob = logistic(T=20, p=3)
    theta, _ = newton_logistic(prob.data.X, prob.data.y, prob.l2)
    st = initialize_surrogates(prob, theta, "anchor_at_theta0")
    np.testing.assert_allclose(st.theta, theta, atol=1e-12)
    for t in range(20):
        np.testing.assert_allclose(miso_step(st, prob, t), theta, atol=1e-12)


def test_init_modes_and_errors():
    prob = logistic(T=10, p=3)
    st = initialize_surrogates(prob, np.zeros(3), "quadratic_at_theta0")
    assert st.iteration == 0 and not st.visited.any()
    np.testing.assert_allclose(st.z, 0.0)
    st = initialize_surrogates(prob, np.zeros(3), "anchor_at_theta0")
    assert st.visited.all() and st.iteration == 1
    with pytest.raises(ValueError):
        initialize_surrogates(prob, np.zeros(4), "quadratic_at_theta0")
    with pytest.raises(ValueError):
        initialize_surrogates(prob, np.zeros(3), "nope")
    other = logistic(T=12, p=3)
    prior = initialize_surrogates(other, np.zeros(3), "anchor_at_theta0")
    with pytest.raises(ValueError):
        initialize_surrogates(prob, np.zeros(3), "warm", prior=prior)
    with pytest.raises(ValueError):
        initialize_surrogates(prob, np.zeros(3), "warm")


def test_warm_init_reuses_gradients_when_smooth_part_unchanged():
    prob = SparseLogPenaltyProblem(Dataset(np.random.default_rng(0).standard_normal((15, 4)),
                                           np.random.default_rng(1).standard_normal(15)), 0.05)
    st = initialize_surrogates(prob, np.zeros(4), "deterministic_pass")
    warm = initialize_surrogates(prob.with_lambda(0.02), np.zeros(4), "warm", prior=st)
    np.testing.assert_array_equal(warm.grad, st.grad)
    changed = logistic(T=15, p=4)
    st = initialize_surrogates(changed, np.zeros(4), "deterministic_pass")
    warm = initialize_surrogates(changed.with_lambda(0.01), np.zeros(4), "warm", prior=st)
    for t in range(15):
        np.testing.assert_allclose(warm.grad[t], changed.with_lambda(0.01).component_gradient(st.kappa[t], t),
                                   atol=1e-14)


# ---------------------------------------------------------------------------
# invariants along a run
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["miso0", "miso1", "miso2"])
def test_state_invariants_along_run(scheme):
    prob = logistic(T=30, p=4, lam=0.01)
    values, z_err, s_err = [], [], []

    def cb(st, pr):
        values.append(st.surrogate_value(st.theta))
        z_err.append(np.abs(st.z - (st.kappa - st.grad / st.L[:, None])).max())
        s_err.append(np.abs(st.S - st.L @ st.z).max())

    run(SolverConfig(scheme=scheme, epochs=8, seed=2), prob, callback=cb)
    assert max(z_err) <= 1e-12 and max(s_err) <= 1e-8
    if scheme == "miso0":
        assert np.all(np.diff(values) <= 1e-10)


def test_surrogate_bounds_objective_from_above():
    prob = logistic(T=30, p=4)
    res = run(SolverConfig(scheme="miso0", epochs=5, track_surrogate=True, compiled=False), prob)
    for r in res.trace[1:]:
        assert r.surrogate >= r.objective - 1e-12


def test_run_is_deterministic():
    prob = logistic(T=50, p=5)
    a = run(SolverConfig(scheme="miso1", epochs=5, seed=4), prob)
    b = run(SolverConfig(scheme="miso1", epochs=5, seed=4), prob)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert [r.objective for r in a.trace] == [r.objective for r in b.trace]
    c = run(SolverConfig(scheme="miso1", epochs=5, seed=5), prob)
    assert not np.array_equal(a.theta, c.theta)


def test_full_minibatch_is_batch_mm():
    prob = logistic(T=20, p=4)
    L = prob.component_lipschitz().max()
    res = run(SolverConfig(scheme="miso0", epochs=6, minibatch=20, init="anchor_at_theta0"), prob)
    ref, _ = batch_mm(prob, "lipschitz_gradient", np.zeros(4), 7, L=L)
    np.testing.assert_allclose(res.theta, ref, atol=1e-12)


@pytest.mark.parametrize("make", [
    lambda: logistic(T=60, p=6),
    lambda: logistic(T=60, p=6, sparse=True),
    lambda: SparseLogPenaltyProblem(gen_data("dense_gaussian", 60, 6, label_model="linear_noise", seed=1), 0.02),
    lambda: LinearModelProblem(gen_data("dense_gaussian", 60, 6, label_model="linear_noise", seed=2),
                               "squared", 0.0, PenaltyTerm("l1", 0.05)),
])
@pytest.mark.parametrize("scheme", ["miso0", "miso1"])
def test_compiled_path_matches_python(make, scheme):
    prob = make()
    a = run(SolverConfig(scheme=scheme, epochs=4, seed=3, compiled=True), prob)
    b = run(SolverConfig(scheme=scheme, epochs=4, seed=3, compiled=False), prob)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)


def test_memory_light_matches_dense_mode():
    prob = logistic(T=80, p=5, lam=0.05)
    a = run(SolverConfig(scheme="miso_mu", epochs=5, seed=1, memory_light=True), prob)
    b = run(SolverConfig(scheme="miso_mu", epochs=5, seed=1, memory_light=False, compiled=False), prob)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-10)
    sa = a.state.surrogate_value(prob, a.theta)
    sb = b.state.surrogate_value(a.theta)
    assert sa == pytest.approx(sb, rel=1e-10)


def test_miso_mu_divergence_is_reported():
    d = gen_data("dense_gaussian", 10, 20, seed=0, scale=5.0)
    prob = LogisticL2Problem(d, 1e-4)
    with pytest.raises(DivergenceError):
        run(SolverConfig(scheme="miso_mu", epochs=50, seed=0), prob)


def test_miso0_converges_outside_large_sample_regime():
    prob = logistic(T=10, p=5, lam=1e-3)
    assert prob.T < 2 * prob.component_lipschitz().max() / prob.l2
    _, fstar = newton_logistic(prob.data.X, prob.data.y, prob.l2)
    res = run(SolverConfig(scheme="miso0", epochs=3000, record_every=100), prob)
    assert res.trace[-1].objective - fstar <= 1e-6


def test_per_component_L():
    d = gen_data("dense_gaussian", 50, 4, seed=0)
    prob = LogisticL2Problem(d, 0.05)
    res = run(SolverConfig(scheme="miso0", epochs=30, per_component_L=True), prob)
    np.testing.assert_allclose(res.L, prob.component_lipschitz())
    _, fstar = newton_logistic(d.X, d.y, 0.05)
    assert res.trace[-1].objective - fstar <= 1e-6


def test_l1_composite_matches_batch_reference():
    d = gen_data("dense_gaussian", 80, 8, label_model="linear_noise", support=3, seed=4)
    prob = LinearModelProblem(d, "squared", 0.0, PenaltyTerm("l1", 0.05))
    ref, _ = batch_mm(prob, None, np.zeros(8), 20000, tol=1e-13, record_every=0)
    res = run(SolverConfig(scheme="miso0", epochs=400, record_every=50), prob)
    assert np.abs(res.theta - ref).max() <= 1e-6


def test_sag_reaches_small_gap():
    prob = logistic(T=100, p=5, lam=0.01)
    res = run(SolverConfig(scheme="sag", epochs=200, record_every=10), prob)
    assert min(r.duality_gap for r in res.trace) <= 1e-8


def test_tol_stops_early():
    prob = logistic(T=50, p=4, lam=0.05)
    res = run(SolverConfig(scheme="miso1", epochs=500, tol=1e-6), prob)
    assert res.trace[-1].stationarity < 1e-6 and res.passes < 500


def test_averaged_iterate_recorded():
    prob = logistic(T=30, p=4)
    res = run(SolverConfig(scheme="miso0", epochs=3, track_average=True), prob)
    assert res.trace[0].averaged_objective is None
    assert all(r.averaged_objective is not None for r in res.trace[1:])


def test_warm_restart_logistic():
    prob = logistic(T=60, p=5, lam=0.05)
    first = run(SolverConfig(scheme="miso1", epochs=30), prob)
    nxt = prob.with_lambda(0.02)
    res = run(SolverConfig(scheme="miso1", epochs=30), nxt, theta0=first.theta, prior_state=first.state)
    ref, _ = newton_logistic(nxt.data.X, nxt.data.y, 0.02)
    assert np.abs(res.theta - ref).max() <= 1e-6


# ---------------------------------------------------------------------------
# heuristics and configuration
# ---------------------------------------------------------------------------

def test_heuristic_search_kmax_zero_returns_L0():
    prob = logistic(T=40)
    L, passes = heuristic_L_search(prob, np.zeros(prob.p), 3.0, eta=0.1, kmax=0)
    assert L == 3.0 and passes == pytest.approx(4 / 40)


def test_heuristic_search_never_worse_than_L0():
    prob = logistic(T=100, p=5, lam=0.01)
    L0 = prob.component_lipschitz().max()
    L, passes = heuristic_L_search(prob, np.zeros(5), L0, eta=0.1, kmax=10, seed=3)
    assert L <= L0 and passes == pytest.approx(11 * 10 / 100)
    arr, _ = heuristic_L_search(prob, np.zeros(5), np.full(100, L0), eta=0.1, kmax=10, seed=3)
    np.testing.assert_allclose(arr, L)


def test_miso2_raises_L_when_needed():
    prob = logistic(T=50, p=5, lam=0.01)
    res = run(SolverConfig(scheme="miso2", epochs=10, eta=0.02), prob)
    assert res.state.monitor.doublings >= 0
    _, fstar = newton_logistic(prob.data.X, prob.data.y, 0.01)
    assert math.isfinite(res.trace[-1].objective)
    assert res.trace[-1].objective - fstar <= 1e-2


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(scheme="sgd").validate(10)
    with pytest.raises(ValueError):
        SolverConfig(minibatch=11).validate(10)
    with pytest.raises(ValueError):
        SolverConfig(eta=0).validate(10)
    with pytest.raises(ValueError):
        SolverConfig.from_dict({"scheme": "miso0", "bogus": 1})
    assert SolverConfig.from_dict({"scheme": "sag", "epochs": 3}).epochs == 3
    prob = squared_1d([1.0, 2.0], PenaltyTerm("l1", 0.1))
    with pytest.raises(ValueError):
        run(SolverConfig(scheme="sag"), prob)
    with pytest.raises(ValueError):
        run(SolverConfig(scheme="miso_mu", mu=1.0), prob)


def test_averaged_iterate_rate_without_strong_convexity():
    rng = np.random.default_rng(0)
    T, p = 40, 8
    X = rng.standard_normal((T, 3)) @ rng.standard_normal((3, p))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = rng.standard_normal(T)
    prob = LinearModelProblem(Dataset(X, y), "squared")
    theta_star = np.linalg.lstsq(X, y, rcond=None)[0]
    fstar = prob(theta_star)
    L = prob.component_lipschitz().max()
    runs = []
    for seed in range(11):
        res = run(SolverConfig(scheme="miso0", epochs=20, seed=seed, init="quadratic_at_theta0",
                               track_average=True, compiled=False), prob)
        runs.append([(r.iteration, r.averaged_objective - fstar) for r in res.trace[1:]])
    for k in range(len(runs[0])):
        n = runs[0][k][0]
        med = np.median([r[k][1] for r in runs])
        assert med <= L * T * float(theta_star @ theta_star) / (2 * n) + 1e-12
