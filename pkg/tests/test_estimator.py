import math

import numpy as np
import pytest
from scipy import optimize

from levy_exit.estimator import (
    EstimationError,
    EstimationProblem,
    FreeParameter,
    ObservationSet,
    estimate_parameters,
    minimize_multi,
    minimize_scalar,
    relative_l2_objective,
)
from levy_exit.figures import SCENARIOS, synthetic_observations
from levy_exit.nonlocal_solver import EP, MET, Domain, Profile, SystemParams, TargetSet, mean_exit_time


def _profile(xs, values):
    return Profile(np.asarray(xs, float), np.asarray(values, float), MET)


def test_objective_trivial_cases():
    xs = np.linspace(-0.9, 0.9, 7)
    v = 1 - xs**2
    obs = ObservationSet(xs, v, MET)
    assert relative_l2_objective(_profile(xs, v), obs) == 0.0
    assert relative_l2_objective(_profile(xs, 2 * v), obs) == pytest.approx(1.0, rel=1e-15)


def test_objective_interpolates_linearly():
    model = _profile([0.0, 1.0], [0.0, 2.0])
    obs = ObservationSet([0.25, 0.5], [1.0, 1.0], MET)
    # model at obs: 0.5 and 1.0
    assert relative_l2_objective(model, obs) == pytest.approx(0.25 / 2)


def test_objective_errors():
    with pytest.raises(ValueError):
        relative_l2_objective(_profile([0, 1], [1, 1]), ObservationSet([0.5], [0.0], MET))
    with pytest.raises(ValueError):
        relative_l2_objective(_profile([0, 1], [1, 1]), ObservationSet([0.5, 1.5], [1.0, 1.0], MET))


def test_objective_local_basin_ou():
    dom = Domain(-2, 2)
    truth = mean_exit_time(SystemParams(0.6), "-x", dom, 200)
    obs = ObservationSet.from_profile(truth)
    g = [relative_l2_objective(mean_exit_time(SystemParams(a), "-x", dom, 200), obs)
         for a in (0.6, 0.65, 0.8)]
    assert g[0] == 0.0 and 0 < g[1] < g[2]


def test_observation_set_invariants():
    with pytest.raises(ValueError):
        ObservationSet([0.0, 0.0], [1.0, 1.0], MET)
    with pytest.raises(ValueError):
        ObservationSet([0.0, 1.0], [1.0, np.nan], MET)
    with pytest.raises(ValueError):
        ObservationSet([0.0], [0.5], EP)
    with pytest.raises(ValueError):
        ObservationSet([0.0], [1.5], EP, TargetSet("right"))


def test_scalar_quadratic():
    res = minimize_scalar(lambda x: (x - 0.7) ** 2, 0.0, 2.0, xtol=1e-6)
    assert res.x == pytest.approx(0.7, abs=1e-6)
    ref = optimize.minimize_scalar(lambda x: (x - 0.7) ** 2, bounds=(0, 2), method="bounded",
                                   options={"xatol": 1e-6})
    assert res.x == pytest.approx(ref.x, abs=2e-6)


def test_scalar_kink():
    res = minimize_scalar(lambda x: abs(x - 1.25), 0.0, 2.0, xtol=1e-6)
    assert res.x == pytest.approx(1.25, abs=1e-5)


@pytest.mark.parametrize("f,lo,hi", [
    (lambda x: math.cos(3 * x) + 0.1 * x, 0.0, 2.0),
    (lambda x: (x - 0.1) ** 4, -1.0, 3.0),
    (lambda x: math.exp(x) - 2 * x, -2.0, 2.0),
    (lambda x: x, 0.5, 1.5),
])
def test_scalar_agrees_with_scipy_bounded(f, lo, hi):
    res = minimize_scalar(f, lo, hi, xtol=1e-8)
    ref = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
    assert res.x == pytest.approx(ref.x, abs=1e-6)
    assert res.fun <= ref.fun + 1e-12


def test_scalar_returns_best_probe():
    res = minimize_scalar(lambda x: math.sin(5 * x) + x, 0.0, 3.0)
    assert res.fun == min(v for _, v in res.trace)
    assert res.nfev == len(res.trace)


def test_scalar_respects_budget_and_bracket():
    res = minimize_scalar(lambda x: (x - 0.3) ** 2, 0.0, 1.0, xtol=1e-12, max_eval=10)
    assert res.nfev <= 10
    assert all(0.0 <= x <= 1.0 for x, _ in res.trace)


def test_scalar_errors():
    with pytest.raises(ValueError):
        minimize_scalar(lambda x: x, 1.0, 1.0)
    with pytest.raises(FloatingPointError):
        minimize_scalar(lambda x: math.nan, 0.0, 1.0)
    with pytest.raises(FloatingPointError):
        minimize_scalar(lambda x: math.inf, 0.0, 1.0)


def test_multi_separable_quadratic():
    res = minimize_multi(lambda v: (v[0] - 0.6) ** 2 + (v[1] - 1.5) ** 2, [(0.1, 1.9), (0.1, 3.0)])
    np.testing.assert_allclose(res.x, [0.6, 1.5], atol=1e-4)
    assert all(0.1 <= p[0] <= 1.9 and 0.1 <= p[1] <= 3.0 for _, _, p, _ in res.trace)


def test_multi_is_deterministic_across_threads():
    f = lambda v: (v[0] - 0.2) ** 2 + 3 * (v[1] + 0.4) ** 2 + 0.1 * math.sin(7 * v[0])
    a = minimize_multi(f, [(-1, 1), (-1, 1)], threads=1)
    b = minimize_multi(f, [(-1, 1), (-1, 1)], threads=3)
    assert len(a.trace) == len(b.trace) and np.array_equal(a.x, b.x)
    for (s1, k1, p1, v1), (s2, k2, p2, v2) in zip(a.trace, b.trace):
        assert (s1, k1, v1) == (s2, k2, v2) and np.array_equal(p1, p2)


def test_multi_skips_failing_starts():
    def f(v):
        if v[0] < 0:
            return math.inf
        return (v[0] - 0.5) ** 2 + v[1] ** 2

    res = minimize_multi(f, [(-1, 1), (-1, 1)])
    np.testing.assert_allclose(res.x, [0.5, 0.0], atol=1e-4)
    with pytest.raises(RuntimeError):
        minimize_multi(lambda v: math.inf, [(0, 1), (0, 1)])


def test_free_parameter_validation():
    assert FreeParameter.parse("alpha:0.1:1.9") == FreeParameter("alpha", 0.1, 1.9)
    for bad in ["alpha:0:1", "alpha:1:2", "beta:2:1", "beta:0:inf", "beta:1"]:
        with pytest.raises(ValueError):
            FreeParameter.parse(bad)


def _ou_obs(J=100, alpha=0.6, dom=Domain(-2, 2)):
    return ObservationSet.from_profile(mean_exit_time(SystemParams(alpha), "-x", dom, J))


def test_problem_validation():
    obs = _ou_obs(20)
    alpha = [FreeParameter("alpha", 0.1, 1.9)]
    with pytest.raises(ValueError):
        EstimationProblem(obs, "-x", Domain(-2, 2), [])
    with pytest.raises(ValueError):
        EstimationProblem(obs, "-x", Domain(-2, 2), alpha, {"alpha": 1.0})
    with pytest.raises(ValueError):
        EstimationProblem(obs, "-x", Domain(-2, 2), alpha, {"gamma": 1.0})
    with pytest.raises(ValueError):
        EstimationProblem(obs, "x - beta*x^3", Domain(-2, 2), alpha)
    with pytest.raises(ValueError):
        EstimationProblem(obs, "-x", Domain(-1, 1), alpha)


def test_zero_noise_identity_scalar():
    obs = _ou_obs(100)
    problem = EstimationProblem(obs, "-x", Domain(-2, 2), [FreeParameter("alpha", 0.1, 1.9)], J=100)
    assert problem.objective(problem.assemble([0.6])) == pytest.approx(0.0, abs=1e-24)
    res = estimate_parameters(problem)
    assert res.best["alpha"] == pytest.approx(0.6, abs=1e-4)
    assert res.objective_value == problem.objective(res.best)
    assert res.evaluations == len(res.trace)


def test_same_grid_round_trip_two_parameters():
    sc = SCENARIOS[3][0]
    obs = synthetic_observations(sc, 100)
    problem = EstimationProblem(obs, sc.drift, sc.domain, list(sc.free), J=100)
    res = estimate_parameters(problem)
    assert res.best["alpha"] == pytest.approx(0.6, abs=1e-2)
    assert res.best["beta"] == pytest.approx(1.5, abs=1e-2)
    assert res.objective_value == pytest.approx(problem.objective(res.best), rel=1e-12, abs=1e-30)


def test_alpha_on_small_domain_within_001():
    sc = SCENARIOS[1][0]
    obs = synthetic_observations(sc, 200)
    problem = EstimationProblem(obs, sc.drift, sc.domain, list(sc.free), J=100)
    assert estimate_parameters(problem).best["alpha"] == pytest.approx(0.6, abs=0.01)


def test_estimate_epsilon_with_alpha_fixed():
    dom = Domain(-1, 1)
    obs = ObservationSet.from_profile(mean_exit_time(SystemParams(1.2, 0.7), "x - x^3", dom, 100))
    problem = EstimationProblem(obs, "x - x^3", dom, [FreeParameter("epsilon", 1e-3, 10)],
                                {"alpha": 1.2}, J=100)
    assert estimate_parameters(problem).best["epsilon"] == pytest.approx(0.7, abs=1e-4)


def test_probe_failures_are_infinite_not_fatal():
    # negative diffusion coefficients are rejected by the forward model
    dom = Domain(-1, 1)
    truth = mean_exit_time(SystemParams(1.0, 1.0, 0.3), "-x", dom, 30)
    problem = EstimationProblem(ObservationSet.from_profile(truth), "-x", dom,
                                [FreeParameter("d", -1.0, 1.0)], {"alpha": 1.0}, J=30)
    res = estimate_parameters(problem)
    assert res.best["d"] == pytest.approx(0.3, abs=1e-4)
    assert res.failures
    assert all(env["d"] < 0 for env, _ in res.failures)
    assert all(math.isinf(v) for env, v in res.trace if env["d"] < 0)


def test_all_probes_failing_raises():
    dom = Domain(-1, 1)
    obs = ObservationSet.from_profile(mean_exit_time(SystemParams(1.0), "-x", dom, 10))
    problem = EstimationProblem(obs, "-x/(beta - beta)", dom, [FreeParameter("beta", 1, 2)],
                                {"alpha": 1.0}, J=10)
    with pytest.raises(EstimationError):
        estimate_parameters(problem)
