import numpy as np
import pytest

from mfkit.costs import CostSpec, Discount, build_game_cost, eval_mfc_cost
from mfkit.dynamics import MeasureFlow, ModelDynamics, simulate_mckean_vlasov
from mfkit.errors import ConfigurationError, SolverError
from mfkit.io import read_csv
from mfkit.models import make_kuramoto, make_lq
from mfkit.noise import TimeGrid, sample_noise_panel
from mfkit.policy import affine_policy, feature_linear_policy, torus_fourier_policy
from mfkit.solve import (OptimizerConfig, best_response, exploitability, fixed_point_residual,
                         mixture_derivative_check, optimize, solve_mfc)


def test_optimize_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    cfg = OptimizerConfig(iters=150, step=0.2)
    theta, trace, cost = optimize(lambda th, p: float(np.sum((th - target) ** 2)), np.zeros(3), None, cfg)
    assert np.allclose(theta, target, atol=0.05)
    assert cost == pytest.approx(np.sum((theta - target) ** 2))
    assert len(trace) == 150 and trace[0][0] == 0


def test_optimize_threads_identical():
    obj = lambda th, p: float(np.sum(np.sin(th) + th ** 2))
    r1 = optimize(obj, np.ones(4), None, OptimizerConfig(iters=20))
    r2 = optimize(obj, np.ones(4), None, OptimizerConfig(iters=20, threads=4))
    assert np.array_equal(r1[0], r2[0]) and r1[1] == r2[1]


def test_optimize_divergence_carries_trace():
    calls = []

    def obj(th, p):
        calls.append(1)
        return np.nan if len(calls) > 6 else float(th @ th)

    with pytest.raises(SolverError) as info:
        optimize(obj, np.ones(1), None, OptimizerConfig(iters=10))
    assert len(info.value.trace) >= 1


def test_optimize_zero_iterations():
    theta, trace, cost = optimize(lambda th, p: 3.0, np.ones(2), None, OptimizerConfig(iters=0))
    assert np.array_equal(theta, np.ones(2)) and cost == 3.0 and len(trace) == 1


def test_optimize_resample_needs_factory():
    with pytest.raises(ConfigurationError):
        optimize(lambda th, p: 0.0, np.zeros(1), None, OptimizerConfig(resample=True))


def test_optimizer_config_validation():
    with pytest.raises(ConfigurationError):
        OptimizerConfig(step=0)
    with pytest.raises(ConfigurationError):
        OptimizerConfig(threads=0)


def test_smoothed_trace_decreases():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(3.0, 60), 2, 200, seed=1)
    rep = solve_mfc(b.dynamics, b.cost, affine_policy(1, 1, 3.0), panel, b.x0, OptimizerConfig(iters=30),
                    Discount(1.0))
    costs = np.array([r[1] for r in rep.trace])
    window = np.convolve(costs, np.ones(5) / 5, mode="valid")
    assert window[-1] < window[0]
    assert rep.cost <= costs[0]


def test_solve_trivial_control_cost():
    b = make_lq()
    cost = CostSpec(individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, -1))
    panel = sample_noise_panel(TimeGrid(1.0, 20), 2, 50, seed=2)
    rep = solve_mfc(b.dynamics, cost, affine_policy(1, 1, 1.0, theta=[0.3, -0.2]), panel, b.x0,
                    OptimizerConfig(iters=60))
    assert np.max(np.abs(rep.theta)) < 0.05
    assert rep.cost < 1e-3


def test_solve_report_outputs(tmp_path):
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 10), 1, 20, seed=3)
    rep = solve_mfc(b.dynamics, b.cost, affine_policy(1, 1, 1.0), panel, b.x0, OptimizerConfig(iters=3))
    rep.to_csv(tmp_path / "trace.csv")
    header, rows = read_csv(tmp_path / "trace.csv")
    assert header == ["iteration", "cost", "grad_norm", "step"] and len(rows) == 3
    text = rep.summary()
    assert "seed: 3" in text and "theta:" in text


def test_solve_rejects_wrong_control_dim():
    b = make_lq(n=2)
    panel = sample_noise_panel(TimeGrid(1.0, 10), 1, 5, dims=(2, 0), seed=0)
    with pytest.raises(ConfigurationError):
        solve_mfc(b.dynamics, b.cost, affine_policy(2, 1, 1.0), panel, b.x0, OptimizerConfig(iters=1))


def test_lq_slope_invariant_across_knots():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(4.0, 80), 4, 300, seed=4)
    slopes = []
    for knots in (1, 4):
        pol = affine_policy(1, 1, 4.0, n_knots=knots, theta=np.tile([-0.5, 0.0], knots))
        rep = solve_mfc(b.dynamics, b.cost, pol, panel, b.x0, OptimizerConfig(iters=40), Discount(1.0))
        th = rep.theta.reshape(knots, 2)
        # the early knots carry the weight of the discounted cost
        slopes.append(th[0, 0])
    assert slopes[0] == pytest.approx(-1.0, rel=0.15)
    assert slopes[1] == pytest.approx(slopes[0], rel=0.15)


def test_crn_reduces_gradient_variance():
    b = make_lq()
    pol = affine_policy(1, 1, 2.0, theta=[-0.7, 0.0])
    h = 0.02

    def J(theta, seed):
        panel = sample_noise_panel(TimeGrid(2.0, 40), 1, 200, seed=seed)
        return eval_mfc_cost(pol.with_params(theta), b.dynamics, b.cost, panel, b.x0, Discount(1.0)).value

    plus, minus = np.array([-0.7 + h, 0.0]), np.array([-0.7 - h, 0.0])
    crn = [(J(plus, s) - J(minus, s)) / (2 * h) for s in range(12)]
    ind = [(J(plus, s) - J(minus, 1000 + s)) / (2 * h) for s in range(12)]
    assert np.var(crn) <= np.var(ind)


# ---------------------------------------------------------------- best responses


def test_best_response_matches_solve_for_law_free_game():
    b = make_lq()
    cost = CostSpec(individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, -1) + 0.5 * np.sum(x ** 2, -1))
    panel = sample_noise_panel(TimeGrid(2.0, 40), 2, 100, seed=5)
    # law-free features, so the frozen flow does not enter the feedback
    pol = feature_linear_policy(lambda t, x, law: np.concatenate([x, np.ones_like(x)], -1), 2, 1, 2.0)
    cfg = OptimizerConfig(iters=25)
    flow = simulate_mckean_vlasov(pol, b.dynamics, panel, b.x0).flow
    mfc = solve_mfc(b.dynamics, cost, pol, panel, b.x0, cfg)
    br = best_response(b.dynamics, build_game_cost(cost), flow, pol, panel, b.x0, cfg)
    assert np.allclose(mfc.theta, br.theta)
    assert mfc.cost == pytest.approx(br.cost)


def test_lq_best_response_slope():
    b = make_lq()
    a = b.closed_form["a"]
    panel = sample_noise_panel(TimeGrid(5.0, 100), 4, 400, seed=6)
    opt = affine_policy(1, 1, 5.0, theta=[-2 * a, 0.0])
    flow = simulate_mckean_vlasov(opt, b.dynamics, panel, b.x0).flow
    br = best_response(b.dynamics, build_game_cost(b.cost), flow, affine_policy(1, 1, 5.0, theta=[-0.3, 0.0]),
                       panel, b.x0, OptimizerConfig(iters=40), Discount(1.0))
    assert br.theta[0] == pytest.approx(-2 * a, rel=0.1)


def test_kuramoto_best_response_steers_to_mass():
    b = make_kuramoto()
    T, K = 2.0, 40
    grid = TimeGrid(T, K)
    panel = sample_noise_panel(grid, 1, 200, seed=7)
    y = 0.4 * grid.times  # point mass drifting at unit speed 0.4
    states = np.broadcast_to(y[:, None, None, None], (K + 1, 1, 5, 1)).copy()
    flow = MeasureFlow(grid, states, np.full_like(states, 0.4))
    br = best_response(b.dynamics, build_game_cost(b.cost), flow, torus_fourier_policy(T, order=1), panel,
                       lambda rng, N: rng.uniform(-np.pi, np.pi, (N, 1)), OptimizerConfig(iters=30))
    sin_coef = br.theta[0]
    assert sin_coef < 0  # control -sin(x - psi) pulls toward the mass


def test_exploitability_zero_policy_positive():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(4.0, 80), 2, 300, seed=8)
    rep = exploitability(affine_policy(1, 1, 4.0), b.dynamics, build_game_cost(b.cost), panel, b.x0,
                         OptimizerConfig(iters=25), Discount(1.0))
    assert rep.gap > 3 * rep.stderr and rep.gap > 0.1
    assert rep.validation_seed == panel.seed + 7919


def test_exploitability_decoupled_game():
    b = make_lq()
    cost = CostSpec(individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, -1) + 0.5 * np.sum(x ** 2, -1))
    panel = sample_noise_panel(TimeGrid(2.0, 40), 2, 200, seed=9)
    sol = solve_mfc(b.dynamics, cost, affine_policy(1, 1, 2.0), panel, b.x0, OptimizerConfig(iters=40))
    rep = exploitability(sol.policy, b.dynamics, build_game_cost(cost), panel, b.x0, OptimizerConfig(iters=20))
    assert rep.gap >= -2 * rep.stderr
    assert abs(rep.gap) < 0.02 * abs(rep.J_star) + 3 * rep.stderr


# ---------------------------------------------------------------- fixed point residual


def test_fixed_point_residual_same_seed_is_zero():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 10), 2, 50, seed=10)
    assert fixed_point_residual(affine_policy(1, 1, 1.0, theta=[-1, 0]), b.dynamics, panel, b.x0,
                                seed=panel.seed) == 0.0


def test_fixed_point_residual_deterministic_dynamics():
    model = ModelDynamics(1, 1, lambda t, x, a, law: a)
    panel = sample_noise_panel(TimeGrid(1.0, 10), 2, 20, seed=11)
    r = fixed_point_residual(affine_policy(1, 1, 1.0, theta=[-1, 0.3]), model, panel, 0.5)
    assert r < 1e-12


def test_fixed_point_residual_decay_rate():
    b = make_lq()
    pol = affine_policy(1, 1, 1.0, theta=[-1, 0])
    Ns = np.array([250, 1000, 4000])
    res = [np.mean([fixed_point_residual(pol, b.dynamics, sample_noise_panel(TimeGrid(1.0, 10), 1, N, seed=s),
                                         b.x0) for s in range(3)]) for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(res), 1)[0]
    assert -0.75 < slope < -0.3


# ---------------------------------------------------------------- mixtures


def test_mixture_same_policy_is_zero():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 20), 2, 100, seed=12)
    pol = affine_policy(1, 1, 1.0, theta=[-1, 0])
    rep = mixture_derivative_check(pol, pol, b.dynamics, b.cost, build_game_cost(b.cost), [0.1, 0.2], panel,
                                   b.x0, Discount(1.0))
    assert all(row[2] == 0.0 for row in rep.table)
    assert rep.limit == 0.0 and rep.game_gap == 0.0


def test_mixed_ensemble_is_atomwise_mixture():
    from mfkit.dynamics import integrate

    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 5), 1, 10, seed=13)
    p1 = affine_policy(1, 1, 1.0, theta=[-1, 0])
    p2 = affine_policy(1, 1, 1.0, theta=[0.5, 1.0])
    mix = integrate(p1, b.dynamics, panel, b.x0, alt_policy=p2, alt_count=3)
    # at every step the first three controls come from p2, the rest from p1, evaluated on the mixed law
    from mfkit.measure import LawBatch

    for k in range(5):
        law = LawBatch(mix.states[k])
        x = mix.states[k]
        assert np.allclose(mix.controls[k][:, :3], p2(0.0, x, law)[:, :3])
        assert np.allclose(mix.controls[k][:, 3:], p1(0.0, x, law)[:, 3:])


def test_mixture_rejects_bad_delta():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 5), 1, 10, seed=0)
    pol = affine_policy(1, 1, 1.0)
    with pytest.raises(ConfigurationError):
        mixture_derivative_check(pol, pol, b.dynamics, b.cost, build_game_cost(b.cost), [0.6], panel, b.x0)
