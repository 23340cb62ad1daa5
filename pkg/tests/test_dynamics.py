import numpy as np
import pytest

from mfkit.dynamics import (ModelDynamics, euler_step, panel_cell, simulate_controlled, simulate_mckean_vlasov,
                            simulate_vs_flow)
from mfkit.errors import ConfigurationError, SimulationBlowUp
from mfkit.io import read_csv
from mfkit.measure import LawBatch, wasserstein2_1d
from mfkit.models import make_lq
from mfkit.noise import JumpMeasureSpec, TimeGrid, sample_noise_panel
from mfkit.policy import affine_policy


def zero_drift(t, x, a, law):
    return np.zeros_like(x)


def test_euler_identity_without_coefficients():
    panel = sample_noise_panel(TimeGrid(1.0, 4), 2, 3, seed=0)
    model = ModelDynamics(1, 1, zero_drift)
    x = np.arange(6.0).reshape(2, 3, 1)
    out = euler_step(x, 0.0, np.zeros((2, 3, 1)), None, panel_cell(panel, 0), model, 0.25)
    assert np.array_equal(out, x)


def test_euler_unit_drift():
    panel = sample_noise_panel(TimeGrid(1.0, 10), 1, 2, seed=0)
    model = ModelDynamics(1, 1, lambda t, x, a, law: np.ones_like(x))
    x = np.zeros((1, 2, 1))
    out = euler_step(x, 0.0, np.zeros((1, 2, 1)), None, panel_cell(panel, 0), model, 0.1)
    assert np.allclose(out, 0.1)


def test_brownian_terminal_variance():
    T = 2.0
    panel = sample_noise_panel(TimeGrid(T, 20), 1, 10_000, seed=1)
    model = ModelDynamics(1, 1, zero_drift, diffusion=lambda t, x, a: 1.0)
    res = simulate_controlled(None, model, panel, 0.0)
    xT = res.states[-1, 0, :, 0]
    se = T * np.sqrt(2.0 / (xT.size - 1))
    assert abs(xT.var(ddof=1) - T) < 3 * se
    assert abs(xT.mean()) < 3 * np.sqrt(T / xT.size)


def test_compensated_jumps_are_martingale():
    spec = JumpMeasureSpec.gaussian_marks(3.0, 0.5, 0.4)
    panel = sample_noise_panel(TimeGrid(1.0, 20), 2, 5000, seed=2, jump_spec=spec)
    model = ModelDynamics(1, 1, zero_drift, jump=lambda t, x, a, z: np.ones_like(x) * z)
    res = simulate_controlled(None, model, panel, 0.0)
    inc = (res.states[-1] - res.states[0]).ravel()
    assert abs(inc.mean()) < 3 * inc.std(ddof=1) / np.sqrt(inc.size)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_location():
    panel = sample_noise_panel(TimeGrid(1.0, 50), 1, 2, seed=0)
    model = ModelDynamics(1, 1, lambda t, x, a, law: 1e200 * x * np.abs(x))
    with pytest.raises(SimulationBlowUp) as info:
        simulate_controlled(None, model, panel, 1.0)
    s, i, k = info.value.location
    assert s == 0 and 0 <= i < 2 and 0 <= k < 50


def test_lq_optimal_feedback_stationary_variance():
    b = make_lq()
    a = b.closed_form["a"]
    panel = sample_noise_panel(TimeGrid(6.0, 600), 4, 2000, seed=3)
    pol = affine_policy(1, 1, 6.0, theta=[-2 * a, 0.0])
    res = simulate_controlled(pol, b.dynamics, panel, b.x0)
    var = np.array([LawBatch(res.states[k]).variance() for k in range(400, 601, 50)])
    # Euler recursion bias at h = 0.01 is about 1%
    assert var.mean() == pytest.approx(b.closed_form["stationary_variance"], rel=0.05)


def test_zero_policy_preserves_mean():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 50), 1, 5000, seed=4)
    res = simulate_controlled(None, b.dynamics, panel, 2.0)
    xT = res.states[-1, 0, :, 0]
    assert abs(xT.mean() - 2.0) < 3 * xT.std() / np.sqrt(xT.size)


def test_scenarios_without_common_noise_agree():
    model = ModelDynamics(1, 1, zero_drift, diffusion=lambda t, x, a: 1.0)
    gaps = []
    for N in (200, 3200):
        panel = sample_noise_panel(TimeGrid(1.0, 10), 2, N, seed=5)
        res = simulate_controlled(None, model, panel, 0.0)
        gaps.append(wasserstein2_1d(res.states[-1, 0, :, 0], res.states[-1, 1, :, 0]))
    assert gaps[1] < gaps[0]


def test_common_noise_shared_within_scenario():
    model = ModelDynamics(1, 1, zero_drift, common_diffusion=lambda t, x, a: 1.0, common_noise_dim=1)
    panel = sample_noise_panel(TimeGrid(1.0, 10), 3, 50, dims=(0, 1), seed=6)
    res = simulate_controlled(None, model, panel, 0.0)
    xT = res.states[-1, :, :, 0]
    assert np.allclose(xT, xT[:, :1])
    assert np.allclose(xT[:, 0], panel.dW0[:, :, 0].sum(axis=0))


def test_simulation_is_deterministic():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 20), 2, 50, seed=7)
    pol = affine_policy(1, 1, 1.0, theta=[-1.0, 0.2])
    r1 = simulate_controlled(pol, b.dynamics, panel, b.x0)
    r2 = simulate_controlled(pol, b.dynamics, panel, b.x0)
    assert np.array_equal(r1.states, r2.states) and np.array_equal(r1.controls, r2.controls)


def test_mfld_variance_stationary():
    sigma = 1.0
    model = ModelDynamics(1, 1, lambda t, x, a, law: -2.0 * (x - law.mean()[:, None, :]) + a,
                          diffusion=lambda t, x, a: sigma, law_in_drift=True)
    panel = sample_noise_panel(TimeGrid(4.0, 400), 2, 4000, seed=8)
    res = simulate_mckean_vlasov(None, model, panel, 0.0)
    var = LawBatch(res.states[-1]).variance().mean()
    assert var == pytest.approx(sigma ** 2 / 4, rel=0.05)


def test_zero_interaction_reduces_to_controlled():
    panel = sample_noise_panel(TimeGrid(1.0, 20), 2, 30, seed=9)
    mv = ModelDynamics(1, 1, lambda t, x, a, law: 0.0 * law.mean()[:, None, :] + a,
                       diffusion=lambda t, x, a: 1.0, law_in_drift=True)
    plain = ModelDynamics(1, 1, lambda t, x, a, law: a, diffusion=lambda t, x, a: 1.0)
    pol = affine_policy(1, 1, 1.0, theta=[-0.5, 0.1])
    r1 = simulate_mckean_vlasov(pol, mv, panel, 1.0)
    r2 = simulate_controlled(pol, plain, panel, 1.0)
    assert np.allclose(r1.states, r2.states)


def test_frozen_own_flow_reproduces_mckean_vlasov():
    b = make_lq(herding=0.7)
    panel = sample_noise_panel(TimeGrid(1.0, 25), 2, 40, seed=10)
    pol = affine_policy(1, 1, 1.0, theta=[-0.8, 0.3])
    mv = simulate_mckean_vlasov(pol, b.dynamics, panel, b.x0)
    rep = simulate_vs_flow(pol, b.dynamics, mv.flow, panel, b.x0)
    assert np.allclose(mv.states, rep.states)


def test_law_free_drift_ignores_frozen_flow():
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 10), 1, 20, seed=11)
    f1 = simulate_controlled(None, b.dynamics, panel, 0.0).flow
    f2 = simulate_controlled(None, b.dynamics, panel, 5.0).flow
    r1 = simulate_vs_flow(None, b.dynamics, f1, panel, 1.0)
    r2 = simulate_vs_flow(None, b.dynamics, f2, panel, 1.0)
    assert np.array_equal(r1.states, r2.states)


def test_frozen_grid_mismatch():
    b = make_lq()
    p1 = sample_noise_panel(TimeGrid(1.0, 10), 1, 5, seed=0)
    p2 = sample_noise_panel(TimeGrid(1.0, 20), 1, 5, seed=0)
    flow = simulate_controlled(None, b.dynamics, p1, 0.0).flow
    with pytest.raises(ConfigurationError):
        simulate_vs_flow(None, b.dynamics, flow, p2, 0.0)


def test_lq_best_response_vs_stationary_flow_is_ou():
    # stationary Gaussian flow, player uses -2a (x - m): OU with rate 2a
    b = make_lq()
    a = b.closed_form["a"]
    panel = sample_noise_panel(TimeGrid(6.0, 600), 2, 4000, seed=12)
    pol = affine_policy(1, 1, 6.0, theta=[-2 * a, 0.0])
    flow = simulate_controlled(pol, b.dynamics, panel, b.x0).flow
    rep = simulate_vs_flow(pol, b.dynamics, flow, panel.with_idiosyncratic_seed(99), 0.0)
    var = np.mean([LawBatch(rep.states[k]).variance().mean() for k in range(500, 601, 20)])
    assert var == pytest.approx(1.0 / (4 * a), rel=0.05)


def test_left_inverse_identity(rng):
    b = make_lq(herding=1.3)
    x = rng.normal(size=(2, 7, 1))
    a = rng.normal(size=(2, 7, 1))
    law = LawBatch(x, a)
    y = b.dynamics.drift(0.0, x, a, law)
    assert np.allclose(b.dynamics.inverse_drift(0.0, x, y, law), a, atol=1e-14)


def test_second_moment_stable_under_refinement():
    b = make_lq()
    pol = affine_policy(1, 1, 2.0, theta=[-1.0, 0.0])
    sups = []
    for K in (50, 100, 200):
        panel = sample_noise_panel(TimeGrid(2.0, K), 2, 2000, seed=13)
        res = simulate_controlled(pol, b.dynamics, panel, b.x0)
        sups.append(np.max(np.mean(res.states[..., 0] ** 2, axis=(1, 2))))
    assert np.all(np.isfinite(sups))
    assert max(sups) / min(sups) < 1.2


def test_trajectory_csv(tmp_path):
    b = make_lq()
    panel = sample_noise_panel(TimeGrid(1.0, 3), 2, 2, seed=0)
    res = simulate_controlled(affine_policy(1, 1, 1.0, theta=[-1.0, 0.0]), b.dynamics, panel, 0.5)
    res.to_csv(tmp_path / "traj.csv")
    header, rows = read_csv(tmp_path / "traj.csv")
    assert header == ["scenario", "particle", "step", "t", "x0", "a0"]
    assert len(rows) == 2 * 2 * 4
    assert rows[0][4] == 0.5


def test_torus_states_wrapped_on_read():
    from mfkit.models import make_kuramoto

    b = make_kuramoto()
    panel = sample_noise_panel(TimeGrid(1.0, 10), 1, 20, seed=1)
    res = simulate_controlled(None, b.dynamics, panel, 3.0)
    w = res.wrapped_states()
    assert np.all((w >= 0) & (w < 2 * np.pi))
    assert np.allclose(np.exp(1j * w), np.exp(1j * res.states))
