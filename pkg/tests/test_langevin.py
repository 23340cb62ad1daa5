import numpy as np
import pytest

from mfkit.errors import ConfigurationError
from mfkit.io import read_csv
from mfkit.langevin import compare_mfld_to_mfc, geometric_checkpoints, run_mfld
from mfkit.models import Potential, kuramoto_potential, variance_potential
from mfkit.noise import TimeGrid, sample_noise_panel
from mfkit.solve import OptimizerConfig


def test_geometric_checkpoints():
    ks = geometric_checkpoints(400, 12)
    assert ks[0] == 0 and ks[-1] == 400
    assert np.all(np.diff(ks) > 0)
    with pytest.raises(ConfigurationError):
        geometric_checkpoints(0)


def test_variance_flow_stationary_variance():
    sigma = 1.0
    panel = sample_noise_panel(TimeGrid(4.0, 400), 2, 4000, seed=0)
    res = run_mfld(variance_potential(), sigma, panel, lambda rng, N: 2.0 * rng.standard_normal((N, 1)))
    assert res.diagnostics.variance[-1] == pytest.approx(sigma ** 2 / 4, rel=0.05)
    assert res.final_states.shape == (2, 4000, 1)


def test_variance_flow_preserves_mean():
    panel = sample_noise_panel(TimeGrid(2.0, 100), 2, 4000, seed=1)
    res = run_mfld(variance_potential(), 1.0, panel, lambda rng, N: 1.5 + rng.standard_normal((N, 1)))
    m = res.final_states[..., 0].mean(axis=1)
    # the initial draws have mean 1.5 up to sampling error; the flow adds sigma^2/4 variance at most
    assert np.all(np.abs(m - 1.5) < 4 * np.sqrt(1.25 / 4000))


def test_deterministic_point_mass_stays():
    panel = sample_noise_panel(TimeGrid(1.0, 20), 1, 10, seed=2)
    res = run_mfld(variance_potential(), 0.0, panel, 0.3)
    assert np.allclose(res.final_states, 0.3)
    assert np.all(res.diagnostics.H == 0.0)
    assert np.allclose(res.diagnostics.w2_step, 0.0)


def test_free_energy_decreases_for_variance():
    panel = sample_noise_panel(TimeGrid(3.0, 300), 8, 1000, seed=3)
    res = run_mfld(variance_potential(), 1.0, panel, lambda rng, N: 2.0 * rng.standard_normal((N, 1)))
    d = res.diagnostics
    assert np.all(np.diff(d.t) > 0)
    for j in range(1, d.t.size):
        assert d.free_energy[j] <= d.free_energy[j - 1] + d.free_energy_stderr[j] + d.free_energy_stderr[j - 1]
    assert d.free_energy[-1] < d.free_energy[0]


def test_convergence_flag():
    panel = sample_noise_panel(TimeGrid(20.0, 400), 2, 1000, seed=3)
    x0 = lambda rng, N: 2.0 * rng.standard_normal((N, 1))
    res = run_mfld(variance_potential(), 1.0, panel, x0, checkpoints=range(0, 401, 40), tol=0.05)
    assert res.converged and res.converged_at <= 20.0
    short = run_mfld(variance_potential(), 1.0, sample_noise_panel(TimeGrid(1.0, 20), 2, 1000, seed=3), x0,
                     checkpoints=range(0, 21, 2), tol=0.05)
    assert not short.converged


def test_free_energy_decreases_for_kuramoto():
    panel = sample_noise_panel(TimeGrid(6.0, 300), 8, 600, seed=4)
    res = run_mfld(kuramoto_potential(), 1.0, panel, lambda rng, N: rng.vonmises(0.0, 0.5, (N, 1)), coupling=4.0,
                   period=2 * np.pi)
    d = res.diagnostics
    for j in range(1, d.t.size):
        assert d.free_energy[j] <= d.free_energy[j - 1] + d.free_energy_stderr[j] + d.free_energy_stderr[j - 1]
    assert d.order_param[-1] > 0.5
    assert np.all(np.isfinite(d.free_energy))


def test_mfld_csv(tmp_path):
    panel = sample_noise_panel(TimeGrid(1.0, 20), 1, 50, seed=5)
    res = run_mfld(variance_potential(), 1.0, panel, lambda rng, N: rng.standard_normal((N, 1)), checkpoints=[0, 10, 20])
    res.diagnostics.to_csv(tmp_path / "d.csv")
    header, rows = read_csv(tmp_path / "d.csv")
    assert header == ["t", "F", "H", "free_energy", "order_param", "variance", "w2_step"]
    assert [r[0] for r in rows] == [0.0, 0.5, 1.0]


def test_mfld_dimension_mismatch():
    panel = sample_noise_panel(TimeGrid(1.0, 5), 1, 5, dims=(2, 0), seed=0)
    with pytest.raises(ConfigurationError):
        run_mfld(variance_potential(), 1.0, panel, 0.0, state_dim=1)


def test_mfld_checkpoint_range():
    panel = sample_noise_panel(TimeGrid(1.0, 5), 1, 5, seed=0)
    with pytest.raises(ConfigurationError):
        run_mfld(variance_potential(), 1.0, panel, 0.0, checkpoints=[0, 9])


def test_compare_constant_functional_gives_zero_drift():
    c = 0.4
    pot = Potential(lambda law: np.full(law.n_scenarios, c), lambda law, x: np.full(x.shape[:2], c),
                    lambda law, x: np.zeros(x.shape), lambda law, x: np.zeros(x.shape[:2]))
    panel = sample_noise_panel(TimeGrid(4.0, 80), 2, 200, seed=6)
    rep = compare_mfld_to_mfc(pot, 1.0, 1.0, panel, lambda rng, N: rng.standard_normal((N, 1)),
                              cfg=OptimizerConfig(iters=30))
    assert rep.drift_rel_error < 0.1  # absolute RMS of the learned control
    assert rep.reference_value == pytest.approx(c)
