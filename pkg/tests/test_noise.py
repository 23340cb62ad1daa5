import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfkit.errors import ConfigurationError
from mfkit.noise import (JumpMeasureSpec, TimeGrid, coarsen_panel, sample_jump_events, sample_noise_panel)


def test_grid_points_cover_horizon():
    g = TimeGrid(2.0, 8)
    assert g.step == 0.25
    assert g.times[0] == 0.0 and g.times[-1] == 2.0
    assert g.times.size == 9


@pytest.mark.parametrize("T,K", [(0.0, 5), (-1.0, 5), (1.0, 0)])
def test_bad_grid_rejected(T, K):
    with pytest.raises(ConfigurationError):
        TimeGrid(T, K)


def test_panel_shapes():
    p = sample_noise_panel(TimeGrid(1.0, 10), 2, 3, dims=(1, 1), seed=0)
    assert p.dW.shape == (10, 2, 3, 1)
    assert p.dW.size == 2 * 3 * 10
    assert p.dW0.shape == (10, 2, 1)
    assert p.dW0.size == 2 * 10


def test_same_seed_identical_panels():
    spec = JumpMeasureSpec.gaussian_marks(1.5, 0.0, 1.0)
    a = sample_noise_panel(TimeGrid(1.0, 20), 3, 7, (2, 1), seed=11, jump_spec=spec, common_jump_spec=spec)
    b = sample_noise_panel(TimeGrid(1.0, 20), 3, 7, (2, 1), seed=11, jump_spec=spec, common_jump_spec=spec)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dW0, b.dW0)
    assert np.array_equal(a.jumps.time, b.jumps.time) and np.array_equal(a.jumps.mark, b.jumps.mark)
    assert np.array_equal(a.common_jumps.time, b.common_jumps.time)


def test_zero_intensity_means_no_events():
    p = sample_noise_panel(TimeGrid(1.0, 10), 2, 5, seed=0, jump_spec=JumpMeasureSpec.none(),
                           common_jump_spec=JumpMeasureSpec.none())
    assert len(p.jumps) == 0 and len(p.common_jumps) == 0


def test_panel_is_read_only():
    p = sample_noise_panel(TimeGrid(1.0, 4), 1, 2, seed=0)
    with pytest.raises(ValueError):
        p.dW[0, 0, 0, 0] = 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=st.integers(0, 2), i=st.integers(0, 4), k=st.integers(0, 5),
       d=st.integers(1, 3))
def test_any_cell_regenerates_bit_identically(seed, s, i, k, d):
    p = sample_noise_panel(TimeGrid(1.0, 6), 3, 5, (d, 2), seed=seed)
    assert np.array_equal(p.regenerate_cell(s, i, k), p.dW[k, s, i])
    assert np.array_equal(p.regenerate_common_cell(s, k), p.dW0[k, s])


def test_increment_moments():
    g = TimeGrid(1.0, 50)
    p = sample_noise_panel(g, 4, 1000, seed=3)
    x = p.dW.ravel()
    assert x.size >= 10 ** 5
    n = x.size
    se_mean = np.sqrt(g.step / n)
    se_var = g.step * np.sqrt(2.0 / (n - 1))
    assert abs(x.mean()) < 5 * se_mean
    assert abs(x.var(ddof=1) - g.step) < 5 * se_var


def test_idiosyncratic_seed_keeps_common_noise():
    spec = JumpMeasureSpec.constant_marks(2.0, 1.0)
    p = sample_noise_panel(TimeGrid(1.0, 10), 2, 4, (1, 1), seed=5, common_jump_spec=spec)
    q = p.with_idiosyncratic_seed(6)
    assert np.array_equal(p.dW0, q.dW0)
    assert np.array_equal(p.common_jumps.time, q.common_jumps.time)
    assert not np.array_equal(p.dW, q.dW)


def test_jump_events_empty_for_zero_intensity(rng):
    t, m = sample_jump_events(JumpMeasureSpec.none(), 5.0, rng)
    assert t.size == 0 and m.shape == (0, 1)


def test_negative_intensity_rejected():
    with pytest.raises(ConfigurationError):
        JumpMeasureSpec(-1.0, lambda r, n: np.ones((n, 1)))


def test_poisson_count_mean_and_variance(rng):
    spec = JumpMeasureSpec.constant_marks(2.0, 1.0)
    counts = np.array([sample_jump_events(spec, 5.0, rng)[0].size for _ in range(10_000)])
    lam = 10.0
    se = np.sqrt(lam / counts.size)
    assert abs(counts.mean() - lam) < 3 * se
    # the variance of a sample variance of Poisson(lam) counts is about (lam + 2 lam^2) / n
    assert abs(counts.var(ddof=1) - lam) < 3 * np.sqrt((lam + 2 * lam ** 2) / counts.size)


def test_point_mass_marks(rng):
    t, m = sample_jump_events(JumpMeasureSpec.constant_marks(1.0, 1.0), 1.0, rng)
    assert np.all(m == 1.0)
    for _ in range(50):
        t, _ = sample_jump_events(JumpMeasureSpec.constant_marks(3.0, 1.0), 1.0, rng)
        assert np.all(np.diff(t) >= 0) and np.all((t >= 0) & (t <= 1))


def test_zero_mark_rejected():
    with pytest.raises(ConfigurationError):
        JumpMeasureSpec.constant_marks(1.0, 0.0)


def test_jump_times_disjoint_across_channels():
    spec = JumpMeasureSpec.gaussian_marks(3.0, 0.0, 1.0)
    p = sample_noise_panel(TimeGrid(2.0, 20), 2, 10, (1, 0), seed=1, jump_spec=spec, common_jump_spec=spec)
    for s in range(2):
        idio = p.jumps.time[p.jumps.scenario == s]
        common = p.common_jumps.time[p.common_jumps.scenario == s]
        assert np.intersect1d(idio, common).size == 0


def test_events_land_in_their_step():
    spec = JumpMeasureSpec.constant_marks(5.0, 1.0)
    g = TimeGrid(1.0, 10)
    p = sample_noise_panel(g, 1, 20, seed=2, jump_spec=spec)
    lo, hi = g.times[p.jumps.step], g.times[p.jumps.step + 1]
    assert np.all((p.jumps.time > lo - 1e-15) & (p.jumps.time <= hi + 1e-15))


def test_coarsened_panel_sums_increments():
    spec = JumpMeasureSpec.constant_marks(2.0, 1.0)
    p = sample_noise_panel(TimeGrid(1.0, 16), 2, 3, (1, 1), seed=4, jump_spec=spec)
    c = coarsen_panel(p, 4)
    assert c.grid.n_steps == 4
    assert np.allclose(c.dW.sum(axis=0), p.dW.sum(axis=0))
    assert np.allclose(c.dW[1], p.dW[4:8].sum(axis=0))
    assert len(c.jumps) == len(p.jumps)
    with pytest.raises(ConfigurationError):
        coarsen_panel(p, 3)
