"""Reproducible Brownian and compound-Poisson noise for particle simulations.

Brownian increments are generated from counter-based Philox streams: the key
is derived from ``(seed, channel, scenario)`` and the counter position encodes
``(particle, step, component)``.  Any single cell can therefore be regenerated
without replaying the rest of the panel (see :meth:`NoisePanel.regenerate_cell`).

Jump channels are finite-activity (compound Poisson).  Event times use the
uniform order-statistics representation: draw the Poisson count, then sort
that many uniforms on ``[0, T]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

__all__ = [
    "TimeGrid",
    "JumpMeasureSpec",
    "JumpEvents",
    "NoisePanel",
    "sample_jump_events",
    "sample_noise_panel",
    "coarsen_panel",
]

# channel ids used to derive stream keys
IDIO_BROWNIAN = 0
COMMON_BROWNIAN = 1
IDIO_JUMPS = 2
COMMON_JUMPS = 3
INITIAL_STATE = 4

_TWO_M53 = 2.0 ** -53


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k h`` on ``[0, horizon]``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not int(self.n_steps) == self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ConfigurationError(f"horizon must be positive and finite, got {self.horizon!r}")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # multiply instead of accumulating so the last point is exactly T
        return np.arange(self.n_steps + 1) * self.step

    def same_as(self, other: "TimeGrid") -> bool:
        return self.n_steps == other.n_steps and np.isclose(self.horizon, other.horizon, rtol=1e-12)


MarkSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class JumpMeasureSpec:
    """Finite jump measure ``intensity * P_mark`` on ``R^k \\ {0}``.

    ``mark_sampler(rng, size)`` must return an array of shape ``(size, mark_dim)``.
    """

    intensity: float = 0.0
    mark_sampler: Optional[MarkSampler] = None
    mark_dim: int = 1
    mark_mean: Optional[np.ndarray] = None
    mark_second_moment: Optional[float] = None
    point_mass: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.isfinite(self.intensity):
            raise ConfigurationError("jump intensity must be finite")
        if self.intensity < 0:
            raise ConfigurationError(f"jump intensity must be >= 0, got {self.intensity}")
        if self.intensity > 0 and self.mark_sampler is None:
            raise ConfigurationError("a positive intensity needs a mark sampler")

    @classmethod
    def none(cls, mark_dim: int = 1) -> "JumpMeasureSpec":
        return cls(0.0, None, mark_dim)

    @classmethod
    def constant_marks(cls, intensity: float, value) -> "JumpMeasureSpec":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if not np.any(value != 0):
            raise ConfigurationError("marks live on R^k \\ {0}; the zero mark is not allowed")

        def sampler(rng, size):
            return np.broadcast_to(value, (size, value.size)).copy()

        return cls(intensity, sampler, value.size, value, float(value @ value), value)

    @classmethod
    def gaussian_marks(cls, intensity: float, mean, std: float) -> "JumpMeasureSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        k = mean.size

        def sampler(rng, size):
            return mean + std * rng.standard_normal((size, k))

        return cls(intensity, sampler, k, mean, float(mean @ mean + k * std ** 2))

    def draw_marks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if size == 0:
            return np.empty((0, self.mark_dim))
        marks = np.asarray(self.mark_sampler(rng, size), dtype=float).reshape(size, self.mark_dim)
        if np.any(np.all(marks == 0, axis=1)):
            raise ConfigurationError("mark sampler returned the zero vector")
        return marks

    def quadrature_marks(self, n: int = 256) -> np.ndarray:
        """Fixed marks used to approximate ``E_mark[...]`` in the compensator."""
        if self.point_mass is not None:
            return self.point_mass[None, :].copy()
        rng = np.random.Generator(np.random.Philox(key=np.array([0x5EED, 0xC0FFEE], dtype=np.uint64)))
        return self.draw_marks(rng, n)


def _stream_key(seed: int, *words: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, words)]).generate_state(2, np.uint64)


def _normals(seed: int, channel: int, scenario: int, count: int, offset: int = 0) -> np.ndarray:
    """Standard normals for raw-counter words ``offset .. offset + count``."""
    bg = np.random.Philox(key=_stream_key(seed, channel, scenario))
    block, lane = divmod(offset, 4)
    if block:
        bg.advance(block)
    raw = bg.random_raw(count + lane)[lane:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def sample_jump_events(spec: JumpMeasureSpec, horizon: float, rng: np.random.Generator):
    """Sorted ``(times, marks)`` of a compound-Poisson channel on ``[0, horizon]``."""
    if spec.intensity < 0:
        raise ConfigurationError("negative intensity")
    if spec.intensity == 0:
        return np.empty(0), np.empty((0, spec.mark_dim))
    count = rng.poisson(spec.intensity * horizon)
    times = np.sort(rng.uniform(0.0, horizon, size=count))
    return times, spec.draw_marks(rng, count)


@dataclass(frozen=True)
class JumpEvents:
    """Flat event table sorted by step.  ``particle == -1`` marks common events."""

    step: np.ndarray
    scenario: np.ndarray
    particle: np.ndarray
    time: np.ndarray
    mark: np.ndarray
    offsets: np.ndarray  # offsets[k]:offsets[k+1] are the events of step k

    @classmethod
    def empty(cls, n_steps: int, mark_dim: int) -> "JumpEvents":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z, z, np.empty(0), np.empty((0, mark_dim)), np.zeros(n_steps + 1, dtype=np.int64))

    @classmethod
    def build(cls, grid: TimeGrid, scenario, particle, time, mark, mark_dim):
        time = np.asarray(time, dtype=float)
        if time.size == 0:
            return cls.empty(grid.n_steps, mark_dim)
        # event at t in (t_k, t_{k+1}] belongs to step k
        step = np.clip(np.ceil(time / grid.step).astype(np.int64) - 1, 0, grid.n_steps - 1)
        order = np.lexsort((time, scenario, step))
        step = step[order]
        offsets = np.searchsorted(step, np.arange(grid.n_steps + 1), side="left")
        return cls(step, np.asarray(scenario)[order], np.asarray(particle)[order], time[order],
                   np.asarray(mark).reshape(-1, mark_dim)[order], offsets)

    def at_step(self, k: int):
        sl = slice(self.offsets[k], self.offsets[k + 1])
        return self.scenario[sl], self.particle[sl], self.mark[sl]

    def __len__(self):
        return self.time.size


@dataclass(frozen=True)
class NoisePanel:
    """Immutable pre-sampled noise for ``S`` scenarios of ``N`` particles.

    Attributes
    ----------
    dW : array (K, S, N, d)
        Idiosyncratic Brownian increments.
    dW0 : array (K, S, l)
        Common Brownian increments, shared by every particle of a scenario.
    jumps, common_jumps : JumpEvents
    """

    grid: TimeGrid
    n_scenarios: int
    n_particles: int
    dims: tuple
    seed: int
    common_seed: int
    dW: np.ndarray
    dW0: np.ndarray
    jumps: JumpEvents
    common_jumps: JumpEvents
    jump_spec: JumpMeasureSpec = field(default_factory=JumpMeasureSpec.none)
    common_jump_spec: JumpMeasureSpec = field(default_factory=JumpMeasureSpec.none)

    @property
    def shape(self):
        return self.n_scenarios, self.n_particles

    def initial_rng(self, scenario: int) -> np.random.Generator:
        """Generator for the initial condition of one scenario."""
        return np.random.Generator(np.random.Philox(key=_stream_key(self.seed, INITIAL_STATE, scenario)))

    def sample_initial(self, sampler, state_dim: int) -> np.ndarray:
        """Draw ``X_0`` with shape (S, N, n) via ``sampler(rng, N) -> (N, n)``."""
        out = np.empty((self.n_scenarios, self.n_particles, state_dim))
        for s in range(self.n_scenarios):
            out[s] = np.asarray(sampler(self.initial_rng(s), self.n_particles), dtype=float).reshape(
                self.n_particles, state_dim)
        return out

    def regenerate_cell(self, scenario: int, particle: int, step: int) -> np.ndarray:
        """Recompute ``dW[step, scenario, particle]`` directly from its counter."""
        d = self.dims[0]
        K = self.grid.n_steps
        offset = (particle * K + step) * d
        return np.sqrt(self.grid.step) * _normals(self.seed, IDIO_BROWNIAN, scenario, d, offset)

    def regenerate_common_cell(self, scenario: int, step: int) -> np.ndarray:
        ell = self.dims[1]
        return np.sqrt(self.grid.step) * _normals(self.common_seed, COMMON_BROWNIAN, scenario, ell, step * ell)

    def with_idiosyncratic_seed(self, seed: int) -> "NoisePanel":
        """Fresh idiosyncratic noise and initial states, same common noise."""
        return sample_noise_panel(self.grid, self.n_scenarios, self.n_particles, self.dims, seed,
                                  self.jump_spec, self.common_jump_spec, common_seed=self.common_seed)


def sample_noise_panel(grid: TimeGrid, n_scenarios: int, n_particles: int, dims=(1, 0), seed: int = 0,
                       jump_spec: Optional[JumpMeasureSpec] = None,
                       common_jump_spec: Optional[JumpMeasureSpec] = None,
                       common_seed: Optional[int] = None) -> NoisePanel:
    """Sample a full :class:`NoisePanel`.

    ``dims = (d, l)`` are the idiosyncratic and common Brownian dimensions.
    ``common_seed`` defaults to ``seed``; passing it separately lets two panels
    share the common noise while their idiosyncratic noise differs.
    """
    if not isinstance(grid, TimeGrid):
        raise ConfigurationError("grid must be a TimeGrid")
    if n_scenarios < 1 or n_particles < 1:
        raise ConfigurationError("need at least one scenario and one particle")
    d, ell = (int(dims[0]), int(dims[1]))
    if d < 0 or ell < 0:
        raise ConfigurationError("noise dimensions must be >= 0")
    jump_spec = jump_spec or JumpMeasureSpec.none()
    common_jump_spec = common_jump_spec or JumpMeasureSpec.none()
    common_seed = seed if common_seed is None else common_seed
    K, S, N = grid.n_steps, n_scenarios, n_particles
    sqrt_h = np.sqrt(grid.step)

    dW = np.empty((K, S, N, d))
    dW0 = np.empty((K, S, ell))
    for s in range(S):
        if d:
            dW[:, s] = sqrt_h * _normals(seed, IDIO_BROWNIAN, s, N * K * d).reshape(N, K, d).transpose(1, 0, 2)
        if ell:
            dW0[:, s] = sqrt_h * _normals(common_seed, COMMON_BROWNIAN, s, K * ell).reshape(K, ell)

    def _gen(*words):
        return np.random.Generator(np.random.Philox(key=_stream_key(*words)))

    T = grid.horizon
    if jump_spec.intensity > 0:
        sc, pa, ti, ma = [], [], [], []
        for s in range(S):
            for i in range(N):
                t, m = sample_jump_events(jump_spec, T, _gen(seed, IDIO_JUMPS, s, i))
                sc.append(np.full(t.size, s)); pa.append(np.full(t.size, i)); ti.append(t); ma.append(m)
        jumps = JumpEvents.build(grid, np.concatenate(sc), np.concatenate(pa), np.concatenate(ti),
                                 np.concatenate(ma), jump_spec.mark_dim)
    else:
        jumps = JumpEvents.empty(K, jump_spec.mark_dim)

    if common_jump_spec.intensity > 0:
        sc, ti, ma = [], [], []
        for s in range(S):
            t, m = sample_jump_events(common_jump_spec, T, _gen(common_seed, COMMON_JUMPS, s))
            sc.append(np.full(t.size, s)); ti.append(t); ma.append(m)
        sc = np.concatenate(sc)
        common = JumpEvents.build(grid, sc, np.full(sc.size, -1), np.concatenate(ti), np.concatenate(ma),
                                  common_jump_spec.mark_dim)
    else:
        common = JumpEvents.empty(K, common_jump_spec.mark_dim)

    for arr in (dW, dW0):
        arr.setflags(write=False)
    return NoisePanel(grid, S, N, (d, ell), int(seed), int(common_seed), dW, dW0, jumps, common,
                      jump_spec, common_jump_spec)


def coarsen_panel(panel: NoisePanel, factor: int) -> NoisePanel:
    """The same noise paths seen on a grid ``factor`` times coarser.

    Brownian increments are summed over blocks of ``factor`` steps and jump
    events keep their times, so coarse and fine simulations are pathwise
    coupled (used for mesh-refinement studies).
    """
    factor = int(factor)
    K = panel.grid.n_steps
    if factor < 1 or K % factor:
        raise ConfigurationError(f"factor {factor} does not divide {K} steps")
    grid = TimeGrid(panel.grid.horizon, K // factor)

    def block_sum(arr):
        out = arr.reshape((grid.n_steps, factor) + arr.shape[1:]).sum(axis=1)
        out.setflags(write=False)
        return out

    def rebin(ev: JumpEvents, dim: int) -> JumpEvents:
        return JumpEvents.build(grid, ev.scenario, ev.particle, ev.time, ev.mark, dim)

    return NoisePanel(grid, panel.n_scenarios, panel.n_particles, panel.dims, panel.seed, panel.common_seed,
                      block_sum(panel.dW), block_sum(panel.dW0), rebin(panel.jumps, panel.jump_spec.mark_dim),
                      rebin(panel.common_jumps, panel.common_jump_spec.mark_dim), panel.jump_spec,
                      panel.common_jump_spec)
