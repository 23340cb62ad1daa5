"""Particle integrators for controlled (McKean-Vlasov) jump-diffusions.

Every integrator in this module is a thin wrapper around :func:`integrate`,
which advances all scenarios and particles of a :class:`~mfkit.noise.NoisePanel`
with an explicit Euler-Maruyama step.  The conditional law given the common
noise is represented by the equal-weight particle cloud of each scenario.

Array conventions: states are (S, N, n), controls (S, N, m), the recorded
flow is (K+1, S, N, n).  Coefficients receive the current state, or the full
history (k+1, S, N, n) when the model is declared path dependent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, SimulationBlowUp
from .measure import EmpiricalLaw, LawBatch
from .noise import NoisePanel, TimeGrid

__all__ = [
    "ModelDynamics",
    "MeasureFlow",
    "SimulationResult",
    "PanelCell",
    "panel_cell",
    "euler_step",
    "integrate",
    "simulate_controlled",
    "simulate_mckean_vlasov",
    "simulate_vs_flow",
    "initial_states",
]


@dataclass(frozen=True)
class ModelDynamics:
    """Coefficients of the controlled state equation.

    ``drift(t, x, a, law)`` must return (S, N, n); ``law`` is a
    :class:`LawBatch` of the current ensemble when ``law_in_drift`` is set and
    ``None`` otherwise.  ``diffusion`` / ``common_diffusion`` return either a
    scalar (requires n == d) or an array broadcastable to (S, N, n, d).
    ``jump(t, x, a, marks)`` maps (E, n), (E, m), (E, k) to (E, n).

    For drifts of the form ``b = a + b1(t, x, mu)`` supply ``inverse_drift``
    ``phi(t, x, y, law)`` and ``inverse_drift_derivative(t, xt, y, law, x)``
    returning (S, M, N, m)-shaped ``delta_mu phi`` (see costs module).
    """

    state_dim: int
    control_dim: int
    drift: Callable
    diffusion: Optional[Callable] = None
    common_diffusion: Optional[Callable] = None
    jump: Optional[Callable] = None
    common_jump: Optional[Callable] = None
    jump_compensator: Optional[Callable] = None
    common_jump_compensator: Optional[Callable] = None
    noise_dim: int = 1
    common_noise_dim: int = 0
    law_in_drift: bool = False
    path_dependent: bool = False
    inverse_drift: Optional[Callable] = None
    inverse_drift_derivative: Optional[Callable] = None
    period: Optional[float] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 0:
            raise ConfigurationError("state_dim must be >= 1 and control_dim >= 0")


@dataclass(frozen=True)
class MeasureFlow:
    """Per-scenario flow ``t_k -> nu_k`` of (path, control) laws on a grid."""

    grid: TimeGrid
    states: np.ndarray    # (K+1, S, N, n)
    controls: np.ndarray  # (K+1, S, N, m)

    @property
    def n_scenarios(self) -> int:
        return self.states.shape[1]

    def law(self, k: int, with_history: bool = False) -> LawBatch:
        return LawBatch(self.states[k], self.controls[k], None, self.states[: k + 1] if with_history else None)

    def entry(self, scenario: int, k: int) -> EmpiricalLaw:
        paths = np.moveaxis(self.states[: k + 1, scenario], 0, 1)
        return EmpiricalLaw.uniform(paths, self.controls[k, scenario])


@dataclass(frozen=True)
class SimulationResult:
    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    period: Optional[float] = None

    @property
    def flow(self) -> MeasureFlow:
        return MeasureFlow(self.grid, self.states, self.controls)

    def wrapped_states(self) -> np.ndarray:
        if self.period is None:
            return self.states
        return np.mod(self.states, self.period)

    def records(self):
        """Rows ``(scenario, particle, step, t, x..., a...)`` in a fixed order."""
        K1, S, N, n = self.states.shape
        times = self.grid.times
        for s in range(S):
            for i in range(N):
                for k in range(K1):
                    yield (s, i, k, times[k], *self.states[k, s, i], *self.controls[k, s, i])

    def columns(self):
        n, m = self.states.shape[-1], self.controls.shape[-1]
        return ["scenario", "particle", "step", "t"] + [f"x{j}" for j in range(n)] + [f"a{j}" for j in range(m)]

    def to_csv(self, path) -> None:
        from .io import emit_csv

        emit_csv(self.records(), self.columns(), path)


@dataclass(frozen=True)
class PanelCell:
    """Noise for one step of every particle."""

    step: int
    dW: np.ndarray
    dW0: np.ndarray
    jumps: tuple           # (scenario, particle, marks)
    common_jumps: tuple    # (scenario, _, marks)
    intensity: float
    common_intensity: float
    quad_marks: Optional[np.ndarray] = None
    common_quad_marks: Optional[np.ndarray] = None


def _quad_marks(panel: NoisePanel):
    return (panel.jump_spec.quadrature_marks() if panel.jump_spec.intensity > 0 else None,
            panel.common_jump_spec.quadrature_marks() if panel.common_jump_spec.intensity > 0 else None)


def panel_cell(panel: NoisePanel, k: int, quad=None) -> PanelCell:
    """Noise of step ``k`` packaged for :func:`euler_step`."""
    quad = _quad_marks(panel) if quad is None else quad
    return PanelCell(k, panel.dW[k], panel.dW0[k], panel.jumps.at_step(k), panel.common_jumps.at_step(k),
                     panel.jump_spec.intensity, panel.common_jump_spec.intensity, *quad)


def _apply_vol(sig, dW: np.ndarray, n: int) -> np.ndarray:
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 0:
        if dW.shape[-1] != n:
            raise ConfigurationError("a scalar volatility requires noise dimension == state dimension")
        return sig * dW
    return np.einsum("...ij,...j->...i", sig, dW)


def _current(x: np.ndarray, path_dependent: bool) -> np.ndarray:
    return x[-1] if path_dependent else x


def _compensator(coef, comp, t, x, a, quad_marks, path_dependent):
    if comp is not None:
        return np.asarray(comp(t, x, a), dtype=float)
    if path_dependent:
        raise ConfigurationError("path-dependent jump coefficients need an explicit compensator")
    Q = quad_marks.shape[0]
    vals = coef(t, x[..., None, :], a[..., None, :],
                np.broadcast_to(quad_marks, x.shape[:-1] + quad_marks.shape))
    return np.asarray(vals).reshape(x.shape[:-1] + (Q, -1)).mean(axis=-2)


def euler_step(x: np.ndarray, t: float, a: np.ndarray, law: Optional[LawBatch], cell: PanelCell,
               model: ModelDynamics, h: float) -> np.ndarray:
    """One explicit Euler-Maruyama step with compensated, left-frozen jumps.

    ``x`` is (S, N, n) or the (k+1, S, N, n) history for path-dependent models.
    """
    if h <= 0:
        raise ConfigurationError("step size must be positive")
    pd = model.path_dependent
    cur = _current(x, pd)
    n = model.state_dim
    out = cur + h * np.asarray(model.drift(t, x, a, law), dtype=float)
    if model.diffusion is not None and cell.dW.shape[-1]:
        out = out + _apply_vol(model.diffusion(t, x, a), cell.dW, n)
    if model.common_diffusion is not None and cell.dW0.shape[-1]:
        out = out + _apply_vol(model.common_diffusion(t, x, a), cell.dW0[:, None, :], n)

    if model.jump is not None and cell.intensity > 0:
        sc, pa, marks = cell.jumps
        if sc.size:
            jumps = model.jump(t, x[..., sc, pa, :], a[sc, pa], marks)
            np.add.at(out, (sc, pa), np.asarray(jumps, dtype=float).reshape(sc.size, n))
        out = out - h * cell.intensity * _compensator(model.jump, model.jump_compensator, t, x, a,
                                                      cell.quad_marks, pd)
    if model.common_jump is not None and cell.common_intensity > 0:
        sc, _, marks = cell.common_jumps
        for s, zeta in zip(sc, marks):
            xs = x[..., s, :, :]
            N = xs.shape[-2]
            out[s] += np.asarray(model.common_jump(t, xs, a[s], np.broadcast_to(zeta, (N, zeta.size))),
                                 dtype=float).reshape(N, n)
        out = out - h * cell.common_intensity * _compensator(
            model.common_jump, model.common_jump_compensator, t, x, a, cell.common_quad_marks, pd)

    if not np.all(np.isfinite(out)):
        s, i = np.argwhere(~np.all(np.isfinite(out), axis=-1))[0]
        raise SimulationBlowUp("non-finite state", location=(int(s), int(i), int(cell.step)))
    return out


def initial_states(x0, panel: NoisePanel, state_dim: int) -> np.ndarray:
    """Normalise ``x0`` (sampler, (N, n), (S, N, n) or constant) to (S, N, n)."""
    S, N = panel.shape
    if callable(x0):
        return panel.sample_initial(x0, state_dim)
    arr = np.asarray(x0, dtype=float)
    if arr.ndim <= 1:
        return np.broadcast_to(arr, (S, N, state_dim)).copy()
    if arr.ndim == 2:
        return np.broadcast_to(arr.reshape(N, state_dim), (S, N, state_dim)).copy()
    return arr.reshape(S, N, state_dim).copy()


def integrate(policy, model: ModelDynamics, panel: NoisePanel, x0, *, frozen: Optional[MeasureFlow] = None,
              alt_policy=None, alt_count: int = 0, record: bool = True, on_step: Optional[Callable] = None,
              keep_history: bool = False) -> Optional[SimulationResult]:
    """Advance the particle system over the panel's grid.

    Parameters
    ----------
    policy : callable ``(t, x, law) -> (S, N, m)`` or None for the zero control.
    frozen : when given, the law seen by the policy and by a law-dependent drift
        is taken from this flow instead of the particles themselves.
    alt_policy, alt_count : the first ``alt_count`` particles of every scenario
        follow ``alt_policy`` (used for the mixture construction).
    on_step : ``on_step(k, t, x, a, law)`` is called at every grid point
        ``k = 0..K`` before the state is advanced.
    keep_history : pass full histories to ``on_step`` (and store them).
    """
    grid = panel.grid
    K, h = grid.n_steps, grid.step
    times = grid.times
    S, N = panel.shape
    n, m = model.state_dim, model.control_dim
    if frozen is not None:
        if not frozen.grid.same_as(grid):
            raise ConfigurationError("frozen flow grid does not match the panel grid")
        if frozen.n_scenarios != S:
            raise ConfigurationError("frozen flow and panel disagree on the number of scenarios")
    if alt_count and alt_policy is None:
        raise ConfigurationError("alt_count given without alt_policy")

    X = initial_states(x0, panel, n)
    quad = _quad_marks(panel)
    hist_needed = keep_history or model.path_dependent
    hist = np.empty((K + 1, S, N, n)) if (hist_needed or record) else None
    ctrl = np.empty((K + 1, S, N, m)) if record else None
    if hist is not None:
        hist[0] = X

    for k in range(K + 1):
        t = times[k]
        path = hist[: k + 1] if hist_needed else None
        if frozen is None:
            law = LawBatch(X, None, None, path)
        else:
            law = frozen.law(k, with_history=hist_needed)
        if policy is None:
            A = np.zeros((S, N, m))
        else:
            A = np.asarray(policy(t, X, law), dtype=float).reshape(S, N, m)
        if alt_count:
            A = A.copy()
            A[:, :alt_count] = np.asarray(alt_policy(t, X, law), dtype=float).reshape(S, N, m)[:, :alt_count]
        if frozen is None:
            law = LawBatch(X, A, None, path)
        if record:
            ctrl[k] = A
        xc = path if model.path_dependent else X
        if on_step is not None:
            on_step(k, t, path if hist_needed else X, A, law)
        if k == K:
            break
        X = euler_step(xc, t, A, law if model.law_in_drift else None, panel_cell(panel, k, quad), model, h)
        if hist is not None:
            hist[k + 1] = X

    if not record:
        return None
    return SimulationResult(grid, hist, ctrl, model.period)


def simulate_controlled(policy, model: ModelDynamics, panel: NoisePanel, x0, **kw) -> SimulationResult:
    """Controlled dynamics without law dependence in the coefficients."""
    if model.law_in_drift:
        raise ConfigurationError("model has a law-dependent drift; use simulate_mckean_vlasov")
    return integrate(policy, model, panel, x0, **kw)


def simulate_mckean_vlasov(policy, model: ModelDynamics, panel: NoisePanel, x0, **kw) -> SimulationResult:
    """McKean-Vlasov dynamics; the drift sees each scenario's current ensemble.

    ``policy=None`` runs the uncontrolled flow (e.g. mean field Langevin).
    """
    return integrate(policy, model, panel, x0, **kw)


def simulate_vs_flow(policy, model: ModelDynamics, flow: MeasureFlow, panel: NoisePanel, x0,
                     **kw) -> SimulationResult:
    """Representative players driven by a frozen flow, without feedback on it."""
    return integrate(policy, model, panel, x0, frozen=flow, **kw)
