"""Mean field Langevin dynamics and its link to mean field control.

:func:`run_mfld` simulates ``dX = -c grad dF(L(X))(X) dt + sigma dW`` and
records the free energy ``c F + (sigma^2/2) H`` at geometrically spaced
checkpoints, ``H`` being the relative entropy with respect to Lebesgue
measure (minus the differential entropy).  :func:`compare_mfld_to_mfc`
solves the control problem with the lifted cost ``F~`` and checks that the
learned feedback is the Langevin drift and the value is ``F(mu_0)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .costs import Discount
from .errors import ConfigurationError, DegenerateInputError
from .measure import EmpiricalLaw, LawBatch, entropy_estimate, sliced_wasserstein2, wasserstein2_1d
from .models import Potential, langevin_dynamics, tilde_cost
from .noise import NoisePanel
from .dynamics import initial_states, integrate
from .policy import FeedbackPolicy, affine_policy
from .solve import OptimizerConfig, SolveReport, solve_mfc

__all__ = ["FlowDiagnostics", "MFLDResult", "CompareReport", "geometric_checkpoints", "run_mfld",
           "compare_mfld_to_mfc"]


@dataclass(frozen=True)
class FlowDiagnostics:
    """Checkpoint table; every column has one entry per checkpoint.

    Values are scenario averages; ``free_energy_stderr`` is the spread across
    scenarios (zero with a single scenario).
    """

    t: np.ndarray
    F: np.ndarray
    H: np.ndarray
    free_energy: np.ndarray
    free_energy_stderr: np.ndarray
    order_param: np.ndarray
    variance: np.ndarray
    w2_step: np.ndarray

    COLUMNS = ("t", "F", "H", "free_energy", "order_param", "variance", "w2_step")

    def records(self):
        for j in range(self.t.size):
            yield tuple(float(getattr(self, c)[j]) for c in self.COLUMNS)

    def to_csv(self, path) -> None:
        from .io import emit_csv

        emit_csv(self.records(), self.COLUMNS, path)


@dataclass(frozen=True)
class MFLDResult:
    diagnostics: FlowDiagnostics
    final_law: EmpiricalLaw
    final_states: np.ndarray  # (S, N, n)
    converged: bool
    converged_at: Optional[float]


def geometric_checkpoints(n_steps: int, count: int = 12) -> np.ndarray:
    """Step indices ``0 = k_0 < k_1 < ... = n_steps`` spaced roughly geometrically."""
    if n_steps < 1:
        raise ConfigurationError("need at least one step")
    ks = np.unique(np.round(np.geomspace(1, n_steps, max(count - 1, 1))).astype(int))
    return np.concatenate([[0], ks])


def _w2(a: np.ndarray, b: np.ndarray, period: Optional[float]) -> float:
    if period is not None:
        # compare on the circle through its planar embedding
        a = np.stack([np.cos(a[:, 0]), np.sin(a[:, 0])], axis=1) * period / (2 * np.pi)
        b = np.stack([np.cos(b[:, 0]), np.sin(b[:, 0])], axis=1) * period / (2 * np.pi)
    if a.shape[1] == 1:
        return wasserstein2_1d(a[:, 0], b[:, 0])
    return sliced_wasserstein2(a, b, n_directions=32)


def run_mfld(potential: Potential, sigma: float, panel: NoisePanel, x0, *, coupling: float = 1.0,
             state_dim: int = 1, period: Optional[float] = None, checkpoints: Optional[Sequence[int]] = None,
             entropy_k: int = 3, tol: float = 1e-2) -> MFLDResult:
    """Uncontrolled mean field Langevin flow with free-energy diagnostics.

    ``checkpoints`` are step indices (default: geometric).  Convergence is
    declared once ``w2_step / dt`` stays below ``tol`` for three consecutive
    checkpoints.  With ``sigma == 0`` the entropy is not defined and ``H`` is
    reported as 0.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    model = langevin_dynamics(potential, sigma, state_dim, coupling, period)
    K = panel.grid.n_steps
    ks = geometric_checkpoints(K) if checkpoints is None else np.unique(np.asarray(checkpoints, dtype=int))
    if ks[0] < 0 or ks[-1] > K:
        raise ConfigurationError("checkpoints out of range")
    want = set(int(k) for k in ks)
    snaps = {}

    def grab(k, t, x, a, law):
        if k in want:
            snaps[k] = x.copy()

    if panel.dims[0] != state_dim:
        raise ConfigurationError("panel Brownian dimension must equal the state dimension")
    integrate(None, model, panel, x0, record=False, on_step=grab)

    times = panel.grid.times[ks]
    S = panel.n_scenarios
    rows = {c: [] for c in ("F", "H", "fe", "fe_se", "R", "var", "w2")}
    prev = None
    for k in ks:
        X = snaps[int(k)]
        law = LawBatch(X)
        Fs = coupling * np.asarray(potential.value(law))
        Hs = np.zeros(S)
        if sigma > 0:
            for s in range(S):
                try:
                    Hs[s] = -entropy_estimate(X[s], k=entropy_k, period=period)
                except DegenerateInputError:
                    Hs[s] = np.nan
        fe = Fs + 0.5 * sigma ** 2 * Hs
        rows["F"].append(Fs.mean())
        rows["H"].append(Hs.mean())
        rows["fe"].append(fe.mean())
        rows["fe_se"].append(fe.std(ddof=1) / np.sqrt(S) if S > 1 else 0.0)
        if period is not None:
            ang = X[..., 0] * (2 * np.pi / period)
            rows["R"].append(np.abs(np.exp(1j * ang).mean(axis=1)).mean())
            z = np.exp(1j * ang).mean(axis=1)
            rows["var"].append(np.mean(1.0 - np.abs(z)))  # circular variance
        else:
            rows["R"].append(np.nan)
            rows["var"].append(law.variance().mean())
        rows["w2"].append(0.0 if prev is None else np.mean([_w2(prev[s], X[s], period) for s in range(S)]))
        prev = X

    w2 = np.array(rows["w2"])
    converged_at = None
    streak = 0
    for j in range(1, ks.size):
        rate = w2[j] / (times[j] - times[j - 1])
        streak = streak + 1 if rate < tol else 0
        if streak >= 3:
            converged_at = float(times[j])
            break
    diag = FlowDiagnostics(times, np.array(rows["F"]), np.array(rows["H"]), np.array(rows["fe"]),
                           np.array(rows["fe_se"]), np.array(rows["R"]), np.array(rows["var"]), w2)
    final = snaps[int(ks[-1])]
    return MFLDResult(diag, EmpiricalLaw.uniform(final[0][:, None, :]), final, converged_at is not None,
                      converged_at)


@dataclass(frozen=True)
class CompareReport:
    value: float
    value_stderr: float
    reference_value: float
    value_rel_error: float
    drift_rel_error: float
    solve: SolveReport

    COLUMNS = ("value", "value_stderr", "reference_value", "value_rel_error", "drift_rel_error")

    def records(self):
        yield tuple(float(getattr(self, c)) for c in self.COLUMNS)


def compare_mfld_to_mfc(potential: Potential, beta: float, sigma: float, panel: NoisePanel, x0, *,
                        state_dim: int = 1, coupling: float = 1.0, policy: Optional[FeedbackPolicy] = None,
                        cfg: OptimizerConfig = OptimizerConfig()) -> CompareReport:
    """Solve MFC with running cost ``|a|^2/2 + F~`` and compare with MFLD.

    The learned feedback is compared with ``-c grad dF`` along the optimal flow
    (relative L2 over all grid points, scenarios and particles); the value is
    compared with ``c F(mu_0)``.
    """
    from .dynamics import ModelDynamics, simulate_controlled

    pot = potential.scaled(coupling)
    cost = tilde_cost(pot, beta, sigma)
    model = ModelDynamics(state_dim, state_dim, lambda t, x, a, law: a, diffusion=lambda t, x, a: sigma,
                          noise_dim=state_dim)
    if policy is None:
        policy = affine_policy(state_dim, state_dim, panel.grid.horizon)
    report = solve_mfc(model, cost, policy, panel, x0, cfg, Discount(beta))
    sim = simulate_controlled(report.policy, model, panel, x0)
    target = np.stack([-pot.gradient(LawBatch(sim.states[k]), sim.states[k]) for k in range(sim.states.shape[0])])
    err = np.sqrt(np.sum((sim.controls - target) ** 2) / max(np.sum(target ** 2), 1e-300))
    if not np.any(target):
        err = float(np.sqrt(np.mean(sim.controls ** 2)))  # absolute size when the reference drift is zero
    X0 = initial_states(x0, panel, state_dim)
    ref = float(np.mean(pot.value(LawBatch(X0))))
    rel = abs(report.cost - ref) / abs(ref) if ref else abs(report.cost)
    return CompareReport(report.cost, report.cost_stderr, ref, rel, float(err), report)
