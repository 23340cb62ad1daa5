"""Policy optimisation and certification of potential-game equilibria.

The optimiser is Adam on the policy parameters with central finite-difference
gradients.  Every +/- probe of an iteration is evaluated on the same noise
panel (common random numbers), so the difference quotients do not see Monte
Carlo noise.  By default the panel is fixed for the whole run (sample average
approximation) and the best evaluated iterate is returned.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .costs import CostSpec, Discount, GameCost, eval_game_cost, eval_mfc_cost
from .dynamics import MeasureFlow, ModelDynamics, simulate_mckean_vlasov
from .errors import ConfigurationError, EvaluationError, SolverError
from .measure import sliced_wasserstein2, wasserstein2_1d
from .noise import NoisePanel
from .policy import FeedbackPolicy

__all__ = [
    "OptimizerConfig",
    "SolveReport",
    "ExploitabilityReport",
    "MixtureReport",
    "optimize",
    "solve_mfc",
    "best_response",
    "exploitability",
    "fixed_point_residual",
    "mixture_derivative_check",
]

PanelSource = Union[NoisePanel, Callable[[int], NoisePanel]]


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam with step ``step / (1 + decay * it)`` and central FD of width ``fd_eps``.

    ``resample=True`` draws a fresh panel each iteration from the panel
    factory; the returned parameters are then the average of the last
    ``tail_average`` iterates instead of the best-seen one.
    """

    iters: int = 80
    step: float = 0.15
    decay: float = 0.05
    fd_eps: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.9
    resample: bool = False
    tail_average: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.iters < 0:
            raise ConfigurationError("iters must be >= 0")
        if not self.step > 0 or not self.fd_eps > 0:
            raise ConfigurationError("step and fd_eps must be positive")
        if self.decay < 0:
            raise ConfigurationError("decay must be >= 0")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")


@dataclass
class SolveReport:
    """Outcome of an optimisation run.

    ``trace`` rows are ``(iteration, cost, grad_norm, step)`` where ``cost`` is
    the objective at the iterate before the update.  Exploitability fields are
    filled in by :func:`exploitability` and measure the gap relative to the
    policy family, a lower bound on the unrestricted gap.
    """

    policy: FeedbackPolicy
    trace: list
    cost: float
    cost_stderr: float
    seed: int
    wall_clock: float
    exploitability: Optional[float] = None
    exploitability_stderr: Optional[float] = None
    residual: Optional[float] = None
    notes: dict = field(default_factory=dict)

    @property
    def theta(self) -> np.ndarray:
        return self.policy.params

    TRACE_COLUMNS = ("iteration", "cost", "grad_norm", "step")

    def to_csv(self, path) -> None:
        from .io import emit_csv

        emit_csv(self.trace, self.TRACE_COLUMNS, path)

    def summary(self) -> str:
        lines = [
            f"family: {self.policy.family}",
            f"seed: {self.seed}",
            f"iterations: {len(self.trace)}",
            f"cost: {self.cost:.10g} +/- {self.cost_stderr:.3g}",
        ]
        if self.exploitability is not None:
            lines.append(f"exploitability: {self.exploitability:.6g} +/- {self.exploitability_stderr:.3g}"
                         " (relative to the policy family)")
        if self.residual is not None:
            lines.append(f"fixed_point_residual_w2: {self.residual:.6g}")
        lines.append("theta: " + " ".join(f"{v:.10g}" for v in self.theta))
        lines.append(f"wall_clock_s: {self.wall_clock:.3f}")
        for k, v in self.notes.items():
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def _panel_at(source: PanelSource, it: int) -> NoisePanel:
    return source(it) if callable(source) else source


def optimize(objective: Callable[[np.ndarray, NoisePanel], float], theta0: np.ndarray, panels: PanelSource,
             cfg: OptimizerConfig) -> tuple[np.ndarray, list, float]:
    """Minimise ``objective(theta, panel)``; returns ``(theta, trace, cost)``.

    Raises :class:`SolverError` when the objective turns non-finite.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    p = theta.size
    if cfg.resample and not callable(panels):
        raise ConfigurationError("resampling needs a panel factory")
    mom, vel = np.zeros(p), np.zeros(p)
    trace: list = []
    best_theta, best_cost = theta.copy(), np.inf
    tail: list = []
    basis = np.eye(p) * cfg.fd_eps

    def run(points, panel):
        def one(th):
            try:
                return float(objective(th, panel))
            except EvaluationError:
                return np.nan
        if cfg.threads > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                return np.array(list(pool.map(one, points)))
        return np.array([one(th) for th in points])

    for it in range(cfg.iters):
        panel = _panel_at(panels, it)
        points = [theta] + [theta + e for e in basis] + [theta - e for e in basis]
        vals = run(points, panel)
        cost = vals[0]
        grad = (vals[1:p + 1] - vals[p + 1:]) / (2 * cfg.fd_eps)
        lr = cfg.step / (1.0 + cfg.decay * it)
        trace.append((it, cost, float(np.linalg.norm(grad)), lr))
        if not (np.isfinite(cost) and np.all(np.isfinite(grad))):
            raise SolverError("optimisation diverged (non-finite cost)", trace=trace)
        if cost < best_cost:
            best_cost, best_theta = cost, theta.copy()
        mom = cfg.beta1 * mom + (1 - cfg.beta1) * grad
        vel = cfg.beta2 * vel + (1 - cfg.beta2) * grad ** 2
        mhat = mom / (1 - cfg.beta1 ** (it + 1))
        vhat = vel / (1 - cfg.beta2 ** (it + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + 1e-8)
        tail = (tail + [theta.copy()])[-max(cfg.tail_average, 1):]

    if cfg.iters == 0:
        cost = float(objective(theta, _panel_at(panels, 0)))
        trace.append((0, cost, 0.0, 0.0))
        return theta, trace, cost
    if cfg.resample:
        return np.mean(tail, axis=0), trace, float(np.mean([row[1] for row in trace[-len(tail):]]))
    # the final update has not been evaluated yet
    last = float(objective(theta, _panel_at(panels, cfg.iters)))
    if not np.isfinite(last):
        raise SolverError("optimisation diverged (non-finite cost)", trace=trace)
    if last < best_cost:
        best_cost, best_theta = last, theta
    return best_theta, trace, best_cost


def _final_panel(panels: PanelSource, cfg: OptimizerConfig) -> NoisePanel:
    return _panel_at(panels, cfg.iters)


def solve_mfc(model: ModelDynamics, cost: CostSpec, policy: FeedbackPolicy, panels: PanelSource, x0,
              cfg: OptimizerConfig = OptimizerConfig(), discount: Optional[Discount] = None) -> SolveReport:
    """Minimise the MFC cost over the parameters of ``policy``'s family.

    ``policy`` supplies the family and the starting parameters.
    """
    if policy.control_dim != model.control_dim:
        raise ConfigurationError("policy control dimension does not match the model")
    start = time.perf_counter()

    def objective(theta, panel):
        return eval_mfc_cost(policy.with_params(theta), model, cost, panel, x0, discount).value

    theta, trace, _ = optimize(objective, policy.params, panels, cfg)
    best = policy.with_params(theta)
    panel = _final_panel(panels, cfg)
    est = eval_mfc_cost(best, model, cost, panel, x0, discount)
    return SolveReport(best, trace, est.value, est.stderr, int(panel.seed), time.perf_counter() - start,
                       notes={"tail_bound": est.tail_bound})


def best_response(model: ModelDynamics, game: GameCost, flow: MeasureFlow, policy: FeedbackPolicy,
                  panels: PanelSource, x0, cfg: OptimizerConfig = OptimizerConfig(),
                  discount: Optional[Discount] = None) -> SolveReport:
    """Optimise the representative player's cost against the frozen ``flow``."""
    start = time.perf_counter()
    if not flow.grid.same_as(_panel_at(panels, 0).grid):
        raise ConfigurationError("flow grid does not match the panel grid")

    def objective(theta, panel):
        return eval_game_cost(policy.with_params(theta), model, game, flow, panel, x0, discount).value

    theta, trace, _ = optimize(objective, policy.params, panels, cfg)
    best = policy.with_params(theta)
    panel = _final_panel(panels, cfg)
    est = eval_game_cost(best, model, game, flow, panel, x0, discount)
    return SolveReport(best, trace, est.value, est.stderr, int(panel.seed), time.perf_counter() - start)


@dataclass(frozen=True)
class ExploitabilityReport:
    gap: float
    stderr: float
    J_star: float
    J_best_response: float
    best_response: SolveReport
    validation_seed: int

    @property
    def relative_gap(self) -> float:
        return self.gap / abs(self.J_star) if self.J_star else np.inf


def exploitability(policy: FeedbackPolicy, model: ModelDynamics, game: GameCost, panel: NoisePanel, x0,
                   cfg: OptimizerConfig = OptimizerConfig(), discount: Optional[Discount] = None,
                   validation_seed: Optional[int] = None, br_start: Optional[FeedbackPolicy] = None
                   ) -> ExploitabilityReport:
    """Estimate ``J_g(alpha*, nu*) - inf_alpha J_g(alpha, nu*)`` over the policy family.

    ``nu*`` is generated from ``policy`` on ``panel``.  The best response is
    trained on ``panel`` and both costs are then evaluated on a validation panel
    with the same common noise and fresh idiosyncratic noise, so the in-sample
    fit of the best response does not inflate the gap.  The stderr is that of
    the paired per-player differences.
    """
    flow = simulate_mckean_vlasov(policy, model, panel, x0).flow
    br = best_response(model, game, flow, br_start or policy, panel, x0, cfg, discount)
    vseed = int(panel.seed) + 7919 if validation_seed is None else int(validation_seed)
    vpanel = panel.with_idiosyncratic_seed(vseed)
    j_star = eval_game_cost(policy, model, game, flow, vpanel, x0, discount)
    j_br = eval_game_cost(br.policy, model, game, flow, vpanel, x0, discount)
    diff = (j_star.per_particle - j_br.per_particle).ravel()
    gap = float(diff.mean())
    se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    return ExploitabilityReport(gap, se, j_star.value, j_br.value, br, vseed)


def _flow_distance(a: MeasureFlow, b: MeasureFlow, n_directions: int = 32) -> float:
    K1, S = a.states.shape[:2]
    total = 0.0
    for k in range(K1):
        for s in range(S):
            X = np.concatenate([a.states[k, s], a.controls[k, s]], axis=1)
            Y = np.concatenate([b.states[k, s], b.controls[k, s]], axis=1)
            if X.shape[1] == 1:
                total += wasserstein2_1d(X[:, 0], Y[:, 0])
            else:
                total += sliced_wasserstein2(X, Y, n_directions=n_directions, seed=k)
    return total / (K1 * S)


def fixed_point_residual(policy: FeedbackPolicy, model: ModelDynamics, panel: NoisePanel, x0,
                         seed: Optional[int] = None) -> float:
    """Time-averaged W2 between the flows of ``policy`` on two panels.

    The second panel keeps the common noise and redraws the idiosyncratic
    noise with ``seed`` (default ``panel.seed + 1``); ``seed == panel.seed``
    reuses the panel and gives exactly zero.
    """
    seed = int(panel.seed) + 1 if seed is None else int(seed)
    other = panel if seed == panel.seed else panel.with_idiosyncratic_seed(seed)
    f1 = simulate_mckean_vlasov(policy, model, panel, x0).flow
    f2 = simulate_mckean_vlasov(policy, model, other, x0).flow
    return _flow_distance(f1, f2)


@dataclass(frozen=True)
class MixtureReport:
    """Rows ``(delta, actual_fraction, Delta, stderr)``; ``limit`` is the delta -> 0 intercept."""

    table: list
    limit: float
    limit_stderr: float
    game_gap: float
    game_gap_stderr: float
    difference_stderr: float

    COLUMNS = ("delta", "fraction", "Delta", "stderr")


def mixture_derivative_check(alt: FeedbackPolicy, policy: FeedbackPolicy, model: ModelDynamics, cost: CostSpec,
                             game: GameCost, deltas: Sequence[float], panel: NoisePanel, x0,
                             discount: Optional[Discount] = None) -> MixtureReport:
    """Finite-population version of the first-order mixture identity.

    For each delta the first ``ceil(delta N)`` players of every scenario use
    ``alt`` and the rest ``policy``, all interacting through the mixed
    ensemble.  ``Delta = (J_mix - J(policy)) / fraction`` with the realised
    fraction; a least-squares line in the fraction gives the delta -> 0 limit,
    which is compared with ``J_g(alt, nu*) - J_g(policy, nu*)`` evaluated
    against the frozen flow of ``policy``.  Errors are scenario-level.
    """
    deltas = [float(d) for d in deltas]
    if not deltas or any(not (0 < d <= 0.5) for d in deltas):
        raise ConfigurationError("mixture weights must lie in (0, 1/2]")
    S, N = panel.shape
    base = eval_mfc_cost(policy, model, cost, panel, x0, discount).per_particle.mean(axis=1)
    fracs, per_s = [], []
    table = []
    for d in deltas:
        count = int(np.ceil(d * N - 1e-12))
        frac = count / N
        mixed = eval_mfc_cost(policy, model, cost, panel, x0, discount, alt_policy=alt,
                              alt_count=count).per_particle.mean(axis=1)
        ds = (mixed - base) / frac
        fracs.append(frac)
        per_s.append(ds)
        table.append((d, frac, float(ds.mean()), _se(ds)))
    per_s = np.array(per_s)  # (D, S)
    if len(deltas) >= 2 and len(set(fracs)) >= 2:
        design = np.vstack([np.ones(len(fracs)), fracs]).T
        coef, *_ = np.linalg.lstsq(design, per_s, rcond=None)
        lim_s = coef[0]
    else:
        lim_s = per_s[0]
    flow = simulate_mckean_vlasov(policy, model, panel, x0).flow
    g_alt = eval_game_cost(alt, model, game, flow, panel, x0, discount).per_particle.mean(axis=1)
    g_star = eval_game_cost(policy, model, game, flow, panel, x0, discount).per_particle.mean(axis=1)
    gap_s = g_alt - g_star
    return MixtureReport(table, float(lim_s.mean()), _se(lim_s), float(gap_s.mean()), _se(gap_s),
                         _se(lim_s - gap_s))


def _se(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
