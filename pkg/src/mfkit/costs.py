"""MFC objectives and the potential-game costs derived from them.

A running cost is split as ``F(t, x, a, nu) = F_ind(t, x, a, nu) + F_int(t, nu)``:
the individual part may or may not read the law, the interaction part is a
pure functional of the law (one number per scenario).  The derived game
running cost is

    f(t, x, a, nu) = F(t, x, a, nu) + int dF(t, x~, a~, nu)(x, a) nu(dx~, da~),

and when ``F_int`` does not depend on ``(x, a)`` its own value is dropped from
``f`` (it is a constant for a player facing a frozen flow).  Terminal costs are
handled the same way.

Linear derivatives are either supplied analytically or computed by mixture
finite differences.  The FD route batches all probes of a scenario into one
call of the functional, using the scenario axis of :class:`LawBatch` as the
probe axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import MeasureFlow, ModelDynamics, integrate
from .errors import ConfigurationError, EvaluationError
from .measure import LawBatch
from .noise import NoisePanel

__all__ = [
    "CostSpec",
    "GameCost",
    "CostEstimate",
    "Discount",
    "build_game_cost",
    "build_game_cost_lawdep",
    "eval_mfc_cost",
    "eval_game_cost",
    "quadrature_weights",
    "fd_interaction_derivative",
    "fd_individual_derivative_avg",
]


@dataclass(frozen=True)
class CostSpec:
    """Running and terminal MFC costs plus whatever derivatives are known.

    Callables and shapes (S scenarios, N players, M atoms):

    ``individual(t, x, a, law) -> (S, N)``
    ``interaction(t, law) -> (S,)``
    ``interaction_derivative(t, law, x, a) -> (S, N)``: ``dF_int(t, nu)(x, a)``
    ``individual_derivative_avg(t, x, a, law) -> (S, N)``:
        ``int dF_ind(t, x~, a~, nu)(x, a) nu(dx~, da~)``; required when
        ``individual_uses_law``
    ``grad_a(t, x, a, law) -> (S, N, m)``: only for law-dependent dynamics
    ``terminal_individual(x, law) -> (S, N)``, ``terminal_interaction(law) -> (S,)``,
    ``terminal_interaction_derivative(law, x) -> (S, N)``
    """

    individual: Optional[Callable] = None
    interaction: Optional[Callable] = None
    interaction_derivative: Optional[Callable] = None
    individual_uses_law: bool = False
    individual_derivative_avg: Optional[Callable] = None
    grad_a: Optional[Callable] = None
    terminal_individual: Optional[Callable] = None
    terminal_interaction: Optional[Callable] = None
    terminal_interaction_derivative: Optional[Callable] = None
    terminal_individual_uses_law: bool = False
    terminal_individual_derivative_avg: Optional[Callable] = None
    path_dependent: bool = False
    growth_constant: float = 1.0
    allow_fd: bool = False
    fd_eps: float = 1e-4

    def running(self, t, x, a, law) -> np.ndarray:
        S, N = a.shape[:2]
        val = np.zeros((S, N))
        if self.individual is not None:
            val = val + self.individual(t, x, a, law)
        if self.interaction is not None:
            val = val + np.asarray(self.interaction(t, law))[:, None]
        return val

    def terminal(self, x, law) -> Optional[np.ndarray]:
        if self.terminal_individual is None and self.terminal_interaction is None:
            return None
        cur = x[-1] if self.path_dependent else x
        val = np.zeros(cur.shape[:2])
        if self.terminal_individual is not None:
            val = val + self.terminal_individual(x, law)
        if self.terminal_interaction is not None:
            val = val + np.asarray(self.terminal_interaction(law))[:, None]
        return val


@dataclass(frozen=True)
class GameCost:
    """Player costs ``f(t, x, a, law) -> (S, N)`` and ``g(x, law) -> (S, N)``."""

    running: Callable
    terminal: Optional[Callable] = None
    path_dependent: bool = False


@dataclass(frozen=True)
class Discount:
    """Exponential discount ``e^{-rate t}``; the horizon is the truncation time."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigurationError("discount rate must be positive")


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float
    per_particle: np.ndarray  # (S, N)
    tail_bound: float = 0.0
    sup_second_moment: float = 0.0

    def __float__(self):
        return self.value


def quadrature_weights(times: np.ndarray, discount: Optional[Discount]) -> tuple[np.ndarray, float]:
    """Left-endpoint weights for the running cost and the terminal weight.

    Undiscounted: ``w_k = h``.  Discounted: the integrand is frozen at ``t_k``
    and the exponential is integrated exactly over ``[t_k, t_{k+1}]``.
    """
    if discount is None:
        return np.diff(times), 1.0
    e = np.exp(-discount.rate * times)
    return (e[:-1] - e[1:]) / discount.rate, float(e[-1])


def _mixture_batch(law_s: LawBatch, x: np.ndarray, a: Optional[np.ndarray], eps: float) -> LawBatch:
    """One mixture ``(1-eps) nu + eps delta_(x_j, a_j)`` per probe ``j``."""
    P = x.shape[0]
    M = law_s.n_atoms
    states = np.concatenate([np.broadcast_to(law_s.states[0], (P,) + law_s.states.shape[1:]), x[:, None]], axis=1)
    controls = None
    if law_s.controls is not None:
        probe_a = np.zeros((P, law_s.controls.shape[-1])) if a is None else a
        controls = np.concatenate([np.broadcast_to(law_s.controls[0], (P,) + law_s.controls.shape[1:]),
                                   probe_a[:, None]], axis=1)
    w = np.empty((P, M + 1))
    w[:, :M] = (1.0 - eps) * law_s.w()[0]
    w[:, M] = eps
    return LawBatch(states, controls, w)


def fd_interaction_derivative(functional: Callable[[LawBatch], np.ndarray], law: LawBatch, x: np.ndarray,
                              a: Optional[np.ndarray], eps: float = 1e-4, chunk: int = 128) -> np.ndarray:
    """``[F_int(nu_eps^j) - F_int(nu)] / eps`` for every probe ``j``; (S, N)."""
    S, N = x.shape[:2]
    out = np.empty((S, N))
    base = np.asarray(functional(law), dtype=float)
    for s in range(S):
        law_s = law.scenario(s)
        for lo in range(0, N, chunk):
            hi = min(lo + chunk, N)
            mix = _mixture_batch(law_s, x[s, lo:hi], None if a is None else a[s, lo:hi], eps)
            out[s, lo:hi] = (np.asarray(functional(mix), dtype=float) - base[s]) / eps
    return out


def fd_individual_derivative_avg(individual: Callable, t, law: LawBatch, x: np.ndarray, a: Optional[np.ndarray],
                                 eps: float = 1e-4, chunk: int = 64) -> np.ndarray:
    """FD version of ``int dF_ind(t, x~, a~, nu)(x, a) nu(dx~, da~)``; (S, N)."""
    S, N = x.shape[:2]
    out = np.empty((S, N))
    w = law.w()
    A = law.controls if law.controls is not None else np.zeros(law.states.shape[:2] + (1,))
    base = np.sum(w * individual(t, law.states, A, law), axis=1)
    for s in range(S):
        law_s = law.scenario(s)
        for lo in range(0, N, chunk):
            hi = min(lo + chunk, N)
            P = hi - lo
            mix = _mixture_batch(law_s, x[s, lo:hi], None if a is None else a[s, lo:hi], eps)
            xt = np.broadcast_to(law_s.states[0], (P,) + law_s.states.shape[1:])
            at = np.broadcast_to(A[s], (P,) + A.shape[1:])
            vals = individual(t, xt, at, mix)
            out[s, lo:hi] = (np.sum(w[s] * vals, axis=1) - base[s]) / eps
    return out


def build_game_cost(cost: CostSpec, keep_constants: bool = False) -> GameCost:
    """Assemble the potential-game costs ``(f, g)`` from an MFC cost."""
    needs_fd = ((cost.interaction is not None and cost.interaction_derivative is None)
                or (cost.individual_uses_law and cost.individual_derivative_avg is None)
                or (cost.terminal_interaction is not None and cost.terminal_interaction_derivative is None)
                or (cost.terminal_individual_uses_law and cost.terminal_individual_derivative_avg is None))
    if needs_fd and not cost.allow_fd:
        raise ConfigurationError("a linear derivative is missing and finite differences are disabled")
    if needs_fd and cost.path_dependent:
        raise ConfigurationError("finite-difference derivatives support Markovian costs only")
    eps = cost.fd_eps

    def f(t, x, a, law):
        S, N = a.shape[:2]
        val = np.zeros((S, N))
        if cost.individual is not None:
            val = val + cost.individual(t, x, a, law)
        if cost.individual_uses_law:
            if cost.individual_derivative_avg is not None:
                val = val + cost.individual_derivative_avg(t, x, a, law)
            else:
                val = val + fd_individual_derivative_avg(cost.individual, t, law, x, a, eps)
        if cost.interaction is not None:
            if cost.interaction_derivative is not None:
                val = val + cost.interaction_derivative(t, law, x, a)
            else:
                val = val + fd_interaction_derivative(lambda lw: cost.interaction(t, lw), law, x, a, eps)
            if keep_constants:
                val = val + np.asarray(cost.interaction(t, law))[:, None]
        return val

    g = None
    if cost.terminal_individual is not None or cost.terminal_interaction is not None:
        def g(x, law):
            cur = x[-1] if cost.path_dependent else x
            val = np.zeros(cur.shape[:2])
            if cost.terminal_individual is not None:
                val = val + cost.terminal_individual(x, law)
            if cost.terminal_individual_uses_law:
                if cost.terminal_individual_derivative_avg is not None:
                    val = val + cost.terminal_individual_derivative_avg(x, law)
                else:
                    val = val + fd_individual_derivative_avg(lambda _t, xx, _a, lw: cost.terminal_individual(xx, lw),
                                                             0.0, law, cur, None, eps)
            if cost.terminal_interaction is not None:
                if cost.terminal_interaction_derivative is not None:
                    val = val + cost.terminal_interaction_derivative(law, x)
                else:
                    val = val + fd_interaction_derivative(cost.terminal_interaction, law, cur, None, eps)
                if keep_constants:
                    val = val + np.asarray(cost.terminal_interaction(law))[:, None]
            return val

    return GameCost(f, g, cost.path_dependent)


def build_game_cost_lawdep(cost: CostSpec, model: ModelDynamics, keep_constants: bool = False) -> GameCost:
    """Game costs for drifts that read the law, via the drift's left inverse.

    Adds ``int grad_a F(t, x~, a~, mu) . dphi(t, x~, b(t, x~, a~, mu), mu)(x) nu(dx~, da~)``
    to the running cost of :func:`build_game_cost`.
    """
    if not model.law_in_drift:
        raise ConfigurationError("model drift does not depend on the law")
    if cost.grad_a is None:
        raise ConfigurationError("law-dependent game cost needs grad_a of the running cost")
    if model.inverse_drift_derivative is None:
        raise ConfigurationError("law-dependent game cost needs the derivative of the drift inverse")
    base = build_game_cost(cost, keep_constants)

    def f(t, x, a, law):
        val = base.running(t, x, a, law)
        xt, at = law.states, law.controls
        y = model.drift(t, xt, at, law)
        grad = cost.grad_a(t, xt, at, law)                           # (S, M, m)
        kernel = model.inverse_drift_derivative(t, xt, y, law, x)   # (S, M, N, m)
        wg = grad * law.w()[..., None]
        return val + np.einsum("smk,smjk->sj", wg, kernel)

    return GameCost(f, base.terminal, cost.path_dependent)


def _stderr(per_particle: np.ndarray, by_scenario: bool) -> float:
    S, N = per_particle.shape
    if by_scenario and S >= 2:
        return float(per_particle.mean(axis=1).std(ddof=1) / np.sqrt(S))
    flat = per_particle.ravel()
    return float(flat.std(ddof=1) / np.sqrt(flat.size)) if flat.size > 1 else 0.0


class _Accumulator:
    def __init__(self, running, terminal, weights, terminal_weight, shape, K):
        self.running, self.terminal = running, terminal
        self.weights, self.terminal_weight, self.K = weights, terminal_weight, K
        self.total = np.zeros(shape)
        self.sup_moment = 0.0

    def __call__(self, k, t, x, a, law):
        cur = x[-1] if x.ndim == 4 else x
        self.sup_moment = max(self.sup_moment, float(np.mean(np.sum(cur ** 2, -1) + np.sum(a ** 2, -1))))
        if k < self.K:
            val = self.running(t, x, a, law)
            if not np.all(np.isfinite(val)):
                s, i = np.argwhere(~np.isfinite(val))[0]
                raise EvaluationError("non-finite running cost", location=(int(s), int(i), k))
            self.total += self.weights[k] * val
        elif self.terminal is not None:
            val = self.terminal(x, law)
            if val is None:
                return
            if not np.all(np.isfinite(val)):
                s, i = np.argwhere(~np.isfinite(val))[0]
                raise EvaluationError("non-finite terminal cost", location=(int(s), int(i), k))
            self.total += self.terminal_weight * val


def _tail_bound(cost_growth, discount, horizon, sup_moment):
    if discount is None:
        return 0.0
    return float(np.exp(-discount.rate * horizon) / discount.rate * cost_growth * (1.0 + sup_moment))


def eval_mfc_cost(policy, model: ModelDynamics, cost: CostSpec, panel: NoisePanel, x0,
                  discount: Optional[Discount] = None, **integrate_kw) -> CostEstimate:
    """Monte Carlo estimate of the MFC cost of a feedback policy.

    The conditional law in the cost is each scenario's own particle cloud.
    In discounted mode the horizon of ``panel`` is the truncation time and
    ``tail_bound`` reports ``e^{-rate T} / rate * C * (1 + sup moment)``.
    """
    w, wT = quadrature_weights(panel.grid.times, discount)
    acc = _Accumulator(cost.running, cost.terminal, w, wT, panel.shape, panel.grid.n_steps)
    integrate(policy, model, panel, x0, record=False, on_step=acc,
              keep_history=cost.path_dependent, **integrate_kw)
    per = acc.total
    return CostEstimate(float(per.mean()), _stderr(per, True), per,
                        _tail_bound(cost.growth_constant, discount, panel.grid.horizon, acc.sup_moment),
                        acc.sup_moment)


def eval_game_cost(policy, model: ModelDynamics, game: GameCost, flow: MeasureFlow, panel: NoisePanel, x0,
                   discount: Optional[Discount] = None) -> CostEstimate:
    """Cost of representative players using ``policy`` against a frozen flow."""
    w, wT = quadrature_weights(panel.grid.times, discount)

    def running(t, x, a, law):
        return game.running(t, x, a, law)

    acc = _Accumulator(running, game.terminal, w, wT, panel.shape, panel.grid.n_steps)
    integrate(policy, model, panel, x0, frozen=flow, record=False, on_step=acc,
              keep_history=game.path_dependent)
    per = acc.total
    return CostEstimate(float(per.mean()), _stderr(per, False), per, 0.0, acc.sup_moment)
