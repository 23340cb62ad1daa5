"""Worked examples packaged as ready-to-run bundles.

Each bundle carries the dynamics, the MFC cost with analytic linear
derivatives, a recommended policy family, grid/particle defaults and any
closed-form reference values.  Interaction potentials are also exposed as
:class:`Potential` objects (value, linear derivative, its gradient and
Laplacian) so the same functional drives mean field Langevin runs and the
lifted cost of :func:`make_tilde_F`.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .costs import CostSpec
from .dynamics import ModelDynamics
from .errors import ConfigurationError
from .measure import LawBatch

__all__ = [
    "Potential",
    "ModelBundle",
    "variance_potential",
    "kuramoto_potential",
    "cucker_smale_potential",
    "make_lq",
    "make_kuramoto",
    "make_cucker_smale",
    "make_price_game",
    "make_tilde_F",
    "tilde_cost",
    "langevin_dynamics",
    "order_parameter",
    "lq_closed_form",
    "MODEL_REGISTRY",
    "make_model",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Potential:
    """A law functional with its linear derivative and spatial derivatives.

    ``value(law) -> (S,)``; ``derivative(law, x) -> (S, N)``;
    ``gradient(law, x) -> (S, N, n)``; ``laplacian(law, x) -> (S, N)``.
    """

    value: Callable
    derivative: Callable
    gradient: Optional[Callable] = None
    laplacian: Optional[Callable] = None

    def scaled(self, c: float) -> "Potential":
        def mul(fn):
            return None if fn is None else (lambda *args: c * fn(*args))
        return Potential(mul(self.value), mul(self.derivative), mul(self.gradient), mul(self.laplacian))


@dataclass(frozen=True)
class ModelBundle:
    name: str
    dynamics: ModelDynamics
    cost: CostSpec
    family: str
    x0: Callable
    horizon: float
    n_steps: int
    n_particles: int
    n_scenarios: int
    discount: Optional[float] = None
    potential: Optional[Potential] = None
    coupling: float = 1.0
    closed_form: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    policy_kwargs: dict = field(default_factory=dict)


def _positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ConfigurationError(f"{k} must be positive, got {v!r}")


def gaussian_x0(mean, var: float, n: int):
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (n,))
    std = np.sqrt(var)

    def sample(rng, N):
        return mean + std * rng.standard_normal((N, n))

    return sample


# ---------------------------------------------------------------- variance


def variance_potential() -> Potential:
    """``Var(mu)`` with ``dVar(mu)(x) = int |x - y|^2 mu(dy)``."""

    def value(law):
        return law.variance()

    def derivative(law, x):
        m = law.mean()[:, None, :]
        return np.sum((x - m) ** 2, axis=-1) + law.variance()[:, None]

    def gradient(law, x):
        return 2.0 * (x - law.mean()[:, None, :])

    def laplacian(law, x):
        return np.full(x.shape[:2], 2.0 * x.shape[-1])

    return Potential(value, derivative, gradient, laplacian)


def lq_closed_form(kappa: float, beta: float, sigma: float, n: int) -> dict:
    a = (np.sqrt(8.0 * kappa + beta ** 2) - beta) / 4.0
    b = sigma ** 2 * n * a / beta
    return {"a": a, "b": b, "slope": -2.0 * a, "stationary_variance": sigma ** 2 / (4.0 * a)}


def make_lq(kappa: float = 1.0, beta: float = 1.0, sigma: float = 1.0, n: int = 1, herding: float = 0.0,
            x0_var: float = 1.0) -> ModelBundle:
    """Linear-quadratic MFC: ``dX = a dt + sigma dW``, cost ``|a|^2/2 + kappa Var``.

    ``herding = c != 0`` makes the drift law dependent, ``b = a + c (mean - x)``,
    with left inverse ``phi(y) = y - c (mean - x)``; the closed form then no
    longer applies.
    """
    _positive(kappa=kappa, beta=beta, sigma=sigma, x0_var=x0_var)
    if int(n) != n or n < 1:
        raise ConfigurationError("n must be a positive integer")
    var = variance_potential()
    c = float(herding)

    if c:
        def drift(t, x, a, law):
            return a + c * (law.mean()[:, None, :] - x)

        def inverse(t, x, y, law):
            return y - c * (law.mean()[:, None, :] - x)

        def dphi(t, xt, y, law, x):
            # delta_mu of -c * mean(mu) is -c * x, independent of x~
            return (-c * x)[:, None]
    else:
        def drift(t, x, a, law):
            return a
        inverse = dphi = None

    dyn = ModelDynamics(n, n, drift, diffusion=lambda t, x, a: sigma, noise_dim=n, law_in_drift=bool(c),
                        inverse_drift=inverse, inverse_drift_derivative=dphi)
    cost = CostSpec(
        individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, axis=-1),
        interaction=lambda t, law: kappa * var.value(law),
        interaction_derivative=lambda t, law, x, a: kappa * var.derivative(law, x),
        grad_a=lambda t, x, a, law: a,
        growth_constant=max(1.0, kappa),
    )
    closed = lq_closed_form(kappa, beta, sigma, n) if not c else {}
    return ModelBundle("lq", dyn, cost, "affine", gaussian_x0(0.0, x0_var, n), horizon=8.0, n_steps=400,
                       n_particles=2000, n_scenarios=8, discount=beta, potential=var, coupling=kappa,
                       closed_form=closed, diagnostics={"variance": lambda law: law.variance()},
                       params=dict(kappa=kappa, beta=beta, sigma=sigma, n=n, herding=c, x0_var=x0_var))


# ---------------------------------------------------------------- Kuramoto


def _mean_phase(law: LawBatch) -> np.ndarray:
    return law.mean(np.exp(1j * law.states[..., 0]))


def order_parameter(law: LawBatch) -> np.ndarray:
    """``|int e^{ix} mu(dx)|`` per scenario."""
    return np.abs(_mean_phase(law))


def kuramoto_potential() -> Potential:
    """``F(mu) = int int sin^2((x - y)/2) mu(dx) mu(dy) = (1 - R^2) / 2``."""

    def value(law):
        return 0.5 * (1.0 - np.abs(_mean_phase(law)) ** 2)

    def _rot(law, x):
        return np.exp(1j * x[..., 0]) * np.conj(_mean_phase(law))[:, None]

    def derivative(law, x):
        # int 2 sin^2((x - y)/2) mu(dy) = 1 - int cos(x - y) mu(dy)
        return 1.0 - _rot(law, x).real

    def gradient(law, x):
        return _rot(law, x).imag[..., None]

    def laplacian(law, x):
        return _rot(law, x).real

    return Potential(value, derivative, gradient, laplacian)


def von_mises_x0(concentration: float, loc: float = 0.0):
    def sample(rng, N):
        if concentration == 0:
            return rng.uniform(-np.pi, np.pi, (N, 1))
        return rng.vonmises(loc, concentration, (N, 1))

    return sample


def make_kuramoto(kappa: float = 2.0, sigma: float = 1.0, beta: float = 1.0, x0_concentration: float = 1.0,
                  order: int = 2) -> ModelBundle:
    """Kuramoto MFC on the circle: ``dX = a dt + sigma dW``, cost ``a^2/2 + kappa F(mu)``."""
    _positive(kappa=kappa, sigma=sigma, beta=beta)
    pot = kuramoto_potential()
    dyn = ModelDynamics(1, 1, lambda t, x, a, law: a, diffusion=lambda t, x, a: sigma, noise_dim=1,
                        period=TWO_PI)
    cost = CostSpec(
        individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, axis=-1),
        interaction=lambda t, law: kappa * pot.value(law),
        interaction_derivative=lambda t, law, x, a: kappa * pot.derivative(law, x),
        grad_a=lambda t, x, a, law: a,
        growth_constant=max(1.0, kappa),
    )
    return ModelBundle("kuramoto", dyn, cost, "torus-fourier", von_mises_x0(x0_concentration), horizon=6.0,
                       n_steps=120, n_particles=1000, n_scenarios=4, discount=beta, potential=pot, coupling=kappa,
                       diagnostics={"order_param": order_parameter},
                       params=dict(kappa=kappa, sigma=sigma, beta=beta, x0_concentration=x0_concentration,
                                   order=order),
                       policy_kwargs={"order": order})


# ---------------------------------------------------------------- Cucker-Smale


def cucker_smale_potential(kappa: float, rho: float, n: int, chunk: int = 256) -> Potential:
    """``F(mu) = kappa/4 int int |v - v~|^2 / (1 + |x - x~|^2)^rho mu mu``.

    States are ``(x, v)`` stacked as a 2n-vector.  ``rho = 0`` uses the
    closed forms ``(kappa/2) Var_v`` and ``(kappa/2)(|v - m_v|^2 + Var_v)``.
    """

    def kernel_sums(law, x, linear=False):
        """``sum_j w_j |v - v_j|^2 / phi`` (and ``sum_j w_j (v - v_j) / phi``) at probes x (S, N, 2n)."""
        X, V = law.states[..., :n], law.states[..., n:]
        w = law.w()
        S, N = x.shape[:2]
        sq = np.empty((S, N))
        lin = np.empty((S, N, n)) if linear else None
        for lo in range(0, N, chunk):
            hi = min(lo + chunk, N)
            dx2 = np.zeros((S, hi - lo, X.shape[1]))
            dv2 = np.zeros_like(dx2)
            for j in range(n):
                dx2 += (x[:, lo:hi, None, j] - X[:, None, :, j]) ** 2
                dv2 += (x[:, lo:hi, None, n + j] - V[:, None, :, j]) ** 2
            inv = w[:, None, :] * np.exp(-rho * np.log1p(dx2))
            sq[:, lo:hi] = np.einsum("sij,sij->si", inv, dv2)
            if linear:
                for j in range(n):
                    lin[:, lo:hi, j] = x[:, lo:hi, n + j] * inv.sum(-1) - np.einsum("sij,sj->si", inv, V[..., j])
        return sq, lin

    if rho == 0:
        def value(law):
            V = law.states[..., n:]
            m = law.mean(V)[:, None]
            return 0.5 * kappa * law.mean(np.sum((V - m) ** 2, -1))

        def derivative(law, x):
            V = law.states[..., n:]
            m = law.mean(V)[:, None]
            var = law.mean(np.sum((V - m) ** 2, -1))
            return 0.5 * kappa * (np.sum((x[..., n:] - m) ** 2, -1) + var[:, None])

        def grad_v(law, x):
            return kappa * (x[..., n:] - law.mean(law.states[..., n:])[:, None])
    else:
        def value(law):
            sq, _ = kernel_sums(law, law.states)
            return 0.25 * kappa * np.sum(law.w() * sq, axis=1)

        def derivative(law, x):
            sq, _ = kernel_sums(law, x)
            return 0.5 * kappa * sq

        def grad_v(law, x):
            _, lin = kernel_sums(law, x, linear=True)
            return kappa * lin

    def gradient(law, x):
        # only the velocity block is controlled; the position block is reported as zero
        g = np.zeros(x.shape)
        g[..., n:] = grad_v(law, x)
        return g

    return Potential(value, derivative, gradient, None)


def make_cucker_smale(kappa: float = 1.0, rho: float = 0.25, sigma: float = 0.2, beta: float = 1.0, n: int = 1,
                      x0_var: float = 1.0, v0_var: float = 1.0) -> ModelBundle:
    """Flocking MFC: ``dX = V dt``, ``dV = a dt + sigma dW``, cost ``|a|^2/2 + F(mu)``."""
    _positive(kappa=kappa, sigma=sigma, beta=beta)
    if rho < 0:
        raise ConfigurationError(f"rho must be >= 0, got {rho}")
    pot = cucker_smale_potential(kappa, rho, n)
    vol = np.zeros((2 * n, n))
    vol[n:] = sigma * np.eye(n)

    def drift(t, x, a, law):
        return np.concatenate([x[..., n:], a], axis=-1)

    dyn = ModelDynamics(2 * n, n, drift, diffusion=lambda t, x, a: vol, noise_dim=n)
    cost = CostSpec(
        individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, axis=-1),
        interaction=lambda t, law: pot.value(law),
        interaction_derivative=lambda t, law, x, a: pot.derivative(law, x),
        grad_a=lambda t, x, a, law: a,
        growth_constant=max(1.0, kappa),
    )
    mean = np.zeros(2 * n)
    std = np.concatenate([np.full(n, np.sqrt(x0_var)), np.full(n, np.sqrt(v0_var))])

    def x0(rng, N):
        return mean + std * rng.standard_normal((N, 2 * n))

    def velocity_variance(law):
        V = law.states[..., n:]
        return law.mean(np.sum((V - law.mean(V)[:, None]) ** 2, -1))

    return ModelBundle("cucker-smale", dyn, cost, "flocking-affine", x0, horizon=10.0, n_steps=200,
                       n_particles=256, n_scenarios=2, discount=beta, potential=pot, coupling=1.0,
                       diagnostics={"velocity_variance": velocity_variance},
                       params=dict(kappa=kappa, rho=rho, sigma=sigma, beta=beta, n=n, x0_var=x0_var,
                                   v0_var=v0_var))


# ---------------------------------------------------------------- price game


def make_price_game(f0: Optional[Callable] = None, F1: Optional[Callable] = None, dF1: Optional[Callable] = None,
                    weight: Optional[Callable] = None, Phi: Optional[Callable] = None,
                    Psi: Optional[Callable] = None, sigma: float = 0.5, n: int = 1, k: Optional[int] = None,
                    price_slope: float = 1.0, congestion: float = 0.5, horizon: float = 2.0) -> ModelBundle:
    """Traders interacting through congestion and an endogenous price.

    MFC running cost ``f0(t, x, a) + F1(t, mu) + Phi(t, E[weight(t, X) alpha])``;
    the derived game cost has the price term ``Psi(t, z) . weight(t, x) a``
    with ``Psi = grad Phi``.  Without arguments this builds the linear-price
    example ``Phi(z) = price_slope |z|^2 / 2``, ``weight = I`` and a variance
    congestion term.

    ``weight(t, x)`` returns (..., k, n); ``Phi(t, z)`` maps (S, k) to (S,).
    """
    _positive(sigma=sigma)
    k = n if k is None else k
    defaults = Phi is None and Psi is None and weight is None
    if Phi is None:
        if not defaults:
            raise ConfigurationError("the price game needs the demand potential Phi with Psi = grad Phi")

        def Phi(t, z):
            return 0.5 * price_slope * np.sum(z ** 2, axis=-1)

        def Psi(t, z):
            return price_slope * z
    if Psi is None:
        def Psi(t, z, _h=1e-6):
            g = np.empty_like(z)
            for j in range(z.shape[-1]):
                e = np.zeros(z.shape[-1]); e[j] = _h
                g[..., j] = (Phi(t, z + e) - Phi(t, z - e)) / (2 * _h)
            return g
    if weight is None:
        def weight(t, x):
            return np.broadcast_to(np.eye(k, n), x.shape[:-1] + (k, n))
    if f0 is None:
        def f0(t, x, a):
            return 0.5 * np.sum(a ** 2, -1) + 0.5 * np.sum((x - 1.0) ** 2, -1)
    var = variance_potential()
    if F1 is None:
        def F1(t, law):
            return congestion * var.value(law)

        def dF1(t, law, x):
            return congestion * var.derivative(law, x)
    elif dF1 is None:
        raise ConfigurationError("supply dF1 = delta_mu F1 together with F1")

    def demand(t, law):
        return law.mean(np.einsum("...kn,...n->...k", weight(t, law.states), law.controls))

    def interaction(t, law):
        return F1(t, law) + Phi(t, demand(t, law))

    def interaction_derivative(t, law, x, a):
        price = Psi(t, demand(t, law))  # (S, k)
        term = np.einsum("sk,sjkn,sjn->sj", price, weight(t, x), a)
        return dF1(t, law, x) + term

    dyn = ModelDynamics(n, n, lambda t, x, a, law: a, diffusion=lambda t, x, a: sigma, noise_dim=n)
    cost = CostSpec(individual=lambda t, x, a, law: f0(t, x, a), interaction=interaction,
                    interaction_derivative=interaction_derivative, grad_a=None)
    return ModelBundle("price", dyn, cost, "affine", gaussian_x0(0.0, 1.0, n), horizon=horizon, n_steps=40,
                       n_particles=500, n_scenarios=4, discount=None, potential=None,
                       diagnostics={"price": lambda law: Psi(0.0, demand(0.0, law))[..., 0]},
                       params=dict(sigma=sigma, n=n, k=k, price_slope=price_slope, congestion=congestion,
                                   horizon=horizon))


# ---------------------------------------------------------------- lifted cost


def make_tilde_F(potential: Potential, beta: float, sigma: float) -> Callable:
    """``F~(mu) = beta F + mu(|grad dF|^2)/2 - (sigma^2/2) mu(Lap dF)`` as ``law -> (S,)``.

    With running cost ``|a|^2/2 + F~`` and discount ``beta`` the value is ``F``
    and the optimal feedback is the mean field Langevin drift ``-grad dF``.
    """
    if potential.gradient is None or potential.laplacian is None:
        raise ConfigurationError("F~ needs the gradient and Laplacian of the linear derivative")
    if beta < 0 or sigma < 0:
        raise ConfigurationError("beta and sigma must be non-negative")

    def tilde(law):
        g = potential.gradient(law, law.states)
        lap = potential.laplacian(law, law.states)
        return (beta * potential.value(law) + 0.5 * law.mean(np.sum(g ** 2, -1))
                - 0.5 * sigma ** 2 * law.mean(lap))

    return tilde


def tilde_cost(potential: Potential, beta: float, sigma: float) -> CostSpec:
    """MFC cost ``|a|^2/2 + F~(mu)``; game derivatives fall back to FD."""
    tilde = make_tilde_F(potential, beta, sigma)
    return CostSpec(individual=lambda t, x, a, law: 0.5 * np.sum(a ** 2, axis=-1),
                    interaction=lambda t, law: tilde(law), grad_a=lambda t, x, a, law: a, allow_fd=True)


def langevin_dynamics(potential: Potential, sigma: float, state_dim: int, coupling: float = 1.0,
                      period: Optional[float] = None) -> ModelDynamics:
    """``dX = (a - coupling * grad dF(L(X))(X)) dt + sigma dW``."""
    if potential.gradient is None:
        raise ConfigurationError("mean field Langevin dynamics need grad dF")

    def drift(t, x, a, law):
        return a - coupling * potential.gradient(law, x)

    return ModelDynamics(state_dim, state_dim, drift, diffusion=lambda t, x, a: sigma, noise_dim=state_dim,
                         law_in_drift=True, period=period)


# ---------------------------------------------------------------- registry


def make_custom(factory: str, **params) -> ModelBundle:
    """Load ``"package.module:function"`` and call it with ``params``."""
    mod_name, _, fn_name = factory.partition(":")
    if not fn_name:
        raise ConfigurationError("custom factory must look like 'module:function'")
    try:
        fn = getattr(importlib.import_module(mod_name), fn_name)
    except (ImportError, AttributeError) as exc:
        raise ConfigurationError(f"cannot load custom model factory {factory!r}: {exc}") from exc
    bundle = fn(**params)
    if not isinstance(bundle, ModelBundle):
        raise ConfigurationError("custom factory must return a ModelBundle")
    return bundle


MODEL_REGISTRY = {
    "lq": make_lq,
    "kuramoto": make_kuramoto,
    "cucker-smale": make_cucker_smale,
    "price": make_price_game,
    "custom": make_custom,
}


def make_model(name: str, **params) -> ModelBundle:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return factory(**params)
