"""Linear-in-features feedback policies with a piecewise-constant time basis.

A policy maps ``(t, x, law)`` to a control via
``alpha = clip(theta[knot(t)] @ features(t, x, law))`` where ``knot(t)``
splits ``[0, horizon]`` into ``n_knots`` equal pieces.  Features may use law
summaries (ensemble mean, mean phase), which is how the feedback sees the
conditional law of its own population or of a frozen flow.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .measure import LawBatch

__all__ = [
    "FeedbackPolicy",
    "affine_policy",
    "flocking_affine_policy",
    "torus_fourier_policy",
    "feature_linear_policy",
    "make_policy",
    "FAMILIES",
]


@dataclass(frozen=True)
class FeedbackPolicy:
    family: str
    features: Callable[[float, np.ndarray, LawBatch], np.ndarray]
    theta: np.ndarray  # (n_knots, m, p)
    horizon: float
    bounds: Optional[tuple] = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 3:
            raise ConfigurationError("theta must have shape (n_knots, control_dim, n_features)")
        if not np.all(np.isfinite(theta)):
            raise ConfigurationError("policy parameters must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def n_knots(self) -> int:
        return self.theta.shape[0]

    @property
    def control_dim(self) -> int:
        return self.theta.shape[1]

    @property
    def params(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def with_params(self, flat) -> "FeedbackPolicy":
        return replace(self, theta=np.asarray(flat, dtype=float).reshape(self.theta.shape))

    def knot(self, t: float) -> int:
        return min(int(t / self.horizon * self.n_knots), self.n_knots - 1)

    def __call__(self, t: float, x: np.ndarray, law: LawBatch) -> np.ndarray:
        phi = self.features(t, x, law)
        a = phi @ self.theta[self.knot(t)].T
        if self.bounds is not None:
            a = np.clip(a, self.bounds[0], self.bounds[1])
        return a


def _centred_state(t, x, law):
    S, N, n = x.shape
    out = np.empty((S, N, n + 1))
    out[..., :n] = x - law.mean()[:, None, :]
    out[..., n] = 1.0
    return out


def affine_policy(state_dim: int, control_dim: int, horizon: float, n_knots: int = 1, theta=None,
                  bounds=None) -> FeedbackPolicy:
    """``alpha = W_k (x - mean(mu)) + c_k``; ``theta[k] = [W_k | c_k]``."""
    shape = (n_knots, control_dim, state_dim + 1)
    theta = np.zeros(shape) if theta is None else np.asarray(theta, dtype=float).reshape(shape)
    return FeedbackPolicy("affine", _centred_state, theta, horizon, bounds)


def flocking_affine_policy(space_dim: int, horizon: float, n_knots: int = 1, theta=None,
                           bounds=None) -> FeedbackPolicy:
    """Affine feedback in ``(x - mean_x, v - mean_v)`` acting on the velocity."""
    pol = affine_policy(2 * space_dim, space_dim, horizon, n_knots, theta, bounds)
    return replace(pol, family="flocking-affine")


def _fourier_features(order: int):
    ks = np.arange(1, order + 1)

    def features(t, x, law):
        z = law.mean(np.exp(1j * law.states[..., 0]))  # (S,)
        psi = np.angle(z)
        rel = x[..., 0] - psi[:, None]
        ang = rel[..., None] * ks
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)

    return features


def torus_fourier_policy(horizon: float, order: int = 2, n_knots: int = 1, theta=None,
                         bounds=None) -> FeedbackPolicy:
    """Phase feedback ``sum_k s_k sin(k(x - psi)) + c_k cos(k(x - psi))``.

    ``psi`` is the mean phase of the law, so the family is rotation equivariant.
    """
    shape = (n_knots, 1, 2 * order)
    theta = np.zeros(shape) if theta is None else np.asarray(theta, dtype=float).reshape(shape)
    return FeedbackPolicy("torus-fourier", _fourier_features(order), theta, horizon, bounds)


def feature_linear_policy(features: Callable, n_features: int, control_dim: int, horizon: float,
                          n_knots: int = 1, theta=None, bounds=None) -> FeedbackPolicy:
    shape = (n_knots, control_dim, n_features)
    theta = np.zeros(shape) if theta is None else np.asarray(theta, dtype=float).reshape(shape)
    return FeedbackPolicy("custom-feature-linear", features, theta, horizon, bounds)


FAMILIES = ("affine", "torus-fourier", "flocking-affine", "custom-feature-linear")


def make_policy(family: str, state_dim: int, control_dim: int, horizon: float, n_knots: int = 1,
                **kw) -> FeedbackPolicy:
    if family == "affine":
        return affine_policy(state_dim, control_dim, horizon, n_knots, **kw)
    if family == "flocking-affine":
        if state_dim != 2 * control_dim:
            raise ConfigurationError("flocking-affine needs state_dim == 2 * control_dim")
        return flocking_affine_policy(control_dim, horizon, n_knots, **kw)
    if family == "torus-fourier":
        if state_dim != 1 or control_dim != 1:
            raise ConfigurationError("torus-fourier is defined for scalar phases")
        return torus_fourier_policy(horizon, n_knots=n_knots, **kw)
    if family == "custom-feature-linear":
        features, n_features = kw.pop("features"), kw.pop("n_features")
        return feature_linear_policy(features, n_features, control_dim, horizon, n_knots, **kw)
    raise ConfigurationError(f"unknown policy family {family!r}")
