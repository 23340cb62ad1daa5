"""Empirical measures on (path, control) pairs and the operations we need on them.

Two containers are used throughout the package:

* :class:`EmpiricalLaw` -- one weighted measure, atoms are discretised paths
  plus a control value.  Convenient for tests and finite-difference probes.
* :class:`LawBatch` -- a stack of ``S`` equal-shape measures (one per common
  noise scenario) holding only what the integrator has at hand: the current
  states, optionally the controls, the path history and weights.  All model
  functionals are written against this batched form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .errors import DegenerateInputError, DomainError, EvaluationError

__all__ = [
    "EmpiricalLaw",
    "LawBatch",
    "LinearDerivativeEval",
    "second_moment",
    "wasserstein2",
    "wasserstein2_1d",
    "sliced_wasserstein2",
    "linear_derivative_fd",
    "linear_derivative_field",
    "entropy_estimate",
    "weighted_mean",
]

WEIGHT_TOL = 1e-12


def weighted_mean(values: np.ndarray, weights: Optional[np.ndarray], axis: int = 1) -> np.ndarray:
    """Mean over the atom axis; ``weights`` has the shape of ``values`` up to ``axis``."""
    if weights is None:
        return values.mean(axis=axis)
    w = weights.reshape(weights.shape + (1,) * (values.ndim - weights.ndim))
    return (values * w).sum(axis=axis)


@dataclass(frozen=True)
class LawBatch:
    """``S`` empirical measures with ``M`` atoms each.

    ``states`` has shape (S, M, n).  ``weights`` is None for equal weights,
    otherwise (S, M) summing to one along axis 1.
    """

    states: np.ndarray
    controls: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    history: Optional[np.ndarray] = None  # (k+1, S, M, n)

    @property
    def n_scenarios(self) -> int:
        return self.states.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.states.shape[1]

    def w(self) -> np.ndarray:
        if self.weights is None:
            S, M = self.states.shape[:2]
            return np.full((S, M), 1.0 / M)
        return self.weights

    def mean(self, values: Optional[np.ndarray] = None) -> np.ndarray:
        """Weighted mean of ``values`` (default: states) over atoms -> (S, ...)."""
        return weighted_mean(self.states if values is None else values, self.weights, axis=1)

    def variance(self) -> np.ndarray:
        """Total variance ``E|X - EX|^2`` per scenario -> (S,)."""
        centred = self.states - self.mean()[:, None, :]
        return weighted_mean(np.sum(centred ** 2, axis=-1), self.weights, axis=1)

    def scenario(self, s: int) -> "LawBatch":
        sl = slice(s, s + 1)
        return LawBatch(
            self.states[sl],
            None if self.controls is None else self.controls[sl],
            None if self.weights is None else self.weights[sl],
            None if self.history is None else self.history[:, sl],
        )


@dataclass(frozen=True)
class EmpiricalLaw:
    """Weighted atoms ``(path, control)``; ``paths`` is (M, L, n), ``controls`` (M, m)."""

    paths: np.ndarray
    controls: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim == 2:
            paths = paths[:, None, :]
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "weights", weights)
        if paths.ndim != 3 or paths.shape[0] == 0:
            raise DomainError("an empirical law needs at least one atom with paths of shape (M, L, n)")
        if controls.shape[0] != paths.shape[0] or weights.shape != (paths.shape[0],):
            raise DomainError("paths, controls and weights disagree on the number of atoms")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise DomainError("weights must be non-negative and sum to one")

    @classmethod
    def uniform(cls, paths, controls=None) -> "EmpiricalLaw":
        paths = np.asarray(paths, dtype=float)
        if paths.ndim == 1:
            paths = paths[:, None, None]
        elif paths.ndim == 2:
            paths = paths[:, None, :]
        M = paths.shape[0]
        if M == 0:
            raise DomainError("empty atom list")
        controls = np.zeros((M, 1)) if controls is None else np.asarray(controls, dtype=float).reshape(M, -1)
        return cls(paths, controls, np.full(M, 1.0 / M))

    @classmethod
    def point(cls, path, control=0.0) -> "EmpiricalLaw":
        path = np.atleast_1d(np.asarray(path, dtype=float))
        if path.ndim == 1:
            path = path[None, :]
        return cls(path[None], np.atleast_1d(np.asarray(control, dtype=float))[None], np.ones(1))

    @property
    def n_atoms(self) -> int:
        return self.paths.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.paths[:, -1, :]

    @property
    def state_dim(self) -> int:
        return self.paths.shape[2]

    def mix(self, other: "EmpiricalLaw", eps: float) -> "EmpiricalLaw":
        """``(1 - eps) self + eps other`` as a concatenated atom list."""
        if other.paths.shape[1:] != self.paths.shape[1:] or other.controls.shape[1] != self.controls.shape[1]:
            raise DomainError("cannot mix laws of different shapes")
        return EmpiricalLaw(
            np.concatenate([self.paths, other.paths]),
            np.concatenate([self.controls, other.controls]),
            np.concatenate([(1.0 - eps) * self.weights, eps * other.weights]),
        )

    def as_batch(self) -> LawBatch:
        return LawBatch(self.states[None], self.controls[None], self.weights[None],
                        np.moveaxis(self.paths, 1, 0)[:, None])

    def probe(self, x, a=None) -> "EmpiricalLaw":
        """Point mass at ``(x, a)``; a state vector is extended to a constant path."""
        x = np.asarray(x, dtype=float)
        L, n = self.paths.shape[1:]
        if x.ndim == 2 and x.shape == (L, n):
            path = x
        else:
            path = np.broadcast_to(x.reshape(-1, n)[-1], (L, n))
        a = np.zeros(self.controls.shape[1]) if a is None else np.atleast_1d(np.asarray(a, dtype=float))
        return EmpiricalLaw(path[None].copy(), a[None], np.ones(1))


def second_moment(law: EmpiricalLaw) -> float:
    """``sum_i w_i (sup_k |path_i(t_k)|^2 + |a_i|^2)``."""
    if law.n_atoms == 0:
        raise DomainError("empty atom list")
    sup_sq = np.max(np.sum(law.paths ** 2, axis=2), axis=1)
    return float(np.dot(law.weights, sup_sq + np.sum(law.controls ** 2, axis=1)))


def wasserstein2_1d(x: np.ndarray, y: np.ndarray, wx=None, wy=None) -> float:
    """Exact W2 between weighted 1-D samples via the quantile coupling."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    wx = np.full(x.size, 1.0 / x.size) if wx is None else np.asarray(wx, dtype=float)
    wy = np.full(y.size, 1.0 / y.size) if wy is None else np.asarray(wy, dtype=float)
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    breaks = np.unique(np.concatenate([[0.0], cx, cy]))
    lengths = np.diff(breaks)
    mids = 0.5 * (breaks[1:] + breaks[:-1])
    qx = x[np.minimum(np.searchsorted(cx, mids), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mids), y.size - 1)]
    return float(np.sqrt(max(np.dot(lengths, (qx - qy) ** 2), 0.0)))


def sliced_wasserstein2(X: np.ndarray, Y: np.ndarray, wx=None, wy=None, n_directions: int = 64,
                        seed: int = 0) -> float:
    """Sliced W2: root-mean-square of exact 1-D W2 over random unit directions."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    dim = X.shape[1]
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    px, py = X @ dirs.T, Y @ dirs.T
    sq = [wasserstein2_1d(px[:, j], py[:, j], wx, wy) ** 2 for j in range(n_directions)]
    return float(np.sqrt(np.mean(sq)))


def _projected(law: EmpiricalLaw, projection: str) -> np.ndarray:
    if projection == "state":
        return law.states
    if projection == "state-control":
        return np.concatenate([law.states, law.controls], axis=1)
    if projection == "full":
        return np.concatenate([law.paths.reshape(law.n_atoms, -1), law.controls], axis=1)
    raise DomainError(f"unknown projection {projection!r}")


def wasserstein2(nu1: EmpiricalLaw, nu2: EmpiricalLaw, projection: str = "state",
                 n_directions: int = 64, seed: int = 0) -> float:
    """W2 between two empirical laws after ``projection``.

    ``"state"`` uses the current state, ``"state-control"`` appends the control
    and ``"full"`` flattens the whole path.  One-dimensional projections are
    solved exactly; higher dimensions use the sliced estimate.
    """
    X, Y = _projected(nu1, projection), _projected(nu2, projection)
    if X.shape[1] != Y.shape[1]:
        raise DomainError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if X.shape[1] == 1:
        return wasserstein2_1d(X[:, 0], Y[:, 0], nu1.weights, nu2.weights)
    return sliced_wasserstein2(X, Y, nu1.weights, nu2.weights, n_directions, seed)


@dataclass(frozen=True)
class LinearDerivativeEval:
    base: EmpiricalLaw
    probe: tuple
    value: float
    centered: bool


def linear_derivative_fd(F: Callable[[EmpiricalLaw], float], nu: EmpiricalLaw, probe, eps: float = 1e-4
                         ) -> LinearDerivativeEval:
    """One-sided mixture difference ``[F((1-eps) nu + eps delta_probe) - F(nu)] / eps``.

    As ``eps -> 0`` this tends to ``dF(nu)(probe) - int dF(nu) dnu``.
    ``probe`` is ``(x, a)`` with ``x`` a state or a path.
    """
    if not 0 < eps <= 0.5:
        raise DomainError(f"eps must lie in (0, 0.5], got {eps}")
    x, a = probe if isinstance(probe, tuple) else (probe, None)
    mixed = nu.mix(nu.probe(x, a), eps)
    base_val, mixed_val = F(nu), F(mixed)
    value = (mixed_val - base_val) / eps
    if not np.isfinite(value):
        raise EvaluationError("functional is not finite on the mixture", location=probe)
    return LinearDerivativeEval(nu, (x, a), float(value), False)


def linear_derivative_field(F, nu: EmpiricalLaw, probes, eps: float = 1e-4, center: bool = True) -> np.ndarray:
    """FD derivative at many probes, optionally re-centred so that ``int dF dnu = 0``.

    ``probes`` is a sequence of ``(x, a)`` pairs.  Centring subtracts the
    ``nu``-average of the FD values at ``nu``'s own atoms.
    """
    vals = np.array([linear_derivative_fd(F, nu, p, eps).value for p in probes])
    if center:
        own = np.array([linear_derivative_fd(F, nu, (nu.paths[i], nu.controls[i]), eps).value
                        for i in range(nu.n_atoms)])
        vals = vals - np.dot(nu.weights, own)
    return vals


def entropy_estimate(samples, k: int = 3, period: Optional[float] = None) -> float:
    """Kozachenko-Leonenko differential entropy estimate of an equal-weight sample.

    ``samples`` is an (M, n) array or an :class:`EmpiricalLaw` (states are used).
    ``period`` turns on periodic distances for torus-valued states.
    """
    X = samples.states if isinstance(samples, EmpiricalLaw) else np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    M, dim = X.shape
    if period is not None:
        X = np.mod(X, period)
    if np.unique(X, axis=0).shape[0] < k + 1:
        raise DegenerateInputError(f"need at least {k + 1} distinct atoms")
    tree = cKDTree(X, boxsize=period)
    dist, _ = tree.query(X, k=k + 1)
    r = dist[:, -1]
    r = r[r > 0]
    if r.size == 0:
        raise DegenerateInputError("all nearest-neighbour distances vanish")
    log_unit_ball = 0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1)
    return float(digamma(M) - digamma(k) + log_unit_ball + dim * np.mean(np.log(r)))
