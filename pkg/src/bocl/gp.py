"""Gaussian-process surrogate with a Matérn-5/2 ARD covariance.

Inputs are expected in the unit cube (callers normalize by the search box);
rewards are standardized internally and every prediction is reported back in
the original reward units.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import DimensionMismatch, NonFiniteObjective, NotPositiveDefinite
from .numeric import BoundedBox, CholeskyFactor, cholesky, lbfgs_minimize, solve_lower, solve_psd

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    lengthscale: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=np.float64))
        if np.any(ls <= 0) or self.signal_variance <= 0 or self.noise_variance <= 0:
            raise ValueError(f"kernel parameters must be positive: {self}")
        object.__setattr__(self, "lengthscale", ls)

    @property
    def dim(self) -> int:
        return self.lengthscale.shape[0]

    def to_log(self) -> np.ndarray:
        return np.log(np.concatenate([self.lengthscale, [self.signal_variance, self.noise_variance]]))

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        p = np.exp(np.asarray(theta, dtype=np.float64))
        return cls(p[:-2], float(p[-2]), float(p[-1]))


@dataclass(frozen=True)
class HyperBounds:
    lengthscale: Tuple[float, float] = (0.05, 10.0)
    signal_variance: Tuple[float, float] = (0.05, 20.0)
    noise_variance: Tuple[float, float] = (1e-6, 1e-1)

    def log_box(self, dim: int) -> BoundedBox:
        lo = [self.lengthscale[0]] * dim + [self.signal_variance[0], self.noise_variance[0]]
        hi = [self.lengthscale[1]] * dim + [self.signal_variance[1], self.noise_variance[1]]
        return BoundedBox(np.log(lo), np.log(hi))


DEFAULT_BOUNDS = HyperBounds()


def matern52(x, y, params: KernelParams) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.shape[0] != params.dim:
        raise DimensionMismatch(f"points {x.shape}, {y.shape} vs lengthscale dim {params.dim}")
    r = math.sqrt(float(np.sum(((x - y) / params.lengthscale) ** 2)))
    s5r = math.sqrt(5.0) * r
    return params.signal_variance * (1.0 + s5r + 5.0 * r * r / 3.0) * math.exp(-s5r)


def gram(a, b, params: KernelParams) -> np.ndarray:
    return kernels.matern52_cross(
        np.atleast_2d(a), np.atleast_2d(b), params.lengthscale, params.signal_variance
    )


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def standardize(rewards) -> Tuple[np.ndarray, float, float]:
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    mean = float(np.mean(r))
    scale = float(np.std(r))
    if not scale > 1e-12:
        scale = 1.0
    return (r - mean) / scale, mean, scale


def _noisy_gram(x, params: KernelParams) -> np.ndarray:
    k = gram(x, x, params)
    k[np.diag_indices_from(k)] += params.noise_variance
    return k


def log_marginal_likelihood(points, rewards, params: KernelParams) -> float:
    """Gaussian log evidence of the standardized rewards under ``params``."""
    x = _as_points(points)
    y, _, _ = standardize(rewards)
    factor = cholesky(_noisy_gram(x, params))
    w = solve_lower(factor, y)
    return float(-0.5 * w @ w - 0.5 * factor.logdet() - 0.5 * len(y) * _LOG_2PI)


def _neg_lml_and_grad(theta, x, y):
    params = KernelParams.from_log(theta)
    k, dk_ls = kernels.matern52_gram_grad(x, params.lengthscale, params.signal_variance)
    kn = k.copy()
    kn[np.diag_indices_from(kn)] += params.noise_variance
    try:
        factor = cholesky(kn)
    except NotPositiveDefinite:
        return math.inf, np.zeros_like(theta)
    alpha = solve_psd(factor, y)
    n = len(y)
    value = 0.5 * y @ alpha + 0.5 * factor.logdet() + 0.5 * n * _LOG_2PI
    # d(-lml)/dtheta = -0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
    linv = solve_triangular(factor.lower, np.eye(n), lower=True, check_finite=False)
    inner = np.outer(alpha, alpha) - linv.T @ linv
    grad = np.empty_like(theta)
    grad[:-2] = -0.5 * np.einsum("ij,kij->k", inner, dk_ls)
    grad[-2] = -0.5 * np.sum(inner * k)
    grad[-1] = -0.5 * params.noise_variance * np.trace(inner)
    return value, grad


def initial_params(dim: int, bounds: HyperBounds = DEFAULT_BOUNDS, n_starts: int = 4, seed: int = 0):
    """Starting points of the multi-start hyperparameter search.

    The first is a fixed central guess; the rest are log-uniform draws.
    """
    box = bounds.log_box(dim)
    starts = [np.log(np.concatenate([np.full(dim, 0.5), [1.0, 1e-3]]))]
    rng = np.random.default_rng(seed)
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(box.lower, box.upper))
    return [KernelParams.from_log(box.clip(s)) for s in starts]


@dataclass(frozen=True)
class GpModel:
    points: np.ndarray
    rewards: np.ndarray
    params: KernelParams
    factor: CholeskyFactor
    alpha: np.ndarray
    reward_mean: float
    reward_scale: float
    start_params: List[KernelParams] = field(default_factory=list, compare=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def predict_standardized(self, z) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance in standardized units for rows of ``z``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise DimensionMismatch(f"query has dim {z.shape[1]}, model has dim {self.dim}")
        ks = gram(z, self.points, self.params)
        mu = ks @ self.alpha
        v = solve_lower(self.factor, ks.T)
        var = self.params.signal_variance - np.sum(v * v, axis=0)
        return mu, np.maximum(var, 0.0)

    def predict(self, z) -> Tuple[np.ndarray, np.ndarray]:
        mu, var = self.predict_standardized(z)
        return self.reward_mean + self.reward_scale * mu, var * self.reward_scale**2

    def predict_with_grad(self, z):
        """Mean, variance and their gradients at a single point ``z`` (original units)."""
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.dim:
            raise DimensionMismatch(f"query has dim {z.shape[0]}, model has dim {self.dim}")
        p = self.params
        mu, var, dmu, dvar = kernels.matern52_predict_grad(
            z, self.points, p.lengthscale, p.signal_variance, self.alpha, self.factor.lower
        )
        s = self.reward_scale
        return self.reward_mean + s * mu, max(var, 0.0) * s * s, s * dmu, dvar * (s * s)


def build_model(points, rewards, params: KernelParams, start_params=None) -> GpModel:
    x = _as_points(points)
    r = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if x.shape[0] != r.shape[0] or x.shape[0] < 1:
        raise DimensionMismatch(f"{x.shape[0]} points but {r.shape[0]} rewards")
    if params.dim != x.shape[1]:
        raise DimensionMismatch(f"lengthscale dim {params.dim} vs point dim {x.shape[1]}")
    y, mean, scale = standardize(r)
    factor = cholesky(_noisy_gram(x, params))
    alpha = solve_psd(factor, y)
    return GpModel(x.copy(), r.copy(), params, factor, alpha, mean, scale, list(start_params or []))


def fit(
    points,
    rewards,
    bounds: HyperBounds = DEFAULT_BOUNDS,
    n_starts: int = 4,
    seed: int = 0,
    max_iters: int = 100,
) -> GpModel:
    """Fit hyperparameters by multi-start maximization of the log evidence."""
    x = _as_points(points)
    y, _, _ = standardize(rewards)
    if x.shape[0] < 1:
        raise DimensionMismatch("at least one observation is required")
    box = bounds.log_box(x.shape[1])
    starts = initial_params(x.shape[1], bounds, n_starts, seed)
    best_theta, best_value = None, math.inf
    for start in starts:
        theta0 = box.clip(start.to_log())
        try:
            theta, value = lbfgs_minimize(
                lambda t: _neg_lml_and_grad(t, x, y), theta0, box, max_iters=max_iters, tol=1e-5, ftol=1e-10
            )
        except NonFiniteObjective:
            continue
        if value < best_value:
            best_theta, best_value = theta, value
    if best_theta is None:
        raise NotPositiveDefinite("no hyperparameter start produced a factorizable Gram matrix")
    return build_model(x, rewards, KernelParams.from_log(best_theta), starts)


def posterior(model: GpModel, z) -> Tuple[float, float]:
    """Posterior mean and variance at a single point, in original reward units."""
    mu, var = model.predict(np.asarray(z, dtype=np.float64).reshape(1, -1))
    return float(mu[0]), float(var[0])
