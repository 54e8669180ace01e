"""Linear algebra, normal-distribution helpers and a box-constrained L-BFGS.

Matrices are plain ``numpy`` float64 arrays; the only wrapper types are the
Cholesky factor (which remembers how much jitter it needed) and the search box.
"""
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .errors import BoundsViolation, DimensionMismatch, NonFiniteObjective, NotPositiveDefinite

JITTER_START = 1e-10
JITTER_MAX = 1e-4
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``lower`` with ``lower @ lower.T == a + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


@dataclass(frozen=True)
class BoundedBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch(f"bounds shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise BoundsViolation(f"lower bound exceeds upper bound: {lo} > {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim: int) -> "BoundedBox":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def clip(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def normalize(self, x):
        """Map into the unit cube; degenerate dimensions map to 0."""
        w = self.width
        safe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, (np.asarray(x, dtype=np.float64) - self.lower) / safe, 0.0)

    def denormalize(self, u):
        return self.lower + np.asarray(u, dtype=np.float64) * self.width


def cholesky(a) -> CholeskyFactor:
    """Cholesky factor of a symmetric matrix, escalating diagonal jitter on failure.

    Jitter starts at ``1e-10 * mean(diag)`` and grows tenfold up to
    ``1e-4 * mean(diag)``; beyond that :class:`NotPositiveDefinite` is raised.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return CholeskyFactor(np.linalg.cholesky(a), 0.0)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(a)))
    if not scale > 0.0:
        scale = 1.0
    eye = np.eye(a.shape[0])
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9):
        try:
            return CholeskyFactor(np.linalg.cholesky(a + jitter * eye), jitter)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"Cholesky failed with jitter up to {JITTER_MAX * scale:.3g} (n={a.shape[0]})"
    )


def solve_lower(factor: CholeskyFactor, b):
    """Solve ``L x = b`` (forward substitution only)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.size:
        raise DimensionMismatch(f"factor is {factor.size}x{factor.size}, rhs has {b.shape[0]} rows")
    return solve_triangular(factor.lower, b, lower=True, check_finite=False)


def solve_psd(factor: CholeskyFactor, b):
    """Solve ``(L L^T) x = b`` by two triangular solves. ``b`` may be a matrix."""
    y = solve_lower(factor, b)
    return solve_triangular(factor.lower.T, y, lower=False, check_finite=False)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def std_normal_cdf(x):
    # ndtr evaluates through erf/erfc and is accurate to double precision in both tails
    out = ndtr(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def _checked(fun: Objective, x: np.ndarray):
    value, grad = fun(x)
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64).reshape(x.shape)
    # a finite sum of finite terms; overflow only produces a spurious failure
    if not math.isfinite(value) or not math.isfinite(float(grad.sum())):
        raise NonFiniteObjective(f"objective returned non-finite output at x={x}")
    return value, grad


def _projected_gradient(x, g, box: BoundedBox):
    return box.clip(x - g) - x


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(
    fun: Objective,
    x0,
    bounds: BoundedBox,
    max_iters: int = 200,
    tol: float = 1e-6,
    memory: int = 10,
    ftol: float = 1e-15,
):
    """Minimize ``fun`` over a box with projected-gradient L-BFGS.

    ``fun(x)`` returns ``(value, gradient)``. Iterates and search directions
    are projected onto ``bounds``; coordinates pinned at a bound with the
    gradient pointing outward are held fixed for the step. Stops when the
    infinity norm of the projected gradient drops to ``tol``, after
    ``max_iters`` iterations, when an accepted step lowers the objective by
    at most ``ftol * max(1, |f|)``, or when no step decreases it at all.

    Returns ``(x, value)``. The returned value never exceeds ``fun(x0)``.
    """
    x = np.array(x0, dtype=np.float64).reshape(-1)
    if x.shape[0] != bounds.dim:
        raise DimensionMismatch(f"x0 has {x.shape[0]} coordinates, bounds have {bounds.dim}")
    if not bounds.contains(x, atol=1e-12):
        raise BoundsViolation(f"x0={x} lies outside the box")
    x = bounds.clip(x)
    lo, hi = bounds.lower, bounds.upper
    f, g = _checked(fun, x)
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)

    for _ in range(max_iters):
        if np.max(np.abs(_projected_gradient(x, g, bounds)), initial=0.0) <= tol:
            break
        pinned = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)) | (lo == hi)
        free = ~pinned
        d = -_two_loop(np.where(free, g, 0.0), s_hist, y_hist)
        d[pinned] = 0.0
        if not g @ d < 0.0:
            s_hist.clear()
            y_hist.clear()
            d = np.where(free, -g, 0.0)
        step = 1.0
        if not s_hist:
            step = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for _ in range(60):
            x_new = bounds.clip(x + step * d)
            delta = x_new - x
            if not np.any(delta):
                break
            f_new, g_new = _checked(fun, x_new)
            if f_new <= f + 1e-4 * min(g @ delta, 0.0) and f_new <= f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s = x_new - x
        y = g_new - g
        if s @ y > 1e-12 * (y @ y):
            s_hist.append(s)
            y_hist.append(y)
        converged = f - f_new <= ftol * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        if converged:
            break
    return x, f
