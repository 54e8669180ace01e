"""Expected-improvement acquisition and its bounded maximization."""
import math
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DimensionMismatch, SearchSpaceExhausted
from .gp import GpModel
from .numeric import BoundedBox, lbfgs_minimize, std_normal_cdf, std_normal_pdf

SIGMA_FLOOR = 1e-12
N_STARTS = 16
FALLBACK_CANDIDATES = 512
# raw Latin-hypercube pool from which the best starts are taken
START_POOL_PER_START = 16


@dataclass(frozen=True)
class Proposal:
    point: np.ndarray
    raw_point: np.ndarray
    ei_value: float


def expected_improvement(mu, sigma, r_best):
    """EI of a Gaussian ``N(mu, sigma^2)`` over the incumbent ``r_best`` (maximization)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    imp = mu - r_best
    safe = np.where(sigma > SIGMA_FLOOR, sigma, 1.0)
    gamma = imp / safe
    ei = imp * std_normal_cdf(gamma) + safe * std_normal_pdf(gamma)
    out = np.where(sigma > SIGMA_FLOOR, np.maximum(ei, 0.0), np.maximum(imp, 0.0))
    return float(out) if out.ndim == 0 else out


def ei_and_grad(model: GpModel, u, r_best: float):
    """EI at normalized point ``u`` and its gradient with respect to ``u``."""
    mu, var, dmu, dvar = model.predict_with_grad(u)
    sigma = math.sqrt(var)
    if sigma <= SIGMA_FLOOR:
        imp = mu - r_best
        return max(imp, 0.0), (dmu if imp > 0 else np.zeros_like(dmu))
    gamma = (mu - r_best) / sigma
    cdf = std_normal_cdf(gamma)
    pdf = std_normal_pdf(gamma)
    ei = (mu - r_best) * cdf + sigma * pdf
    dsigma = dvar / (2.0 * sigma)
    return max(ei, 0.0), cdf * dmu + pdf * dsigma


def latin_hypercube(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        return np.empty((0, dim))
    return qmc.LatinHypercube(d=dim, seed=rng).random(n)


def project_to_integer(raw, bounds: BoundedBox) -> np.ndarray:
    """Round half-up, then clamp into the box."""
    raw = np.asarray(raw, dtype=np.float64)
    lo = np.ceil(bounds.lower - 1e-12)
    hi = np.floor(bounds.upper + 1e-12)
    return np.clip(np.floor(raw + 0.5), lo, hi).astype(np.int64)


def _key(point) -> tuple:
    return tuple(int(v) for v in np.asarray(point).reshape(-1))


def _integer_points(bounds: BoundedBox):
    lo = np.ceil(bounds.lower - 1e-12).astype(int)
    hi = np.floor(bounds.upper + 1e-12).astype(int)
    return product(*(range(a, b + 1) for a, b in zip(lo, hi)))


def n_integer_points(bounds: BoundedBox) -> int:
    lo = np.ceil(bounds.lower - 1e-12)
    hi = np.floor(bounds.upper + 1e-12)
    return int(np.prod(np.maximum(hi - lo + 1, 0)))


def _ei_normalized(model: GpModel, u: np.ndarray, r_best: float) -> np.ndarray:
    mu, var = model.predict(u)
    return expected_improvement(mu, np.sqrt(var), r_best)


def propose_next(
    model: GpModel,
    bounds: BoundedBox,
    history: Iterable = (),
    n_starts: int = N_STARTS,
    rng: Optional[np.random.Generator] = None,
    integer: bool = True,
    max_iters: int = 200,
) -> Proposal:
    """Maximize EI over ``bounds`` from multiple starts.

    The model must have been fitted on points normalized by ``bounds``.
    Starts are the incumbent best observation plus the highest-EI members of
    a Latin-hypercube pool. With ``integer=True`` the continuous optimum is
    rounded; if that integer point is already in ``history``, the best
    unseen rounding among 512 Latin-hypercube candidates is returned instead.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    if model.dim != bounds.dim:
        raise DimensionMismatch(f"model dim {model.dim} vs bounds dim {bounds.dim}")
    rng = rng if rng is not None else np.random.default_rng()
    dim = bounds.dim
    r_best = float(np.max(model.rewards))
    unit = BoundedBox.unit(dim)
    degenerate = bounds.width <= 0
    fixed_unit = BoundedBox(np.zeros(dim), np.where(degenerate, 0.0, 1.0))

    pool = latin_hypercube(max(n_starts - 1, 0) * START_POOL_PER_START, dim, rng)
    pool[:, degenerate] = 0.0
    starts = [model.points[int(np.argmax(model.rewards))]]
    if len(pool):
        pool_ei = _ei_normalized(model, pool, r_best)
        order = np.argsort(-pool_ei, kind="stable")[: n_starts - 1]
        starts.extend(pool[order])

    def neg_ei(u):
        value, grad = ei_and_grad(model, u, r_best)
        return -value, -grad

    best_u, best_ei = None, -math.inf
    for u0 in starts:
        u0 = fixed_unit.clip(unit.clip(u0))
        u, value = lbfgs_minimize(neg_ei, u0, fixed_unit, max_iters=max_iters, tol=1e-8, ftol=1e-12)
        if -value > best_ei:
            best_u, best_ei = u, -value
    raw = bounds.clip(bounds.denormalize(best_u))
    if not integer:
        return Proposal(raw.copy(), raw, best_ei)

    seen = {_key(p) for p in history}
    point = project_to_integer(raw, bounds)
    if _key(point) not in seen:
        return Proposal(point, raw, best_ei)
    return _fallback(model, bounds, seen, rng, r_best)


def _fallback(model, bounds, seen, rng, r_best) -> Proposal:
    total = n_integer_points(bounds)
    if len(seen) >= total:
        raise SearchSpaceExhausted(f"all {total} integer points already evaluated")
    if total <= FALLBACK_CANDIDATES:
        cands = np.array([p for p in _integer_points(bounds) if p not in seen], dtype=np.float64)
        raws = cands
    else:
        raws = bounds.denormalize(latin_hypercube(FALLBACK_CANDIDATES, bounds.dim, rng))
        cands = project_to_integer(raws, bounds).astype(np.float64)
    ei = _ei_normalized(model, bounds.normalize(cands), r_best)
    for i in np.argsort(-ei, kind="stable"):
        if _key(cands[i]) not in seen:
            return Proposal(cands[i].astype(np.int64), raws[i], float(ei[i]))
    # every sampled candidate was a duplicate: take any unseen integer point
    for p in _integer_points(bounds):
        if p not in seen:
            arr = np.array(p, dtype=np.float64)
            return Proposal(arr.astype(np.int64), arr, float(_ei_normalized(model, bounds.normalize(arr[None]), r_best)[0]))
    raise SearchSpaceExhausted("no unseen integer point left")


def random_integer_points(bounds: BoundedBox, n: int, rng: np.random.Generator, exclude=()) -> list:
    """Up to ``n`` distinct uniform integer points of the box not in ``exclude``."""
    seen = {_key(p) for p in exclude}
    lo = np.ceil(bounds.lower - 1e-12).astype(np.int64)
    hi = np.floor(bounds.upper + 1e-12).astype(np.int64)
    out = []
    remaining = n_integer_points(bounds) - len(seen)
    attempts = 0
    while len(out) < n and remaining > 0:
        p = rng.integers(lo, hi + 1)
        attempts += 1
        k = _key(p)
        if k not in seen:
            seen.add(k)
            out.append(p.astype(np.int64))
            remaining -= 1
        elif attempts > 10_000:
            rest = [np.array(q, dtype=np.int64) for q in _integer_points(bounds) if q not in seen]
            rng.shuffle(rest)
            out.extend(rest[: n - len(out)])
            break
    return out
