import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bocl.errors import BoundsViolation, DimensionMismatch, NonFiniteObjective, NotPositiveDefinite
from bocl.numeric import (
    BoundedBox,
    CholeskyFactor,
    cholesky,
    lbfgs_minimize,
    solve_lower,
    solve_psd,
    std_normal_cdf,
    std_normal_pdf,
)

import oracles

# Simpson integration of the density on [-12, 1] with step 1e-4
CDF_AT_1 = 0.8413447461


def test_cholesky_identity():
    f = cholesky(np.eye(2))
    np.testing.assert_array_equal(f.lower, np.eye(2))
    assert f.jitter == 0.0


def test_cholesky_2x2_closed_form():
    f = cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)


def test_cholesky_reconstructs_random_spd():
    a = np.random.default_rng(0).standard_normal((5, 5))
    m = a.T @ a + np.eye(5)
    low = cholesky(m).lower
    assert np.allclose(np.triu(low, 1), 0.0)
    assert np.all(np.diag(low) > 0)
    assert np.linalg.norm(low @ low.T - m) / np.linalg.norm(m) <= 1e-10


def test_cholesky_jitter_rescues_duplicate_rows():
    x = np.array([[1.0, 1.0], [1.0, 1.0]])
    f = cholesky(x)
    assert f.jitter >= 1e-10
    assert f.jitter <= 1e-4
    np.testing.assert_allclose(f.lower @ f.lower.T, x + f.jitter * np.eye(2), atol=1e-14)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 0.0], [0.0, -1.0]])


def test_cholesky_rejects_non_finite_and_non_square():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_solve_psd_identity_and_diagonal():
    np.testing.assert_allclose(solve_psd(cholesky(np.eye(2)), [1.0, 2.0]), [1.0, 2.0])
    np.testing.assert_allclose(solve_psd(cholesky(np.diag([4.0, 9.0])), [4.0, 9.0]), [1.0, 1.0])


def test_solve_psd_matches_gaussian_elimination():
    r = np.random.default_rng(7)
    a = r.standard_normal((6, 6))
    m = a.T @ a + 0.5 * np.eye(6)
    b = r.standard_normal(6)
    np.testing.assert_allclose(solve_psd(cholesky(m), b), oracles.gaussian_elimination(m, b), atol=1e-9)


def test_solve_psd_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_psd(cholesky(np.eye(3)), np.ones(2))
    with pytest.raises(DimensionMismatch):
        solve_lower(CholeskyFactor(np.eye(2)), np.ones(4))


def test_logdet():
    m = np.diag([2.0, 3.0, 5.0])
    assert cholesky(m).logdet() == pytest.approx(math.log(30.0), abs=1e-14)


@given(st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_spd_solve_residual_property(n, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, n))
    m = a.T @ a + np.eye(n)
    b = r.standard_normal(n)
    x = solve_psd(cholesky(m), b)
    assert np.linalg.norm(m @ x - b) <= 1e-8 * max(np.linalg.norm(b), 1e-300)


def test_normal_pdf_cdf_values():
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.0) == pytest.approx(CDF_AT_1, abs=1e-10)


def test_cdf_matches_simpson_oracle():
    for x in (-3.0, -0.5, 1.0, 2.5):
        assert std_normal_cdf(x) == pytest.approx(oracles.simpson_cdf(x), abs=1e-10)
    assert oracles.simpson_cdf(1.0) == pytest.approx(CDF_AT_1, abs=1e-10)


def test_cdf_tails_keep_relative_precision():
    # 1 - cdf(8) is about 6.2e-16; a naive 0.5 * (1 + erf) would return 0
    assert std_normal_cdf(-8.0) == pytest.approx(6.22096057427178e-16, rel=1e-10)


def test_pdf_cdf_vectorized():
    x = np.linspace(-3, 3, 7)
    assert std_normal_cdf(x).shape == (7,)
    assert np.all(np.diff(std_normal_cdf(x)) > 0)
    assert np.all(std_normal_pdf(x) > 0)


@given(st.floats(-8.0, 8.0))
def test_cdf_symmetry_property(x):
    assert abs(std_normal_cdf(x) + std_normal_cdf(-x) - 1.0) <= 1e-12


@given(st.floats(-8.0, 8.0), st.floats(0.0, 4.0))
def test_cdf_monotone_property(x, dx):
    assert std_normal_cdf(x + dx) >= std_normal_cdf(x)
    assert 0.0 < std_normal_cdf(x) < 1.0
    assert std_normal_pdf(x) >= 0.0


def _quad(center):
    def f(x):
        d = x - center
        return float(d @ d), 2.0 * d

    return f


def test_lbfgs_quadratic_minimum():
    x, v = lbfgs_minimize(_quad(np.array([3.0])), [0.0], BoundedBox([-10.0], [10.0]))
    assert abs(x[0] - 3.0) <= 1e-6
    assert v <= 1e-12


def test_lbfgs_active_bound():
    x, v = lbfgs_minimize(_quad(np.array([3.0])), [0.0], BoundedBox([-10.0], [2.0]))
    assert x[0] == 2.0
    assert v == pytest.approx(1.0)


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_lbfgs_rosenbrock():
    box = BoundedBox([-5.0, -5.0], [5.0, 5.0])
    x, v = lbfgs_minimize(rosenbrock, [-1.2, 1.0], box, max_iters=500)
    assert v < 1e-6
    # long fixed-step gradient descent from the same start reaches the same basin
    y = np.array([-1.2, 1.0])
    for _ in range(200_000):
        y = np.clip(y - 1e-3 * rosenbrock(y)[1], -5, 5)
    assert np.linalg.norm(x - y) < 1e-2


def test_lbfgs_non_finite_objective():
    def bad(x):
        return float("nan"), np.zeros_like(x)

    with pytest.raises(NonFiniteObjective):
        lbfgs_minimize(bad, [0.5], BoundedBox.unit(1))


def test_lbfgs_start_outside_box():
    with pytest.raises(BoundsViolation):
        lbfgs_minimize(_quad(np.zeros(1)), [2.0], BoundedBox.unit(1))


def test_lbfgs_pinned_dimension():
    box = BoundedBox([0.0, 1.0], [1.0, 1.0])
    x, _ = lbfgs_minimize(_quad(np.array([0.3, 0.0])), [0.9, 1.0], box)
    assert x[1] == 1.0
    assert abs(x[0] - 0.3) < 1e-6


@given(
    arrays(np.float64, 3, elements=st.floats(-4, 4)),
    arrays(np.float64, 3, elements=st.floats(0.1, 5)),
    arrays(np.float64, 3, elements=st.floats(0, 1)),
    st.integers(0, 2**31 - 1),
)
def test_lbfgs_stays_in_box_and_descends(center, scale, start_frac, seed):
    r = np.random.default_rng(seed)
    lo = r.uniform(-3, 0, 3)
    hi = lo + r.uniform(0, 3, 3)
    box = BoundedBox(lo, hi)
    x0 = lo + start_frac * (hi - lo)

    def f(x):
        d = x - center
        return float(np.sum(scale * d * d) + np.sin(3 * x).sum()), 2 * scale * d + 3 * np.cos(3 * x)

    x, v = lbfgs_minimize(f, x0, box)
    assert box.contains(x)
    assert v <= f(box.clip(x0))[0]
    assert v == pytest.approx(f(x)[0], abs=1e-12)


def test_bounded_box_validation_and_normalize():
    with pytest.raises(BoundsViolation):
        BoundedBox([1.0], [0.0])
    with pytest.raises(DimensionMismatch):
        BoundedBox([0.0, 0.0], [1.0])
    box = BoundedBox([0.0, 2.0], [10.0, 2.0])
    np.testing.assert_allclose(box.normalize([5.0, 2.0]), [0.5, 0.0])
    np.testing.assert_allclose(box.denormalize([0.5, 0.0]), [5.0, 2.0])
    with pytest.raises(ValueError):
        box.lower[0] = 3.0
