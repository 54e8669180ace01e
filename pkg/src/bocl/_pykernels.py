"""NumPy reference implementations of the hot kernels.

These are selected when the compiled ``_ckernels`` extension is unavailable
or when ``BOCL_PURE_PYTHON`` is set. Both backends share one contract and are
cross-checked by the test-suite.
"""
import numpy as np
from scipy.linalg import solve_triangular
from numpy.lib.stride_tricks import sliding_window_view

SQRT5 = np.sqrt(5.0)


def matern52_cross(a, b, lengthscale, variance):
    """Matérn-5/2 covariance between the rows of ``a`` (n, d) and ``b`` (m, d)."""
    a = np.asarray(a, dtype=np.float64) / lengthscale
    b = np.asarray(b, dtype=np.float64) / lengthscale
    diff = a[:, None, :] - b[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    r = np.sqrt(sq)
    return variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-SQRT5 * r)


def matern52_gram_grad(x, lengthscale, variance):
    """Gram matrix of ``x`` and its derivative w.r.t. each log-lengthscale.

    Returns ``(K, dK)`` with ``K`` of shape (n, n) and ``dK`` of shape
    (d, n, n).
    """
    x = np.asarray(x, dtype=np.float64)
    scaled = x / lengthscale
    diff = scaled[:, None, :] - scaled[None, :, :]
    sq_parts = diff * diff
    sq = np.sum(sq_parts, axis=2)
    r = np.sqrt(sq)
    e = np.exp(-SQRT5 * r)
    k = variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * e
    # dk/dlog(l_d) = (5/3) s (1 + sqrt5 r) exp(-sqrt5 r) * ((x_d - y_d) / l_d)^2
    common = (5.0 / 3.0) * variance * (1.0 + SQRT5 * r) * e
    dk = np.moveaxis(common[:, :, None] * sq_parts, 2, 0)
    return k, np.ascontiguousarray(dk)


def im2col(x, kernel, stride):
    """Unfold NCHW input into rows of receptive fields.

    Output shape is (N * Ho * Wo, C * kernel * kernel) with columns ordered
    (channel, kernel row, kernel column).
    """
    n, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kernel * kernel
    )


def col2im(cols, shape, kernel, stride):
    """Adjoint of :func:`im2col`: scatter-add rows back to an NCHW array."""
    n, c, h, w = shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    cols = cols.reshape(n, ho, wo, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    for ki in range(kernel):
        for kj in range(kernel):
            out[
                :, :, ki : ki + stride * (ho - 1) + 1 : stride, kj : kj + stride * (wo - 1) + 1 : stride
            ] += cols[:, :, ki, kj]
    return out


def matern52_predict_grad(z, x, lengthscale, variance, alpha, lower):
    """Posterior mean/variance at one point and their gradients w.r.t. the point.

    ``alpha = K^-1 y`` and the Cholesky factor ``lower`` of ``K`` come from
    the fitted model; all quantities are in standardized units. Returns
    ``(mu, var, dmu, dvar)``.
    """
    diff = (z[None, :] - x) / lengthscale
    sq = np.sum(diff * diff, axis=1)
    r = np.sqrt(sq)
    e = np.exp(-SQRT5 * r)
    ks = variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * e
    # dk/dz = -(5/3) s (1 + sqrt5 r) exp(-sqrt5 r) (z - x) / l^2
    dks = (-(5.0 / 3.0) * variance * (1.0 + SQRT5 * r) * e)[:, None] * (diff / lengthscale)
    # triangular solves instead of an explicit inverse keep var accurate when K is ill-conditioned
    v = solve_triangular(lower, ks, lower=True, check_finite=False)
    w = solve_triangular(lower.T, v, lower=False, check_finite=False)
    mu = float(ks @ alpha)
    var = float(variance - v @ v)
    return mu, var, dks.T @ alpha, -2.0 * (dks.T @ w)
