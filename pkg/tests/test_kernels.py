import os
import subprocess
import sys

import numpy as np
import pytest

from bocl import _pykernels, kernels

try:
    from bocl import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def gp_case(seed, n=9, dim=3):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 1, (n, dim))
    ls = r.uniform(0.1, 1.0, dim)
    var = float(r.uniform(0.5, 2))
    k = _pykernels.matern52_cross(x, x, ls, var) + 1e-3 * np.eye(n)
    return r, x, ls, var, np.linalg.cholesky(k)


def test_backend_is_named():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None and not os.environ.get("BOCL_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_matern_parity(seed):
    r, x, ls, var, _ = gp_case(seed)
    y = r.uniform(0, 1, (4, x.shape[1]))
    np.testing.assert_allclose(_ckernels.matern52_cross(x, y, ls, var), _pykernels.matern52_cross(x, y, ls, var),
                               rtol=1e-13, atol=1e-15)
    kc, dc = _ckernels.matern52_gram_grad(x, ls, var)
    kp, dp = _pykernels.matern52_gram_grad(x, ls, var)
    np.testing.assert_allclose(kc, kp, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(dc, dp, rtol=1e-12, atol=1e-14)


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_predict_grad_parity(seed):
    r, x, ls, var, lower = gp_case(seed)
    alpha = r.standard_normal(x.shape[0])
    z = r.uniform(0, 1, x.shape[1])
    for a, b in zip(_ckernels.matern52_predict_grad(z, x, ls, var, alpha, lower),
                    _pykernels.matern52_predict_grad(z, x, ls, var, alpha, lower)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_ext
def test_im2col_col2im_parity():
    r = np.random.default_rng(0)
    x = r.standard_normal((3, 2, 7, 6))
    for kernel, stride in ((3, 1), (2, 2), (3, 2)):
        cc = _ckernels.im2col(x, kernel, stride)
        cp = _pykernels.im2col(x, kernel, stride)
        np.testing.assert_array_equal(cc, cp)
        g = r.standard_normal(cp.shape)
        np.testing.assert_allclose(_ckernels.col2im(g, x.shape, kernel, stride),
                                   _pykernels.col2im(g, x.shape, kernel, stride), atol=1e-13)


def test_col2im_is_adjoint_of_im2col():
    r = np.random.default_rng(1)
    x = r.standard_normal((2, 3, 6, 6))
    cols = kernels.im2col(x, 3, 1)
    g = r.standard_normal(cols.shape)
    lhs = np.sum(cols * g)
    rhs = np.sum(x * kernels.col2im(g, x.shape, 3, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pure_python_switch_in_subprocess():
    env = dict(os.environ, BOCL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from bocl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
