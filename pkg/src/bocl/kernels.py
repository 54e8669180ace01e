"""Hot-kernel dispatch: compiled extension when built, NumPy otherwise.

Set ``BOCL_PURE_PYTHON=1`` before import to force the NumPy path.
"""
import os

from . import _pykernels

if os.environ.get("BOCL_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

matern52_cross = _impl.matern52_cross
matern52_gram_grad = _impl.matern52_gram_grad
matern52_predict_grad = _impl.matern52_predict_grad
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "matern52_cross", "matern52_gram_grad", "matern52_predict_grad", "im2col", "col2im"]
