"""Kernel dispatch: compiled extension when importable, else pure Python.

Set ``SPARSE_ILC_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("SPARSE_ILC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def _vec(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def lfilter_zi0(b, a, x, impl=None):
    impl = impl or _impl
    return impl.lfilter_zi0(_vec(b), _vec(a), _vec(x))


def soft_threshold(x, kappa, impl=None):
    impl = impl or _impl
    x = _vec(x)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), x.shape)
    return impl.soft_threshold(x, _vec(kappa))


def diff_apply(x, impl=None):
    impl = impl or _impl
    return impl.diff_apply(_vec(x))


def diff_adjoint(y, impl=None):
    impl = impl or _impl
    return impl.diff_adjoint(_vec(y))


def count_nonzero_diffs(x, tol=0.0, impl=None):
    impl = impl or _impl
    return int(impl.count_nonzero_diffs(_vec(x), float(tol)))
