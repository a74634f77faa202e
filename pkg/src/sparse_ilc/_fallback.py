"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built.
"""
import numpy as np


def lfilter_zi0(b, a, x):
    n = len(x)
    nb, na = len(b), len(a)
    b = [float(v) for v in b]
    a = [float(v) for v in a]
    xs = [float(v) for v in x]
    y = [0.0] * n
    for i in range(n):
        acc = 0.0
        for k in range(min(nb, i + 1)):
            acc += b[k] * xs[i - k]
        for k in range(1, min(na, i + 1)):
            acc -= a[k] * y[i - k]
        y[i] = acc
    return np.asarray(y, dtype=np.float64)


def soft_threshold(x, kappa):
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def diff_apply(x):
    return np.diff(x)


def diff_adjoint(y):
    out = np.zeros(len(y) + 1)
    out[:-1] -= y
    out[1:] += y
    return out


def count_nonzero_diffs(x, tol):
    return int(np.count_nonzero(np.abs(np.diff(x)) > tol))
