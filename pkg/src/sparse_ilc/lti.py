"""Scalar discrete-time LTI systems: simulation, frequency response, lifting.

Polynomials are stored in ascending powers of the unit delay ``q = z^-1``.
A system is ``z**lead * B(q) / A(q)``; ``lead > 0`` means preview
(non-causal), ``lead < 0`` an extra pure delay.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from . import kernels

#: Default number of frequency grid points used for norm estimation.
DEFAULT_GRID_POINTS = 4096
#: Lowest grid frequency as a fraction of Nyquist.
DEFAULT_GRID_FLOOR = 1e-5


class SingularFrequencyError(ValueError):
    """A denominator vanishes on the unit circle."""


def _as_poly(c) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(c, dtype=np.float64)).copy()
    if arr.ndim != 1:
        raise ValueError("coefficients must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coefficients must be finite")
    return arr


def _trim_trailing(p: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(p)
    if nz.size == 0:
        return np.zeros(1)
    return p[: nz[-1] + 1]


def _padd(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    n = max(len(p1), len(p2))
    out = np.zeros(n)
    out[: len(p1)] += p1
    out[: len(p2)] += p2
    return out


@dataclass(frozen=True)
class TransferFunction:
    num: np.ndarray
    den: np.ndarray
    dt: float = 1.0
    lead: int = 0

    def __post_init__(self):
        num = _trim_trailing(_as_poly(self.num))
        den = _trim_trailing(_as_poly(self.den))
        lead = int(self.lead)
        if den[0] == 0.0:
            raise ValueError("denominator leading coefficient must be nonzero")
        num = num / den[0]
        den = den / den[0]
        # canonical form: leading numerator coefficient nonzero, delay in `lead`
        nz = np.flatnonzero(num)
        if nz.size == 0:
            num, lead = np.zeros(1), 0
        elif nz[0] > 0:
            lead -= int(nz[0])
            num = num[nz[0]:]
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        object.__setattr__(self, "lead", lead)
        object.__setattr__(self, "dt", float(self.dt))

    # construction helpers -------------------------------------------------
    @classmethod
    def gain(cls, k: float, dt: float = 1.0) -> "TransferFunction":
        return cls([k], [1.0], dt)

    @classmethod
    def delay(cls, n: int = 1, dt: float = 1.0) -> "TransferFunction":
        return cls([1.0], [1.0], dt, lead=-n)

    # queries --------------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return not np.any(self.num)

    @property
    def causal(self) -> bool:
        return self.lead <= 0 or self.is_zero

    def poles(self) -> np.ndarray:
        return np.roots(self.den) if len(self.den) > 1 else np.zeros(0, dtype=complex)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num) if len(self.num) > 1 else np.zeros(0, dtype=complex)

    @property
    def stable(self) -> bool:
        p = self.poles()
        return bool(np.all(np.abs(p) < 1.0))

    @property
    def monic(self) -> bool:
        return self.lead == 0 and np.isclose(self.num[0], 1.0)

    @property
    def bistable(self) -> bool:
        z = self.zeros()
        return self.stable and bool(np.all(np.abs(z) < 1.0))

    def causal_num(self) -> np.ndarray:
        """Numerator with the pure delay folded back in (requires causality)."""
        if not self.causal:
            raise ValueError("system is non-causal (lead=%d)" % self.lead)
        return np.concatenate([np.zeros(-self.lead), self.num])

    # algebra --------------------------------------------------------------
    def _check_dt(self, other: "TransferFunction"):
        if not np.isclose(self.dt, other.dt):
            raise ValueError("sample periods differ: %g vs %g" % (self.dt, other.dt))

    def __mul__(self, other):
        if isinstance(other, TransferFunction):
            self._check_dt(other)
            return TransferFunction(
                np.convolve(self.num, other.num),
                np.convolve(self.den, other.den),
                self.dt,
                self.lead + other.lead,
            )
        return TransferFunction(self.num * float(other), self.den, self.dt, self.lead)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __add__(self, other):
        if not isinstance(other, TransferFunction):
            other = TransferFunction.gain(float(other), self.dt)
        self._check_dt(other)
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        # bring both numerators to the smaller lead
        base = min(self.lead, other.lead)
        n1 = np.concatenate([np.zeros(self.lead - base), self.num])
        n2 = np.concatenate([np.zeros(other.lead - base), other.num])
        num = _padd(np.convolve(n1, other.den), np.convolve(n2, self.den))
        return TransferFunction(num, np.convolve(self.den, other.den), self.dt, base)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, TransferFunction) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def inverse(self) -> "TransferFunction":
        if self.is_zero:
            raise ZeroDivisionError("cannot invert the zero system")
        return TransferFunction(self.den, self.num, self.dt, -self.lead)

    def __repr__(self):
        return "TransferFunction(num=%s, den=%s, dt=%g, lead=%d)" % (
            np.array2string(self.num, precision=6),
            np.array2string(self.den, precision=6),
            self.dt,
            self.lead,
        )


@dataclass(frozen=True)
class LiftedOperator:
    """Finite-time N x N matrix representation of an LTI map."""

    matrix: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("lifted operator must be square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> np.ndarray:
        return self.matrix.T

    def __matmul__(self, x):
        return self.matrix @ x

    def scaled(self, k: float) -> "LiftedOperator":
        return LiftedOperator(self.matrix * k, self.dt)

    @property
    def lower_triangular(self) -> bool:
        return not np.any(np.triu(self.matrix, 1))


@dataclass(frozen=True)
class FrequencyResponse:
    omega: np.ndarray
    values: np.ndarray
    singular: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.omega) != len(self.values):
            raise ValueError("grid and values differ in length")
        if self.singular is None:
            object.__setattr__(self, "singular", np.zeros(len(self.omega), dtype=bool))

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def hz(self, dt: float) -> np.ndarray:
        return self.omega / (2 * np.pi * dt)


def frequency_grid(n: int = DEFAULT_GRID_POINTS, floor: float = DEFAULT_GRID_FLOOR) -> np.ndarray:
    """Log-spaced grid on (0, pi]; ``floor`` is the lowest point over pi."""
    if n < 2:
        raise ValueError("grid needs at least two points")
    return np.logspace(np.log10(np.pi * floor), np.log10(np.pi), n)


def refine_grid(grid: np.ndarray, factor: int = 2) -> np.ndarray:
    """Insert ``factor - 1`` geometric midpoints between neighbours.

    The result contains the original grid, so grid maxima can only grow.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if factor < 2:
        return grid.copy()
    lg = np.log(grid)
    steps = np.arange(factor) / factor
    fine = np.exp(lg[:-1, None] + np.diff(lg)[:, None] * steps[None, :])
    fine[:, 0] = grid[:-1]  # keep the original points bit-exact
    return np.concatenate([fine.ravel(), grid[-1:]])


def _check_input(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("signals must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise ValueError("input signal contains non-finite values")
    return x


def simulate(sys: TransferFunction, x) -> np.ndarray:
    """Zero-initial-state response of a causal system to ``x``."""
    x = _check_input(x)
    return kernels.lfilter_zi0(sys.causal_num(), sys.den, x)


def impulse_response(sys: TransferFunction, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("N must be at least 1")
    u = np.zeros(n)
    u[0] = 1.0
    return simulate(sys, u)


def _two_sided_impulse(sys: TransferFunction, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Impulse response samples h[k] for k in [-(n-1), n-1] of z^lead B/A."""
    causal = TransferFunction(sys.num, sys.den, sys.dt, 0)
    h0 = impulse_response(causal, 2 * n)
    k = np.arange(-(n - 1), n)
    idx = k + sys.lead
    h = np.where((idx >= 0) & (idx < 2 * n), h0[np.clip(idx, 0, 2 * n - 1)], 0.0)
    return k, h


def lift(sys: TransferFunction, n: int, allow_noncausal: bool = False) -> LiftedOperator:
    """Lower-triangular Toeplitz matrix with ``M[i, k] = h[i - k]``.

    Non-causal systems (preview) give a full Toeplitz matrix over the
    task window and are only accepted with ``allow_noncausal=True``.
    """
    if n < 1:
        raise ValueError("N must be at least 1")
    if not sys.causal:
        if not allow_noncausal:
            raise ValueError("cannot lift a non-causal system (lead=%d)" % sys.lead)
        k, h = _two_sided_impulse(sys, n)
        col = h[n - 1:]
        row = h[: n][::-1]
        return LiftedOperator(toeplitz(col, row), sys.dt)
    h = impulse_response(sys, n)
    return LiftedOperator(toeplitz(h, np.zeros(n)), sys.dt)


def frequency_response(sys: TransferFunction, grid) -> FrequencyResponse:
    """Evaluate ``sys`` at ``z = exp(i w)``; singular points become ``inf``."""
    w = np.asarray(grid, dtype=np.float64)
    if np.any(w <= 0) or np.any(w > np.pi + 1e-12):
        raise ValueError("grid must lie in (0, pi]")
    q = np.exp(-1j * w)
    num = np.polynomial.polynomial.polyval(q, sys.num)
    den = np.polynomial.polynomial.polyval(q, sys.den)
    singular = np.abs(den) <= 1e-13 * np.sum(np.abs(sys.den))
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = num / den * np.exp(1j * w * sys.lead)
    vals = np.where(singular, np.inf + 0j, vals)
    return FrequencyResponse(w, vals, singular)


def linf_norm(sys: TransferFunction, grid=None) -> float:
    """Peak gain over the grid.

    This is a lower bound of the true L-infinity norm; refine the grid
    (``refine_grid``) to tighten it. Returns ``inf`` if the grid hits a
    singular frequency.
    """
    if grid is None:
        grid = frequency_grid()
    fr = frequency_response(sys, grid)
    if np.any(fr.singular):
        return float("inf")
    return float(np.max(fr.magnitude))


@dataclass(frozen=True)
class FeedbackLoop:
    S: TransferFunction
    SG: TransferFunction
    closed_loop_stable: bool

    def __iter__(self):
        return iter((self.S, self.SG))


def feedback_connect(G: TransferFunction, C: TransferFunction) -> FeedbackLoop:
    """Sensitivity ``1/(1+GC)`` and process sensitivity ``G/(1+GC)``.

    Built by polynomial arithmetic without cancelling common factors.
    """
    G._check_dt(C)
    if not (G.causal and C.causal):
        raise ValueError("feedback loop requires causal G and C")
    bg, ag = G.causal_num(), G.den
    bc, ac = C.causal_num(), C.den
    open_num = np.convolve(bg, bc)
    open_den = np.convolve(ag, ac)
    char = _trim_trailing(_padd(open_den, open_num))
    if not np.any(char) or abs(char[0]) < 1e-14 * np.sum(np.abs(char)):
        raise ValueError("algebraic loop: 1 + GC is degenerate")
    S = TransferFunction(open_den, char, G.dt)
    SG = TransferFunction(np.convolve(bg, ac), char, G.dt)
    return FeedbackLoop(S, SG, S.stable)
