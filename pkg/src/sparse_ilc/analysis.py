"""Frequency-domain predictions for explicit ILC and empirical spectra.

Spectra are two-sided densities per rad/sample: white noise of variance
``s2`` has flat density ``s2 / (2 pi)``, and the variance is the integral
over ``[-pi, pi]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .engine import estimate_e_inf
from .lti import TransferFunction, frequency_grid, frequency_response

CONVERGES, DIVERGES, MARGINAL = "converges", "diverges", "marginal"


@dataclass(frozen=True)
class SpectrumEstimate:
    omega: np.ndarray  # rad/sample
    power: np.ndarray
    method: str = "theoretical"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64)
        power = np.asarray(self.power, dtype=np.float64)
        if omega.shape != power.shape:
            raise ValueError("grid and power differ in length")
        if np.any(power < 0):
            raise ValueError("power must be non-negative")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "power", power)

    def hz(self, dt: float) -> np.ndarray:
        return self.omega / (2 * np.pi * dt)

    def variance(self) -> float:
        """Integral over [-pi, pi] (trapezoid on the one-sided grid)."""
        return float(2.0 * np.trapezoid(self.power, self.omega))


@dataclass(frozen=True)
class ConvergenceReport:
    rho: float
    lifted_rho: float | None
    verdict: str
    peak_omega: float

    @property
    def converges(self) -> bool:
        return self.verdict == CONVERGES


def _response(sys, grid):
    if isinstance(sys, TransferFunction):
        return frequency_response(sys, grid).values
    return np.broadcast_to(np.asarray(sys, dtype=complex), np.shape(grid))


def _spectrum(phi, grid):
    if isinstance(phi, SpectrumEstimate):
        if not np.allclose(phi.omega, grid):
            return np.interp(grid, phi.omega, phi.power)
        return phi.power
    return np.broadcast_to(np.asarray(phi, dtype=np.float64), np.shape(grid))


def learning_map(Q, L, J, grid):
    """``Q (1 - L J)`` on the grid."""
    q, l, jj = _response(Q, grid), _response(L, grid), _response(J, grid)
    return q * (1.0 - l * jj)


def convergence_factor(Q, L, J, grid=None, lifted=None, tol: float = 1e-9) -> ConvergenceReport:
    """Grid estimate of ``max |Q (1 - L J)|`` and the convergence verdict.

    ``Q``, ``L`` and ``J`` are transfer functions (or constants). Pass
    ``lifted=(gains, J_lifted)`` to also report the spectral norm of the
    finite-time ``Q (I - L J)``.
    """
    grid = frequency_grid() if grid is None else np.asarray(grid)
    X = learning_map(Q, L, J, grid)
    mag = np.abs(X)
    lifted_rho = None
    if lifted is not None:
        gains, Jl = lifted
        lifted_rho = lifted_contraction(gains, Jl)
    if not np.all(np.isfinite(mag)):
        return ConvergenceReport(float("inf"), lifted_rho, MARGINAL, float(grid[np.argmax(~np.isfinite(mag))]))
    k = int(np.argmax(mag))
    rho = float(mag[k])
    if rho < 1.0 - tol:
        verdict = CONVERGES
    elif rho <= 1.0 + tol:
        verdict = MARGINAL
    else:
        verdict = DIVERGES
    return ConvergenceReport(rho, lifted_rho, verdict, float(grid[k]))


def lifted_contraction(gains, J_lifted) -> float:
    """Spectral norm of ``Q (I - L J)`` for lifted gains."""
    n = gains.N
    M = gains.Q @ (np.eye(n) - gains.L @ J_lifted.matrix)
    return float(np.linalg.norm(M, 2))


def limit_error_spectrum(Q, L, J, phi_r, phi_v, grid=None) -> SpectrumEstimate:
    """Converged error spectrum of ``f_{j+1} = Q (f_j + L e_j)`` with ``f_0 = 0``.

    ``|(1-Q)/(1-X)|^2 phi_r + (1 + |J Q L|^2 / (1 - |X|^2)) phi_v`` with
    ``X = Q (1 - L J)``; ``r`` and ``v`` are taken as uncorrelated.
    """
    grid = frequency_grid() if grid is None else np.asarray(grid)
    q, l, jj = _response(Q, grid), _response(L, grid), _response(J, grid)
    X = q * (1.0 - l * jj)
    ax = np.abs(X)
    if np.any(~np.isfinite(ax)) or np.any(ax >= 1.0):
        raise ValueError("iteration does not contract on the whole grid (max |Q(1-LJ)| = %.4g)" % np.nanmax(ax))
    pr, pv = _spectrum(phi_r, grid), _spectrum(phi_v, grid)
    r_gain = np.abs((1.0 - q) / (1.0 - X)) ** 2
    v_gain = 1.0 + np.abs(jj * q * l) ** 2 / (1.0 - ax**2)
    return SpectrumEstimate(grid, r_gain * pr + v_gain * pv, "theoretical",
                            {"r_gain": r_gain, "v_gain": v_gain})


def finite_iteration_spectrum(j: int, Q, L, J, phi_r, phi_v, grid=None) -> SpectrumEstimate:
    """Error spectrum after ``j`` trials from ``f_0 = 0`` (finite geometric sums)."""
    if j < 0:
        raise ValueError("trial index must be >= 0")
    grid = frequency_grid() if grid is None else np.asarray(grid)
    q, l, jj = _response(Q, grid), _response(L, grid), _response(J, grid)
    X = q * (1.0 - l * jj)
    one_m = 1.0 - X
    near = np.abs(one_m) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        geo = np.where(near, j, (1.0 - X**j) / np.where(near, 1.0, one_m))
        a2 = np.abs(X) ** 2
        near2 = np.abs(1.0 - a2) < 1e-12
        geo2 = np.where(near2, j, (1.0 - a2**j) / np.where(near2, 1.0, 1.0 - a2))
    pr, pv = _spectrum(phi_r, grid), _spectrum(phi_v, grid)
    r_gain = np.abs(1.0 - jj * geo * q * l) ** 2
    v_gain = 1.0 + np.abs(jj * q * l) ** 2 * geo2
    return SpectrumEstimate(grid, r_gain * pr + v_gain * pv, "theoretical",
                            {"trial": j, "r_gain": r_gain, "v_gain": v_gain})


def noise_amplification(alpha: float) -> tuple[float, float]:
    """Limit-error noise gain of inverse-model ILC with learning gain alpha.

    Returns ``(1 + alpha^2 / (2 alpha - alpha^2), 1 + alpha / 2)``; the
    second value is the small-alpha first-order approximation.
    """
    if not 0 < alpha <= 1:
        raise ValueError("learning gain must lie in (0, 1]")
    return 1.0 + alpha**2 / (2 * alpha - alpha**2), 1.0 + 0.5 * alpha


def default_segment(n: int) -> int:
    """N/4 rounded to the nearest power of two (at least 8, at most N)."""
    seg = 2 ** int(round(np.log2(max(n / 4.0, 1.0))))
    return int(min(max(seg, 8), n))


def estimate_spectrum(signals, segment: int | None = None, window: str = "hann") -> SpectrumEstimate:
    """Welch estimate averaged over segments (50% overlap) and over signals."""
    sigs = [np.asarray(s, dtype=np.float64) for s in (signals if isinstance(signals, (list, tuple)) else [signals])]
    if isinstance(signals, np.ndarray) and signals.ndim == 2:
        sigs = [row for row in signals]
    if not sigs:
        raise ValueError("need at least one signal")
    n = min(s.size for s in sigs)
    seg = default_segment(n) if segment is None else int(segment)
    if seg > n:
        raise ValueError("segment length %d exceeds signal length %d" % (seg, n))
    acc = None
    for s in sigs:
        w, p = signal.welch(s, fs=2 * np.pi, window=window, nperseg=seg, noverlap=seg // 2,
                            detrend=False, scaling="density", return_onesided=True)
        acc = p if acc is None else acc + p
    p = acc / len(sigs)
    # one-sided -> two-sided density
    p = p.copy()
    p[1:] *= 0.5
    if seg % 2 == 0:
        p[-1] *= 2.0
    meta = {"segment": seg, "overlap": seg // 2, "window": window, "signals": len(sigs),
            "segments_per_signal": 1 + (n - seg) // (seg // 2)}
    return SpectrumEstimate(w, p, "periodogram-averaged", meta)


def theoretical_phi_v(S: TransferFunction, noise_variance: float, grid) -> SpectrumEstimate:
    """``|S|^2 noise_variance / (2 pi)`` on the grid."""
    if noise_variance < 0:
        raise ValueError("noise variance must be >= 0")
    grid = np.asarray(grid, dtype=np.float64)
    g = grid.copy()
    g[g == 0] = 1e-12  # DC bin of an estimate grid
    mag2 = np.abs(frequency_response(S, g).values) ** 2
    return SpectrumEstimate(grid, mag2 * noise_variance / (2 * np.pi), "theoretical")


def trial_varying_spectrum(records, n_conv: int, n_iter: int, segment: int | None = None) -> SpectrumEstimate:
    """Spectrum of ``e_j - e_inf_hat`` over the averaging window."""
    e_inf = estimate_e_inf(records, n_conv, n_iter)
    devs = [records[j].e - e_inf for j in range(n_conv, n_conv + n_iter)]
    return estimate_spectrum(devs, segment)


def band_ratio(measured: SpectrumEstimate, theory, dt: float, f_lo: float = 5.0, f_hi: float = 400.0,
               skip_bins: int = 5) -> float:
    """Mean of ``measured / theory`` over bins in ``[f_lo, f_hi]`` Hz.

    The lowest ``skip_bins`` bins are excluded (window leakage).
    ``theory`` is a SpectrumEstimate on the same grid or an array.
    """
    th = theory.power if isinstance(theory, SpectrumEstimate) else np.asarray(theory)
    hz = measured.hz(dt)
    idx = np.arange(hz.size)
    m = (hz >= f_lo) & (hz <= f_hi) & (idx >= skip_bins) & (th > 0)
    if not np.any(m):
        raise ValueError("no bins in the requested band")
    return float(np.mean(measured.power[m] / th[m]))
