"""Point-to-point setpoints and reference-derived basis functions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MoveProfile:
    """Trapezoidal-velocity move. The defaults give constant velocity on
    [0.03 s, 0.24 s] at 1 kHz."""

    distance: float = 0.25
    max_velocity: float = 0.25 / 0.24
    max_acceleration: float = 0.25 / 0.24 / 0.03
    start_time: float = 0.0


def _phase_times(p: MoveProfile):
    d, v, a = abs(p.distance), p.max_velocity, p.max_acceleration
    if v <= 0 or a <= 0 or not np.isfinite(v) or not np.isfinite(a):
        raise ValueError("velocity and acceleration limits must be positive and finite")
    t_acc = v / a
    if a * t_acc**2 >= d:
        # triangular profile: the velocity limit is never reached
        t_acc = np.sqrt(d / a)
        return t_acc, 0.0, a * t_acc
    return t_acc, (d - a * t_acc**2) / v, v


def build_reference(profile: MoveProfile, dt: float, n: int) -> np.ndarray:
    """Sampled position of a trapezoidal-velocity move.

    Position, velocity and acceleration are evaluated in closed form at
    ``t = k dt``; acceleration is piecewise constant.
    """
    if n < 1 or dt <= 0:
        raise ValueError("need N >= 1 and a positive sample period")
    if profile.distance == 0:
        return np.zeros(n)
    t_acc, t_cv, v_peak = _phase_times(profile)
    a = v_peak / t_acc
    t_end = profile.start_time + 2 * t_acc + t_cv
    if t_end > (n - 1) * dt + 1e-12:
        raise ValueError("move of %.4g s does not fit in %d samples" % (t_end, n))
    t = np.arange(n) * dt - profile.start_time
    t1, t2, t3 = t_acc, t_acc + t_cv, 2 * t_acc + t_cv
    pos = np.zeros(n)
    s1 = 0.5 * a * t1**2
    s2 = s1 + v_peak * t_cv
    m = (t > 0) & (t <= t1)
    pos[m] = 0.5 * a * t[m] ** 2
    m = (t > t1) & (t <= t2)
    pos[m] = s1 + v_peak * (t[m] - t1)
    m = (t > t2) & (t <= t3)
    tau = t[m] - t2
    pos[m] = s2 + v_peak * tau - 0.5 * a * tau**2
    pos[t > t3] = 2 * s1 + v_peak * t_cv
    return np.sign(profile.distance) * pos


def acceleration_profile(profile: MoveProfile, dt: float, n: int) -> np.ndarray:
    """Commanded acceleration at the sample instants (right-continuous)."""
    if profile.distance == 0:
        return np.zeros(n)
    t_acc, t_cv, v_peak = _phase_times(profile)
    a = v_peak / t_acc
    t = np.arange(n) * dt - profile.start_time
    acc = np.zeros(n)
    acc[(t >= 0) & (t < t_acc)] = a
    acc[(t >= t_acc + t_cv) & (t < 2 * t_acc + t_cv)] = -a
    return np.sign(profile.distance) * acc


@dataclass(frozen=True)
class Basis:
    """Columns ``Psi[:, k]`` = scaled ``orders[k]``-th difference of r."""

    matrix: np.ndarray
    orders: tuple
    scales: np.ndarray
    degenerate: tuple

    def denormalize(self, theta: np.ndarray) -> np.ndarray:
        """Coefficients on the unscaled differences ``diff(r, k) / dt**k``."""
        return np.asarray(theta) * self.scales


def build_basis(r, orders=(1, 2, 3, 4), dt: float = 1.0) -> Basis:
    """Derivative basis of the reference for feedforward parameterization.

    Column ``k`` is the ``k``-th backward difference of ``r`` divided by
    ``dt**k`` (velocity, acceleration, jerk, snap, ...), zero-padded at
    the start, then scaled to unit inf-norm. All-zero columns are kept
    and reported in ``degenerate``.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.size
    orders = tuple(int(k) for k in orders)
    if any(k < 1 or k > 8 for k in orders):
        raise ValueError("orders must lie in 1..8")
    if any(k >= n for k in orders):
        raise ValueError("difference order must be smaller than N")
    cols, scales, degenerate = [], [], []
    for k in orders:
        d = np.zeros(n)
        d[k:] = np.diff(r, k) / dt**k
        # centre the k-th difference on the sample it approximates
        shift = k // 2
        d = np.concatenate([d[shift:], np.zeros(shift)])
        s = float(np.max(np.abs(d)))
        if s == 0.0:
            degenerate.append(k)
            scales.append(1.0)
            cols.append(d)
        else:
            scales.append(1.0 / s)
            cols.append(d / s)
    return Basis(np.column_stack(cols), orders, np.asarray(scales), tuple(degenerate))
