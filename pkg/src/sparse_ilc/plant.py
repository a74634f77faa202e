"""Surrogate motion system used in place of an identified stage model.

A collocated two-mass system (rigid-body mode plus one resonance) under a
lead/low-pass feedback controller. Nothing here is an identified value;
every parameter is configurable.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from .lti import TransferFunction, feedback_connect, simulate


@dataclass(frozen=True)
class SurrogateParams:
    sample_rate: float = 1000.0
    mass_motor: float = 5.0  # kg
    mass_load: float = 1.0  # kg
    resonance_hz: float = 150.0
    resonance_damping: float = 0.02
    viscous_damping: float = 5.0  # N s/m, motor side to ground
    bandwidth_hz: float = 30.0
    lowpass_factor: float = 6.0  # controller low-pass at factor * bandwidth

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Surrogate:
    """Discrete plant G, controller C, and the closed-loop maps.

    ``J`` is the process sensitivity with its pure input delay (``delay``
    samples) removed, so the lifted J has a nonzero diagonal.
    """

    params: SurrogateParams | None
    G: TransferFunction
    C: TransferFunction
    S: TransferFunction
    SG: TransferFunction
    J: TransferFunction
    closed_loop_stable: bool
    delay: int = 1

    @property
    def dt(self):
        return self.G.dt

    @property
    def H(self) -> TransferFunction:
        return self.S

    def reference_error(self, position: np.ndarray) -> np.ndarray:
        """Trial-invariant error ``S r_bar`` aligned with ``J`` (advanced by ``delay``).

        ``position`` has N samples; it is held at its last value for the
        extra samples.
        """
        position = np.asarray(position, dtype=np.float64)
        d = self.delay
        ext = np.concatenate([position, np.repeat(position[-1:], d)])
        return simulate(self.S, ext)[d:]


def _continuous_plant(p: SurrogateParams):
    m1, m2 = p.mass_motor, p.mass_load
    mu = m1 * m2 / (m1 + m2)
    k = (2 * np.pi * p.resonance_hz) ** 2 * mu
    c = 2 * p.resonance_damping * np.sqrt(k * mu)
    d = p.viscous_damping
    # force on m1, position of m1
    num = [m2, c, k]
    den = np.polyadd(np.polymul([m1, d, 0.0], [m2, c, k]), np.polymul([c, k], [m2, 0.0, 0.0]))
    return num, den


def _continuous_controller(p: SurrogateParams):
    wc = 2 * np.pi * p.bandwidth_hz
    mass = p.mass_motor + p.mass_load
    kp = mass * wc**2 / 3.0
    num = [kp * 3.0 / wc, kp]
    den = np.polymul([1.0 / (3.0 * wc), 1.0], [1.0 / (p.lowpass_factor * wc), 1.0])
    return num, den


def _desc_to_delay_poly(b_desc, a_desc):
    """Descending powers of z (equal length) -> ascending powers of z^-1."""
    b = np.atleast_1d(np.squeeze(np.asarray(b_desc, dtype=float)))
    a = np.atleast_1d(np.squeeze(np.asarray(a_desc, dtype=float)))
    n = max(len(a), len(b))
    b = np.concatenate([np.zeros(n - len(b)), b])
    a = np.concatenate([np.zeros(n - len(a)), a])
    return b, a


def build_surrogate(params: SurrogateParams | None = None) -> Surrogate:
    p = params or SurrogateParams()
    dt = 1.0 / p.sample_rate
    gn, gd = _continuous_plant(p)
    bg, ag, _ = signal.cont2discrete((gn, gd), dt, method="zoh")
    G = TransferFunction(*_desc_to_delay_poly(bg, ag), dt)
    cn, cd = _continuous_controller(p)
    bc, ac, _ = signal.cont2discrete((cn, cd), dt, method="bilinear")
    C = TransferFunction(*_desc_to_delay_poly(bc, ac), dt)
    return close_loop(G, C, p)


def close_loop(G: TransferFunction, C: TransferFunction, params: SurrogateParams | None = None) -> Surrogate:
    """Close the loop around G with C and strip the input delay from ``S G``."""
    loop = feedback_connect(G, C)
    if loop.SG.is_zero:
        raise ValueError("process sensitivity is identically zero")
    delay = -loop.SG.lead
    if delay < 0:
        raise ValueError("plant must be causal")
    J = TransferFunction(loop.SG.num, loop.SG.den, G.dt, 0)
    return Surrogate(params, G, C, loop.S, loop.SG, J, loop.closed_loop_stable, delay)
