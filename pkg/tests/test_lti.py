import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from sparse_ilc.lti import (
    LiftedOperator,
    TransferFunction,
    feedback_connect,
    frequency_grid,
    frequency_response,
    impulse_response,
    lift,
    linf_norm,
    refine_grid,
    simulate,
)


def stable_tf(rng, order=3, dt=1.0):
    poles = rng.uniform(-0.9, 0.9, order)
    den = np.poly(poles)
    num = rng.normal(size=order + 1)
    return TransferFunction(num, den, dt)


def test_simulate_matches_lfilter(rng):
    for _ in range(10):
        sys = stable_tf(rng)
        x = rng.normal(size=200)
        np.testing.assert_allclose(simulate(sys, x), signal.lfilter(sys.num, sys.den, x), atol=1e-12)


def test_delay_shifts_signal(rng):
    x = rng.normal(size=50)
    y = simulate(TransferFunction.delay(3), x)
    np.testing.assert_array_equal(y[:3], 0.0)
    np.testing.assert_allclose(y[3:], x[:-3])


def test_canonical_form_moves_leading_zeros_into_lead():
    tf = TransferFunction([0.0, 0.0, 2.0, 1.0], [2.0, 0.5])
    assert tf.lead == -2
    np.testing.assert_allclose(tf.num, [1.0, 0.5])
    np.testing.assert_allclose(tf.den, [1.0, 0.25])


def test_lift_is_toeplitz_of_impulse_response(rng):
    sys = stable_tf(rng)
    n = 40
    M = lift(sys, n)
    h = impulse_response(sys, n)
    assert M.lower_triangular
    for i in range(n):
        for k in range(i + 1):
            assert M.matrix[i, k] == pytest.approx(h[i - k], abs=1e-14)
    x = rng.normal(size=n)
    np.testing.assert_allclose(M @ x, simulate(sys, x), atol=1e-12)


def test_lift_rejects_noncausal_unless_allowed():
    pre = TransferFunction([1.0], [1.0], lead=1)
    with pytest.raises(ValueError):
        lift(pre, 8)
    M = lift(pre, 8, allow_noncausal=True).matrix
    # one-sample preview: superdiagonal of ones
    np.testing.assert_allclose(M, np.eye(8, k=1))


def test_frequency_response_matches_freqz(rng):
    sys = stable_tf(rng)
    w = frequency_grid(256)
    _, h = signal.freqz(sys.num, sys.den, worN=w)
    np.testing.assert_allclose(frequency_response(sys, w).values, h, rtol=1e-10)


def test_frequency_response_grid_checked():
    with pytest.raises(ValueError):
        frequency_response(TransferFunction.gain(1.0), [0.0, 1.0])


def test_singular_frequency_reported():
    integrator = TransferFunction([1.0], [1.0, -1.0])
    fr = frequency_response(integrator, [1e-9, np.pi])
    assert not fr.singular[1]
    assert linf_norm(TransferFunction([1.0], [1.0, 1.0]), np.array([np.pi])) == float("inf")


def test_refine_grid_keeps_endpoints():
    g = frequency_grid(10)
    r = refine_grid(g, 3)
    assert r.size == 28
    assert r[0] == g[0] and r[-1] == g[-1]
    assert np.all(np.diff(r) > 0)


def test_feedback_identities(rng):
    G = TransferFunction([0.0, 0.2, 0.1], [1.0, -1.2, 0.4])
    C = TransferFunction([1.5, -0.9], [1.0, -0.3])
    loop = feedback_connect(G, C)
    w = frequency_grid(128)
    g = frequency_response(G, w).values
    c = frequency_response(C, w).values
    s = frequency_response(loop.S, w).values
    sg = frequency_response(loop.SG, w).values
    np.testing.assert_allclose(s, 1.0 / (1.0 + g * c), rtol=1e-9)
    np.testing.assert_allclose(sg, g / (1.0 + g * c), rtol=1e-9)


def test_algebra_and_inverse(rng):
    a = stable_tf(rng)
    b = stable_tf(rng)
    w = frequency_grid(64)
    fa, fb = frequency_response(a, w).values, frequency_response(b, w).values
    np.testing.assert_allclose(frequency_response(a * b, w).values, fa * fb, rtol=1e-9)
    np.testing.assert_allclose(frequency_response(a + b, w).values, fa + fb, rtol=1e-9)
    np.testing.assert_allclose(frequency_response(a - b, w).values, fa - fb, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(frequency_response(a.inverse(), w).values, 1 / fa, rtol=1e-9)


def test_monic_and_bistable():
    H = TransferFunction([1.0, -0.5], [1.0, -0.2])
    assert H.monic and H.bistable
    assert not TransferFunction([1.0, -2.0], [1.0, -0.2]).bistable
    assert not TransferFunction([2.0], [1.0]).monic


def test_lifted_operator_validation():
    with pytest.raises(ValueError):
        LiftedOperator(np.ones((2, 3)))
    op = LiftedOperator(np.eye(3))
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 2.0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-0.95, 0.95))
def test_simulate_is_linear(xs, pole):
    sys = TransferFunction([1.0, 0.3], [1.0, -pole])
    x = np.array(xs)
    np.testing.assert_allclose(simulate(sys, 2.0 * x), 2.0 * simulate(sys, x), atol=1e-9)
    np.testing.assert_allclose(simulate(sys, x + 1.0), simulate(sys, x) + simulate(sys, np.ones_like(x)),
                               atol=1e-9)


def test_simulate_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate(TransferFunction.gain(1.0), [1.0, np.nan])
    with pytest.raises(ValueError):
        simulate(TransferFunction.gain(1.0), np.ones((2, 2)))
