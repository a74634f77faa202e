import numpy as np
import pytest

from sparse_ilc.lti import TransferFunction, frequency_response, lift
from sparse_ilc.plant import SurrogateParams, build_surrogate, close_loop
from sparse_ilc.trajectory import MoveProfile, acceleration_profile, build_basis, build_reference


def test_surrogate_loop(surrogate):
    assert surrogate.closed_loop_stable
    assert surrogate.dt == pytest.approx(1e-3)
    assert surrogate.delay == 1
    assert surrogate.J.lead == 0
    assert surrogate.J.stable
    J = lift(surrogate.J, 16)
    assert J.lower_triangular and J.matrix[0, 0] != 0.0
    # the sensitivity is monic (S(inf) = 1)
    assert surrogate.S.monic


def test_surrogate_has_resonance():
    s = build_surrogate(SurrogateParams(resonance_hz=150.0))
    w = 2 * np.pi * np.linspace(100, 200, 400) * 1e-3
    mag = np.abs(frequency_response(s.G, w).values)
    # anti-resonance then resonance of the two-mass system
    assert mag.max() / mag.min() > 10


def test_close_loop_rejects_zero_plant():
    with pytest.raises(ValueError):
        close_loop(TransferFunction([0.0], [1.0]), TransferFunction.gain(1.0))


def test_reference_error_is_shifted_sensitivity_output(surrogate):
    r = build_reference(MoveProfile(), 1e-3, 400)
    e = surrogate.reference_error(r)
    assert e.shape == r.shape
    assert np.max(np.abs(e)) > 0


def test_reference_profile():
    p = MoveProfile()
    r = build_reference(p, 1e-3, 400)
    assert r[0] == 0.0
    assert r[-1] == pytest.approx(p.distance)
    assert np.all(np.diff(r) >= -1e-15)
    v = np.diff(r) / 1e-3
    assert v.max() <= p.max_velocity * (1 + 1e-9)
    a = acceleration_profile(p, 1e-3, 400)
    assert np.max(np.abs(a)) == pytest.approx(p.max_acceleration)


def test_triangular_profile_and_errors():
    p = MoveProfile(distance=0.01, max_velocity=10.0, max_acceleration=1.0)
    r = build_reference(p, 1e-3, 400)
    assert r[-1] == pytest.approx(0.01)
    with pytest.raises(ValueError):
        build_reference(MoveProfile(), 1e-3, 100)
    with pytest.raises(ValueError):
        build_reference(MoveProfile(max_velocity=0.0), 1e-3, 400)
    assert not np.any(build_reference(MoveProfile(distance=0.0), 1e-3, 10))


def test_basis_columns():
    r = build_reference(MoveProfile(), 1e-3, 400)
    B = build_basis(r, (1, 2, 3), 1e-3)
    assert B.matrix.shape == (400, 3)
    np.testing.assert_allclose(np.max(np.abs(B.matrix), axis=0), 1.0)
    vel = np.diff(r) / 1e-3
    np.testing.assert_allclose(B.matrix[1:, 0] / B.scales[0], vel)
    with pytest.raises(ValueError):
        build_basis(r, (0,))
    flat = build_basis(np.ones(20), (1,))
    assert flat.degenerate == (1,)
