import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bezier_mpc.bezier import BezierCurve, evaluate
from bezier_mpc.mpc_task import nearest_psi
from bezier_mpc.rotation import (aligned_difference, axis_angle, conjugate, multiply,
                                 psi_curve_to_quaternion_trajectory, psi_curve_to_quaternions,
                                 psi_to_quaternion, quaternion_distance, quaternion_to_psi,
                                 quaternion_to_rotation, rotate)

angles = st.floats(-10, 10, allow_nan=False)
psi_triples = arrays(float, 3, elements=angles)


@st.composite
def unit_quaternions(draw):
    v = draw(arrays(float, 4, elements=st.floats(-1, 1)))
    n = np.linalg.norm(v)
    if n < 1e-3:
        v, n = np.array([1.0, 0, 0, 0]), 1.0
    return v / n


def test_zero_angle_is_identity():
    for beta, gamma in [(0.0, 0.0), (1.3, -2.0), (7.0, 0.4)]:
        np.testing.assert_allclose(psi_to_quaternion(np.array([0.0, beta, gamma])), [1, 0, 0, 0])


def test_half_turn_about_x():
    q = psi_to_quaternion(np.array([np.pi, 0.0, np.pi / 2]))
    np.testing.assert_allclose(q, [0, 1, 0, 0], atol=1e-15)


def test_reference_value_and_axis_angle_oracle():
    a, b, g = np.pi / 2, np.pi / 4, np.pi / 3
    q = psi_to_quaternion(np.array([a, b, g]))
    np.testing.assert_allclose(q, [0.70711, 0.43301, 0.43301, 0.35355], atol=1e-5)
    u = np.array([np.cos(b) * np.sin(g), np.sin(b) * np.sin(g), np.cos(g)])
    np.testing.assert_allclose(q, axis_angle(u, a), atol=1e-15)


@given(psi_triples)
def test_unit_norm_by_construction(psi):
    assert np.linalg.norm(psi_to_quaternion(psi)) == pytest.approx(1.0, abs=1e-14)


@given(unit_quaternions())
def test_inverse_map_round_trip(q):
    psi = quaternion_to_psi(q)
    assert quaternion_distance(psi_to_quaternion(psi), q) < 1e-9


def test_inverse_map_gauge_choice():
    np.testing.assert_array_equal(quaternion_to_psi([1.0, 0, 0, 0]), [0.0, 0.0, 0.0])


@given(unit_quaternions(), psi_triples)
def test_nearest_psi_same_rotation_and_closest(q, ref):
    psi = nearest_psi(q, ref)
    assert quaternion_distance(psi_to_quaternion(psi), q) < 1e-9
    principal = quaternion_to_psi(q)
    assert np.linalg.norm(psi - ref) <= np.linalg.norm(principal - ref) + 1e-9


def test_rotation_examples():
    np.testing.assert_allclose(quaternion_to_rotation([1.0, 0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(quaternion_to_rotation([0.0, 1, 0, 0]), np.diag([1.0, -1, -1]),
                               atol=1e-15)
    with pytest.raises(ValueError):
        quaternion_to_rotation([0.0, 0, 0, 0])


@given(unit_quaternions())
def test_rotation_is_proper(q):
    R = quaternion_to_rotation(q)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


@given(unit_quaternions(), arrays(float, 3, elements=st.floats(-5, 5)))
def test_rotation_matches_sandwich_product(q, v):
    sandwich = multiply(multiply(q, np.concatenate([[0.0], v])), conjugate(q))[1:]
    np.testing.assert_allclose(quaternion_to_rotation(q) @ v, sandwich, atol=1e-10)
    np.testing.assert_allclose(rotate(q, v), sandwich, atol=1e-10)


def test_distance_examples():
    q = axis_angle([1.0, 2.0, 3.0], 0.7)
    assert quaternion_distance(q, q) == 0.0
    assert quaternion_distance(q, -q) == 0.0
    assert quaternion_distance([1.0, 0, 0, 0], [0.0, 1, 0, 0]) == pytest.approx(np.sqrt(2))


@given(unit_quaternions(), unit_quaternions())
def test_distance_sign_invariance(a, b):
    d = quaternion_distance(a, b)
    assert d >= 0
    for sa in (1, -1):
        for sb in (1, -1):
            assert quaternion_distance(sa * a, sb * b) == pytest.approx(d, abs=1e-12)
    assert np.linalg.norm(aligned_difference(a, b)) == pytest.approx(d, abs=1e-12)


def test_trajectory_examples(rng):
    const = BezierCurve(np.repeat(rng.normal(size=(6, 1)), 5, axis=1))
    traj = psi_curve_to_quaternion_trajectory(const, 9)
    assert len(traj) == 10
    for r, l in traj:
        np.testing.assert_allclose(r, traj[0][0], atol=1e-15)
        np.testing.assert_allclose(l, traj[0][1], atol=1e-15)

    E = rng.normal(size=(6, 4))
    E[[0, 3], :] = 0.0
    for r, l in psi_curve_to_quaternion_trajectory(BezierCurve(E), 7):
        np.testing.assert_allclose(r, [1, 0, 0, 0])
        np.testing.assert_allclose(l, [1, 0, 0, 0])

    curve = BezierCurve(rng.normal(scale=3.0, size=(6, 8)))
    traj = psi_curve_to_quaternion_trajectory(curve, 100)
    norms = np.linalg.norm(np.array(traj), axis=-1)
    assert np.max(np.abs(norms - 1.0)) <= 1e-12

    with pytest.raises(ValueError):
        psi_curve_to_quaternion_trajectory(BezierCurve(np.zeros((3, 3))), 4)


@given(arrays(float, (6, 6), elements=st.floats(-6, 6)))
def test_unit_norm_on_whole_curve(E):
    t = np.random.default_rng(0).uniform(0, 1, 1000)
    quats = psi_curve_to_quaternions(evaluate(E, t).T)
    assert np.max(np.abs(np.linalg.norm(quats, axis=-1) - 1.0)) <= 1e-12


def test_terminal_rest_gives_zero_quaternion_rate(rng):
    E = rng.normal(size=(6, 7))
    E[:, -1] = E[:, -2]
    h = 1e-5
    q = [psi_curve_to_quaternions(evaluate(E, 1.0 - k * h)) for k in range(3)]
    # second-order one-sided difference at the right end
    rate = (3 * q[0] - 4 * q[1] + q[2]) / (2 * h)
    assert np.max(np.abs(rate)) <= 1e-6
