import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bezier_mpc.robot import (N_DOF, LimitOrderError, LoopDetectedError, ModelParseError,
                              default_model, forward_kinematics, load_model, midpoint,
                              select_group)
from bezier_mpc.simulator import transform_fk

from conftest import central_difference

TOY = """
name: toy
joints:
  - {name: j0, type: revolute, parent: world, axis: [0, 0, 1], offset: [0.1, 0, 0.2],
     position: [-1, 1], velocity: [-1, 1]}
end_effectors:
  right: {parent: j0, offset: [0.5, 0, 0]}
  left: {parent: j0, offset: [0, 0.3, 0]}
"""


def random_q(model, rng):
    lo = np.maximum(model.q_min, -3.0)
    hi = np.minimum(model.q_max, 3.0)
    return rng.uniform(lo, hi)


def test_default_model_layout(model):
    assert model.n_dof == N_DOF == 18
    assert set(model.end_effectors) == {"right", "left"}
    assert np.all(model.q_min < model.q_max)
    assert np.all(model.qd_min < 0) and np.all(model.qd_max > 0)


def test_limit_order_error():
    bad = TOY.replace("position: [-1, 1]", "position: [1, 1]")
    with pytest.raises(LimitOrderError):
        load_model(bad)


def test_loop_detected():
    doc = """
joints:
  - {name: a, type: revolute, parent: b, axis: [0, 0, 1], position: [-1, 1], velocity: [-1, 1]}
  - {name: b, type: revolute, parent: a, axis: [0, 0, 1], position: [-1, 1], velocity: [-1, 1]}
"""
    with pytest.raises(LoopDetectedError):
        load_model(doc)


def test_parse_errors():
    with pytest.raises(ModelParseError):
        load_model("joints: [{name: a, type: helical}]")
    with pytest.raises(ModelParseError):
        load_model("just: text")


def test_toy_model_sums_offsets():
    toy = load_model(TOY)
    r, l = forward_kinematics(toy, np.zeros(1))
    np.testing.assert_allclose(r.position, [0.6, 0.0, 0.2])
    np.testing.assert_allclose(l.position, [0.1, 0.3, 0.2])
    r, _ = forward_kinematics(toy, np.array([np.pi / 2]))
    np.testing.assert_allclose(r.position, [0.1, 0.5, 0.2], atol=1e-15)


def test_dimension_mismatch(model):
    with pytest.raises(ValueError):
        forward_kinematics(model, np.zeros(17))


def test_default_pose_values(model):
    r, l = forward_kinematics(model, np.zeros(18))
    np.testing.assert_allclose(r.position, [0.4, -0.22, 0.52], atol=1e-12)
    np.testing.assert_allclose(l.position, [0.4, 0.22, 0.52], atol=1e-12)
    np.testing.assert_allclose(r.rotation[:, 2], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(l.rotation[:, 2], [0, -1, 0], atol=1e-12)


def test_matches_homogeneous_transform_oracle(model, rng):
    for _ in range(20):
        q = random_q(model, rng)
        r, l = forward_kinematics(model, q)
        oracle = transform_fk(model, q)
        np.testing.assert_allclose(r.position, oracle["right"][0], atol=1e-10)
        np.testing.assert_allclose(l.position, oracle["left"][0], atol=1e-10)
        np.testing.assert_allclose(r.rotation, oracle["right"][1], atol=1e-10)
        np.testing.assert_allclose(l.rotation, oracle["left"][1], atol=1e-10)


@given(arrays(float, 18, elements=st.floats(-1, 1)), st.floats(-5, 5), st.floats(-5, 5))
def test_base_translation_equivariance(q, dx, dy):
    m = default_model()
    r0, l0 = forward_kinematics(m, q)
    q2 = q.copy()
    q2[:2] += [dx, dy]
    r1, l1 = forward_kinematics(m, q2)
    np.testing.assert_allclose(r1.position - r0.position, [dx, dy, 0], atol=1e-9)
    np.testing.assert_allclose(l1.position - l0.position, [dx, dy, 0], atol=1e-9)


@given(arrays(float, 18, elements=st.floats(-1, 1)), st.floats(-3, 3))
def test_base_yaw_equivariance(q, delta):
    m = default_model()
    r0, _ = forward_kinematics(m, q)
    q2 = q.copy()
    q2[2] += delta
    r1, _ = forward_kinematics(m, q2)
    c, s = np.cos(delta), np.sin(delta)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    base = np.array([q[0], q[1], 0.0])
    np.testing.assert_allclose(r1.position - base, Rz @ (r0.position - base), atol=1e-9)


def test_orientation_consistent_with_rotation(model, rng):
    from bezier_mpc.rotation import quaternion_to_rotation
    r, _ = forward_kinematics(model, random_q(model, rng))
    assert np.linalg.norm(quaternion_to_rotation(r.orientation) - r.rotation) <= 1e-9


def test_analytic_jacobian_matches_finite_differences(model, rng):
    q = random_q(model, rng)
    jac = model.frames_jacobian(q)
    for side in ("right", "left"):
        p, quat, Jp, Jq = jac[side]
        fd_p = central_difference(lambda z: model.frames(z)[side][0], q)
        fd_q = central_difference(lambda z: model.frames(z)[side][1], q)
        np.testing.assert_allclose(Jp, fd_p, atol=1e-7)
        np.testing.assert_allclose(Jq, fd_q, atol=1e-7)


def test_finite_difference_second_order_convergence(model, rng):
    q = random_q(model, rng)
    exact = model.frames_jacobian(q)["right"][2]
    errs = [np.abs(central_difference(lambda z: model.frames(z)["right"][0], q, h) - exact).max()
            for h in (1e-2, 5e-3)]
    assert errs[1] < errs[0] / 3.0


def test_midpoint_examples(rng):
    v = rng.normal(size=3)
    np.testing.assert_array_equal(midpoint(v, v), v)
    np.testing.assert_allclose(midpoint(np.array([1.0, 0, 0]), np.array([0.0, 1, 0])), [0.5, 0.5, 0])
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(midpoint(a, b), (a + b) / 2)


def test_select_group(rng):
    Q = rng.normal(size=(18, 6))
    assert select_group(Q, "upper").shape == (15, 6)
    q = rng.normal(size=18)
    np.testing.assert_array_equal(select_group(q, "base"), q[:3])
    np.testing.assert_array_equal(select_group(q, "base_xy"), q[:2])
    np.testing.assert_array_equal(np.concatenate([select_group(q, "base"), select_group(q, "upper")]), q)
    with pytest.raises(ValueError):
        select_group(q, "legs")
