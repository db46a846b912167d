import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bezier_mpc import ad
from bezier_mpc.bezier import bernstein_basis, evaluate
from bezier_mpc.rotation import psi_to_quaternion, quaternion_to_rotation

from conftest import central_difference

vecs = arrays(float, 4, elements=st.floats(-2, 2))


def test_gradient_of_squared_norm():
    _, J = ad.jacobian(lambda x: (x * x).sum(), np.array([1.0, 2.0]))
    np.testing.assert_allclose(J, [2.0, 4.0])


def test_bezier_jacobian_is_bernstein_basis(rng):
    E = rng.normal(size=(1, 6))
    _, J = ad.jacobian(lambda e: evaluate(e.reshape(1, 6), 0.3), E.ravel())
    np.testing.assert_allclose(J[0], bernstein_basis(5, 0.3), atol=1e-15)


@given(vecs)
def test_elementwise_ops_match_finite_differences(x):
    def fn(z):
        a = ad.sin(z) * ad.cos(z[::-1]) + z / (2.0 + z * z)
        return ad.concatenate([a, ad.sqrt(1.0 + z * z), (z**3 - 1.0) * 0.5], axis=0)

    val, J = ad.jacobian(fn, x)
    np.testing.assert_allclose(val, fn(x), atol=1e-14)
    np.testing.assert_allclose(J, central_difference(fn, x), rtol=1e-5, atol=1e-7)


@given(arrays(float, 3, elements=st.floats(-4, 4)))
def test_rotation_chain_matches_finite_differences(psi):
    def fn(p):
        return quaternion_to_rotation(psi_to_quaternion(p))

    _, J = ad.jacobian(fn, psi)
    np.testing.assert_allclose(J.reshape(9, 3), central_difference(fn, psi), atol=1e-7)


def test_matmul_and_stack(rng):
    A = rng.normal(size=(3, 4))
    x = rng.normal(size=4)

    def fn(z):
        return ad.stack([ad.matmul(A, z), ad.matmul(A, z) * 2.0], axis=0)

    _, J = ad.jacobian(fn, x)
    np.testing.assert_allclose(J.reshape(6, 4), np.vstack([A, 2 * A]), atol=1e-14)
