import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neutral_control.kernels import KernelError, MatrixKernel, exp_moments, exp_poly_integral

from conftest import quad_c


@pytest.mark.parametrize("z", [0.0, 0.03 - 0.05j, 0.7 + 2.0j, -5 + 9j, 12j, 25 - 3j, -60.0, 40 + 80j])
def test_exp_moments_against_quadrature(z):
    E = exp_moments(z, 8)
    for j in range(9):
        ref = quad_c(lambda u: u**j * np.exp(z * u), 0.0, 1.0)
        assert abs(E[j] - ref) <= 1e-11 * max(1.0, abs(ref))


@settings(max_examples=60, deadline=None)
@given(st.floats(-30, 30), st.floats(-60, 60), st.integers(0, 8))
def test_exp_moments_regimes_agree_with_quadrature(re, im, j):
    z = complex(re, im)
    ref = quad_c(lambda u: u**j * np.exp(z * u), 0.0, 1.0)
    assert abs(exp_moments(z, j)[j] - ref) <= 1e-10 * max(1.0, abs(ref))


def test_exp_moments_vectorized_shape():
    z = np.array([[0.01, 1.0], [20.0, -3j]])
    assert exp_moments(z, 3).shape == (4, 2, 2)


def test_exp_poly_integral_matches_quadrature():
    coeffs = np.array([[[1.0]], [[-2.0]], [[0.5]]])
    lam = 1.3 - 4.0j
    got = exp_poly_integral(coeffs, -0.7, -0.2, lam)[0, 0, 0]
    ref = quad_c(lambda s: np.exp(lam * s) * (1 - 2 * s + 0.5 * s * s), -0.7, -0.2)
    assert abs(got - ref) < 1e-12


def _piecewise():
    c1 = np.array([[[1.0, 0.2], [0.0, -1.0]], [[0.5, 0.0], [0.3, 0.1]]])
    c2 = np.array([[[0.0, 1.0], [2.0, 0.0]]])
    return MatrixKernel(2, [(-1.0, -0.4, c1), (-0.4, 0.0, c2)])


def test_laplace_of_piecewise_kernel():
    K = _piecewise()
    lam = -0.8 + 3.0j
    got = K.laplace(lam)
    for a in range(2):
        for b in range(2):
            ref = quad_c(lambda s: np.exp(lam * s) * K(s)[a, b], -1.0, 0.0, points=[-0.4])
            assert abs(got[a, b] - ref) < 1e-12


def test_partial_laplace_matches_quadrature():
    K = _piecewise()
    lam = 0.4 + 1.0j
    lowers = np.array([-1.0, -0.7, -0.4, -0.1, 0.0])
    got = K.partial_laplace(lam, lowers)
    for i, lo in enumerate(lowers):
        ref = quad_c(lambda s: np.exp(lam * s) * K(s)[1, 0], lo, 0.0, points=[-0.4] if lo < -0.4 else None) if lo < 0 else 0
        assert abs(got[i, 1, 0] - ref) < 1e-12


def test_breakpoint_value_is_average():
    K = _piecewise()
    left = K.pieces[0].coeffs[0] + (-0.4) * K.pieces[0].coeffs[1]
    right = K.pieces[1].coeffs[0]
    assert np.allclose(K(-0.4), 0.5 * (left + right))


def test_partition_errors():
    c = np.zeros((1, 1, 1))
    with pytest.raises(KernelError, match="gap"):
        MatrixKernel(1, [(-1.0, -0.5, c), (-0.4, 0.0, c)])
    with pytest.raises(KernelError, match="overlap"):
        MatrixKernel(1, [(-1.0, -0.3, c), (-0.5, 0.0, c)])
    with pytest.raises(KernelError, match="gap"):
        MatrixKernel(1, [(-0.9, 0.0, c)])
    with pytest.raises(KernelError):
        MatrixKernel(2, [(-1.0, 0.0, c)])


def test_zero_and_constant_kernels():
    Z = MatrixKernel(2)
    assert Z.is_zero and Z.laplace(1.0).shape == (2, 2) and not np.any(Z.laplace(1.0))
    C = MatrixKernel.constant(np.eye(2))
    assert np.allclose(C.integral(), np.eye(2))
    assert np.allclose(C.laplace(0.0), np.eye(2))


def test_adjoint_and_times_poly():
    K = _piecewise()
    theta = np.array([-0.9, -0.2])
    assert np.allclose(K.adjoint()(theta), np.conj(np.swapaxes(K(theta), -1, -2)))
    assert np.allclose(K.times_poly([1.0, 1.0])(theta), (1 + theta)[:, None, None] * K(theta))
