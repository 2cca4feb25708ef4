import numpy as np
import pytest

from neutral_control.kernels import MatrixKernel
from neutral_control.system import M2State, NeutralSystem

A_EX = np.array([[-4.0, 6.0, -4.0], [0.0, 2.0, -2.0], [-3.0, 3.0, 2.0]])
B_EX = np.array([[1.0, 1.0], [1.0, 0.0], [-1.0, 1.0]])
A_HAT = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 3.0, 2.0]])
B_HAT = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])


def quad_c(f, a, b, **kw):
    from scipy.integrate import quad

    kw.setdefault("limit", 200)
    kw.setdefault("epsabs", 1e-13)
    kw.setdefault("epsrel", 1e-13)
    re = quad(lambda t: np.real(f(t)), a, b, **kw)[0]
    im = quad(lambda t: np.imag(f(t)), a, b, **kw)[0]
    return re + 1j * im


@pytest.fixture
def example_system():
    return NeutralSystem.pure(A_EX, B_EX)


@pytest.fixture
def hatted_system():
    return NeutralSystem.pure(A_HAT, B_HAT)


@pytest.fixture
def hatted_perturbed():
    return NeutralSystem(A_HAT, B_HAT, MatrixKernel(3), MatrixKernel.constant(0.05 * np.eye(3)), 1.0)


@pytest.fixture
def scalar_pilot():
    return NeutralSystem.pure(np.array([[0.5]]), np.array([[1.0]]))


def eigen_target(M=400):
    """``(0, 2^{-theta})``, the eigenvector of the scalar pilot at ``-ln 2``."""
    theta = np.linspace(-1.0, 0.0, M + 1)
    return M2State(np.array([0.0]), (2.0 ** (-theta))[:, None])


def common_root_system(lam0=1.0, mu=(0.5, 0.25)):
    mu = np.asarray(mu)
    a = lam0**2 * (1 - np.exp(-lam0) * mu) / (1 - np.exp(-lam0))
    return NeutralSystem(np.diag(mu), np.array([[1.0], [1.0]]), MatrixKernel(2), MatrixKernel.constant(np.diag(a)), 1.0)
