import numpy as np
import pytest
from scipy.integrate import solve_ivp

from neutral_control.canonical import apply_transform, frobenius_transform
from neutral_control.kernels import MatrixKernel
from neutral_control.simulator import SampledControl, SimulationError, simulate, steering_error, terminal_state
from neutral_control.system import M2State, NeutralSystem, validate_domain_membership

from conftest import A_EX, B_EX


def _const(u0, r=1):
    return lambda t: np.full((np.atleast_1d(t).size, r), u0)


def test_zero_control_zero_trajectory(hatted_perturbed):
    tr = simulate(hatted_perturbed, None, 2.0, 50)
    assert not np.any(tr.z) and not np.any(tr.dz_plus)


def test_constant_control_exact():
    a, b, u0 = 0.5, 1.0, 0.7
    s = NeutralSystem.pure(np.array([[a]]), np.array([[b]]))
    tr = simulate(s, _const(u0), 2.0, 100)
    t = tr.times
    exact = np.where(t <= 1, b * u0 * t, b * u0 + (a + 1) * b * u0 * (t - 1))
    assert np.max(np.abs(tr.z[:, 0] - exact)) < 1e-12
    x = terminal_state(tr, s)
    assert abs(x.y[0] - (exact[-1] - a * exact[-101])) < 1e-12


def test_history_mode_against_reference_integrator():
    # z'(t) = c int_{-1}^0 z(t + theta) d theta with smooth history; reference from an ODE for
    # (z, W), W(t) = int_{t-1}^t z, solved with tight tolerances interval by interval
    c = 0.8
    s = NeutralSystem(np.zeros((1, 1)), np.array([[1.0]]), MatrixKernel(1), MatrixKernel.constant(np.array([[c]])), 1.0)
    hist_z = lambda th: np.cos(2 * th)[:, None]
    hist_dz = lambda th: (-2 * np.sin(2 * th))[:, None]
    W0 = np.sin(0) / 2 - np.sin(-2) / 2

    prev = lambda t: np.cos(2 * t)
    y0 = [1.0, W0]
    segments = []
    for k in range(2):
        sol = solve_ivp(
            lambda t, y, f=prev: [c * y[1], y[0] - f(t - 1)], (k, k + 1), y0, rtol=1e-12, atol=1e-13, dense_output=True
        )
        segments.append(sol)
        prev = lambda t, sol=sol: sol.sol(t)[0]
        y0 = sol.y[:, -1]
    ref = segments[-1].y[0, -1]
    errs = []
    for M in (50, 100, 200):
        tr = simulate(s, None, 2.0, M, history=(hist_z, hist_dz))
        errs.append(abs(tr.z[-1, 0] - ref))
    assert errs[-1] < 1e-4
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def _smooth_system():
    A2 = MatrixKernel(1, [(-1.0, -0.3, np.array([[[0.2]], [[0.5]]])), (-0.3, 0.0, np.array([[[-0.1]]]))])
    return NeutralSystem(np.array([[0.5]]), np.array([[1.0]]), A2, MatrixKernel.constant(np.array([[0.3]])), 1.0)


def test_self_convergence_order_two():
    s = _smooth_system()
    f = lambda t: np.cos(3 * t)[:, None]
    z = [simulate(s, f, 2.0, M).z[-1, 0] for M in (50, 100, 200, 400)]
    for i in range(2):
        assert 3.0 <= (z[i] - z[i + 1]) / (z[i + 1] - z[i + 2]) <= 5.0


def test_linearity_and_causality():
    s = _smooth_system()
    f1 = lambda t: np.sin(t)[:, None]
    f2 = lambda t: (1 + t**2)[:, None]
    a, b = 2.0, -0.5
    z1 = simulate(s, f1, 1.5, 40).z
    z2 = simulate(s, f2, 1.5, 40).z
    z12 = simulate(s, lambda t: a * f1(t) + b * f2(t), 1.5, 40).z
    assert np.allclose(z12, a * z1 + b * z2, atol=1e-12)
    cut = lambda t: np.where(t <= 0.75, np.sin(t), 5.0)[:, None]
    zc = simulate(s, cut, 1.5, 40).z
    assert np.allclose(zc[:31], z1[:31], atol=1e-14)


def test_feedback_equivalence():
    K = MatrixKernel.constant(0.1 * np.ones((3, 3)))
    s = NeutralSystem(A_EX, B_EX, K, K.scaled(0.5), 1.0)
    T = frobenius_transform(A_EX, B_EX, [2.0, 3.0, -1.0])
    hat, law = apply_transform(s, T)
    v = lambda t: np.column_stack([np.cos(t), np.sin(2 * t)])
    orig = simulate(s, v, 2.0, 100, P=law.P, R=law.R)
    hatted = simulate(hat, v, 2.0, 100)
    assert np.allclose(orig.z, hatted.z @ np.asarray(law.C).T, atol=1e-9)


def test_terminal_state_domain_and_errors(scalar_pilot):
    tr = simulate(scalar_pilot, lambda t: np.exp(t)[:, None], 1.7, 100)
    x = terminal_state(tr, scalar_pilot)
    assert validate_domain_membership(scalar_pilot, x).residual < 1e-10
    zero = M2State.zero(1, 100)
    assert steering_error(x, x) == 0.0
    unit = M2State(np.array([1.0]), np.zeros((101, 1)))
    assert steering_error(unit, zero) == 1.0


def test_short_run_pads_zero_history(scalar_pilot):
    tr = simulate(scalar_pilot, _const(1.0), 0.5, 10)
    x = terminal_state(tr, scalar_pilot)
    assert np.allclose(x.z[:6, 0], 0) and np.isclose(x.z[-1, 0], 0.5)


def test_input_errors(scalar_pilot):
    with pytest.raises(SimulationError, match="aligned"):
        simulate(scalar_pilot, None, 1.005, 100)
    ctrl = SampledControl(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(SimulationError, match="ends"):
        simulate(scalar_pilot, ctrl, 1.5, 10)
    with pytest.raises(SimulationError):
        SampledControl(np.array([0.0, 0.0]), np.array([1.0, 1.0]))


def test_trajectory_csv(scalar_pilot):
    tr = simulate(scalar_pilot, _const(1.0), 1.0, 4)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,z_1,dz_1,u_1" and len(lines) == 6
