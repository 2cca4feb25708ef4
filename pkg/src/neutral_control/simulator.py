"""Method-of-steps integration of the neutral equation on a uniform grid.

The derivative ``z'`` may jump at multiples of the delay, so both one-sided
values ``v-`` (limit from the left) and ``v+`` (from the right) are stored at
every node. The delay is an integer number of steps, hence jumps always sit
on nodes and propagate through ``v+ - v- = A (v+ - v-)(t - 1)``.

Each step is the trapezoidal rule for ``z`` coupled with trapezoidal
quadrature of the distributed terms. The only unknown at node ``i`` is
``v-_i``, and it enters linearly, so the implicit step reduces to one
``n x n`` solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .serialize import complex_columns, write_csv
from .system import M2State, NeutralSystem


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SampledControl:
    """Piecewise-linear control through samples ``(t_k, u_k)``."""

    t: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        u = np.asarray(self.u)
        if u.ndim == 1:
            u = u[:, None]
        if t.ndim != 1 or t.size != u.shape[0] or t.size < 2:
            raise SimulationError("control samples need matching times and at least two rows")
        if np.any(np.diff(t) <= 0):
            raise SimulationError("control sample times must increase")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.t, self.u[:, d]) for d in range(self.u.shape[1])], axis=1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    z: np.ndarray
    dz_minus: np.ndarray
    dz_plus: np.ndarray
    u: np.ndarray
    M: int
    delay_h: float = 1.0
    zero_history: bool = True

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def to_csv(self) -> str:
        hz, cz = complex_columns("z", self.z)
        hd, cd = complex_columns("dz", self.dz_plus)
        hu, cu = complex_columns("u", self.u)
        cols = cz + cd + cu
        rows = [[float(t)] + [float(c[i]) for c in cols] for i, t in enumerate(self.times)]
        return write_csv(["t"] + hz + hd + hu, rows)


def _as_callable(control, r: int) -> Callable:
    if control is None:
        return lambda t: np.zeros((np.atleast_1d(t).size, r))
    if isinstance(control, tuple):
        control = SampledControl(*control)
    return control


def simulate(
    sys: NeutralSystem,
    control,
    T: float,
    M: int = 400,
    P=None,
    R=None,
    history: tuple[Callable, Callable] | None = None,
) -> Trajectory:
    """Integrate from zero history (or a test ``history``) up to time ``T``.

    Parameters
    ----------
    sys : NeutralSystem
    control : callable, SampledControl, ``(t, u)`` tuple or None
        Input ``v(t)``, returning an ``(len(t), r)`` array; times in original units.
    T : float
        Horizon in original time units; ``T / delay_h`` must be a multiple of ``1 / M``.
    M : int
        Steps per delay interval.
    P, R : array_like, optional
        Feedback law ``u(t) = P z'(t - 1) + R v(t)``.
    history : (z_hist, dz_hist), optional
        Functions of ``theta`` in [-1, 0] (vectorized, returning ``(len, n)``);
        testing only.

    Returns
    -------
    Trajectory
    """
    if M < 1:
        raise SimulationError("grid M must be positive")
    h_delay = sys.delay_h
    steps_f = T / h_delay * M
    steps = int(round(steps_f))
    if T <= 0 or abs(steps - steps_f) > 1e-9 * max(1.0, steps_f):
        raise SimulationError(f"T={T} is not aligned with the grid 1/{M}")
    end = getattr(control, "end", None)
    if end is not None and end < T - 1e-12 * max(1.0, T):
        raise SimulationError(f"control ends at {end} before T={T}")
    n, r = sys.n, sys.r
    ext = _as_callable(control, R.shape[1] if R is not None else r)
    A = sys.A_minus1
    B = sys.B
    if P is not None:
        A = A + B @ np.asarray(P)
    Bext = B @ np.asarray(R) if R is not None else B
    dtype = complex if (np.iscomplexobj(A) and np.any(A.imag)) or np.any(np.asarray(Bext).imag) else float

    h = 1.0 / M
    total = M + steps + 1  # history nodes -M..0 plus steps
    vm = np.zeros((total, n), dtype=complex)
    vp = np.zeros((total, n), dtype=complex)
    z = np.zeros((total, n), dtype=complex)
    if history is not None:
        th = np.linspace(-1.0, 0.0, M + 1)
        z[: M + 1] = history[0](th)
        vm[: M + 1] = history[1](th)
        vp[: M + 1] = vm[: M + 1]

    theta = np.linspace(-1.0, 0.0, M + 1)
    has2 = bool(sys.A2.pieces) and not sys.A2.is_zero
    has3 = bool(sys.A3.pieces) and not sys.A3.is_zero
    K2 = sys.A2(theta) if has2 else None
    K3 = sys.A3(theta) if has3 else None
    w = np.full(M + 1, h)
    w[0] = w[-1] = 0.5 * h

    times = np.arange(steps + 1) * h
    V = np.atleast_2d(ext(times * h_delay))
    if V.shape[0] != steps + 1:
        V = V.reshape(steps + 1, -1)
    forcing = V @ np.asarray(Bext).T

    def dist2(i, top_minus):
        lo = i - M
        seg = 0.5 * (vm[lo : i + 1] + vp[lo : i + 1])
        seg[0] = vp[lo]
        seg[-1] = top_minus
        return np.einsum("j,jab,jb->a", w, K2, seg)

    def dist3(i, top):
        seg = z[i - M : i + 1].copy()
        seg[-1] = top
        return np.einsum("j,jab,jb->a", w, K3, seg)

    # node t = 0: left limit from history, right limit from the equation
    i0 = M
    rhs0 = A @ vp[0] + forcing[0]
    if has2:
        rhs0 = rhs0 + dist2(i0, vm[i0])
    if has3:
        rhs0 = rhs0 + dist3(i0, z[i0])
    # v-(0) is the history value; anything else is a jump at 0 that later steps propagate
    vp[i0] = rhs0

    lhs = np.eye(n, dtype=complex)
    if has2:
        lhs = lhs - 0.5 * h * K2[-1]
    if has3:
        lhs = lhs - 0.25 * h * h * K3[-1]
    lhs_inv = np.linalg.inv(lhs)
    for step in range(1, steps + 1):
        i = M + step
        base = A @ vm[i - M] + forcing[step]
        if has2:
            base = base + dist2(i, np.zeros(n))
        if has3:
            zpred = z[i - 1] + 0.5 * h * vp[i - 1]
            base = base + dist3(i, np.zeros(n)) + 0.5 * h * K3[-1] @ zpred
        vm[i] = lhs_inv @ base
        vp[i] = vm[i] + A @ (vp[i - M] - vm[i - M])
        z[i] = z[i - 1] + 0.5 * h * (vp[i - 1] + vm[i])

    sl = slice(M, total)
    u_applied = V @ (np.asarray(R).T if R is not None else np.eye(V.shape[1]))
    if P is not None:
        u_applied = u_applied + vp[0 : steps + 1] @ np.asarray(P).T
    out = [z[sl], vm[sl], vp[sl], u_applied]
    if dtype is float and not np.iscomplexobj(V):
        out = [np.real(a) for a in out]
    return Trajectory(times * h_delay, *out, M, h_delay, history is None)


def terminal_state(traj: Trajectory, sys: NeutralSystem, M: int | None = None) -> M2State:
    """State ``(z(T) - A_{-1} z(T - 1), z(T + theta))``, optionally resampled to ``M`` cells."""
    z = traj.z
    if z.shape[0] < traj.M + 1:
        if not traj.zero_history:
            raise SimulationError("trajectory shorter than one delay")
        # the part of the window before t = 0 is the zero history
        z = np.vstack([np.zeros((traj.M + 1 - z.shape[0], z.shape[1]), dtype=z.dtype), z])
    tail = z[-(traj.M + 1) :]
    y = tail[-1] - sys.A_minus1 @ tail[0]
    state = M2State(y, tail)
    return state.resample(M) if M is not None and M != traj.M else state


def steering_error(achieved: M2State, target: M2State) -> float:
    """``||achieved - target|| / max(||target||, 1)`` in the state norm."""
    if achieved.M != target.M:
        achieved = achieved.resample(target.M)
    return float((achieved - target).norm() / max(target.norm(), 1.0))
