"""Truncated moment problem, Gram matrices and least-norm steering controls.

With ``s_i = w_i <x_T, psi_i>`` and rows ``q_i = w_i <b_d, psi_i>`` the
reachability condition reads

    s_i = sum_d int_0^T e^{lam_i tau} q_i^d v_d(tau) dtau,   v(tau) = u(T - tau),

and the least-norm ``v`` is a combination of ``conj(q_j^d) e^{conj(lam_j) tau}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .serialize import complex_columns, vector_to_json, write_csv
from .spectral import EigenTriple, MultipleRoot, build_psi, moment_coefficients
from .system import M2State, NeutralSystem, validate_domain_membership

_GL4_NODES, _GL4_WEIGHTS = np.polynomial.legendre.leggauss(4)


class TargetOutsideDomain(ValueError):
    def __init__(self, residual: float):
        super().__init__(f"target violates y = z(0) - A_minus1 z(-1) (residual {residual:.3e})")
        self.residual = residual


class GramError(ArithmeticError):
    pass


def state_pairing(state: M2State, psi) -> complex:
    """``<x, psi>`` with the tail integral done by 4-point Gauss rules per grid cell."""
    theta = state.theta
    a, b = theta[:-1], theta[1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[:, None] + half[:, None] * _GL4_NODES[None, :]
    frac = (pts - a[:, None]) / (b - a)[:, None]
    z = state.z[:-1, None, :] * (1 - frac)[..., None] + state.z[1:, None, :] * frac[..., None]
    vals = psi(pts.ravel()).reshape(pts.shape + (state.n,))
    tail = np.sum((half[:, None] * _GL4_WEIGHTS[None, :])[..., None] * np.conj(vals) * z)
    return complex(np.conj(psi.y) @ state.y + tail)


@dataclass(frozen=True, eq=False)
class TargetMoments:
    s: np.ndarray
    c1_partial_sums: list[tuple[int, float]]
    domain_residual: float


def target_moments(sys: NeutralSystem, triples: list[EigenTriple], x_T: M2State, tol: float = 1e-8) -> TargetMoments:
    """Right-hand sides ``s_i = w_i <x_T, psi_i>`` and the square-summability diagnostic."""
    check = validate_domain_membership(sys, x_T, tol)
    if not check.member:
        raise TargetOutsideDomain(check.residual)
    s = np.array([t.weight * state_pairing(x_T, build_psi(sys, t)) for t in triples], dtype=complex)
    ks = sorted({abs(t.k) for t in triples if t.kind == "chain"})
    sums, acc = [], 0.0
    for k in ks:
        acc += float(sum(abs(s[i]) ** 2 for i, t in enumerate(triples) if t.kind == "chain" and abs(t.k) == k))
        sums.append((k, acc))
    return TargetMoments(s, sums, check.residual)


def _exp_integral(sigma: np.ndarray, T: float) -> np.ndarray:
    """``int_0^T e^{sigma t} dt`` with the ``sigma = 0`` limit."""
    sigma = np.asarray(sigma, dtype=complex)
    out = np.full(sigma.shape, T, dtype=complex)
    nz = np.abs(sigma) * T > 1e-12
    out[nz] = np.expm1(sigma[nz] * T) / sigma[nz]
    return out


def gram_matrix(lams, q, T: float) -> np.ndarray:
    """``G[i, j] = sum_d q_i^d conj(q_j^d) int_0^T e^{(lam_i + conj(lam_j)) t} dt``."""
    if T <= 0:
        raise ValueError("horizon T must be positive")
    lams = np.asarray(lams, dtype=complex)
    q = np.asarray(q, dtype=complex).reshape(lams.size, -1)
    E = _exp_integral(lams[:, None] + np.conj(lams)[None, :], T)
    G = (q @ q.conj().T) * E
    return 0.5 * (G + G.conj().T)


def gram_conditioning(G: np.ndarray) -> tuple[float, float]:
    """Smallest eigenvalue and 2-norm condition number of a Hermitian Gram matrix."""
    ev = np.linalg.eigvalsh(G)
    lo, hi = float(ev[0]), float(ev[-1])
    return lo, (hi / lo if lo > 0 else float("inf"))


@dataclass(eq=False)
class MomentSystem:
    triples: list[EigenTriple]
    q: np.ndarray
    s: np.ndarray
    T: float
    gram: np.ndarray
    excluded_rows: list[MultipleRoot] = field(default_factory=list)

    @property
    def lams(self) -> np.ndarray:
        return np.array([t.lam for t in self.triples], dtype=complex)

    def to_json(self) -> dict:
        lo, cond = gram_conditioning(self.gram) if self.gram.size else (0.0, 0.0)
        return {
            "T": self.T,
            "rows": [
                {"m": t.m, "k": t.k, "kind": t.kind, "lambda": complex(t.lam), "s": complex(si), "q": vector_to_json(qi)}
                for t, si, qi in zip(self.triples, self.s, self.q)
            ],
            "gram_min_eigenvalue": lo,
            "gram_condition": cond,
            "excluded_rows": [{"lambda": complex(r.lam), "multiplicity": r.multiplicity} for r in self.excluded_rows],
        }


def assemble(sys: NeutralSystem, triples, x_T: M2State, T: float, excluded=()) -> MomentSystem:
    rows = [t for t in triples if t.certified and t.x is not None]
    q = moment_coefficients(rows, sys.B)
    s = target_moments(sys, rows, x_T).s
    return MomentSystem(rows, q, s, float(T), gram_matrix([t.lam for t in rows], q, T), list(excluded))


@dataclass(eq=False)
class SteeringControl:
    """``u(t) = v(T - t)`` with ``v_d(tau) = sum_j c_j conj(q_j^d) e^{conj(lam_j) tau}``."""

    coefficients: np.ndarray
    lams: np.ndarray
    q: np.ndarray
    T: float
    real: bool = True
    moment_residual: float = 0.0
    norm: float = 0.0
    regularization: float = 0.0

    @property
    def r(self) -> int:
        return self.q.shape[1]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = self.T - t
        basis = np.exp(np.outer(tau, np.conj(self.lams)))  # (len(t), N)
        u = basis @ (self.coefficients[:, None] * np.conj(self.q))
        u[(t < 0) | (t > self.T)] = 0.0
        return u.real if self.real else u

    def sample(self, M: int) -> tuple[np.ndarray, np.ndarray]:
        steps = int(round(self.T * M))
        t = np.arange(steps + 1) / M
        return t, self(t)

    def to_csv(self, M: int) -> str:
        t, u = self.sample(M)
        header, cols = complex_columns("u", u)
        return write_csv(["t"] + header, [[float(ti)] + [float(c[i]) for c in cols] for i, ti in enumerate(t)])


def synthesize_control(ms: MomentSystem, regularization: float = 0.0, real: bool | None = None) -> SteeringControl:
    """Solve ``(G + reg I) c = s`` and return the least-norm control.

    With ``regularization == 0`` a Cholesky solve is tried first; on failure an
    eigenvalue floor ``1e-12 tr(G) / dim`` is added. A Gram matrix with a
    clearly negative eigenvalue is rejected.
    """
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    G, s = ms.gram, ms.s
    N = s.size
    if real is None:
        real = bool(np.all(np.isreal(ms.q)) or _closed_under_conjugation(ms))
    if N == 0 or not np.any(s):
        return SteeringControl(np.zeros(N, dtype=complex), ms.lams, ms.q, ms.T, real)
    ev = np.linalg.eigvalsh(G)
    if ev[0] < -1e-8 * max(ev[-1], 1e-300):
        raise GramError(f"Gram matrix indefinite (min eigenvalue {ev[0]:.3e})")
    reg = regularization
    try:
        c = linalg.cho_solve(linalg.cho_factor(G + reg * np.eye(N)), s)
    except linalg.LinAlgError:
        reg = max(reg, 1e-12 * float(np.trace(G).real) / N)
        c = linalg.cho_solve(linalg.cho_factor(G + reg * np.eye(N)), s)
    res = float(np.linalg.norm(G @ c - s) / np.linalg.norm(s))
    norm = float(np.sqrt(max((c.conj() @ G @ c).real, 0.0)))
    return SteeringControl(c, ms.lams, ms.q, ms.T, real, res, norm, reg)


def _closed_under_conjugation(ms: MomentSystem) -> bool:
    lams = ms.lams
    return all(np.min(np.abs(lams - np.conj(l))) < 1e-9 * max(1.0, abs(l)) for l in lams)


def control_moments(ctrl: SteeringControl, lams, q) -> np.ndarray:
    """``int_0^T e^{lam_i tau} q_i . v(tau) dtau`` in closed form for the synthesized control."""
    lams = np.asarray(lams, dtype=complex)
    E = _exp_integral(lams[:, None] + np.conj(ctrl.lams)[None, :], ctrl.T)
    return ((np.asarray(q) @ ctrl.q.conj().T) * E) @ ctrl.coefficients


def conditioning_report(sys: NeutralSystem, triples, T_list) -> list[dict]:
    """Gram conditioning of the steering family at each horizon in ``T_list``."""
    rows = [t for t in triples if t.certified and t.x is not None]
    q = moment_coefficients(rows, sys.B)
    lams = [t.lam for t in rows]
    out = []
    for T in T_list:
        if T <= 0:
            raise ValueError("horizons must be positive")
        lo, cond = gram_conditioning(gram_matrix(lams, q, T))
        out.append({"T": float(T), "min_eigenvalue": lo, "condition": cond})
    return out
