"""Piecewise-polynomial matrix kernels on [-1, 0] and their exponential integrals.

Everything that integrates a kernel against an exponential goes through
:func:`exp_poly_integral`, which reduces each polynomial piece to the scaled
moments ``E_j(z) = int_0^1 u**j exp(z u) du``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

MAX_DEGREE = 8
BREAK_TOL = 1e-12

# small-|z| switch for the moment series, and its term count
SERIES_RADIUS = 0.1
SERIES_TERMS = 12
# Gauss-Legendre rule used between the series and the recurrence regimes
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


class KernelError(ValueError):
    """Invalid kernel description (partition or shape violation)."""


def exp_moments(z, jmax: int) -> np.ndarray:
    """Return ``E_j(z) = int_0^1 u**j exp(z u) du`` for ``j = 0..jmax``.

    Parameters
    ----------
    z : array_like of complex
    jmax : int

    Returns
    -------
    ndarray of shape ``(jmax + 1,) + z.shape``

    Notes
    -----
    Three regimes: a 12-term Taylor series for ``|z| < 0.1``, the forward
    recurrence ``E_j = (exp(z) - j E_{j-1}) / z`` when ``|z|`` exceeds
    ``max(16, 2 jmax)`` (where it is stable), and a 48-point Gauss-Legendre
    rule in between, which is exact to rounding for these entire integrands.
    """
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    zf = z.ravel()
    out = np.empty((jmax + 1, zf.size), dtype=complex)
    az = np.abs(zf)
    big = max(16.0, 2.0 * jmax)

    small = az < SERIES_RADIUS
    if small.any():
        zs = zf[small]
        powers = zs[None, :] ** np.arange(SERIES_TERMS)[:, None]
        for j in range(jmax + 1):
            c = np.array([1.0 / (factorial(m) * (j + m + 1)) for m in range(SERIES_TERMS)])
            out[j, small] = c @ powers

    large = az >= big
    if large.any():
        zl = zf[large]
        ez = np.exp(zl)
        prev = np.expm1(zl) / zl
        out[0, large] = prev
        for j in range(1, jmax + 1):
            prev = (ez - j * prev) / zl
            out[j, large] = prev

    mid = ~(small | large)
    if mid.any():
        zm = zf[mid]
        e = np.exp(np.outer(zm, _GL_NODES)) * _GL_WEIGHTS
        for j in range(jmax + 1):
            out[j, mid] = e @ (_GL_NODES**j)

    return out.reshape((jmax + 1,) + shape)


def _shift_coeffs(coeffs: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Re-expand ``sum_j C_j s**j`` in powers of ``s - lo`` for every ``lo``.

    Returns shape ``(len(lo), J, n, n)``.
    """
    J = coeffs.shape[0]
    binom = np.zeros((J, J))
    for j in range(J):
        for i in range(j + 1):
            binom[i, j] = comb(j, i)
    # T[l, i, j] = binom(j, i) lo_l**(j - i) for j >= i
    expo = np.arange(J)[None, :] - np.arange(J)[:, None]
    lo = np.asarray(lo, dtype=float)
    with np.errstate(invalid="ignore"):
        powers = np.where(expo[None] >= 0, lo[:, None, None] ** np.maximum(expo, 0)[None], 0.0)
    T = binom[None] * powers
    return np.einsum("lij,jab->liab", T, coeffs)


def exp_poly_integral(coeffs: np.ndarray, lo, hi, lam) -> np.ndarray:
    """Integral of ``exp(lam s) p(s)`` over ``[lo, hi]`` for a matrix polynomial.

    ``coeffs[j]`` multiplies ``s**j``. ``lo``, ``hi`` and ``lam`` broadcast to a
    common 1-D shape ``(N,)``; the result has shape ``(N, n, n)``.
    """
    lo, hi, lam = np.broadcast_arrays(
        np.atleast_1d(np.asarray(lo, dtype=float)),
        np.atleast_1d(np.asarray(hi, dtype=float)),
        np.atleast_1d(np.asarray(lam, dtype=complex)),
    )
    J = coeffs.shape[0]
    length = hi - lo
    E = exp_moments(lam * length, J - 1)  # (J, N)
    scale = length[None, :] ** (np.arange(1, J + 1)[:, None])  # L**(i+1)
    w = (E * scale).T * np.exp(lam * lo)[:, None]  # (N, J)
    D = _shift_coeffs(coeffs, lo)  # (N, J, n, n)
    return np.einsum("li,liab->lab", w, D)


@dataclass(frozen=True)
class KernelPiece:
    a: float
    b: float
    coeffs: np.ndarray  # (degree + 1, n, n), powers of theta


class MatrixKernel:
    """Matrix-valued piecewise polynomial on [-1, 0].

    An empty piece list stands for the identically zero kernel.
    """

    def __init__(self, n: int, pieces=()):
        self.n = int(n)
        cleaned = []
        for a, b, coeffs in (p if isinstance(p, tuple) else (p.a, p.b, p.coeffs) for p in pieces):
            c = np.array(coeffs, dtype=complex)
            if c.ndim == 2:
                c = c[None]
            if c.ndim != 3 or c.shape[1:] != (self.n, self.n):
                raise KernelError(f"coefficient matrices must be {self.n}x{self.n}")
            if c.shape[0] - 1 > MAX_DEGREE + 2:
                raise KernelError(f"piece degree {c.shape[0] - 1} exceeds {MAX_DEGREE}")
            if not b > a:
                raise KernelError(f"empty interval [{a}, {b}]")
            c.setflags(write=False)
            cleaned.append(KernelPiece(float(a), float(b), c))
        cleaned.sort(key=lambda p: p.a)
        self.pieces = tuple(cleaned)
        if self.pieces:
            self._check_partition()

    def _check_partition(self):
        first, last = self.pieces[0], self.pieces[-1]
        if abs(first.a + 1.0) > BREAK_TOL or abs(last.b) > BREAK_TOL:
            raise KernelError("kernel gap: pieces must cover [-1, 0]")
        for left, right in zip(self.pieces, self.pieces[1:]):
            if left.b > right.a + BREAK_TOL:
                raise KernelError(f"kernel overlap at [{right.a}, {left.b}]")
            if left.b < right.a - BREAK_TOL:
                raise KernelError(f"kernel gap between {left.b} and {right.a}")

    @classmethod
    def constant(cls, matrix) -> "MatrixKernel":
        m = np.atleast_2d(np.asarray(matrix, dtype=complex))
        return cls(m.shape[0], [(-1.0, 0.0, m[None])])

    @property
    def is_zero(self) -> bool:
        return all(not np.any(p.coeffs) for p in self.pieces)

    @property
    def degree(self) -> int:
        return max((p.coeffs.shape[0] - 1 for p in self.pieces), default=0)

    def __call__(self, theta) -> np.ndarray:
        """Kernel values at ``theta``; shape ``theta.shape + (n, n)``.

        At an interior breakpoint the two one-sided limits are averaged.
        """
        theta = np.asarray(theta, dtype=float)
        flat = theta.ravel()
        out = np.zeros((flat.size, self.n, self.n), dtype=complex)
        hits = np.zeros(flat.size)
        for p in self.pieces:
            inside = (flat >= p.a - BREAK_TOL) & (flat <= p.b + BREAK_TOL)
            if not inside.any():
                continue
            t = flat[inside]
            powers = t[:, None] ** np.arange(p.coeffs.shape[0])[None, :]
            out[inside] += np.einsum("lj,jab->lab", powers, p.coeffs)
            hits[inside] += 1
        hits[hits == 0] = 1
        out /= hits[:, None, None]
        return out.reshape(theta.shape + (self.n, self.n))

    def laplace(self, lam) -> np.ndarray:
        """``int_{-1}^0 exp(lam s) K(s) ds``; shape ``lam.shape + (n, n)``."""
        lam = np.asarray(lam, dtype=complex)
        flat = lam.ravel()
        out = np.zeros((flat.size, self.n, self.n), dtype=complex)
        for p in self.pieces:
            out += exp_poly_integral(p.coeffs, p.a, p.b, flat)
        return out.reshape(lam.shape + (self.n, self.n))

    def partial_laplace(self, lam: complex, lower) -> np.ndarray:
        """``int_{lower}^0 exp(lam s) K(s) ds`` for each entry of ``lower``."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        out = np.zeros((lower.size, self.n, self.n), dtype=complex)
        for p in self.pieces:
            lo = np.clip(lower, p.a, p.b)
            active = lo < p.b
            if not active.any():
                continue
            out[active] += exp_poly_integral(p.coeffs, lo[active], p.b, lam)
        return out

    def integral(self) -> np.ndarray:
        """``int_{-1}^0 K(s) ds``."""
        return self.laplace(np.array([0.0]))[0]

    def times_poly(self, poly) -> "MatrixKernel":
        """Kernel ``q(s) K(s)`` for a scalar polynomial ``q`` (coefficients low to high)."""
        q = np.asarray(poly, dtype=complex)
        pieces = []
        for p in self.pieces:
            c = np.zeros((p.coeffs.shape[0] + q.size - 1, self.n, self.n), dtype=complex)
            for i, qi in enumerate(q):
                c[i : i + p.coeffs.shape[0]] += qi * p.coeffs
            pieces.append((p.a, p.b, c))
        return MatrixKernel(self.n, pieces)

    def map(self, func) -> "MatrixKernel":
        """Apply ``func`` to every coefficient matrix (linear maps only)."""
        return MatrixKernel(
            self.n, [(p.a, p.b, np.array([func(c) for c in p.coeffs])) for p in self.pieces]
        )

    def adjoint(self) -> "MatrixKernel":
        return self.map(lambda c: c.conj().T)

    def conjugated_by(self, C: np.ndarray, C_inv: np.ndarray) -> "MatrixKernel":
        return self.map(lambda c: C_inv @ c @ C)

    def scaled(self, factor: complex) -> "MatrixKernel":
        return self.map(lambda c: factor * c)

    def to_json(self) -> list:
        from .serialize import matrix_to_json

        return [
            {"interval": [p.a, p.b], "coeffs": [matrix_to_json(c) for c in p.coeffs]}
            for p in self.pieces
        ]

    def __repr__(self) -> str:
        return f"MatrixKernel(n={self.n}, pieces={len(self.pieces)}, degree={self.degree})"
