"""Neutral time-delay systems, M2 states and the characteristic matrix.

The system is

    z'(t) = A_{-1} z'(t-1) + int A2(th) z'(t+th) dth + int A3(th) z(t+th) dth + B u(t)

with kernels on [-1, 0]. Documents with a delay ``h != 1`` are rescaled to unit
delay at load time (``t = h tau``); ``delay_h`` is kept so that reported times
can be scaled back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import MAX_DEGREE, KernelError, MatrixKernel
from .serialize import SchemaError, matrix_to_json, parse_matrix, parse_vector, vector_to_json

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NeutralSystem:
    A_minus1: np.ndarray
    B: np.ndarray
    A2: MatrixKernel
    A3: MatrixKernel
    delay_h: float = 1.0

    def __post_init__(self):
        A = np.array(self.A_minus1, dtype=complex)
        B = np.array(self.B, dtype=complex)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A_minus1 must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n}")
        if self.A2.n != n or self.A3.n != n:
            raise ValueError("kernel dimension does not match A_minus1")
        if not self.delay_h > 0:
            raise ValueError("delay_h must be positive")
        s = np.linalg.svd(B, compute_uv=False)
        if s.size == 0 or s[-1] <= RANK_TOL * max(s[0], 1.0) or B.shape[1] > n:
            raise ValueError("B must have full column rank (redundant inputs)")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A_minus1", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def pure(cls, A_minus1, B, delay_h: float = 1.0) -> "NeutralSystem":
        """System with identically zero kernels."""
        A = np.atleast_2d(np.asarray(A_minus1, dtype=complex))
        return cls(A, B, MatrixKernel(A.shape[0]), MatrixKernel(A.shape[0]), delay_h)

    @property
    def n(self) -> int:
        return self.A_minus1.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]

    @property
    def is_real(self) -> bool:
        data = [self.A_minus1, self.B]
        for K in (self.A2, self.A3):
            data += [p.coeffs for p in K.pieces]
        return all(not np.any(np.asarray(d).imag) for d in data)

    @property
    def is_pure(self) -> bool:
        return self.A2.is_zero and self.A3.is_zero

    def replace(self, **changes) -> "NeutralSystem":
        fields = dict(A_minus1=self.A_minus1, B=self.B, A2=self.A2, A3=self.A3, delay_h=self.delay_h)
        fields.update(changes)
        return NeutralSystem(**fields)

    def to_json(self) -> dict:
        """Document form in normalized (unit-delay) units."""
        return {
            "n": self.n,
            "r": self.r,
            "A_minus1": matrix_to_json(self.A_minus1),
            "B": matrix_to_json(self.B),
            "A2": self.A2.to_json(),
            "A3": self.A3.to_json(),
            "delay_h": 1.0,
        }


@dataclass(frozen=True, eq=False)
class M2State:
    """Element ``(y, z)`` of C^n x L2(-1, 0; C^n).

    ``z`` holds ``M + 1`` samples on the uniform grid over [-1, 0]; between
    nodes it is the piecewise-linear interpolant.
    """

    y: np.ndarray
    z: np.ndarray
    theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.atleast_1d(np.array(self.y, dtype=complex))
        z = np.array(self.z, dtype=complex)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] < 3:
            raise ValueError("history grid needs M >= 2")
        if z.shape[1] != y.size:
            raise ValueError(f"dimension mismatch: head has {y.size} entries, history {z.shape[1]}")
        for a in (y, z):
            a.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "theta", np.linspace(-1.0, 0.0, z.shape[0]))

    @classmethod
    def from_function(cls, y, func, M: int = 200) -> "M2State":
        theta = np.linspace(-1.0, 0.0, M + 1)
        return cls(y, np.asarray(func(theta), dtype=complex).reshape(M + 1, -1))

    @classmethod
    def zero(cls, n: int, M: int = 200) -> "M2State":
        return cls(np.zeros(n), np.zeros((M + 1, n)))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def M(self) -> int:
        return self.z.shape[0] - 1

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        cols = [
            np.interp(theta, self.theta, self.z[:, j].real)
            + 1j * np.interp(theta, self.theta, self.z[:, j].imag)
            for j in range(self.n)
        ]
        return np.stack(cols, axis=-1)

    def resample(self, M: int) -> "M2State":
        if M == self.M:
            return self
        return M2State(self.y, self(np.linspace(-1.0, 0.0, M + 1)))

    def norm(self) -> float:
        """M2 norm with the trapezoid rule on the stored grid."""
        tail = np.trapezoid(np.sum(np.abs(self.z) ** 2, axis=1), self.theta)
        return float(np.sqrt(np.sum(np.abs(self.y) ** 2) + tail))

    def __sub__(self, other: "M2State") -> "M2State":
        M = max(self.M, other.M)
        a, b = self.resample(M), other.resample(M)
        return M2State(a.y - b.y, a.z - b.z)

    def __add__(self, other: "M2State") -> "M2State":
        M = max(self.M, other.M)
        a, b = self.resample(M), other.resample(M)
        return M2State(a.y + b.y, a.z + b.z)

    def __mul__(self, alpha: complex) -> "M2State":
        return M2State(alpha * self.y, alpha * self.z)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {"y": vector_to_json(self.y), "grid": matrix_to_json(self.z)}


def kernel_laplace(K: MatrixKernel, lam):
    """``int_{-1}^0 exp(lam s) K(s) ds`` in closed form, piece by piece."""
    out = K.laplace(np.asarray(lam, dtype=complex))
    return out


def evaluate_delta(sys: NeutralSystem, lam):
    """Characteristic matrix at ``lam`` (scalar or array of points).

    ``lam I - lam e^{-lam} A_{-1} - lam L2(lam) - L3(lam)`` where ``Lk`` is the
    Laplace integral of kernel ``Ak`` over [-1, 0].
    """
    lam = np.asarray(lam, dtype=complex)
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam)
    l3 = lam[:, None, None]
    out = l3 * (np.eye(sys.n) - np.exp(-lam)[:, None, None] * sys.A_minus1)
    if sys.A2.pieces:
        out = out - l3 * sys.A2.laplace(lam)
    if sys.A3.pieces:
        out = out - sys.A3.laplace(lam)
    return out[0] if scalar else out


def delta_derivative(sys: NeutralSystem, lam):
    """d/dlam of the characteristic matrix, assembled term by term."""
    lam = np.asarray(lam, dtype=complex)
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam)
    l3 = lam[:, None, None]
    e = np.exp(-lam)[:, None, None]
    out = np.eye(sys.n) - e * sys.A_minus1 + l3 * e * sys.A_minus1
    if sys.A2.pieces:
        out = out - sys.A2.laplace(lam) - l3 * sys.A2.times_poly([0, 1]).laplace(lam)
    if sys.A3.pieces:
        out = out - sys.A3.times_poly([0, 1]).laplace(lam)
    return out[0] if scalar else out


@dataclass(frozen=True)
class DomainCheck:
    member: bool
    residual: float
    h1_finite: bool

    def __bool__(self) -> bool:
        return self.member


def validate_domain_membership(sys: NeutralSystem, x: M2State, tol: float = 1e-8) -> DomainCheck:
    """Check ``y = z(0) - A_{-1} z(-1)`` and that ``z`` has a square-summable derivative.

    ``tol`` is relative to ``max(1, |y|, max|z|)``.
    """
    if x.n != sys.n:
        raise ValueError(f"dimension mismatch: state has n={x.n}, system n={sys.n}")
    residual = float(np.linalg.norm(x.y - x.z[-1] + sys.A_minus1 @ x.z[0]))
    h = 1.0 / x.M
    dz = np.diff(x.z, axis=0) / h
    h1 = float(np.sum(np.abs(dz) ** 2) * h)
    h1_finite = bool(np.isfinite(h1))
    scale = max(1.0, float(np.linalg.norm(x.y)), float(np.max(np.abs(x.z))))
    return DomainCheck(bool(residual <= tol * scale and h1_finite), residual, h1_finite)


def _parse_kernel(raw, n: int, h: float, power: int, path: str) -> MatrixKernel:
    if raw is None:
        return MatrixKernel(n)
    if not isinstance(raw, list):
        raise SchemaError(path, "expected a list of pieces")
    pieces = []
    for i, piece in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(piece, dict) or "interval" not in piece or "coeffs" not in piece:
            raise SchemaError(p, "piece needs 'interval' and 'coeffs'")
        iv = piece["interval"]
        if not (isinstance(iv, list) and len(iv) == 2 and all(isinstance(v, (int, float)) for v in iv)):
            raise SchemaError(f"{p}.interval", "expected [a, b]")
        a, b = float(iv[0]) / h, float(iv[1]) / h
        coeffs = piece["coeffs"]
        if not isinstance(coeffs, list) or not coeffs:
            raise SchemaError(f"{p}.coeffs", "expected a non-empty list of matrices")
        if len(coeffs) - 1 > MAX_DEGREE:
            raise SchemaError(f"{p}.coeffs", f"degree {len(coeffs) - 1} exceeds {MAX_DEGREE}")
        mats = np.array(
            [parse_matrix(c, f"{p}.coeffs[{j}]", (n, n)) for j, c in enumerate(coeffs)]
        )
        # K(h sigma) in powers of sigma, times h**power
        mats = mats * (h ** np.arange(len(coeffs)))[:, None, None] * h**power
        pieces.append((a, b, mats))
    try:
        return MatrixKernel(n, pieces)
    except KernelError as exc:
        raise SchemaError(path, str(exc)) from None


def load_system(document) -> NeutralSystem:
    """Build a validated system from a JSON document (dict or JSON text).

    Kernel intervals in the document partition ``[-delay_h, 0]``.
    """
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise SchemaError("$", "expected a JSON object")
    for key in ("n", "r", "A_minus1", "B"):
        if key not in document:
            raise SchemaError(key, "missing required field")
    n, r = document["n"], document["r"]
    if not isinstance(n, int) or n < 1:
        raise SchemaError("n", "expected a positive integer")
    if not isinstance(r, int) or r < 1:
        raise SchemaError("r", "expected a positive integer")
    h = document.get("delay_h", 1.0)
    if not isinstance(h, (int, float)) or not h > 0:
        raise SchemaError("delay_h", "expected a positive number")
    h = float(h)
    A = parse_matrix(document["A_minus1"], "A_minus1", (n, n))
    B = parse_matrix(document["B"], "B", (n, r))
    A2 = _parse_kernel(document.get("A2"), n, h, 1, "A2")
    A3 = _parse_kernel(document.get("A3"), n, h, 2, "A3")
    try:
        return NeutralSystem(A, h * B, A2, A3, h)
    except ValueError as exc:
        raise SchemaError("B", str(exc)) from None


def load_state(document, n: int | None = None) -> M2State:
    """State document ``{"y": [...], "grid": [[...], ...]}`` (one row per grid point)."""
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, dict) or "y" not in document or "grid" not in document:
        raise SchemaError("$", "state needs 'y' and 'grid'")
    y = parse_vector(document["y"], "y", n)
    grid = parse_matrix(document["grid"], "grid")
    if grid.shape[1] != y.size:
        raise SchemaError("grid", f"dimension mismatch: rows have {grid.shape[1]} entries, y has {y.size}")
    if grid.shape[0] < 3:
        raise SchemaError("grid", "need at least 3 samples (M >= 2)")
    return M2State(y, grid)


def read_system(path) -> NeutralSystem:
    return load_system(Path(path).read_text())


def read_state(path, n: int | None = None) -> M2State:
    return load_state(Path(path).read_text(), n)
