"""Characteristic roots, certification by winding number, eigen/adjoint vectors.

Roots come in chains seeded at ``Log(mu_m) + 2 pi i k`` (``mu_m`` eigenvalues
of ``A_{-1}``). Each is refined by Newton on ``det Delta`` and certified when
the winding number of ``det Delta`` around a small circle equals one. A
rectangle covering the window is scanned with the argument principle for any
additional ("exceptional") roots.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .serialize import write_csv
from .system import NeutralSystem, delta_derivative, evaluate_delta

NEWTON_MAXITER = 60
NULL_RATIO = 0.1
# relative offset used for splitting rectangles away from symmetric positions
SPLIT_OFFSET = 0.0137
MIN_BOX = 0.02
SHRINK_STEPS = 4
# margin inflation factors tried when a root sits on the scan rectangle
INFLATE = (0.0, 0.0731, 0.1517)


class SpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectrumWindow:
    k_max: int = 5
    radius_scale: float = 1.0
    strip_margin: float = 1.0

    def __post_init__(self):
        if int(self.k_max) < 1:
            raise ValueError("k_max must be at least 1")
        if not 0 < self.radius_scale <= 1:
            raise ValueError("radius_scale must lie in (0, 1]")
        if self.strip_margin <= 0:
            raise ValueError("strip_margin must be positive")

    def to_json(self) -> dict:
        return {"k_max": int(self.k_max), "radius_scale": self.radius_scale, "strip_margin": self.strip_margin}


@dataclass(frozen=True, eq=False)
class EigenTriple:
    m: int
    k: int
    lam: complex
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    norm_factor: complex = 1.0
    certified: bool = False
    kind: str = "chain"
    winding: int = 0
    residual: float = float("nan")

    @property
    def y_scaled(self) -> np.ndarray:
        return self.norm_factor * self.y

    @property
    def weight(self) -> float:
        """Row scaling ``|k|`` of chain roots (1 for k = 0 and exceptional roots)."""
        return 1.0 if self.kind != "chain" else float(max(abs(self.k), 1))

    def phi(self, sys: NeutralSystem):
        """Head and tail evaluator of the eigenvector ``((I - e^{-lam} A) x, e^{lam theta} x)``."""
        head = self.x - np.exp(-self.lam) * (sys.A_minus1 @ self.x)
        return head, lambda theta: np.exp(self.lam * np.asarray(theta, dtype=float))[..., None] * self.x


@dataclass(frozen=True)
class MultipleRoot:
    lam: complex
    multiplicity: int


@dataclass(eq=False)
class Spectrum:
    triples: list[EigenTriple]
    window: SpectrumWindow
    multiple_roots: list[MultipleRoot] = field(default_factory=list)
    rectangle: tuple[float, float, float, float] | None = None
    rectangle_count: int | None = None
    scan_complete: bool = True
    absorbed: list[tuple[int, int]] = field(default_factory=list)

    @property
    def uncertified(self) -> list[tuple[int, int]]:
        return [(t.m, t.k) for t in self.triples if not t.certified]

    @property
    def exceptional(self) -> list[EigenTriple]:
        return [t for t in self.triples if t.kind == "exceptional"]

    def to_csv(self) -> str:
        rows = []
        for t in self.triples:
            rows.append(
                [
                    t.m,
                    t.k,
                    float(t.lam.real),
                    float(t.lam.imag),
                    float(t.residual),
                    "true" if t.certified else "false",
                    float(np.real(t.norm_factor)),
                    float(np.imag(t.norm_factor)),
                ]
            )
        header = ["m", "k", "re_lambda", "im_lambda", "residual", "certified", "norm_factor_re", "norm_factor_im"]
        return write_csv(header, rows)


def branch_eigenvalues(A) -> np.ndarray:
    """Eigenvalues of ``A`` sorted by real then imaginary part (branch order)."""
    mu = np.linalg.eigvals(np.atleast_2d(A))
    return np.array(sorted(mu, key=lambda z: (round(z.real, 12), round(z.imag, 12))))


def _check_branches(sys: NeutralSystem) -> np.ndarray:
    mu = branch_eigenvalues(sys.A_minus1)
    scale = max(np.linalg.norm(sys.A_minus1, 2), 1.0)
    if np.min(np.abs(mu)) <= 1e-12 * scale:
        raise SpectrumError("A_minus1 is singular; regularize by feedback first")
    if mu.size > 1:
        gaps = np.abs(mu[:, None] - mu[None, :])
        np.fill_diagonal(gaps, np.inf)
        if np.min(gaps) <= 1e-8 * scale:
            raise SpectrumError("A_minus1 has a repeated eigenvalue")
    # principal argument in (-pi, pi]: round-off of either sign in the imaginary part of a
    # negative real mu would otherwise flip its argument between pi and -pi
    mu = np.asarray(mu, dtype=complex)
    return np.where(np.abs(mu.imag) <= 1e-12 * np.abs(mu), mu.real + 0j, mu)


def asymptotic_grid(sys: NeutralSystem, window: SpectrumWindow) -> list[tuple[int, int, complex]]:
    """Seeds ``Log(mu_m) + 2 pi i k`` for ``|k| <= k_max`` in (m, k) order."""
    mu = _check_branches(sys)
    ks = range(-window.k_max, window.k_max + 1)
    return [(m + 1, k, complex(np.log(mu[m]) + 2j * np.pi * k)) for m in range(mu.size) for k in ks]


def grid_spacing(sys: NeutralSystem) -> float:
    """Smallest distance between two distinct seeds of the infinite grid."""
    logs = np.log(_check_branches(sys).astype(complex))
    best = 2 * np.pi
    for i in range(logs.size):
        for j in range(i + 1, logs.size):
            d = logs[i] - logs[j]
            # nearest translate by 2 pi i l
            l = np.round(d.imag / (2 * np.pi))
            for ll in (l - 1, l, l + 1):
                best = min(best, abs(d - 2j * np.pi * ll))
    return float(best)


def circle_radius(spacing: float, k: int, radius_scale: float = 1.0) -> float:
    return radius_scale * min(0.4 * spacing, 1.0 / (1.0 + abs(k)))


def _phases(sys: NeutralSystem, pts: np.ndarray) -> np.ndarray:
    sign, logabs = np.linalg.slogdet(evaluate_delta(sys, pts))
    if np.any(~np.isfinite(logabs)) or np.any(sign == 0):
        raise SpectrumError("determinant vanishes on the contour")
    return sign


def _winding_closed(sys: NeutralSystem, path, n0: int = 64, nmax: int = 1 << 16) -> int:
    """Winding number of ``det Delta`` along the closed parametrized ``path(t)``, t in [0, 1)."""
    n = n0
    while True:
        t = np.arange(n + 1) / n
        sign = _phases(sys, path(t))
        incr = np.angle(sign[1:] / sign[:-1])
        if np.max(np.abs(incr)) < np.pi / 4:
            return int(np.round(np.sum(incr) / (2 * np.pi)))
        if n >= nmax:
            raise SpectrumError("winding number did not resolve")
        n *= 2


def circle_winding(sys: NeutralSystem, center: complex, radius: float) -> int:
    return _winding_closed(sys, lambda t: center + radius * np.exp(2j * np.pi * t))


def _rect_path(x0, x1, y0, y1):
    corners = np.array([x0 + 1j * y0, x1 + 1j * y0, x1 + 1j * y1, x0 + 1j * y1, x0 + 1j * y0])
    lengths = np.abs(np.diff(corners))
    cum = np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum()

    def path(t):
        t = np.asarray(t) % 1.0
        seg = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, 3)
        frac = (t - cum[seg]) / (cum[seg + 1] - cum[seg])
        return corners[seg] + frac * (corners[seg + 1] - corners[seg])

    return path, float(lengths.sum())


def rectangle_count(sys: NeutralSystem, box) -> int:
    x0, x1, y0, y1 = box
    path, length = _rect_path(x0, x1, y0, y1)
    return _winding_closed(sys, path, n0=max(64, int(64 * length)))


def _relative_smin(D: np.ndarray) -> tuple[float, np.ndarray]:
    s = np.linalg.svd(D, compute_uv=False)
    return float(s[-1] / max(np.linalg.norm(D), 1e-300)), s


def newton(sys: NeutralSystem, seed: complex, multiplicity: int = 1, maxiter: int = NEWTON_MAXITER) -> complex:
    """Newton on ``det Delta`` with the Jacobi-formula step ``p / tr(Delta^{-1} Delta')``."""
    lam = complex(seed)
    for _ in range(maxiter):
        D = evaluate_delta(sys, lam)
        rel, _ = _relative_smin(D)
        if rel < 1e-15:
            return lam
        try:
            tr = np.trace(np.linalg.solve(D, delta_derivative(sys, lam)))
        except np.linalg.LinAlgError:
            return lam
        if not np.isfinite(tr) or tr == 0:
            raise SpectrumError(f"Newton breakdown near {seed}")
        step = multiplicity / tr
        lam -= step
        if not np.isfinite(lam):
            raise SpectrumError(f"Newton diverged from {seed}")
        if abs(step) <= 1e-14 * max(1.0, abs(lam)):
            return lam
    return lam


def refine_root(sys: NeutralSystem, seed: complex, circle_radius: float) -> tuple[complex, bool, int]:
    """Refine ``seed`` and certify: returns ``(lam, certified, winding)``."""
    try:
        lam = newton(sys, seed)
    except SpectrumError:
        return complex(seed), False, 0
    inside = abs(lam - seed) <= circle_radius
    # a neighbouring exceptional root may sit inside the grid circle; shrink before giving up
    r, w = circle_radius, 0
    for _ in range(SHRINK_STEPS + 1):
        try:
            w = circle_winding(sys, lam, r)
        except SpectrumError:
            w = 0
        if w == 1:
            break
        r *= 0.5
    return lam, bool(inside and w == 1), w


def eigenvectors(sys: NeutralSystem, lam: complex, check: bool = True) -> tuple[np.ndarray, np.ndarray, float]:
    """Unit right/left null vectors of ``Delta(lam)`` and the relative residual."""
    D = evaluate_delta(sys, lam)
    U, s, Vh = np.linalg.svd(D)
    if check and s.size > 1 and s[-1] > NULL_RATIO * s[-2]:
        raise SpectrumError(f"smallest singular value of Delta({lam}) is not isolated")
    x = _phase(Vh[-1].conj())
    y = _phase(U[:, -1])
    scale = max(np.linalg.norm(D), 1e-300)
    res = max(np.linalg.norm(D @ x), np.linalg.norm(D.conj().T @ y)) / scale
    return x, y, float(res)


def _phase(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def _seed_circles(sys, window):
    spacing = grid_spacing(sys)
    return [(m, k, s, circle_radius(spacing, k, window.radius_scale)) for m, k, s in asymptotic_grid(sys, window)]


def _scan_box(sys: NeutralSystem, window: SpectrumWindow, inflate: float = 0.0):
    mu = _check_branches(sys)
    logs = np.log(np.abs(mu))
    c = window.strip_margin * (1.0 + inflate)
    x0 = min(logs.min(), 0.0) - c
    x1 = max(logs.max(), 0.0) + c
    ims = np.angle(mu)
    top_in = ims.max() + 2 * np.pi * window.k_max
    top_out = ims.min() + 2 * np.pi * (window.k_max + 1)
    bot_in = ims.min() - 2 * np.pi * window.k_max
    bot_out = ims.max() - 2 * np.pi * (window.k_max + 1)
    shift = inflate * 0.5 * (top_out - top_in)
    return (float(x0), float(x1), float(0.5 * (bot_in + bot_out) - shift), float(0.5 * (top_in + top_out) + shift))


def _inside(box, lam, pad=0.0):
    x0, x1, y0, y1 = box
    return x0 - pad <= lam.real <= x1 + pad and y0 - pad <= lam.imag <= y1 + pad


def _split_point(lo, hi, known):
    """Split coordinate near the middle of ``[lo, hi]`` kept away from known roots."""
    width = hi - lo
    candidates = [0.5 + SPLIT_OFFSET, 0.5 - 3 * SPLIT_OFFSET, 0.5 + 5 * SPLIT_OFFSET, 0.42, 0.58]
    best, best_gap = None, -1.0
    for f in candidates:
        s = lo + f * width
        gap = min((abs(v - s) for v in known), default=np.inf)
        if gap > best_gap:
            best, best_gap = s, gap
    return best


def _locate_exceptional(sys, box, chain_roots, depth=0):
    """Recursively isolate roots not accounted for by ``chain_roots``.

    Returns a list of ``(lam, multiplicity)`` and a completeness flag.
    """
    total = rectangle_count(sys, box)
    known = [r for r in chain_roots if _inside(box, r)]
    extra = total - len(known)
    if extra == 0:
        return [], True
    if extra < 0:
        return [], False
    x0, x1, y0, y1 = box
    if max(x1 - x0, y1 - y0) <= MIN_BOX or depth > 40:
        return _polish_cluster(sys, box, extra, known)
    if (x1 - x0) >= (y1 - y0):
        s = _split_point(x0, x1, [r.real for r in known])
        halves = [(x0, s, y0, y1), (s, x1, y0, y1)]
    else:
        s = _split_point(y0, y1, [r.imag for r in known])
        halves = [(x0, x1, y0, s), (x0, x1, s, y1)]
    found, complete = [], True
    for half in halves:
        try:
            f, ok = _locate_exceptional(sys, half, chain_roots, depth + 1)
        except SpectrumError:
            f, ok = [], False
        found += f
        complete &= ok
    return found, complete


def _polish_cluster(sys, box, count, known):
    x0, x1, y0, y1 = box
    center = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
    lam = newton(sys, center, multiplicity=count)
    if sys.is_real and abs(lam.imag) <= 1e-10 * max(1.0, abs(lam)):
        lam = newton(sys, complex(lam.real, 0.0), multiplicity=count)
        lam = complex(lam.real, 0.0) if abs(lam.imag) < 1e-12 else lam
    if abs(lam) < 1e-13:
        lam = 0j
    size = max(x1 - x0, y1 - y0)
    try:
        w = circle_winding(sys, lam, 0.5 * size)
    except SpectrumError:
        return [(lam, count)], False
    return [(lam, count)], w == count + sum(abs(r - lam) < 0.5 * size for r in known)


def compute_spectrum(sys: NeutralSystem, window: SpectrumWindow, scan: bool = True) -> Spectrum:
    """Certified chain roots for ``|k| <= k_max`` plus exceptional roots in the window rectangle."""
    triples = []
    for m, k, seed, r in _seed_circles(sys, window):
        lam, cert, w = refine_root(sys, seed, r)
        x = y = None
        res = float("nan")
        try:
            x, y, res = eigenvectors(sys, lam)
        except SpectrumError:
            cert = False
        triples.append(EigenTriple(m, k, lam, x, y, 1.0, cert, "chain", w, res))
    multiple = []
    box = count = None
    complete = True
    if scan:
        for inflate in INFLATE:
            box = _scan_box(sys, window, inflate)
            chain = [t.lam for t in triples if t.certified and _inside(box, t.lam)]
            try:
                count = rectangle_count(sys, box)
                found, complete = _locate_exceptional(sys, box, chain)
            except SpectrumError:
                found, complete = [], False
            if complete:
                break
        idx = 0
        for lam, mult in sorted(found, key=lambda p: (round(p[0].real, 10), round(p[0].imag, 10))):
            if mult == 1:
                idx += 1
                try:
                    x, y, res = eigenvectors(sys, lam)
                    ok = True
                except SpectrumError:
                    x = y = None
                    res, ok = float("nan"), False
                triples.append(EigenTriple(0, idx, lam, x, y, 1.0, ok and complete, "exceptional", 1, res))
            else:
                multiple.append(MultipleRoot(lam, mult))
    absorbed = []
    if scan and complete:
        triples, absorbed = _absorb_duplicates(sys, triples, multiple, box, count)
    return Spectrum(triples, window, multiple, box, count, complete, absorbed)


def _absorb_duplicates(sys, triples, multiple, box, count):
    """Resolve uncertified chain entries once the rectangle scan is complete.

    When the certified roots inside the rectangle already add up to its root
    count, an uncertified entry inside it is a second label for a held root or
    a stalled iterate, and is dropped. An entry that left the rectangle is kept
    as a root when a small circle around it has winding number one.
    """
    held = [t.lam for t in triples if t.certified]
    inside = sum(_inside(box, h) for h in held) + sum(r.multiplicity for r in multiple if _inside(box, r.lam))
    if inside != count:
        return triples, []
    keep, absorbed = [], []
    for t in triples:
        if t.certified or t.kind != "chain":
            keep.append(t)
            continue
        if not _inside(box, t.lam) and t.x is not None:
            gap = min((abs(t.lam - h) for h in held), default=1.0)
            try:
                w = circle_winding(sys, t.lam, min(0.05, 0.4 * gap))
            except SpectrumError:
                w = None
            if w == 1 and gap > 1e-8:
                keep.append(replace(t, certified=True, winding=1))
                held.append(t.lam)
                continue
        absorbed.append((t.m, t.k))
    return keep, absorbed


# --- adjoint eigenfunctions and the state-space pairing ---------------------------------


class PsiFunction:
    """Adjoint eigenvector with head ``y`` and tail

    ``conj(lam) e^{-conj(lam) theta} y - A2^*(theta) y - e^{-conj(lam) theta} int_theta^0 e^{conj(lam) s} (A3^* + conj(lam) A2^*)(s) ds y``.
    """

    def __init__(self, sys: NeutralSystem, lam: complex, y: np.ndarray):
        self.lam = complex(lam)
        self.y = np.asarray(y, dtype=complex)
        lb = np.conj(self.lam)
        self._lb = lb
        self._A2s = sys.A2.adjoint()
        self._G = sys.A3.adjoint()
        if sys.A2.pieces:
            g2 = self._A2s.scaled(lb)
            self._G = g2 if not sys.A3.pieces else _sum_kernels(self._G, g2)

    def __call__(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        e = np.exp(-self._lb * theta)
        out = (self._lb * e)[:, None] * self.y
        if self._A2s.pieces:
            out = out - self._A2s(theta) @ self.y
        if self._G.pieces:
            part = self._G.partial_laplace(self._lb, theta)
            out = out - e[:, None] * (part @ self.y)
        return out


def _sum_kernels(K1, K2):
    """Sum of two kernels on the union of their breakpoints."""
    from .kernels import MatrixKernel

    cuts = sorted({p.a for p in K1.pieces} | {p.b for p in K1.pieces} | {p.a for p in K2.pieces} | {p.b for p in K2.pieces})
    pieces = []
    for a, b in zip(cuts, cuts[1:]):
        if b - a <= 1e-12:
            continue
        mid = 0.5 * (a + b)
        c1 = next(p.coeffs for p in K1.pieces if p.a <= mid <= p.b)
        c2 = next(p.coeffs for p in K2.pieces if p.a <= mid <= p.b)
        J = max(c1.shape[0], c2.shape[0])
        c = np.zeros((J,) + c1.shape[1:], dtype=complex)
        c[: c1.shape[0]] += c1
        c[: c2.shape[0]] += c2
        pieces.append((a, b, c))
    return MatrixKernel(K1.n, pieces)


def build_psi(sys: NeutralSystem, triple: EigenTriple, scaled: bool = True) -> PsiFunction:
    y = triple.y_scaled if scaled else triple.y
    return PsiFunction(sys, triple.lam, y)


class _PairingCache:
    """Laplace integrals of the kernels at a fixed set of roots."""

    def __init__(self, sys: NeutralSystem, lams):
        self.sys = sys
        lams = np.asarray(lams, dtype=complex)
        n = sys.n
        zero = np.zeros((lams.size, n, n), dtype=complex)
        self.L2 = sys.A2.laplace(lams) if sys.A2.pieces else zero
        self.L3 = sys.A3.laplace(lams) if sys.A3.pieces else zero
        if sys.A2.pieces:
            self.W2 = sys.A2.times_poly([1, 1]).laplace(lams)
        else:
            self.W2 = zero
        if sys.A3.pieces:
            self.W3 = sys.A3.times_poly([1, 1]).laplace(lams)
        else:
            self.W3 = zero
        self.E = np.exp(-lams)[:, None, None] * sys.A_minus1


def pairing_matrix(sys: NeutralSystem, lams, xs, ys) -> np.ndarray:
    """``G[j, i] = <phi_i, psi_j>`` in closed form for roots ``lams`` with vectors ``xs``, ``ys``.

    ``phi_i`` uses ``xs[i]`` and ``psi_j`` uses ``ys[j]`` (no scaling applied).
    """
    lams = np.asarray(lams, dtype=complex)
    N = lams.size
    c = _PairingCache(sys, lams)
    I = np.eye(sys.n)
    out = np.empty((N, N), dtype=complex)
    for j in range(N):
        l2 = lams[j]
        for i in range(N):
            l1 = lams[i]
            d = l1 - l2
            M = I - c.E[i] - c.L2[i]
            if abs(d) < 1e-8:
                M = M + l2 * I - (c.W3[j] + l2 * c.W2[j])
            else:
                ed = np.exp(-d)
                M = M + l2 * (-np.expm1(-d) / d) * I
                Lg1 = c.L3[i] + l2 * c.L2[i]
                Lg2 = c.L3[j] + l2 * c.L2[j]
                M = M - (Lg1 - ed * Lg2) / d
            out[j, i] = np.conj(ys[j]) @ M @ xs[i]
    return out


def m2_pairing(sys: NeutralSystem, t1: EigenTriple, t2: EigenTriple, scaled: bool = True) -> complex:
    """``<phi(t1), psi(t2)>`` in the state space."""
    y = t2.y_scaled if scaled else t2.y
    return complex(pairing_matrix(sys, [t1.lam, t2.lam], [t1.x, t2.x], [t1.y, y])[1, 0])


def biorthonormalize(sys: NeutralSystem, triples: list[EigenTriple]) -> list[EigenTriple]:
    """Scale each ``y`` so that ``<phi, psi> = 1``."""
    out = []
    for t in triples:
        if t.x is None:
            out.append(t)
            continue
        p = pairing_matrix(sys, [t.lam], [t.x], [t.y])[0, 0]
        if abs(p) < 1e-12:
            raise SpectrumError(f"vanishing pairing at lambda={t.lam}")
        out.append(replace(t, norm_factor=complex(1.0 / np.conj(p))))
    return out


def moment_coefficients(triples: list[EigenTriple], B) -> np.ndarray:
    """Rows ``q[row, d] = w <b_d, psi>`` with ``w = max(|k|, 1)`` (1 for exceptional roots)."""
    B = np.asarray(B, dtype=complex)
    return np.array([t.weight * (t.y_scaled.conj() @ B) for t in triples]).reshape(len(triples), B.shape[1])
