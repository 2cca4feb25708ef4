"""End-to-end pipelines behind the command line: analysis, spectrum, steering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .canonical import (
    CanonicalTransform,
    ControlLaw,
    KalmanReport,
    apply_transform,
    default_spectrum,
    frobenius_transform,
    kalman_analysis,
    regularize_neutral,
)
from .moments import assemble, conditioning_report, gram_conditioning, synthesize_control
from .serialize import matrix_to_json, vector_to_json
from .simulator import Trajectory, simulate, steering_error, terminal_state
from .spectral import Spectrum, SpectrumError, SpectrumWindow, biorthonormalize, compute_spectrum
from .system import M2State, NeutralSystem, evaluate_delta, validate_domain_membership

VERDICT_OK = "exactly-controllable (window-certified)"
VERDICT_FAIL = "not-controllable"
VERDICT_UNSURE = "inconclusive"
EXIT_CODES = {VERDICT_OK: 0, VERDICT_FAIL: 2, VERDICT_UNSURE: 3}
WITNESS_TOL = 1e-8


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error


@dataclass(frozen=True)
class RootWitness:
    """``lam`` and unit ``y`` with ``Delta(lam)^* y = 0`` and ``B^* y = 0``."""

    lam: complex
    y: np.ndarray

    def residuals(self, sys: NeutralSystem) -> tuple[float, float]:
        D = evaluate_delta(sys, self.lam)
        return (
            float(np.linalg.norm(D.conj().T @ self.y)),
            float(np.linalg.norm(sys.B.conj().T @ self.y)),
        )


@dataclass
class ConditionI:
    status: str  # "pass", "fail" or "not-evaluated"
    witness: RootWitness | None = None
    roots_checked: int = 0
    note: str = ""


def _unit_phase(v):
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def left_witness(sys: NeutralSystem, lam: complex, tol: float = WITNESS_TOL) -> np.ndarray | None:
    """Unit ``y`` in the left kernel of ``Delta(lam)`` with ``B^* y = 0``, if one exists."""
    D = evaluate_delta(sys, lam)
    U, s, _ = np.linalg.svd(D)
    ref = (1.0 + abs(lam)) * (1.0 + np.linalg.norm(sys.A_minus1, 2))
    if s[0] <= 1e-12 * ref:
        N = np.eye(sys.n, dtype=complex)
    else:
        keep = s <= max(tol * s[0], s[-1])
        N = U[:, keep]
    G = sys.B.conj().T @ N
    _, sg, Vh = np.linalg.svd(G)
    sg = np.concatenate([sg, np.zeros(N.shape[1] - sg.size)])
    if sg[-1] <= tol * max(np.linalg.norm(sys.B, 2), 1e-300):
        return _unit_phase(N @ Vh[-1].conj())
    return None


def check_condition_i(sys: NeutralSystem, spectrum: Spectrum, tol: float = WITNESS_TOL) -> ConditionI:
    """Scan every certified root (and reported multiple roots) for a shared left kernel with ``B``."""
    roots = [t.lam for t in spectrum.triples if t.certified] + [r.lam for r in spectrum.multiple_roots]
    for lam in roots:
        y = left_witness(sys, lam, tol)
        if y is not None:
            return ConditionI("fail", RootWitness(complex(lam), y), len(roots))
    return ConditionI("pass", None, len(roots))


@dataclass
class Analysis:
    system: NeutralSystem
    window: SpectrumWindow
    kalman: KalmanReport
    verdict: str
    condition_i: ConditionI
    transform: CanonicalTransform | None = None
    regularization: np.ndarray | None = None
    hatted: NeutralSystem | None = None
    law: ControlLaw | None = None
    spectrum: Spectrum | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def n1(self) -> int:
        return self.kalman.n1

    @property
    def critical_time(self) -> float | None:
        if not self.kalman.controllable:
            return None
        return float(self.kalman.n1 * self.system.delay_h)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def to_json(self) -> dict:
        kal = self.kalman.to_json()
        w2 = self.kalman.witness
        if w2 is not None:
            ra, rb = w2.residuals(self.system.A_minus1, self.system.B)
            kal["witness"]["residuals"] = {"A_minus1_star": ra, "B_star": rb}
        ci = {"status": self.condition_i.status, "roots_checked": self.condition_i.roots_checked, "witness": None}
        if self.condition_i.note:
            ci["note"] = self.condition_i.note
        if self.condition_i.witness is not None:
            w = self.condition_i.witness
            rd, rb = w.residuals(self.system)
            ci["witness"] = {
                "lambda": complex(w.lam),
                "y": vector_to_json(w.y),
                "residuals": {"delta_star": rd, "B_star": rb},
            }
        out = {
            "verdict": self.verdict,
            "condition_ii": {"status": "pass" if self.kalman.controllable else "fail", "kalman": kal},
            "condition_i": ci,
            "n1": self.n1,
            "critical_time": self.critical_time,
            "provenance": {"window": self.window.to_json(), "delay_h": self.system.delay_h},
            "notes": list(self.notes),
        }
        if self.transform is not None:
            out["transform"] = self.transform.to_json()
            out["transform"]["P_total"] = matrix_to_json(self.law.P)
        if self.spectrum is not None:
            sp = self.spectrum
            out["spectrum"] = {
                "roots": len(sp.triples),
                "uncertified": [list(mk) for mk in sp.uncertified],
                "exceptional": [complex(t.lam) for t in sp.exceptional],
                "multiple_roots": [{"lambda": complex(r.lam), "multiplicity": r.multiplicity} for r in sp.multiple_roots],
                "rectangle": list(sp.rectangle) if sp.rectangle else None,
                "rectangle_count": sp.rectangle_count,
                "scan_complete": sp.scan_complete,
                "absorbed_labels": [list(mk) for mk in sp.absorbed],
            }
        return out


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def reduce_system(sys: NeutralSystem, targets=None):
    """Regularize, place an admissible spectrum and move to Frobenius coordinates."""
    A, B = sys.A_minus1, sys.B
    P_reg = regularize_neutral(A, B)
    A_r = A + B @ P_reg
    if targets is None:
        targets = default_spectrum(A_r)
    T = frobenius_transform(A_r, B, targets)
    total = CanonicalTransform(P_reg + T.P, T.C, T.R, T.A_hat, T.B_hat, T.block_sizes, T.assigned_spectrum, T.C_inv)
    hatted, law = apply_transform(sys, total)
    return total, P_reg, hatted, law


def analyze(sys: NeutralSystem, window: SpectrumWindow | None = None) -> Analysis:
    """Both rank conditions, critical time and a verdict with a checkable witness."""
    window = window or SpectrumWindow()
    kal = _stage("kalman", kalman_analysis, sys.A_minus1, sys.B)
    notes = []
    if not kal.controllable:
        ci = ConditionI("not-evaluated", note="condition (ii) failed")
        try:
            sp = compute_spectrum(sys, window)
            ci = check_condition_i(sys, sp)
        except SpectrumError as exc:
            ci.note += f"; spectrum unavailable: {exc}"
        return Analysis(sys, window, kal, VERDICT_FAIL, ci, notes=notes)

    T, P_reg, hatted, law = _stage("canonical", reduce_system, sys)
    sp = _stage("spectral", compute_spectrum, hatted, window)
    ci = check_condition_i(hatted, sp)
    if sp.absorbed:
        notes.append(f"chain labels (m, k) {sp.absorbed} dropped: the complete rectangle scan already accounts for every root inside it")
    if np.any(P_reg):
        notes.append("A_minus1 singular: regularizing feedback applied")
    if ci.witness is not None:
        # back to original coordinates: y = C^{-H} y_hat
        y = _unit_phase(np.linalg.solve(np.asarray(T.C, dtype=complex).conj().T, ci.witness.y))
        ci.witness = RootWitness(ci.witness.lam, y)
        verdict = VERDICT_FAIL
    elif sp.uncertified or not sp.scan_complete:
        verdict = VERDICT_UNSURE
        if sp.uncertified:
            notes.append(f"uncertified roots (m, k): {sp.uncertified}")
        if not sp.scan_complete:
            notes.append("exceptional-root scan incomplete")
    else:
        verdict = VERDICT_OK
    return Analysis(sys, window, kal, verdict, ci, T, P_reg, hatted, law, sp, notes)


@dataclass
class SteerResult:
    analysis: Analysis
    control: object
    trajectory: Trajectory
    achieved: M2State
    terminal_error: float
    moment_residual: float
    gram_condition: float
    excluded_rows: list
    warnings: list[str]

    def verification(self) -> dict:
        c = self.control
        return {
            "terminal_error": self.terminal_error,
            "moment_residual": self.moment_residual,
            "gram_condition": self.gram_condition,
            "control_norm": c.norm,
            "regularization": c.regularization,
            "T": c.T,
            "rows": int(c.lams.size),
            "excluded_rows": [{"lambda": complex(r.lam), "multiplicity": r.multiplicity} for r in self.excluded_rows],
            "warnings": list(self.warnings),
            "verdict": self.analysis.verdict,
        }


class SteeringRefused(ValueError):
    pass


def transformed_target(target: M2State, sys: NeutralSystem, law: ControlLaw) -> M2State:
    """Target in the coordinates of the closed-loop Frobenius system."""
    C = np.asarray(law.C, dtype=complex)
    y = target.y - sys.B @ (np.asarray(law.P) @ target.z[0])
    return M2State(np.linalg.solve(C, y), np.linalg.solve(C, target.z.T).T)


def steer(
    sys: NeutralSystem,
    target: M2State,
    T: float,
    window: SpectrumWindow | None = None,
    M: int = 400,
    allow_subcritical: bool = False,
    analysis: Analysis | None = None,
    force: bool = False,
) -> SteerResult:
    """Least-norm control steering zero to ``target`` at time ``T``, verified by simulation.

    ``force`` proceeds even when the analysis verdict is not a pass; it exists
    for experiments and is off on the command line.
    """
    window = window or SpectrumWindow(6)
    an = analysis or analyze(sys, window)
    warnings = []
    if an.verdict != VERDICT_OK:
        if not force:
            raise SteeringRefused(f"verdict is '{an.verdict}'; steering requires a controllable system")
        warnings.append(f"verdict '{an.verdict}' overridden")
    if an.hatted is None:
        raise SteeringRefused("no Frobenius reduction available")
    T0 = an.critical_time
    if T0 is not None and T <= T0:
        if not allow_subcritical:
            raise SteeringRefused(f"T={T} does not exceed the critical time {T0}")
        warnings.append(f"T={T} at or below critical time {T0}")
    check = validate_domain_membership(sys, target)
    if not check.member:
        raise StageError("target", ValueError(f"target outside the operator domain (residual {check.residual:.3e})"))
    hs = an.hatted
    h = sys.delay_h
    tri = _stage("spectral", biorthonormalize, hs, [t for t in an.spectrum.triples if t.certified])
    x_hat = transformed_target(target, sys, an.law)
    ms = _stage("moments", assemble, hs, tri, x_hat, T / h, an.spectrum.multiple_roots)
    if ms.excluded_rows:
        warnings.append(f"{len(ms.excluded_rows)} multiple root(s) excluded from the moment rows")
    if target.norm() > 0 and not np.any(ms.s):
        raise StageError("moments", ValueError("all moments vanish for a nonzero target"))
    real = bool(sys.is_real and np.all(np.isreal(target.y)) and np.all(np.isreal(target.z)))
    ctrl = _stage("moments", synthesize_control, ms, 0.0, real)
    internal = ctrl

    def v_of_t(t):
        return internal(np.asarray(t) / h)

    traj = _stage("simulate", simulate, sys, v_of_t, T, M, an.law.P, an.law.R)
    achieved = terminal_state(traj, sys, target.M)
    err = steering_error(achieved, target)
    _, cond = gram_conditioning(ms.gram)
    return SteerResult(an, ctrl, traj, achieved, err, ctrl.moment_residual, cond, ms.excluded_rows, warnings)


def spectrum_table(sys: NeutralSystem, window: SpectrumWindow) -> tuple[Spectrum, str]:
    """Spectrum of ``sys`` (or of its Frobenius reduction when ``A_minus1`` is not admissible)."""
    coords = "original"
    try:
        sp = compute_spectrum(sys, window)
        target = sys
    except SpectrumError:
        _, _, target, _ = _stage("canonical", reduce_system, sys)
        sp = _stage("spectral", compute_spectrum, target, window)
        coords = "transformed"
    cert = [t for t in sp.triples if t.certified]
    scaled = {id(t): s for t, s in zip(cert, biorthonormalize(target, cert))}
    sp.triples = [scaled.get(id(t), t) for t in sp.triples]
    return sp, coords


def full_report(sys: NeutralSystem, window: SpectrumWindow, T_list=None) -> dict:
    """Analysis, spectrum summary and Gram conditioning bundled in one record."""
    an = analyze(sys, window)
    out = {"analysis": an.to_json()}
    if an.spectrum is not None and an.hatted is not None:
        rows = [t for t in an.spectrum.triples if t.certified]
        tri = biorthonormalize(an.hatted, rows)
        T0 = an.critical_time or 1.0
        T_list = T_list or [max(T0 - 0.5, 0.25), T0 + 0.5, T0 + 1.0]
        out["conditioning"] = conditioning_report(an.hatted, tri, [t / sys.delay_h for t in T_list])
        for rec, T in zip(out["conditioning"], T_list):
            rec["T"] = float(T)
        out["spectrum_rows"] = [
            {"m": t.m, "k": t.k, "lambda": complex(t.lam), "kind": t.kind, "norm_factor": complex(t.norm_factor)}
            for t in tri
        ]
    return out
