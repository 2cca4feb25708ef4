"""Command line: ``analyze``, ``spectrum``, ``steer``, ``simulate`` and ``report``.

Exit codes: 0 controllable (or success), 2 not controllable, 3 inconclusive,
1 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import report
from .serialize import SchemaError, dumps
from .simulator import SampledControl, SimulationError, simulate
from .spectral import SpectrumWindow
from .system import read_state, read_system


def _window(args) -> SpectrumWindow:
    return SpectrumWindow(args.kmax, args.radius_scale, args.strip_margin)


def _emit(args, name: str, text: str):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


def read_control_csv(path) -> SampledControl:
    """Control table with a ``t`` column and ``u_d`` (or ``u_d_re``/``u_d_im``) columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise SimulationError(f"{path}: need a header and at least two samples")
    header = [h.strip() for h in rows[0]]
    if header[0] != "t":
        raise SimulationError(f"{path}: first column must be 't'")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    cols = {name: data[:, j] for j, name in enumerate(header)}
    names = sorted({h.split("_")[1] for h in header[1:] if h.startswith("u_")}, key=int)
    u = []
    for d in names:
        if f"u_{d}" in cols:
            u.append(cols[f"u_{d}"])
        else:
            u.append(cols[f"u_{d}_re"] + 1j * cols.get(f"u_{d}_im", 0.0))
    return SampledControl(cols["t"], np.column_stack(u))


def cmd_analyze(args) -> int:
    an = report.analyze(read_system(args.system), _window(args))
    _emit(args, "analysis.json", dumps(an.to_json()))
    return an.exit_code


def cmd_spectrum(args) -> int:
    sp, _ = report.spectrum_table(read_system(args.system), _window(args))
    _emit(args, "spectrum.csv", sp.to_csv())
    return 0


def cmd_steer(args) -> int:
    sys_ = read_system(args.system)
    target = read_state(args.target, sys_.n)
    res = report.steer(sys_, target, args.time, _window(args), args.grid, args.allow_subcritical)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        _emit(args, "verification.json", dumps(res.verification()))
        _emit(args, "control.csv", _control_csv(res.trajectory))
        _emit(args, "trajectory.csv", res.trajectory.to_csv())
    else:
        t = res.trajectory
        doc = {"verification": res.verification(), "control": {"t": t.times, "u": t.u}}
        sys.stdout.write(dumps(doc))
    return 0


def _control_csv(traj) -> str:
    from .serialize import complex_columns, write_csv

    header, cols = complex_columns("u", traj.u)
    rows = [[float(t)] + [float(c[i]) for c in cols] for i, t in enumerate(traj.times)]
    return write_csv(["t"] + header, rows)


def cmd_simulate(args) -> int:
    sys_ = read_system(args.system)
    control = read_control_csv(args.control)
    if control.u.shape[1] != sys_.r:
        raise SimulationError(f"control has {control.u.shape[1]} columns, system has r={sys_.r}")
    traj = simulate(sys_, control, args.time, args.grid)
    _emit(args, "trajectory.csv", traj.to_csv())
    return 0


def cmd_report(args) -> int:
    doc = report.full_report(read_system(args.system), _window(args), args.times)
    _emit(args, "report.json", dumps(doc))
    return report.EXIT_CODES[doc["analysis"]["verdict"]]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neutral-control", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, kmax):
        sp.add_argument("system", help="system JSON document")
        sp.add_argument("--kmax", type=int, default=kmax, help="frequency truncation |k| <= K")
        sp.add_argument("--strip-margin", type=float, default=1.0)
        sp.add_argument("--radius-scale", type=float, default=1.0)
        sp.add_argument("--out", help="write files into this directory instead of stdout")

    a = sub.add_parser("analyze", help="controllability verdict with witnesses")
    common(a, 5)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("spectrum", help="certified characteristic roots as CSV")
    common(s, 5)
    s.set_defaults(func=cmd_spectrum)

    st = sub.add_parser("steer", help="least-norm steering control, verified by simulation")
    common(st, 6)
    st.add_argument("target", help="target state JSON document")
    st.add_argument("--time", type=float, required=True)
    st.add_argument("--grid", type=int, default=400)
    st.add_argument("--allow-subcritical", action="store_true")
    st.set_defaults(func=cmd_steer)

    sm = sub.add_parser("simulate", help="integrate under a sampled control")
    sm.add_argument("system")
    sm.add_argument("control", help="control CSV with columns t, u_1..u_r")
    sm.add_argument("--time", type=float, required=True)
    sm.add_argument("--grid", type=int, default=400)
    sm.add_argument("--out")
    sm.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="analysis, spectrum and Gram conditioning in one JSON")
    common(r, 4)
    r.add_argument("--times", type=float, nargs="+", help="horizons for the conditioning table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, SchemaError, report.StageError, report.SteeringRefused, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
