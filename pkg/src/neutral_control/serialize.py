"""JSON/CSV helpers: complex matrix parsing and deterministic output."""

from __future__ import annotations

import csv
import io
import math

import numpy as np


class SchemaError(ValueError):
    """Document does not match the expected schema; ``path`` names the field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def parse_scalar(value, path: str) -> complex:
    if isinstance(value, bool):
        raise SchemaError(path, "expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return complex(value[0], value[1])
    raise SchemaError(path, f"expected a real number or [re, im], got {value!r}")


def parse_matrix(value, path: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Parse a row-major matrix whose entries are reals or ``[re, im]`` pairs."""
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise SchemaError(path, "expected a non-empty list of rows")
    width = len(value[0])
    rows = []
    for i, row in enumerate(value):
        if len(row) != width:
            raise SchemaError(f"{path}[{i}]", f"row length {len(row)} != {width}")
        rows.append([parse_scalar(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)])
    out = np.array(rows, dtype=complex)
    if shape is not None and out.shape != shape:
        raise SchemaError(path, f"dimension mismatch: expected {shape}, got {out.shape}")
    return out


def parse_vector(value, path: str, size: int | None = None) -> np.ndarray:
    if not isinstance(value, list):
        raise SchemaError(path, "expected a list")
    out = np.array([parse_scalar(v, f"{path}[{i}]") for i, v in enumerate(value)], dtype=complex)
    if size is not None and out.size != size:
        raise SchemaError(path, f"dimension mismatch: expected length {size}, got {out.size}")
    return out


def _real_if_close(x: complex):
    x = complex(x)
    return x.real if x.imag == 0.0 else [x.real, x.imag]


def matrix_to_json(m) -> list:
    m = np.atleast_2d(np.asarray(m))
    return [[_real_if_close(v) for v in row] for row in m]


def vector_to_json(v) -> list:
    return [_real_if_close(x) for x in np.ravel(v)]


def fmt(x: float) -> str:
    """17-significant-digit rendering used for every float we emit."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "null"
    if x == 0.0:
        return "0.0"
    out = format(x, ".17g")
    return out if any(c in out for c in ".e") else out + ".0"


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, fixed float format, complex as [re, im]."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            return "null"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return fmt(o)
        if isinstance(o, (complex, np.complexfloating)):
            return enc([float(o.real), float(o.imag)], level)
        if isinstance(o, str):
            return _json_str(o)
        if isinstance(o, np.ndarray):
            return enc(o.tolist(), level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{_json_str(str(k))}: {enc(o[k], level + 1)}" for k in sorted(o, key=str)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float, np.number, bool, type(None))) for v in o):
                return "[" + ", ".join(enc(v, level) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def _json_str(s: str) -> str:
    import json

    return json.dumps(s)


def write_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def complex_columns(name: str, values: np.ndarray, force_complex: bool = False):
    """Split a (T, k) complex array into named real columns."""
    values = np.atleast_2d(np.asarray(values))
    cplx = force_complex or np.iscomplexobj(values) and np.any(values.imag != 0.0)
    header, cols = [], []
    for j in range(values.shape[1]):
        if cplx:
            header += [f"{name}_{j + 1}_re", f"{name}_{j + 1}_im"]
            cols += [values[:, j].real, values[:, j].imag]
        else:
            header.append(f"{name}_{j + 1}")
            cols.append(np.real(values[:, j]))
    return header, cols
