"""CSV and JSON readers and writers for curves, fits and kernel surfaces.

Every float is written with 17 significant digits so that files round-trip
exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .bspline import BSplineBasis, grid_from_points, make_basis
from .model import FunctionalSample, TensorKernel

__all__ = [
    "ParseError",
    "fmt",
    "read_curves",
    "write_curves",
    "to_jsonable",
    "write_json",
    "read_json",
    "basis_to_dict",
    "basis_from_dict",
    "fit_to_dict",
    "kernel_from_dict",
    "write_surface",
]


class ParseError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def read_curves(path: str | Path) -> FunctionalSample:
    """Curve CSV: line 1 holds the grid, every further line one curve."""
    path = Path(path)
    rows: list[tuple[int, list[float]]] = []
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise ParseError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ParseError(f"{path}: line {lineno}: cannot parse {bad!r} as a number") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}: line {lineno}: non-finite value")
            rows.append((lineno, vals))
    if len(rows) < 2:
        raise ParseError(f"{path}: need a grid line and at least one curve")
    G = len(rows[0][1])
    for lineno, vals in rows[1:]:
        if len(vals) != G:
            raise ParseError(f"{path}: line {lineno}: expected {G} values, found {len(vals)}")
    try:
        grid = grid_from_points(rows[0][1])
    except ValueError as exc:
        raise ParseError(f"{path}: line {rows[0][0]}: {exc}") from None
    return FunctionalSample(np.array([v for _, v in rows[1:]]), grid)


def _is_float(c: str) -> bool:
    try:
        float(c)
    except ValueError:
        return False
    return True


def write_curves(path: str | Path, sample: FunctionalSample) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(fmt(v) for v in sample.grid.points) + "\n")
        for row in sample.values:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _finite_or_none(v: float) -> float | None:
    return v if math.isfinite(v) else None


def to_jsonable(obj):
    """Recursively convert numpy containers; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite_or_none(float(obj))
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: str | Path, obj) -> None:
    # repr of a Python float is the shortest exact form, at most 17 digits.
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=False, allow_nan=False)
    Path(path).write_text(text + "\n")


def read_json(path: str | Path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def basis_to_dict(basis: BSplineBasis) -> dict:
    return {"order": basis.order, "num_basis": basis.num_basis, "domain": list(basis.domain),
            "knots": basis.knots}


def basis_from_dict(d: dict) -> BSplineBasis:
    return make_basis(tuple(d["domain"]), int(d["num_basis"]), int(d["order"]))


def fit_to_dict(res, structure, lam_max: float | None = None, extra: dict | None = None) -> dict:
    """Serializable record of a :class:`~fofsparse.solver.FitResult`."""
    k = res.kernel
    M, L, d = structure.dims
    rects = []
    if res.zero_set is not None:
        for (m, l), (t0, t1, s0, s1) in zip(res.zero_set.indices, res.zero_set.bounds()):
            rects.append({"m": m, "l": l, "t": [t0, t1], "s": [s0, s1]})
    out = {
        "lambda": res.lam,
        "lambda_max": lam_max,
        "converged": res.converged,
        "iterations": res.iterations,
        "objective": res.objective,
        "objective_trace": res.objective_trace,
        "dims": [M, L, d],
        "psi": np.asarray(res.psi_hat).reshape((M, L), order="F"),
        "active_groups": res.active_groups,
        "zero_rectangles": rects,
    }
    if k is not None:
        out["basis_t"] = basis_to_dict(k.basis_t)
        out["basis_s"] = basis_to_dict(k.basis_s)
        out["x_mean"] = k.x_mean
        out["y_mean"] = k.y_mean
    if extra:
        out.update(extra)
    return out


def kernel_from_dict(d: dict) -> TensorKernel:
    try:
        bt = basis_from_dict(d["basis_t"])
        bs = basis_from_dict(d["basis_s"])
        Psi = np.asarray(d["psi"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"fit record is missing or has invalid kernel fields: {exc}") from None
    xm = d.get("x_mean")
    ym = d.get("y_mean")
    return TensorKernel(Psi, bt, bs,
                        x_mean=None if xm is None else np.asarray(xm, float),
                        y_mean=None if ym is None else np.asarray(ym, float))


def write_surface(path: str | Path, kernel: TensorKernel, points: int = 101) -> None:
    """Long-format ``t,s,value`` CSV on a ``points x points`` grid over the kernel domain."""
    t = np.linspace(*kernel.basis_t.domain, points)
    s = np.linspace(*kernel.basis_s.domain, points)
    V = kernel.surface(t, s)
    with Path(path).open("w", newline="") as fh:
        fh.write("t,s,value\n")
        for i, ti in enumerate(t):
            ft = fmt(ti)
            for j, sj in enumerate(s):
                fh.write(f"{ft},{fmt(sj)},{fmt(V[i, j])}\n")
