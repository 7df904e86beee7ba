"""Readers for the engine's documented output formats.

This package talks to the engine only through its files, so the schemas are
implemented here from their documentation rather than imported:

- surface CSV: ``# surface-csv 1`` tag line, ``# meta <json>``,
  ``# axis1 <floats>``, ``# axis2 <floats>``, then one comma-separated loss
  row per axis1 value (``nan`` for error cells);
- trajectory NDJSON: one JSON object per snapshot with at least
  ``iteration`` (int), ``theta`` (flat float list), ``coverage`` (int);
- eval CSV: ``iteration,kl,coverage`` header plus plain numeric rows.

Every parse failure raises :class:`SchemaError` naming the file and the
offending line/column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SchemaError",
    "Surface",
    "Minimum",
    "read_surface_csv",
    "read_trajectory",
    "read_eval_csv",
    "find_local_minima",
    "global_minima",
    "means_from_theta",
]


class SchemaError(ValueError):
    """An input file does not match its documented schema."""


@dataclass
class Surface:
    axis1: np.ndarray
    axis2: np.ndarray
    loss: np.ndarray
    metadata: dict
    name: str = "surface"

    def __post_init__(self):
        if self.loss.shape != (len(self.axis1), len(self.axis2)):
            raise SchemaError(f"{self.name}: loss shape {self.loss.shape} does not match axes")


@dataclass(frozen=True)
class Minimum:
    theta: tuple
    loss: float
    is_global: bool


def _parse_axis(line: str, tag: str, path) -> np.ndarray:
    prefix = f"# {tag} "
    if not line.startswith(prefix):
        raise SchemaError(f"{path}: expected a '{prefix.strip()}' header line, got {line[:40]!r}")
    try:
        return np.array([float(v) for v in line[len(prefix):].split(",")])
    except ValueError as e:
        raise SchemaError(f"{path}: bad float in {tag} header: {e}") from None


def read_surface_csv(path) -> Surface:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 5 or not lines[0].startswith("# surface-csv"):
        raise SchemaError(f"{path}: missing '# surface-csv' format tag")
    if not lines[1].startswith("# meta "):
        raise SchemaError(f"{path}: missing '# meta' header line")
    try:
        meta = json.loads(lines[1][len("# meta "):])
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: metadata is not valid JSON: {e}") from None
    axis1 = _parse_axis(lines[2], "axis1", path)
    axis2 = _parse_axis(lines[3], "axis2", path)
    rows = []
    for ln_no, ln in enumerate(lines[4:], start=5):
        if not ln:
            continue
        cells = ln.split(",")
        if len(cells) != len(axis2):
            raise SchemaError(f"{path}:{ln_no}: expected {len(axis2)} columns, got {len(cells)}")
        try:
            rows.append([float(v) for v in cells])
        except ValueError:
            bad = next(i for i, v in enumerate(cells) if not _is_float(v))
            raise SchemaError(f"{path}:{ln_no}: column {bad + 1} is not a number: {cells[bad]!r}") from None
    if len(rows) != len(axis1):
        raise SchemaError(f"{path}: expected {len(axis1)} loss rows, got {len(rows)}")
    stem = str(path).rsplit("/", 1)[-1]
    stem = stem[:-4] if stem.endswith(".csv") else stem
    return Surface(axis1, axis2, np.array(rows), meta, name=stem)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


_TRAJ_KEYS = (("iteration", int), ("theta", list), ("coverage", int))


def read_trajectory(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}:{ln_no}: not valid JSON: {e}") from None
            if not isinstance(rec, dict):
                raise SchemaError(f"{path}:{ln_no}: snapshot record must be a JSON object")
            for key, typ in _TRAJ_KEYS:
                if key not in rec:
                    raise SchemaError(f"{path}:{ln_no}: snapshot record missing key {key!r}")
                if not isinstance(rec[key], typ):
                    raise SchemaError(f"{path}:{ln_no}: key {key!r} must be {typ.__name__}")
            try:
                rec["theta"] = [float(v) for v in rec["theta"]]
            except (TypeError, ValueError):
                raise SchemaError(f"{path}:{ln_no}: key 'theta' must be a flat float list") from None
            records.append(rec)
    if not records:
        raise SchemaError(f"{path}: trajectory holds no snapshot records")
    records.sort(key=lambda r: r["iteration"])
    return records


_EVAL_HEADER = ("iteration", "kl", "coverage")


def read_eval_csv(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise SchemaError(f"{path}: empty eval file")
    header = tuple(lines[0].split(","))
    if header != _EVAL_HEADER:
        bad = next(
            (i for i, (h, e) in enumerate(zip(header, _EVAL_HEADER)) if h != e),
            min(len(header), len(_EVAL_HEADER)),
        )
        raise SchemaError(
            f"{path}: bad eval header column {bad + 1}: expected "
            f"{_EVAL_HEADER[bad] if bad < len(_EVAL_HEADER) else 'nothing'!r}, "
            f"got {header[bad] if bad < len(header) else 'nothing'!r}"
        )
    rows = []
    for ln_no, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != 3:
            raise SchemaError(f"{path}:{ln_no}: expected 3 columns, got {len(cells)}")
        try:
            rows.append((int(cells[0]), float(cells[1]), int(cells[2])))
        except ValueError:
            bad = next(i for i, v in enumerate(cells) if not _is_float(v))
            raise SchemaError(f"{path}:{ln_no}: column {_EVAL_HEADER[bad]!r} is not a number: {cells[bad]!r}") from None
    return rows


def find_local_minima(surface: Surface, global_tol: float = 1e-9) -> list:
    """Interior grid points strictly below all 8 neighbors, mirroring the
    engine's detector so star markers land on the same cells."""
    z = surface.loss
    if not np.all(np.isfinite(z)):
        raise SchemaError(f"{surface.name}: surface has non-finite cells; cannot scan minima")
    c = z[1:-1, 1:-1]
    strict = np.ones_like(c, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            strict &= c < z[1 + di : z.shape[0] - 1 + di, 1 + dj : z.shape[1] - 1 + dj]
    gmin = float(np.min(z))
    out = []
    for i, j in zip(*np.nonzero(strict)):
        val = float(c[i, j])
        out.append(
            Minimum(
                theta=(float(surface.axis1[i + 1]), float(surface.axis2[j + 1])),
                loss=val,
                is_global=bool(val <= gmin + global_tol),
            )
        )
    return out


def global_minima(surface: Surface, global_tol: float = 1e-9) -> list:
    return sorted(m.theta for m in find_local_minima(surface, global_tol) if m.is_global)


def means_from_theta(theta, dim: int) -> np.ndarray:
    """Component means from a flat snapshot vector: the engine stores all
    K*dim means first, then K*dim*(dim+1)/2 scale entries."""
    theta = np.asarray(theta, dtype=np.float64)
    per = dim + (dim * (dim + 1)) // 2
    if theta.size == 0 or theta.size % per != 0:
        raise SchemaError(f"theta length {theta.size} does not fit dimension {dim}")
    k = theta.size // per
    return theta[: k * dim].reshape(k, dim)
