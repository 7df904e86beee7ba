import json

import numpy as np
import pytest


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_surface_csv(path, axis1, axis2, loss, meta=None):
    """Emit the documented surface CSV format by hand (the renderer must be
    exercised against the schema, not against the engine's writer)."""
    meta = meta if meta is not None else {"sigma2": 0.1}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# surface-csv 1\n")
        fh.write("# meta " + json.dumps(meta, separators=(",", ":"), sort_keys=True) + "\n")
        fh.write("# axis1 " + ",".join(fmt(v) for v in axis1) + "\n")
        fh.write("# axis2 " + ",".join(fmt(v) for v in axis2) + "\n")
        for row in loss:
            fh.write(",".join("nan" if not np.isfinite(v) else fmt(v) for v in row) + "\n")


def two_star_surface(n=21, lo=-2.0, hi=2.0):
    """Analytic surface with exactly two equal global minima at (-1, 1) and
    (1, -1); the grid contains both points exactly."""
    ax = np.linspace(lo, hi, n)
    x, y = np.meshgrid(ax, ax, indexing="ij")
    loss = ((x + 1.0) ** 2 + (y - 1.0) ** 2) * ((x - 1.0) ** 2 + (y + 1.0) ** 2) / 10.0
    return ax, ax, loss


def write_trajectory_ndjson(path, iterations, k=3, dim=2, seed=0):
    """Minimal snapshot records: means drift right with iteration so frames
    are visually distinct; scale entries are arbitrary."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(k, dim))
    per = dim + dim * (dim + 1) // 2
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in iterations:
            means = base + 0.001 * it
            theta = np.concatenate([means.reshape(-1), np.zeros(k * (per - dim))])
            rec = {
                "iteration": int(it),
                "theta": [float(v) for v in theta],
                "phase": "test",
                "family_counts": {},
                "running_losses": {},
                "coverage": int(min(it // 100, k)),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


@pytest.fixture
def surface_file(tmp_path):
    ax1, ax2, loss = two_star_surface()
    p = tmp_path / "joint.csv"
    write_surface_csv(p, ax1, ax2, loss)
    return p


@pytest.fixture
def trajectory_file(tmp_path):
    p = tmp_path / "trajectory.ndjson"
    write_trajectory_ndjson(p, iterations=range(0, 601, 100))
    return p
