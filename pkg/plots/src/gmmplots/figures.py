"""Figure rendering: heatmaps, panel grids, trajectory animations, coverage
curves.

Every figure writes a byte-deterministic sidecar ``<name>.meta.json``
(axes ranges, star-marker positions, rendered frame iterations) next to the
raster, so content checks never compare pixels.  All inputs are parsed and
validated before any output file is created: a bad request leaves the output
directory untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .io import (
    SchemaError,
    Surface,
    find_local_minima,
    means_from_theta,
    read_eval_csv,
    read_surface_csv,
    read_trajectory,
)

__all__ = ["FigureRequest", "render", "KINDS", "DEFAULT_HIGHLIGHTS"]

KINDS = ("heatmap", "panel_grid", "trajectory_animation", "coverage_curve")
DEFAULT_HIGHLIGHTS = (200, 800, 1400, 6000)


@dataclass(frozen=True)
class FigureRequest:
    inputs: tuple
    kind: str
    out_dir: str
    colormap: str = "viridis"
    stars: bool = True
    frame_stride: int = 1
    frames: str = "all"  # "all" (every frame_stride-th snapshot) or "key" (highlights only)
    highlights: tuple = DEFAULT_HIGHLIGHTS
    dim: int = 2
    target_means: np.ndarray | None = None
    target_sigma2: float = 0.05
    dpi: int = 100

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(str(p) for p in self.inputs))
        object.__setattr__(self, "highlights", tuple(int(i) for i in self.highlights))
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {list(KINDS)}")
        if not self.inputs:
            raise SchemaError("no input files given")
        if self.frame_stride < 1:
            raise SchemaError("frame_stride must be >= 1")
        if self.frames not in ("all", "key"):
            raise SchemaError(f"frames must be 'all' or 'key', got {self.frames!r}")
        if self.dim < 1 or self.target_sigma2 <= 0:
            raise SchemaError("dim must be >= 1 and target_sigma2 positive")
        if self.target_means is not None:
            tm = np.asarray(self.target_means, dtype=np.float64)
            if tm.ndim != 2 or tm.shape[1] != self.dim:
                raise SchemaError(f"target means must be (K, {self.dim})")
            object.__setattr__(self, "target_means", tm)


def _f17(x: float) -> float:
    return float(f"{float(x):.17g}")


def _write_meta(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _surface_stars(surface: Surface, want: bool):
    """Global-minimum positions, or None when the surface has error cells
    (stars are skipped, not faked, on a partially failed sweep)."""
    if not want:
        return []
    if not np.all(np.isfinite(surface.loss)):
        return None
    return sorted(m.theta for m in find_local_minima(surface) if m.is_global)


def _surface_meta(surface: Surface, stars) -> dict:
    return {
        "name": surface.name,
        "axis1": {"lo": _f17(surface.axis1[0]), "hi": _f17(surface.axis1[-1]), "n": len(surface.axis1)},
        "axis2": {"lo": _f17(surface.axis2[0]), "hi": _f17(surface.axis2[-1]), "n": len(surface.axis2)},
        "loss_min": _f17(np.nanmin(surface.loss)),
        "loss_max": _f17(np.nanmax(surface.loss)),
        "stars": None if stars is None else [[_f17(a), _f17(b)] for a, b in stars],
    }


def _draw_surface(ax, surface: Surface, stars, colormap: str):
    # loss[i, j] lives at (axis1[i], axis2[j]); axis1 runs along x
    h1 = (surface.axis1[-1] - surface.axis1[0]) / max(len(surface.axis1) - 1, 1)
    h2 = (surface.axis2[-1] - surface.axis2[0]) / max(len(surface.axis2) - 1, 1)
    extent = (
        surface.axis1[0] - h1 / 2,
        surface.axis1[-1] + h1 / 2,
        surface.axis2[0] - h2 / 2,
        surface.axis2[-1] + h2 / 2,
    )
    im = ax.imshow(surface.loss.T, origin="lower", extent=extent, cmap=colormap, aspect="auto")
    if stars:
        xs, ys = zip(*stars)
        ax.plot(xs, ys, linestyle="none", marker="*", markersize=14, color="red", markeredgecolor="white")
    ax.set_xlabel(r"$\mu_1$")
    ax.set_ylabel(r"$\mu_2$")
    ax.set_title(surface.name, fontsize=10)
    return im


def _render_heatmap(req: FigureRequest, out: Path) -> list:
    if len(req.inputs) != 1:
        raise SchemaError(f"heatmap takes exactly one input CSV, got {len(req.inputs)}")
    surface = read_surface_csv(req.inputs[0])
    stars = _surface_stars(surface, req.stars)
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = _draw_surface(ax, surface, stars, req.colormap)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    png = f"{surface.name}.png"
    fig.savefig(out / png, dpi=req.dpi)
    plt.close(fig)
    meta = {"kind": "heatmap", "colormap": req.colormap, "image": png, **_surface_meta(surface, stars)}
    _write_meta(out / f"{surface.name}.meta.json", meta)
    return [png, f"{surface.name}.meta.json"]


def _render_panel_grid(req: FigureRequest, out: Path) -> list:
    surfaces = [read_surface_csv(p) for p in req.inputs]
    stars = [_surface_stars(s, req.stars) for s in surfaces]
    out.mkdir(parents=True, exist_ok=True)
    n = len(surfaces)
    ncols = min(n, 5)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.4 * ncols, 3.2 * nrows), squeeze=False)
    for k, (s, st) in enumerate(zip(surfaces, stars)):
        _draw_surface(axes[k // ncols][k % ncols], s, st, req.colormap)
    for k in range(n, nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    fig.tight_layout()
    fig.savefig(out / "panels.png", dpi=req.dpi)
    plt.close(fig)
    meta = {
        "kind": "panel_grid",
        "colormap": req.colormap,
        "image": "panels.png",
        "layout": [nrows, ncols],
        "panels": [_surface_meta(s, st) for s, st in zip(surfaces, stars)],
    }
    _write_meta(out / "panels.meta.json", meta)
    return ["panels.png", "panels.meta.json"]


def _frame_records(records: list, req: FigureRequest) -> list:
    if req.frames == "key":
        by_iter = {r["iteration"]: r for r in records}
        missing = [i for i in req.highlights if i not in by_iter]
        if missing:
            raise SchemaError(f"trajectory has no snapshot at iteration(s) {missing}")
        return [by_iter[i] for i in req.highlights]
    picked = records[:: req.frame_stride]
    if picked[-1] is not records[-1]:
        picked.append(records[-1])
    return picked


def _render_animation(req: FigureRequest, out: Path) -> list:
    if len(req.inputs) != 1:
        raise SchemaError(f"trajectory_animation takes exactly one input NDJSON, got {len(req.inputs)}")
    records = read_trajectory(req.inputs[0])
    frames = _frame_records(records, req)
    all_means = [means_from_theta(r["theta"], req.dim) for r in frames]
    tm = req.target_means
    if tm is None and req.dim == 2:
        # default target: the engine's 25-component lattice benchmark
        axis = np.arange(-4.0, 5.0, 2.0)
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        tm = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=-1)
    if tm is None or req.dim != 2:
        raise SchemaError("trajectory_animation requires dim 2 and 2-D target means")

    out.mkdir(parents=True, exist_ok=True)
    frame_dir = out / "frames"
    frame_dir.mkdir(exist_ok=True)
    pts = np.concatenate([tm] + all_means)
    pad = 1.0
    xlim = (pts[:, 0].min() - pad, pts[:, 0].max() + pad)
    ylim = (pts[:, 1].min() - pad, pts[:, 1].max() + pad)
    radius = 2.0 * np.sqrt(req.target_sigma2)
    frame_files = []
    for rec, means in zip(frames, all_means):
        it = rec["iteration"]
        highlighted = it in req.highlights
        fig, ax = plt.subplots(figsize=(5, 5))
        for m in tm:
            ax.add_patch(plt.Circle(m, radius, fill=False, color="tab:blue", linewidth=1.0))
        ax.plot(means[:, 0], means[:, 1], linestyle="none", marker="o", markersize=5,
                color="tab:red", alpha=0.8)
        ax.set_xlim(*xlim)
        ax.set_ylim(*ylim)
        ax.set_aspect("equal")
        title = f"iteration {it}  (coverage {rec['coverage']})"
        ax.set_title(title, fontweight="bold" if highlighted else "normal")
        if highlighted:
            for spine in ax.spines.values():
                spine.set_linewidth(2.5)
                spine.set_color("tab:red")
        fig.tight_layout()
        fname = f"frame_iter{it:06d}.png"
        fig.savefig(frame_dir / fname, dpi=req.dpi)
        plt.close(fig)
        frame_files.append(f"frames/{fname}")

    images = [Image.open(frame_dir / Path(f).name).convert("P") for f in frame_files]
    images[0].save(
        out / "animation.gif",
        save_all=True,
        append_images=images[1:],
        duration=200,
        loop=0,
    )
    for im in images:
        im.close()
    meta = {
        "kind": "trajectory_animation",
        "gif": "animation.gif",
        "frames": [r["iteration"] for r in frames],
        "highlights": [i for i in req.highlights if any(r["iteration"] == i for r in frames)],
        "n_snapshots": len(records),
        "n_components": int(all_means[0].shape[0]),
        "dim": req.dim,
        "coverage": {str(r["iteration"]): r["coverage"] for r in frames},
        "target_means": [[_f17(a), _f17(b)] for a, b in tm],
    }
    _write_meta(out / "animation.meta.json", meta)
    return frame_files + ["animation.gif", "animation.meta.json"]


def _render_coverage_curve(req: FigureRequest, out: Path) -> list:
    if len(req.inputs) != 1:
        raise SchemaError(f"coverage_curve takes exactly one input file, got {len(req.inputs)}")
    path = req.inputs[0]
    kls = None
    if path.endswith(".csv"):
        rows = read_eval_csv(path)
        iters = [r[0] for r in rows]
        cov = [r[2] for r in rows]
        kls = [r[1] for r in rows]
    else:
        records = read_trajectory(path)
        iters = [r["iteration"] for r in records]
        cov = [r["coverage"] for r in records]
    out.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(iters, cov, color="tab:red", label="mode coverage")
    ax.set_xlabel("iteration")
    ax.set_ylabel("covered components")
    if kls is not None and np.all(np.isfinite(kls)):
        ax2 = ax.twinx()
        ax2.plot(iters, kls, color="tab:blue", alpha=0.6, label="joint KL")
        ax2.set_ylabel("joint KL")
    fig.tight_layout()
    fig.savefig(out / "coverage.png", dpi=req.dpi)
    plt.close(fig)
    meta = {
        "kind": "coverage_curve",
        "image": "coverage.png",
        "iterations": iters,
        "coverage": cov,
        "final_coverage": cov[-1],
        "max_coverage": max(cov),
    }
    if kls is not None:
        meta["kl"] = [_f17(v) for v in kls]
    _write_meta(out / "coverage.meta.json", meta)
    return ["coverage.png", "coverage.meta.json"]


_HANDLERS = {
    "heatmap": _render_heatmap,
    "panel_grid": _render_panel_grid,
    "trajectory_animation": _render_animation,
    "coverage_curve": _render_coverage_curve,
}


def render(request: FigureRequest) -> list:
    """Render one figure request; returns the written file names relative to
    the output directory."""
    for p in request.inputs:
        if not Path(p).is_file():
            raise SchemaError(f"input file not found: {p}")
    return _HANDLERS[request.kind](request, Path(request.out_dir))
