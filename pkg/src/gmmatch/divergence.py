"""KL and JS estimators between Gaussian mixtures.

Grid quadrature (midpoint rule on cell centers) is used at 1-D/2-D where the
integrands are smooth and rapidly decaying, so the composite midpoint rule
converges superalgebraically once the grid covers the mass; Monte Carlo is
the fallback at higher dimension and the cross-check everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import Gmm, log_density, sample

__all__ = ["GridSpec", "default_grid", "kl_grid", "kl_mc", "js_grid"]

_DENSITY_FLOOR = 1e-300
_LOG_FLOOR = np.log(_DENSITY_FLOOR)


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned quadrature grid: per-dimension bounds and point counts."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    cell_cap: int = 10_000_000

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise ValueError("lower/upper/counts must have equal lengths")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("each lower bound must be below its upper bound")
        if any(c < 3 for c in self.counts):
            raise ValueError("counts must be >= 3")
        if int(np.prod(self.counts)) > self.cell_cap:
            raise ValueError(f"grid exceeds cell cap {self.cell_cap}")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(hi - lo) / c for lo, hi, c in zip(self.lower, self.upper, self.counts)]))

    def axes(self) -> list[np.ndarray]:
        """Cell-center coordinates per axis (midpoint rule)."""
        out = []
        for lo, hi, c in zip(self.lower, self.upper, self.counts):
            h = (hi - lo) / c
            out.append(lo + h * (np.arange(c) + 0.5))
        return out

    def points(self) -> np.ndarray:
        """All cell centers, shape (prod(counts), dim), C order."""
        axes = self.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def default_grid(p: Gmm, q: Gmm, counts=None, n_std: float = 8.0) -> GridSpec:
    """Bounds = union of component means +- n_std per-axis standard deviations,
    over both mixtures; captures all but a ~1e-14 tail of the mass."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    d = p.dim
    if counts is None:
        counts = (2001,) if d == 1 else (401,) * d
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    for g in (p, q):
        std = np.sqrt(np.einsum("kii->ki", g.covariances))
        lo = np.minimum(lo, (g.means - n_std * std).min(axis=0))
        hi = np.maximum(hi, (g.means + n_std * std).max(axis=0))
    return GridSpec(tuple(lo), tuple(hi), tuple(counts))


def kl_grid_from_logs(logp: np.ndarray, logq: np.ndarray, cell_volume: float) -> float:
    """Midpoint-rule KL from log densities on a shared grid, skipping cells
    where p underflows the density floor."""
    mask = logp >= _LOG_FLOOR
    lp = logp[mask]
    return float(np.sum(np.exp(lp) * (lp - logq[mask])) * cell_volume)


def kl_grid(p: Gmm, q: Gmm, grid: GridSpec) -> float:
    """KL[p || q] by midpoint quadrature; 1-D/2-D only."""
    if p.dim != q.dim or p.dim != grid.dim:
        raise ValueError("dimension mismatch between distributions and grid")
    if grid.dim > 2:
        raise ValueError("grid quadrature supports dimension <= 2; use kl_mc")
    x = grid.points()
    return kl_grid_from_logs(log_density(p, x), log_density(q, x), grid.cell_volume)


def kl_mc(p: Gmm, q: Gmm, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo KL[p || q]: returns (estimate, standard error)."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    x, _, _ = sample(p, n, rng)
    vals = log_density(p, x) - log_density(q, x)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return est, se


def js_grid(p: Gmm, q: Gmm, grid: GridSpec) -> float:
    """Jensen-Shannon divergence by midpoint quadrature; result in [0, log 2]."""
    if p.dim != q.dim or p.dim != grid.dim:
        raise ValueError("dimension mismatch between distributions and grid")
    if grid.dim > 2:
        raise ValueError("grid quadrature supports dimension <= 2")
    x = grid.points()
    logp = log_density(p, x)
    logq = log_density(q, x)
    logm = np.logaddexp(logp, logq) - np.log(2.0)
    half = 0.5 * kl_grid_from_logs(logp, logm, grid.cell_volume)
    half += 0.5 * kl_grid_from_logs(logq, logm, grid.cell_volume)
    return half
