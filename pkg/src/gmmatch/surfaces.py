"""Loss-surface sweeps over the 2-D parameter theta = (mu1, mu2).

The traversal family is the 2-component mixture with means (mu1, 0) and
(mu2, 0) and shared isotropic covariance sigma2 * I.  Sweeps evaluate one
matching task (or an average over a rotation/conditioning family) at every
theta grid point.  All per-theta work is reduced to a handful of fused
vector operations: the transformed covariance is theta-independent, so the
quadrature grid, its Cholesky whitening, and the target's log densities are
computed once per task and shared across the whole sweep.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .divergence import GridSpec, kl_grid_from_logs, _LOG_FLOOR
from .gmm import Gmm, condition, log_density, marginalize
from .pathwise import NoisingStage, _compile, apply_stages
from .tasks import ConditioningPolicy, EstimatorSettings, MatchingTask, Transform

__all__ = [
    "SurfaceSpec",
    "SurfaceGrid",
    "LocalMinimum",
    "tailored_model",
    "tailored_target",
    "default_theta_grid",
    "uniform_angles",
    "sweep",
    "find_local_minima",
    "noising_ladder_sweep",
    "write_surface_csv",
    "read_surface_csv",
]

TAILORED_TARGET_THETA = (-1.0, 1.0)


def tailored_model(theta, sigma2: float) -> Gmm:
    """Equal-weight 2-component mixture with means (mu1, 0), (mu2, 0) and
    covariance sigma2 * I."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    mu1, mu2 = float(theta[0]), float(theta[1])
    means = np.array([[mu1, 0.0], [mu2, 0.0]])
    scales = np.broadcast_to(np.sqrt(sigma2) * np.eye(2), (2, 2, 2)).copy()
    return Gmm(np.array([0.5, 0.5]), means, scales)


def tailored_target(sigma2: float) -> Gmm:
    return tailored_model(TAILORED_TARGET_THETA, sigma2)


def default_theta_grid(lo: float = -3.0, hi: float = 3.0, n: int = 151) -> GridSpec:
    """Theta grid whose cell centers are exactly linspace(lo, hi, n) per axis,
    so the optimum coordinates (like +-1) land on grid points."""
    h = (hi - lo) / (n - 1)
    return GridSpec((lo - h / 2,) * 2, (hi + h / 2,) * 2, (n, n))


def uniform_angles(n: int) -> tuple:
    """n quasi-uniform rotation angles, equally spaced in [0, pi)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return tuple(float(a) for a in np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class SurfaceSpec:
    """One surface: a matching task evaluated over the theta grid.

    ``rotations`` turns the task into an averaged family: the surface value
    is the mean of the task's loss with its transform replaced by each listed
    rotation (composed before any base transform).
    """

    task: MatchingTask
    sigma2: float = 0.1
    theta_grid: GridSpec = field(default_factory=default_theta_grid)
    target: Gmm | None = None
    rotations: tuple | None = None
    seed: int = 0
    settings: EstimatorSettings = field(default_factory=EstimatorSettings)

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.theta_grid.dim != 2:
            raise ValueError("theta grid must be 2-D")
        if self.rotations is not None:
            object.__setattr__(self, "rotations", tuple(float(a) for a in self.rotations))

    def resolved_target(self) -> Gmm:
        return self.target if self.target is not None else tailored_target(self.sigma2)

    def resolved_tasks(self) -> list:
        task = self.task
        if task.s and task.conditioning is None:
            task = replace(task, conditioning=ConditioningPolicy(seed=self.seed))
        if self.rotations is None:
            return [task]
        out = []
        for a in self.rotations:
            rot = Transform(kind="rotation", angle=a)
            tr = rot if task.transform.kind == "identity" else Transform(
                kind="composite", parts=(rot, task.transform)
            )
            out.append(replace(task, transform=tr))
        return out


@dataclass
class SurfaceGrid:
    axis1: np.ndarray
    axis2: np.ndarray
    loss: np.ndarray
    metadata: dict
    error_cells: list = field(default_factory=list)

    def __post_init__(self):
        if self.loss.shape != (len(self.axis1), len(self.axis2)):
            raise ValueError("loss matrix shape must match the theta axes")


@dataclass(frozen=True)
class LocalMinimum:
    theta: tuple
    loss: float
    is_global: bool


# ---------------------------------------------------------------------------
# per-task evaluators
# ---------------------------------------------------------------------------


def _divergence_from_logs(logp, logq, vol, name):
    if name == "reverse_kl":
        return kl_grid_from_logs(logp, logq, vol)
    if name == "forward_kl":
        return kl_grid_from_logs(logq, logp, vol)
    logm = np.logaddexp(logp, logq) - np.log(2.0)
    return 0.5 * kl_grid_from_logs(logp, logm, vol) + 0.5 * kl_grid_from_logs(logq, logm, vol)


def _axis_bounds(mean_lo, mean_hi, target_means, std, n_std=8.0):
    lo = min(float(np.min(mean_lo)), float(np.min(target_means))) - n_std * std
    hi = max(float(np.max(mean_hi)), float(np.max(target_means))) + n_std * std
    return lo, hi


class _MarginalEvaluator:
    """Empty-S tasks: the transformed model is a 2-component mixture with
    means mu_i * u and a shared theta-independent covariance, so the two
    component densities depend on mu1 and mu2 separately.  The full matrix
    sweep caches one component-density vector per distinct mu value and, for
    reverse KL, splits off the separable cross term against the cached target
    log density."""

    def __init__(self, task, spec, m, v, mu_lo, mu_hi):
        t = list(task.t)
        u = m[:, 0][t]
        c = (spec.sigma2 * (m @ m.T) + v)[np.ix_(t, t)]
        tq = marginalize(apply_stages(spec.resolved_target(), task.transform.stages(2)), task.t)
        dim = len(t)
        stds = np.sqrt(np.diag(c))
        lo, hi = [], []
        for a in range(dim):
            ends = np.array([mu_lo * u[a], mu_hi * u[a]])
            b = _axis_bounds(ends.min(), ends.max(), tq.means[:, a], stds[a])
            lo.append(b[0])
            hi.append(b[1])
        grid = GridSpec(tuple(lo), tuple(hi), spec.settings.grid_counts(dim))
        x = grid.points()
        self.logq = log_density(tq, x)
        chol = np.linalg.cholesky(c)
        z0 = solve_triangular(chol, x.T, lower=True)
        w = solve_triangular(chol, u, lower=True)
        self.s0 = np.sum(z0 * z0, axis=0)
        self.pr = w @ z0
        self.ww = float(w @ w)
        self.const = (
            -0.5 * dim * np.log(2.0 * np.pi) - float(np.sum(np.log(np.diag(chol)))) - np.log(2.0)
        )
        self.vol = grid.cell_volume
        self.divergence = task.divergence

    def _component_log(self, mu):
        return -0.5 * (self.s0 - (2.0 * mu) * self.pr + mu * mu * self.ww) + self.const

    def value(self, mu1, mu2):
        logp = np.logaddexp(self._component_log(mu1), self._component_log(mu2))
        return _divergence_from_logs(logp, self.logq, self.vol, self.divergence)

    def matrix(self, ax1, ax2, threads=1):
        if self.divergence != "reverse_kl" or not np.array_equal(ax1, ax2):
            return _generic_matrix(self.value, ax1, ax2, threads)
        # per-mu half densities exp(const + l_mu); underflow to 0 is harmless,
        # those cells fall below the density floor and are skipped anyway
        e = np.exp(np.stack([self._component_log(mu) for mu in ax1]))
        cross = (e * self.logq) @ np.full(e.shape[1], self.vol)
        n = len(ax1)
        out = np.empty((n, n))
        floor = np.exp(_LOG_FLOOR)

        def run_row(i):
            for j in range(i, n):
                p = e[i] + e[j]
                mask = p >= floor
                pm = p[mask]
                ent = float(np.sum(pm * np.log(pm))) * self.vol
                out[i, j] = out[j, i] = ent - (cross[i] + cross[j])

        _run_rows(run_row, n, threads)
        return out


def _masked_row_kl(logp, logq, vol):
    # row-wise midpoint KL with the same density floor as kl_grid_from_logs
    mask = logp >= _LOG_FLOOR
    p = np.where(mask, np.exp(logp), 0.0)
    diff = np.where(mask, logp - logq, 0.0)
    return np.sum(p * diff, axis=-1) * vol


def _divergence_rows(logp, logq, vol, name):
    if name == "reverse_kl":
        return _masked_row_kl(logp, logq, vol)
    if name == "forward_kl":
        return _masked_row_kl(logq, logp, vol)
    logm = np.logaddexp(logp, logq) - np.log(2.0)
    return 0.5 * _masked_row_kl(logp, logm, vol) + 0.5 * _masked_row_kl(logq, logm, vol)


class _ConditionalEvaluator:
    """1-given-1 conditional tasks.  Conditioning values come from the task's
    policy applied to the transformed target, so they are shared across all
    theta points; the target's conditional log densities are cached per
    value."""

    def __init__(self, task, spec, m, v, mu_lo, mu_hi):
        if len(task.s) != 1 or len(task.t) != 1:
            raise ValueError("conditional sweeps support |S| = |T| = 1")
        s, t = task.s[0], task.t[0]
        c = spec.sigma2 * (m @ m.T) + v
        u = m[:, 0]
        tq = apply_stages(spec.resolved_target(), task.transform.stages(2))
        policy = task.conditioning or ConditioningPolicy(seed=spec.seed)
        xs = policy.conditioning_values(marginalize(tq, (s,))).reshape(-1)
        slope = c[t, s] / c[s, s]
        var_c = c[t, t] - c[t, s] * slope
        std_c = np.sqrt(var_c)
        # conditional means are mu * (u_t - slope u_s) + slope x_s on both sides
        coef = u[t] - slope * u[s]
        ends = np.array([mu_lo * coef, mu_hi * coef])
        shifts = slope * xs
        q_cond = [condition(tq, (s,), np.array([x]), (t,)) for x in xs]
        q_means = np.concatenate([g.means[:, 0] for g in q_cond])
        lo = min(ends.min() + shifts.min(), q_means.min()) - 8.0 * std_c
        hi = max(ends.max() + shifts.max(), q_means.max()) + 8.0 * std_c
        grid = GridSpec((lo,), (hi,), spec.settings.grid_counts(1))
        x = grid.points()
        self.logq = np.stack([log_density(g, x) for g in q_cond])  # (n_cond, G)
        self.xg = x[:, 0]
        self.vol = grid.cell_volume
        self.lognorm = -0.5 * np.log(2.0 * np.pi * var_c)
        self.xs, self.u_s, self.c_ss = xs, u[s], c[s, s]
        self.coef, self.shifts, self.var_c = coef, shifts, var_c
        self.divergence = task.divergence

    def value(self, mu1, mu2):
        mus = np.array([mu1, mu2])
        lw = -0.5 * (self.xs[:, None] - mus[None, :] * self.u_s) ** 2 / self.c_ss
        lw = lw - np.logaddexp(lw[:, 0], lw[:, 1])[:, None]  # (n_cond, 2)
        cmean = mus[None, :] * self.coef + self.shifts[:, None]
        comp = lw[:, :, None] - 0.5 * (self.xg[None, None, :] - cmean[:, :, None]) ** 2 / self.var_c
        logp = np.logaddexp(comp[:, 0, :], comp[:, 1, :]) + self.lognorm
        return float(np.mean(_divergence_rows(logp, self.logq, self.vol, self.divergence)))

    def matrix(self, ax1, ax2, threads=1):
        return _generic_matrix(self.value, ax1, ax2, threads)


def _run_rows(run_row, n, threads):
    if threads <= 1:
        for i in range(n):
            run_row(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_row, range(n)))


def _generic_matrix(value, ax1, ax2, threads=1):
    """Point-by-point sweep; when the axes coincide only the upper triangle
    is evaluated, since every evaluator here is exactly symmetric under a
    (mu1, mu2) swap (label symmetry of the 2-component model)."""
    n1, n2 = len(ax1), len(ax2)
    out = np.empty((n1, n2))
    symmetric = np.array_equal(ax1, ax2)

    def run_row(i):
        start = i if symmetric else 0
        for j in range(start, n2):
            out[i, j] = value(ax1[i], ax2[j])
            if symmetric:
                out[j, i] = out[i, j]

    _run_rows(run_row, n1, threads)
    return out


def _make_evaluator(task, spec: SurfaceSpec, mu_lo: float, mu_hi: float):
    stages = task.transform.stages(2)
    for st in stages:
        if isinstance(st, NoisingStage) and st.var < 0:
            raise ValueError("negative noising variance")
    m, _, v, out_dim = _compile(stages, 2)
    if out_dim != 2:
        raise ValueError("surface transforms must preserve dimension 2")
    if task.s:
        return _ConditionalEvaluator(task, spec, m, v, mu_lo, mu_hi)
    return _MarginalEvaluator(task, spec, m, v, mu_lo, mu_hi)


# ---------------------------------------------------------------------------
# sweep driver
# ---------------------------------------------------------------------------


def _task_descriptor(task: MatchingTask) -> dict:
    tr = task.transform
    d = {"kind": tr.kind}
    if tr.angle is not None:
        d["angle"] = tr.angle
    if tr.noise_var is not None:
        d["noise_var"] = tr.noise_var
    if tr.seed is not None:
        d["seed"] = tr.seed
    if tr.parts:
        d["parts"] = [_task_descriptor(replace(task, transform=p))["transform"] for p in tr.parts]
    return {"transform": d, "s": list(task.s), "t": list(task.t), "divergence": task.divergence}


def sweep(spec: SurfaceSpec, threads: int = 1) -> SurfaceGrid:
    """Evaluate the spec's (possibly family-averaged) loss at every theta
    grid point.  Non-finite values become NaN cells listed in error_cells."""
    ax1, ax2 = spec.theta_grid.axes()
    mu_lo = float(min(ax1.min(), ax2.min()))
    mu_hi = float(max(ax1.max(), ax2.max()))
    tasks = spec.resolved_tasks()
    evals = [_make_evaluator(t, spec, mu_lo, mu_hi) for t in tasks]
    loss = evals[0].matrix(ax1, ax2, threads)
    for ev in evals[1:]:
        loss = loss + ev.matrix(ax1, ax2, threads)
    loss /= len(evals)
    bad = ~np.isfinite(loss)
    error_cells = [(int(i), int(j)) for i, j in zip(*np.nonzero(bad))]
    loss[bad] = np.nan
    meta = {
        "tasks": [_task_descriptor(t) for t in tasks],
        "sigma2": spec.sigma2,
        "seed": spec.seed,
        "settings": {
            "method": spec.settings.method,
            "points_1d": spec.settings.points_1d,
            "points_2d": spec.settings.points_2d,
        },
        "n_error_cells": len(error_cells),
    }
    return SurfaceGrid(ax1, ax2, loss, meta, error_cells)


def find_local_minima(grid: SurfaceGrid, global_tol: float = 1e-9) -> list:
    """Interior grid points strictly below all 8 neighbors; is_global flags
    points within global_tol of the grid minimum."""
    if grid.error_cells:
        raise ValueError(f"surface has {len(grid.error_cells)} error cells; cannot scan minima")
    z = grid.loss
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
            LocalMinimum(
                theta=(float(grid.axis1[i + 1]), float(grid.axis2[j + 1])),
                loss=val,
                is_global=bool(val <= gmin + global_tol),
            )
        )
    return out


def noising_ladder_sweep(spec: SurfaceSpec, variances, threads: int = 1) -> list:
    """One sweep per noise variance, with the noising appended to the task's
    transform (applied to model and target alike)."""
    variances = [float(v) for v in variances]
    if any(v < 0 for v in variances) or variances != sorted(variances):
        raise ValueError("variances must be nonnegative and ascending")
    out = []
    for v in variances:
        base = spec.task.transform
        if v == 0.0:
            tr = base
        elif base.kind == "identity":
            tr = Transform(kind="noising", noise_var=v)
        else:
            tr = Transform(kind="composite", parts=(base, Transform(kind="noising", noise_var=v)))
        s = replace(spec, task=replace(spec.task, transform=tr))
        g = sweep(s, threads=threads)
        g.metadata["noise_var"] = v
        out.append(g)
    return out


# ---------------------------------------------------------------------------
# CSV serialization: '#'-prefixed header lines (format tag, metadata JSON,
# both theta axes), then one comma-separated row per axis1 value, floats at
# 17 significant digits
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_surface_csv(grid: SurfaceGrid, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# surface-csv 1\n")
        fh.write("# meta " + json.dumps(grid.metadata, separators=(",", ":"), sort_keys=True) + "\n")
        fh.write("# axis1 " + ",".join(_fmt(v) for v in grid.axis1) + "\n")
        fh.write("# axis2 " + ",".join(_fmt(v) for v in grid.axis2) + "\n")
        for row in grid.loss:
            fh.write(",".join("nan" if not np.isfinite(v) else _fmt(v) for v in row) + "\n")


def read_surface_csv(path) -> SurfaceGrid:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# surface-csv"):
        raise ValueError("not a surface CSV file")
    meta = json.loads(lines[1][len("# meta ") :])
    axis1 = np.array([float(v) for v in lines[2][len("# axis1 ") :].split(",")])
    axis2 = np.array([float(v) for v in lines[3][len("# axis2 ") :].split(",")])
    loss = np.array([[float(v) for v in ln.split(",")] for ln in lines[4:] if ln])
    bad = ~np.isfinite(loss)
    cells = [(int(i), int(j)) for i, j in zip(*np.nonzero(bad))]
    return SurfaceGrid(axis1, axis2, loss, meta, cells)
