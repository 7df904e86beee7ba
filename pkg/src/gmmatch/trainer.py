"""Two-phase multitask training loop with stochastic reverse-KL gradients.

Each outer iteration samples one matching task from the active phase's task
distribution and takes ``inner_steps`` SGD steps on it (the bi-level knob).
Only gradient-capable tasks are allowed: empty S, transform + marginal
pipelines.  Everything is driven by one seeded generator, so a (config,
seed) pair reproduces the trajectory bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .divergence import default_grid, kl_grid
from .gmm import Gmm
from .model import ThetaModel
from .pathwise import MarginalStage, apply_stages, reverse_kl_pathwise_grad
from .tasks import MatchingTask, TaskDistribution, TaskTemplate, preset, sample_task

__all__ = [
    "TrainConfig",
    "InitSpec",
    "Snapshot",
    "Trajectory",
    "ModeCoverageReport",
    "TrainingAbort",
    "init_model",
    "train",
    "mode_coverage",
    "make_25gmm_benchmark",
    "write_trajectory",
    "read_trajectory",
]


class TrainingAbort(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries a diagnostic
    snapshot of (iteration, task, theta)."""

    def __init__(self, iteration: int, task: MatchingTask, theta: np.ndarray):
        self.iteration = iteration
        self.task = task
        self.theta = np.array(theta)
        super().__init__(f"non-finite loss/gradient at iteration {iteration} on task {task}")


@dataclass(frozen=True)
class TrainConfig:
    phases: tuple  # ((start_iter, TaskDistribution), ...), first at 0
    lr: float = 0.1
    n_samples: int = 100
    total_iters: int = 6000
    inner_steps: int = 1
    seed: int = 0
    snapshot_every: int = 100
    extra_snapshots: tuple = ()
    grad_clip: float | None = 100.0
    coverage_radius: float = 0.5

    def __post_init__(self):
        if self.lr <= 0 or self.n_samples < 1 or self.total_iters < 1 or self.inner_steps < 1:
            raise ValueError("lr, n_samples, total_iters, inner_steps must be positive")
        starts = [s for s, _ in self.phases]
        if not self.phases or starts[0] != 0 or starts != sorted(starts):
            raise ValueError("phases must be sorted by start_iter with the first at 0")
        object.__setattr__(self, "extra_snapshots", tuple(int(i) for i in self.extra_snapshots))


@dataclass(frozen=True)
class InitSpec:
    """Random initialization: means i.i.d. N(mean_center, mean_var) per
    coordinate, isotropic covariance scale_var * I."""

    n_components: int
    dim: int
    mean_center: float = -5.0
    mean_var: float = 0.01
    scale_var: float = 0.05


@dataclass
class Snapshot:
    iteration: int
    theta: np.ndarray
    phase: str
    family_counts: dict
    running_losses: dict
    coverage: int


@dataclass
class Trajectory:
    snapshots: list
    final_model: ThetaModel
    config: TrainConfig
    seed: int


@dataclass(frozen=True)
class ModeCoverageReport:
    iteration: int
    covered: tuple
    count: int
    radius: float


def init_model(spec: InitSpec, rng: np.random.Generator) -> ThetaModel:
    if spec.n_components < 1 or spec.dim < 1:
        raise ValueError("n_components and dim must be positive")
    means = spec.mean_center + np.sqrt(spec.mean_var) * rng.standard_normal((spec.n_components, spec.dim))
    scales = np.broadcast_to(
        np.sqrt(spec.scale_var) * np.eye(spec.dim), (spec.n_components, spec.dim, spec.dim)
    ).copy()
    return ThetaModel.from_means_scales(means, scales)


def mode_coverage(model: Gmm, true_means: np.ndarray, radius: float, iteration: int = -1) -> ModeCoverageReport:
    """A true component is covered iff some fitted mean lies within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    true_means = np.asarray(true_means, dtype=np.float64)
    dists = np.linalg.norm(model.means[:, None, :] - true_means[None, :, :], axis=-1)
    covered = tuple(bool(b) for b in (dists.min(axis=0) < radius))
    return ModeCoverageReport(iteration, covered, int(sum(covered)), float(radius))


def _task_family(task: MatchingTask, dim: int) -> str:
    if task.s:
        return "conditional"
    if len(task.t) < dim:
        return "marginal"
    if task.transform.kind == "identity":
        return "joint"
    return "transformed_joint"


def _task_stages(task: MatchingTask, dim: int):
    if task.s:
        raise ValueError("conditional tasks are not gradient-capable (weights depend on theta)")
    stages = task.transform.stages(dim)
    out_dim = dim  # linear/noising stages used here preserve dimension
    if tuple(task.t) != tuple(range(out_dim)):
        stages = stages + [MarginalStage(task.t)]
    return stages


def _active_phase(phases, iteration: int):
    current = phases[0]
    for start, dist in phases:
        if iteration >= start:
            current = (start, dist)
    return current


def train(model: ThetaModel, target: Gmm, cfg: TrainConfig) -> Trajectory:
    """Run the phase-scheduled loop; returns the trajectory with snapshots
    every ``snapshot_every`` iterations plus the configured extras."""
    model = ThetaModel(model.n_components, model.dim, model.params.copy())
    rng = np.random.default_rng(cfg.seed)
    family_counts: dict = {}
    running_losses: dict = {}
    snapshots: list = []
    snap_at = set(cfg.extra_snapshots)

    def record(iteration: int, phase_name: str):
        report = mode_coverage(model.to_gmm(), target.means, cfg.coverage_radius, iteration)
        snapshots.append(
            Snapshot(
                iteration=iteration,
                theta=model.params.copy(),
                phase=phase_name,
                family_counts=dict(family_counts),
                running_losses=dict(running_losses),
                coverage=report.count,
            )
        )

    record(0, _active_phase(cfg.phases, 0)[1].phase)
    for it in range(cfg.total_iters):
        _, dist = _active_phase(cfg.phases, it)
        task = sample_task(dist, rng)
        stages = _task_stages(task, model.dim)
        target_pipe = apply_stages(target, stages)  # fixed across inner steps
        last_loss = np.nan
        for _ in range(cfg.inner_steps):
            try:
                loss, grad = reverse_kl_pathwise_grad(
                    model, target, stages, cfg.n_samples, rng, target_pipe=target_pipe
                )
            except np.linalg.LinAlgError as exc:
                raise TrainingAbort(it, task, model.params) from exc
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingAbort(it, task, model.params)
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / norm)
            model.params -= cfg.lr * grad
            last_loss = loss
        fam = _task_family(task, model.dim)
        family_counts[fam] = family_counts.get(fam, 0) + 1
        c = family_counts[fam]
        running_losses[fam] = running_losses.get(fam, 0.0) + (last_loss - running_losses.get(fam, 0.0)) / c
        done = it + 1
        if done % cfg.snapshot_every == 0 or done in snap_at:
            record(done, dist.phase)
    if snapshots[-1].iteration != cfg.total_iters:
        record(cfg.total_iters, _active_phase(cfg.phases, cfg.total_iters - 1)[1].phase)
    return Trajectory(snapshots=snapshots, final_model=model, config=cfg, seed=cfg.seed)


def joint_kl_of_snapshot(theta: np.ndarray, template: ThetaModel, target: Gmm, counts=None) -> float:
    """Joint grid KL of one snapshot's parameters against the target."""
    g = template.to_gmm(theta)
    return kl_grid(g, target, default_grid(g, target, counts=counts))


# ---------------------------------------------------------------------------
# 25-GMM benchmark
# ---------------------------------------------------------------------------


def grid_means(side: int = 5, spacing: float = 2.0, origin: float = -4.0) -> np.ndarray:
    """side x side lattice of component means, row-major."""
    axis = origin + spacing * np.arange(side)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=-1)


def make_25gmm_target(sigma2: float = 0.05) -> Gmm:
    means = grid_means()
    k = means.shape[0]
    scales = np.broadcast_to(np.sqrt(sigma2) * np.eye(2), (k, 2, 2)).copy()
    return Gmm(np.full(k, 1.0 / k), means, scales)


def make_25gmm_benchmark(seed: int = 0, burn_in: int = 200, inner_steps: int = 20):
    """Canonical exploration benchmark: corner-initialized 25-component model,
    marginal-only burn-in, then joint/marginal tasks at probabilities
    [0.1, 0.9]."""
    target = make_25gmm_target()
    # wide identity-covariance init: broad initial components are what let
    # marginal matchings pull means across the lattice during burn-in
    init = InitSpec(n_components=25, dim=2, mean_center=-5.0, mean_var=0.01, scale_var=1.0)
    dim = 2
    joint_tpl = TaskTemplate("fixed", dim, task=MatchingTask(t=(0, 1)))
    marginal_tpl = TaskTemplate("random_marginal", dim)
    mixed = TaskDistribution(((joint_tpl, 0.1), (marginal_tpl, 0.9)), phase="joint+marginal")
    cfg = TrainConfig(
        phases=((0, preset("marginal_sweep", dim)), (burn_in, mixed)),
        lr=0.1,
        n_samples=100,
        total_iters=6000,
        inner_steps=inner_steps,
        seed=seed,
        snapshot_every=100,
        extra_snapshots=(200, 800, 1400, 6000),
    )
    return target, init, cfg


def make_joint_only_config(seed: int = 0, inner_steps: int = 20) -> TrainConfig:
    """Baseline: joint matching only, otherwise identical settings."""
    cfg = make_25gmm_benchmark(seed=seed, inner_steps=inner_steps)[2]
    joint = preset("joint", 2)
    return TrainConfig(
        phases=((0, joint),),
        lr=cfg.lr,
        n_samples=cfg.n_samples,
        total_iters=cfg.total_iters,
        inner_steps=cfg.inner_steps,
        seed=seed,
        snapshot_every=cfg.snapshot_every,
        extra_snapshots=cfg.extra_snapshots,
    )


# ---------------------------------------------------------------------------
# trajectory serialization: one structured record per snapshot, floats at 17
# significant digits
# ---------------------------------------------------------------------------


def _f17(x: float) -> float:
    return float(f"{float(x):.17g}")


def snapshot_record(snap: Snapshot) -> dict:
    return {
        "iteration": snap.iteration,
        "theta": [_f17(v) for v in snap.theta],
        "phase": snap.phase,
        "family_counts": snap.family_counts,
        "running_losses": {k: _f17(v) for k, v in snap.running_losses.items()},
        "coverage": snap.coverage,
    }


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for snap in traj.snapshots:
            fh.write(json.dumps(snapshot_record(snap), separators=(",", ":")) + "\n")


def read_trajectory(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
