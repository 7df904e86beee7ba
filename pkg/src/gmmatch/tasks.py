"""Matching-task construction and evaluation.

A matching task is one (transform, S, T, divergence) instance: apply the
transform to both model and target, then match the model's conditional of
the T coordinates given the S coordinates to the target's.  Empty S gives a
marginal (or joint) matching.  Task distributions hold weighted templates
whose random pieces (orthogonal matrices, marginal coordinates, masks) are
materialized at sampling time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .divergence import default_grid, js_grid, kl_grid, kl_mc
from .gmm import Gmm, check_index_set, condition, marginalize, sample
from .pathwise import LinearStage, MarginalStage, NoisingStage, apply_stages

__all__ = [
    "Transform",
    "orthogonal_matrix",
    "rotation_matrix",
    "ConditioningPolicy",
    "MatchingTask",
    "TaskTemplate",
    "TaskDistribution",
    "EstimatorSettings",
    "sample_task",
    "task_loss",
    "preset",
]

DIVERGENCES = ("reverse_kl", "forward_kl", "js")


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def orthogonal_matrix(dim: int, seed: int) -> np.ndarray:
    """Haar-style random orthogonal matrix: uniform rotation angle at dim 2,
    sign-corrected QR of a standard-normal matrix otherwise."""
    rng = np.random.default_rng(seed)
    if dim == 2:
        return rotation_matrix(rng.uniform(0.0, 2.0 * np.pi))
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class Transform:
    """Data-level transform: identity, rotation(angle), orthogonal(seed),
    noising(noise_var), or a composite of those."""

    kind: str = "identity"
    angle: float | None = None
    seed: int | None = None
    noise_var: float | None = None
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "rotation", "orthogonal", "noising", "composite"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "noising" and (self.noise_var is None or self.noise_var < 0):
            raise ValueError("noising requires noise_var >= 0")
        if self.kind == "rotation" and self.angle is None:
            raise ValueError("rotation requires an angle")

    @property
    def is_materialized(self) -> bool:
        if self.kind == "orthogonal":
            return self.seed is not None
        if self.kind == "composite":
            return all(p.is_materialized for p in self.parts)
        return True

    def stages(self, dim: int) -> list:
        """Pipeline stages realizing this transform at the given dimension."""
        if self.kind == "identity":
            return []
        if self.kind == "rotation":
            if dim != 2:
                raise ValueError("rotation transforms are only defined at dimension 2")
            return [LinearStage(rotation_matrix(self.angle))]
        if self.kind == "orthogonal":
            if self.seed is None:
                raise ValueError("orthogonal transform not materialized (no seed)")
            return [LinearStage(orthogonal_matrix(dim, self.seed))]
        if self.kind == "noising":
            return [NoisingStage(self.noise_var)]
        out = []
        for p in self.parts:
            out.extend(p.stages(dim))
        return out


@dataclass(frozen=True)
class ConditioningPolicy:
    """How conditioning values x_S are chosen when S is nonempty.

    from_target_marginal draws n_cond samples of the target's S-marginal;
    uniform_grid takes n_cond evenly spaced values per S axis over bounds;
    fixed uses the listed values verbatim.
    """

    kind: str = "from_target_marginal"
    n_cond: int = 16
    bounds: tuple = ()
    values: tuple = ()
    seed: int = 0

    def conditioning_values(self, target_s: Gmm) -> np.ndarray:
        if self.kind == "from_target_marginal":
            rng = np.random.default_rng(self.seed)
            pts, _, _ = sample(target_s, self.n_cond, rng)
            return pts
        if self.kind == "uniform_grid":
            if len(self.bounds) != target_s.dim:
                raise ValueError("uniform_grid bounds must cover every S axis")
            axes = [np.linspace(lo, hi, self.n_cond) for lo, hi in self.bounds]
            mesh = np.meshgrid(*axes, indexing="ij")
            return np.stack([m.reshape(-1) for m in mesh], axis=-1)
        if self.kind == "fixed":
            vals = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
            if vals.shape[1] != target_s.dim:
                vals = vals.reshape(-1, target_s.dim)
            return vals
        raise ValueError(f"unknown conditioning policy {self.kind!r}")


@dataclass(frozen=True)
class MatchingTask:
    transform: Transform = Transform()
    s: tuple = ()
    t: tuple = ()
    divergence: str = "reverse_kl"
    conditioning: ConditioningPolicy | None = None

    def __post_init__(self):
        if not self.t:
            raise ValueError("target index set T must be nonempty")
        if set(self.s) & set(self.t):
            raise ValueError("S and T must be disjoint")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {self.divergence!r}")
        object.__setattr__(self, "s", tuple(int(i) for i in self.s))
        object.__setattr__(self, "t", tuple(int(i) for i in self.t))


@dataclass(frozen=True)
class EstimatorSettings:
    """Divergence-estimator configuration shared by task evaluation."""

    method: str = "grid"
    points_1d: int = 2001
    points_2d: int = 401
    n_mc: int = 100_000
    mc_seed: int = 0

    def grid_counts(self, dim: int) -> tuple:
        return (self.points_1d,) if dim == 1 else (self.points_2d,) * dim


def _divergence_value(p_model: Gmm, q_target: Gmm, name: str, settings: EstimatorSettings) -> float:
    if settings.method == "mc":
        if name == "reverse_kl":
            return kl_mc(p_model, q_target, settings.n_mc, np.random.default_rng(settings.mc_seed))[0]
        if name == "forward_kl":
            return kl_mc(q_target, p_model, settings.n_mc, np.random.default_rng(settings.mc_seed))[0]
        raise ValueError("Monte-Carlo evaluation supports KL divergences only")
    grid = default_grid(p_model, q_target, counts=settings.grid_counts(p_model.dim))
    if name == "reverse_kl":
        return kl_grid(p_model, q_target, grid)
    if name == "forward_kl":
        return kl_grid(q_target, p_model, grid)
    return js_grid(p_model, q_target, grid)


def task_loss(task: MatchingTask, model: Gmm, target: Gmm, settings: EstimatorSettings | None = None) -> float:
    """Evaluate one matching task's loss between model and target.

    The transform is applied to both sides; empty S reduces to a marginal
    (or joint) matching, nonempty S averages the conditional divergence over
    conditioning values drawn per the task's policy.
    """
    if model.dim != target.dim:
        raise ValueError("model/target dimension mismatch")
    settings = settings or EstimatorSettings()
    stages = task.transform.stages(model.dim)
    mp = apply_stages(model, stages)
    tp = apply_stages(target, stages)
    check_index_set(task.t, mp.dim, "T")
    if not task.s:
        return _divergence_value(marginalize(mp, task.t), marginalize(tp, task.t), task.divergence, settings)
    check_index_set(task.s, mp.dim, "S")
    policy = task.conditioning or ConditioningPolicy()
    xs = policy.conditioning_values(marginalize(tp, task.s))
    vals = [
        _divergence_value(
            condition(mp, task.s, x, task.t),
            condition(tp, task.s, x, task.t),
            task.divergence,
            settings,
        )
        for x in xs
    ]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# templates and task distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskTemplate:
    """A task with possibly-unmaterialized random pieces.

    kinds: 'fixed' (task as given; orthogonal transforms without a seed get
    one at sampling time), 'random_marginal' (fresh orthogonal transform and
    a uniformly chosen marginal coordinate), 'mask_and_predict' (random S of
    ratio-determined size, T = complement), 'permutation' (random order and
    cut, next-token style on the permuted indices).
    """

    kind: str
    dim: int
    task: MatchingTask | None = None
    divergence: str = "reverse_kl"
    source_ratio: tuple = ("beta", 0.5, 3.0)

    def materialize(self, rng: np.random.Generator) -> MatchingTask:
        if self.kind == "fixed":
            task = self.task
            if not task.transform.is_materialized:
                task = replace(task, transform=_seed_transform(task.transform, rng))
            return task
        if self.kind == "random_marginal":
            seed = int(rng.integers(0, 2**63 - 1))
            coord = int(rng.integers(self.dim))
            return MatchingTask(
                transform=Transform(kind="orthogonal", seed=seed),
                s=(),
                t=(coord,),
                divergence=self.divergence,
            )
        if self.kind == "mask_and_predict":
            if self.source_ratio[0] == "beta":
                ratio = rng.beta(self.source_ratio[1], self.source_ratio[2])
            else:
                ratio = float(self.source_ratio[1])
            size = min(self.dim - 1, max(0, int(round(ratio * self.dim))))
            s = tuple(sorted(rng.choice(self.dim, size=size, replace=False).tolist()))
            t = tuple(i for i in range(self.dim) if i not in s)
            return MatchingTask(s=s, t=t, divergence=self.divergence)
        if self.kind == "permutation":
            z = rng.permutation(self.dim)
            cut = int(rng.integers(1, self.dim + 1))
            s = tuple(sorted(int(i) for i in z[: cut - 1]))
            return MatchingTask(s=s, t=(int(z[cut - 1]),), divergence=self.divergence)
        raise ValueError(f"unknown template kind {self.kind!r}")


def _seed_transform(tr: Transform, rng: np.random.Generator) -> Transform:
    if tr.kind == "orthogonal" and tr.seed is None:
        return replace(tr, seed=int(rng.integers(0, 2**63 - 1)))
    if tr.kind == "composite":
        return replace(tr, parts=tuple(_seed_transform(p, rng) for p in tr.parts))
    return tr


@dataclass(frozen=True)
class TaskDistribution:
    """Weighted set of task templates, tagged with the training phase that
    uses it."""

    entries: tuple
    phase: str = ""

    def __post_init__(self):
        entries = tuple((tpl, float(p)) for tpl, p in self.entries)
        object.__setattr__(self, "entries", entries)
        total = sum(p for _, p in entries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"template probabilities sum to {total}, expected 1")
        if any(p < 0 for _, p in entries):
            raise ValueError("template probabilities must be nonnegative")


def sample_task(dist: TaskDistribution, rng: np.random.Generator) -> MatchingTask:
    """Draw a template by its probability, then materialize its random pieces."""
    u = rng.random()
    acc = 0.0
    chosen = dist.entries[-1][0]
    for tpl, p in dist.entries:
        acc += p
        if u <= acc:
            chosen = tpl
            break
    return chosen.materialize(rng)


def preset(name: str, dim: int, divergence: str = "reverse_kl", **params) -> TaskDistribution:
    """Named task-distribution presets mirroring common training objectives."""
    full = tuple(range(dim))
    if name == "joint":
        tpl = TaskTemplate("fixed", dim, task=MatchingTask(t=full, divergence=divergence))
        return TaskDistribution(((tpl, 1.0),), phase=name)
    if name == "next_token":
        entries = []
        for t in range(dim):
            task = MatchingTask(s=tuple(range(t)), t=(t,), divergence=divergence)
            entries.append((TaskTemplate("fixed", dim, task=task), 1.0 / dim))
        return TaskDistribution(tuple(entries), phase=name)
    if name == "permutation":
        return TaskDistribution(((TaskTemplate("permutation", dim, divergence=divergence), 1.0),), phase=name)
    if name == "mask_and_predict":
        ratio = params.get("source_ratio", ("beta", 0.5, 3.0))
        tpl = TaskTemplate("mask_and_predict", dim, divergence=divergence, source_ratio=tuple(ratio))
        return TaskDistribution(((tpl, 1.0),), phase=name)
    if name == "marginal_sweep":
        return TaskDistribution(((TaskTemplate("random_marginal", dim, divergence=divergence), 1.0),), phase=name)
    if name == "noising_ladder":
        variances = params["variances"]
        entries = []
        for v in variances:
            task = MatchingTask(
                transform=Transform(kind="noising", noise_var=float(v)), t=full, divergence=divergence
            )
            entries.append((TaskTemplate("fixed", dim, task=task), 1.0 / len(variances)))
        return TaskDistribution(tuple(entries), phase=name)
    raise ValueError(f"unknown preset {name!r}")
