"""Command-line entry point.

One command per config file: a ``[surface]``, ``[train]``, or ``[eval]``
section selects the command; ``[surface.NAME]`` subsections declare the
individual surfaces of a sweep run.  Every run writes its outputs plus a
fully resolved config echo and a manifest; re-running from the echo with the
same seed reproduces the manifest-listed outputs bitwise (wall-clock timing
goes to run.log, which is diagnostic and excluded from the manifest).

Exit codes: 0 success, 2 config error, 3 numerical failure in a sweep,
4 training abort on non-finite loss/gradient.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, Section, load_config
from .divergence import default_grid, kl_grid
from .gmm import Gmm
from .model import ThetaModel
from .tasks import (
    ConditioningPolicy,
    MatchingTask,
    TaskDistribution,
    TaskTemplate,
    Transform,
    preset,
)
from .trainer import (
    InitSpec,
    TrainConfig,
    TrainingAbort,
    init_model,
    make_25gmm_target,
    mode_coverage,
    read_trajectory,
    train,
    write_trajectory,
)
from .surfaces import (
    SurfaceSpec,
    default_theta_grid,
    noising_ladder_sweep,
    sweep,
    uniform_angles,
    write_surface_csv,
)
from .tasks import EstimatorSettings

__all__ = ["main"]

COMMANDS = ("surface", "train", "eval")


def _f(x) -> str:
    return f"{float(x):.17g}"


class _Echo:
    """Collects the fully resolved key-value view of a run for the config
    echo file."""

    def __init__(self):
        self.sections: dict = {}

    def put(self, section: str, key: str, value):
        if isinstance(value, float):
            value = _f(value)
        elif isinstance(value, (tuple, list)):
            value = " ".join(_f(v) if isinstance(v, float) else str(v) for v in value)
        self.sections.setdefault(section, {})[key] = str(value)

    def render(self) -> str:
        out = []
        for name, entries in self.sections.items():
            out.append(f"[{name}]")
            for k, v in entries.items():
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)


def _detect_command(cfg: Config) -> str:
    present = [c for c in COMMANDS if c in cfg.sections]
    if len(present) != 1:
        raise ConfigError(
            f"expected exactly one command section of {list(COMMANDS)}, found {present or 'none'}"
        )
    return present[0]


def _write_manifest(out_dir: Path, command: str, seed: int, outputs: list):
    manifest = {
        "command": command,
        "seed": seed,
        "config_echo": "config.resolved.cfg",
        "outputs": sorted(outputs),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# surface command
# ---------------------------------------------------------------------------


def _parse_conditioning(sec: Section, echo: _Echo) -> ConditioningPolicy | None:
    kind = sec.get("conditioning")
    if kind is None:
        return None
    n_cond = sec.get_int("n_cond", 16)
    seed = sec.get_int("cond_seed", 0)
    echo.put(sec.name, "conditioning", kind)
    echo.put(sec.name, "n_cond", n_cond)
    echo.put(sec.name, "cond_seed", seed)
    if kind == "fixed":
        values = sec.get_floats("cond_values", required=True)
        echo.put(sec.name, "cond_values", values)
        return ConditioningPolicy(kind="fixed", values=tuple((v,) for v in values), seed=seed)
    if kind == "uniform_grid":
        lo = sec.get_float("cond_lo", required=True)
        hi = sec.get_float("cond_hi", required=True)
        echo.put(sec.name, "cond_lo", lo)
        echo.put(sec.name, "cond_hi", hi)
        return ConditioningPolicy(kind="uniform_grid", n_cond=n_cond, bounds=((lo, hi),), seed=seed)
    if kind == "from_target_marginal":
        return ConditioningPolicy(kind="from_target_marginal", n_cond=n_cond, seed=seed)
    raise ConfigError(f"unknown conditioning kind {kind!r}", sec.key_line("conditioning"))


def _parse_surface_def(sec: Section, echo: _Echo):
    t = sec.get_ints("t", required=True)
    s = sec.get_ints("s", ())
    divergence = sec.get("divergence", "reverse_kl")
    kind = sec.get("transform", "identity")
    echo.put(sec.name, "t", t)
    if s:
        echo.put(sec.name, "s", s)
    echo.put(sec.name, "divergence", divergence)
    echo.put(sec.name, "transform", kind)
    if kind == "identity":
        transform = Transform()
    elif kind == "rotation":
        angle = sec.get_float("angle_deg", required=True)
        echo.put(sec.name, "angle_deg", angle)
        transform = Transform(kind="rotation", angle=float(np.deg2rad(angle)))
    elif kind == "noising":
        var = sec.get_float("noise_var", required=True)
        echo.put(sec.name, "noise_var", var)
        transform = Transform(kind="noising", noise_var=var)
    else:
        raise ConfigError(f"unknown transform {kind!r}", sec.key_line("transform"))
    conditioning = _parse_conditioning(sec, echo)
    try:
        task = MatchingTask(transform=transform, s=s, t=t, divergence=divergence, conditioning=conditioning)
    except ValueError as e:
        raise ConfigError(str(e), sec.line) from None
    rotations = None
    if "rotations_deg" in sec:
        rotations = tuple(float(np.deg2rad(a)) for a in sec.get_floats("rotations_deg"))
        echo.put(sec.name, "rotations_deg", sec.get_floats("rotations_deg"))
    elif "rotations_uniform" in sec:
        n = sec.get_int("rotations_uniform")
        rotations = uniform_angles(n)
        echo.put(sec.name, "rotations_uniform", n)
    ladder = sec.get_floats("ladder", None)
    if ladder is not None:
        echo.put(sec.name, "ladder", ladder)
    return task, rotations, ladder


def cmd_surface(cfg: Config, out_dir: Path, seed: int, threads: int) -> int:
    top = cfg.section("surface")
    echo = _Echo()
    sigma2 = top.get_float("sigma2", 0.1)
    theta_lo = top.get_float("theta_lo", -3.0)
    theta_hi = top.get_float("theta_hi", 3.0)
    theta_n = top.get_int("theta_n", 151)
    points_1d = top.get_int("points_1d", 2001)
    points_2d = top.get_int("points_2d", 401)
    for k, v in [
        ("seed", seed),
        ("sigma2", sigma2),
        ("theta_lo", theta_lo),
        ("theta_hi", theta_hi),
        ("theta_n", theta_n),
        ("points_1d", points_1d),
        ("points_2d", points_2d),
    ]:
        echo.put("surface", k, v)
    if theta_n < 3 or theta_lo >= theta_hi:
        raise ConfigError("theta grid requires theta_lo < theta_hi and theta_n >= 3", top.line)
    defs = sorted(cfg.sections_with_prefix("surface."), key=lambda s: s.name)
    if not defs:
        raise ConfigError("no [surface.NAME] sections found", top.line)
    settings = EstimatorSettings(points_1d=points_1d, points_2d=points_2d)
    grid = default_theta_grid(theta_lo, theta_hi, theta_n)
    outputs = []
    for sec in defs:
        name = sec.name.split(".", 1)[1]
        task, rotations, ladder = _parse_surface_def(sec, echo)
        spec = SurfaceSpec(
            task=task,
            sigma2=sigma2,
            theta_grid=grid,
            rotations=rotations,
            seed=seed,
            settings=settings,
        )
        if ladder is not None:
            try:
                grids = noising_ladder_sweep(spec, ladder, threads=threads)
            except ValueError as e:
                raise ConfigError(str(e), sec.line) from None
            for i, g in enumerate(grids):
                if g.error_cells:
                    return _report_error_cells(name, g)
                fname = f"{name}_noise{i}.csv"
                write_surface_csv(g, out_dir / fname)
                outputs.append(fname)
        else:
            g = sweep(spec, threads=threads)
            if g.error_cells:
                return _report_error_cells(name, g)
            fname = f"{name}.csv"
            write_surface_csv(g, out_dir / fname)
            outputs.append(fname)
    _finish(out_dir, "surface", seed, outputs, echo)
    return 0


def _report_error_cells(name: str, g) -> int:
    i, j = g.error_cells[0]
    theta = (g.axis1[i], g.axis2[j])
    print(
        f"numerical failure in surface {name!r}: non-finite loss at theta = "
        f"({_f(theta[0])}, {_f(theta[1])}) and {len(g.error_cells) - 1} other cells",
        file=sys.stderr,
    )
    return 3


# ---------------------------------------------------------------------------
# train command
# ---------------------------------------------------------------------------


def _parse_target(cfg: Config, sec: Section, echo: _Echo) -> Gmm:
    if "target" in cfg.sections:
        tsec = cfg.section("target")
        raw = tsec.require("means")
        try:
            means = np.array([[float(v) for v in part.split()] for part in raw.split(";")])
        except ValueError:
            raise ConfigError("target means must be ';'-separated coordinate lists", tsec.key_line("means")) from None
        if means.ndim != 2:
            raise ConfigError("target means must all have the same dimension", tsec.key_line("means"))
        sigma2 = tsec.get_float("sigma2", required=True)
        if sigma2 <= 0:
            raise ConfigError("target sigma2 must be positive", tsec.key_line("sigma2"))
        k, d = means.shape
        scales = np.broadcast_to(np.sqrt(sigma2) * np.eye(d), (k, d, d)).copy()
        echo.put("target", "means", raw)
        echo.put("target", "sigma2", sigma2)
        return Gmm(np.full(k, 1.0 / k), means, scales)
    benchmark = sec.get("benchmark", "25gmm")
    if benchmark != "25gmm":
        raise ConfigError(f"unknown benchmark {benchmark!r}", sec.line)
    echo.put(sec.name, "benchmark", benchmark)
    return make_25gmm_target()


def _parse_init(cfg: Config, target: Gmm, echo: _Echo) -> InitSpec:
    sec = cfg.sections.get("init")
    get = sec if sec is not None else Section("init", 0)
    spec = InitSpec(
        n_components=get.get_int("n_components", target.n_components),
        dim=get.get_int("dim", target.dim),
        mean_center=get.get_float("mean_center", -5.0),
        mean_var=get.get_float("mean_var", 0.01),
        scale_var=get.get_float("scale_var", 0.05),
    )
    echo.put("init", "n_components", spec.n_components)
    echo.put("init", "dim", spec.dim)
    echo.put("init", "mean_center", spec.mean_center)
    echo.put("init", "mean_var", spec.mean_var)
    echo.put("init", "scale_var", spec.scale_var)
    return spec


def _parse_phases(sec: Section, dim: int, total_iters: int, echo: _Echo) -> tuple:
    mode = sec.get("phases", "biglearn")
    echo.put(sec.name, "phases", mode)
    if mode == "joint_only":
        return ((0, preset("joint", dim)),)
    if mode == "marginal_only":
        return ((0, preset("marginal_sweep", dim)),)
    if mode != "biglearn":
        raise ConfigError(f"unknown phases mode {mode!r}", sec.key_line("phases"))
    burn_in = sec.get_int("burn_in", total_iters // 2)
    joint_prob = sec.get_float("joint_prob", 0.1)
    echo.put(sec.name, "burn_in", burn_in)
    echo.put(sec.name, "joint_prob", joint_prob)
    if not 0 <= burn_in < total_iters:
        raise ConfigError("burn_in must lie in [0, total_iters)", sec.line)
    if not 0 < joint_prob < 1:
        raise ConfigError("joint_prob must lie in (0, 1)", sec.line)
    joint_tpl = TaskTemplate("fixed", dim, task=MatchingTask(t=tuple(range(dim))))
    marginal_tpl = TaskTemplate("random_marginal", dim)
    mixed = TaskDistribution(((joint_tpl, joint_prob), (marginal_tpl, 1.0 - joint_prob)), phase="joint+marginal")
    if burn_in == 0:
        return ((0, mixed),)
    return ((0, preset("marginal_sweep", dim)), (burn_in, mixed))


def cmd_train(cfg: Config, out_dir: Path, seed: int, threads: int) -> int:
    sec = cfg.section("train")
    echo = _Echo()
    echo.put("train", "seed", seed)
    target = _parse_target(cfg, sec, echo)
    init = _parse_init(cfg, target, echo)
    total_iters = sec.get_int("total_iters", 6000)
    clip_raw = sec.get("grad_clip", "100")
    grad_clip = None if clip_raw.lower() == "none" else float(clip_raw)
    tc = TrainConfig(
        phases=_parse_phases(sec, init.dim, total_iters, echo),
        lr=sec.get_float("lr", 0.1),
        n_samples=sec.get_int("n_samples", 100),
        total_iters=total_iters,
        inner_steps=sec.get_int("inner_steps", 20),
        seed=seed,
        snapshot_every=sec.get_int("snapshot_every", 100),
        extra_snapshots=sec.get_ints("extra_snapshots", ()),
        grad_clip=grad_clip,
        coverage_radius=sec.get_float("coverage_radius", 0.5),
    )
    for k in ("lr", "n_samples", "total_iters", "inner_steps", "snapshot_every", "coverage_radius"):
        echo.put("train", k, getattr(tc, k))
    echo.put("train", "extra_snapshots", tc.extra_snapshots)
    echo.put("train", "grad_clip", "none" if grad_clip is None else grad_clip)

    model = init_model(init, np.random.default_rng(seed))
    t0 = time.time()
    traj = train(model, target, tc)
    wall = time.time() - t0
    write_trajectory(traj, out_dir / "trajectory.ndjson")
    final = traj.final_model.to_gmm()
    report = mode_coverage(final, target.means, tc.coverage_radius, iteration=tc.total_iters)
    _write_json(
        out_dir / "coverage.json",
        {
            "iteration": report.iteration,
            "covered": list(report.covered),
            "count": report.count,
            "radius": report.radius,
        },
    )
    final_kl = kl_grid(final, target, default_grid(final, target)) if final.dim <= 2 else None
    _write_json(
        out_dir / "summary.json",
        {
            "final_joint_kl": None if final_kl is None else float(f"{final_kl:.17g}"),
            "coverage": report.count,
            "total_iters": tc.total_iters,
            "n_snapshots": len(traj.snapshots),
        },
    )
    with open(out_dir / "run.log", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"wall_time_seconds {wall:.3f}\n")
    _finish(out_dir, "train", seed, ["trajectory.ndjson", "coverage.json", "summary.json"], echo)
    return 0


# ---------------------------------------------------------------------------
# eval command
# ---------------------------------------------------------------------------


def cmd_eval(cfg: Config, out_dir: Path, seed: int, threads: int) -> int:
    sec = cfg.section("eval")
    echo = _Echo()
    echo.put("eval", "seed", seed)
    target = _parse_target(cfg, sec, echo)
    radius = sec.get_float("coverage_radius", 0.5)
    echo.put("eval", "coverage_radius", radius)
    traj_path = sec.require("trajectory")
    echo.put("eval", "trajectory", traj_path)
    try:
        records = read_trajectory(traj_path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read trajectory {traj_path}: {e}", sec.key_line("trajectory")) from None
    if not records:
        raise ConfigError(f"trajectory {traj_path} is empty", sec.key_line("trajectory"))
    d = target.dim
    per_comp = d + d * (d + 1) // 2
    rows = []
    for rec in records:
        try:
            theta = np.asarray(rec["theta"], dtype=np.float64)
            iteration = int(rec["iteration"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"malformed trajectory record in {traj_path}", sec.key_line("trajectory")) from None
        if theta.size % per_comp != 0:
            raise ConfigError(
                f"trajectory theta length {theta.size} does not fit dimension {d}",
                sec.key_line("trajectory"),
            )
        model = ThetaModel(theta.size // per_comp, d, theta).to_gmm()
        kl = kl_grid(model, target, default_grid(model, target)) if d <= 2 else float("nan")
        cov = mode_coverage(model, target.means, radius, iteration).count
        rows.append((iteration, kl, cov))
    with open(out_dir / "eval.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,kl,coverage\n")
        for iteration, kl, cov in rows:
            fh.write(f"{iteration},{_f(kl)},{cov}\n")
    _finish(out_dir, "eval", seed, ["eval.csv"], echo)
    return 0


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _finish(out_dir: Path, command: str, seed: int, outputs: list, echo: _Echo):
    with open(out_dir / "config.resolved.cfg", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(echo.render())
    _write_manifest(out_dir, command, seed, outputs)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gmmatch", description="GMM matching-task engine")
    parser.add_argument("--config", required=True, help="path to a run config file")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' key or '.')")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker thread cap for sweeps")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        command = _detect_command(cfg)
        sec = cfg.section(command)
        seed = args.seed if args.seed is not None else sec.get_int("seed", required=True)
        out_dir = Path(args.out if args.out is not None else sec.get("out", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        handler = {"surface": cmd_surface, "train": cmd_train, "eval": cmd_eval}[command]
        return handler(cfg, out_dir, seed, args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingAbort as e:
        print(f"training abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
