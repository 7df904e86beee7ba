"""Matching-task optimization engine for Gaussian mixture models.

Exact GMM algebra (marginals, conditionals, linear transforms, Gaussian
noising), grid/Monte-Carlo divergence estimators, pathwise reverse-KL
gradients, multitask training with phase schedules, and loss-surface sweeps
over the tailored 2-component family.
"""

from .gmm import (
    Gmm,
    complement,
    condition,
    convolve_gaussian,
    gmm_from_dict,
    gmm_from_json,
    gmm_to_dict,
    gmm_to_json,
    linear_transform,
    log_density,
    marginalize,
    sample,
)
from .divergence import GridSpec, default_grid, js_grid, kl_grid, kl_mc
from .model import SCALE_FLOOR, ThetaModel
from .pathwise import (
    LinearStage,
    MarginalStage,
    NoisingStage,
    PathwiseDraws,
    apply_stages,
    draw_pathwise,
    pathwise_loss,
    pathwise_loss_and_grad,
    reverse_kl_pathwise_grad,
)
from .tasks import (
    ConditioningPolicy,
    EstimatorSettings,
    MatchingTask,
    TaskDistribution,
    TaskTemplate,
    Transform,
    orthogonal_matrix,
    preset,
    rotation_matrix,
    sample_task,
    task_loss,
)
from .trainer import (
    InitSpec,
    ModeCoverageReport,
    Snapshot,
    TrainConfig,
    Trajectory,
    TrainingAbort,
    init_model,
    make_25gmm_benchmark,
    make_25gmm_target,
    make_joint_only_config,
    mode_coverage,
    read_trajectory,
    train,
    write_trajectory,
)
from .surfaces import (
    LocalMinimum,
    SurfaceGrid,
    SurfaceSpec,
    default_theta_grid,
    find_local_minima,
    noising_ladder_sweep,
    read_surface_csv,
    sweep,
    tailored_model,
    tailored_target,
    uniform_angles,
    write_surface_csv,
)
from .config import Config, ConfigError, load_config, parse_config

__version__ = "0.1.0"
