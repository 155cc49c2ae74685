"""Few-step diffusion distillation testbed on analytic Gaussian mixtures.

Small dense nets in pure numpy, exact mixture scores and density ratios as
oracles, a two-phase training pipeline (adversarial initialization, then
score-difference distribution matching), and brute-force checks for every
gradient path.
"""

from .config import RunConfig, load_config
from .dmd import ScoreProvider, dmd_cotangent_rkl, dmd_cotangent_soften
from .exceptions import CheckpointError, ConfigError, QuadratureCoverageError, TrainingAbort
from .pipeline import load_checkpoint, run_ablation_matrix, run_experiment, save_checkpoint
from .schedule import Schedule, add_noise, make_schedule
from .student import FewStepGrid, StudentModel, generate_few_step, make_student
from .teacher import MixtureSpec, TeacherBundle, analytic_score, make_teacher, ring_mixture

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "FewStepGrid",
    "MixtureSpec",
    "QuadratureCoverageError",
    "RunConfig",
    "Schedule",
    "ScoreProvider",
    "StudentModel",
    "TeacherBundle",
    "TrainingAbort",
    "__version__",
    "add_noise",
    "analytic_score",
    "dmd_cotangent_rkl",
    "dmd_cotangent_soften",
    "generate_few_step",
    "load_checkpoint",
    "load_config",
    "make_schedule",
    "make_student",
    "make_teacher",
    "ring_mixture",
    "run_ablation_matrix",
    "run_experiment",
    "save_checkpoint",
]
