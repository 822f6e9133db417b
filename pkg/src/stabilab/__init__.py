"""Stability attacks on adversarial training, at desk scale.

Training-time perturbations that leave labels alone and stay inside a small
l_inf ball can still decide whether adversarial training produces a robust
model. This package provides the pieces to study that end to end: a
Gaussian-mixture theory engine with analytic worst-case risks, exact and
SGD-based robust trainers, PGD/FGSM attacks, clean-label poison crafting,
evaluation sweeps, and a CLI that reproduces the headline experiments.
"""

from .attacks import AttackConfig, fgsm, linear_worst_case, linear_worst_case_loss, pgd
from .data import Dataset, MixSpec, dataset_digest, import_idx, load, mix, save, split, write_idx
from .errors import (
    ConfigError,
    DataError,
    InputError,
    InvariantError,
    StabilabError,
    TrainingDivergedError,
)
from .estimators import (
    AdversarialMlpClassifier,
    AdversarialPoisoner,
    HypocriticalPoisoner,
    RobustLogisticRegression,
)
from .evaluation import EvalReport, SweepResult, budget_sweep, default_attack_suite, evaluate
from .mixture import (
    GaussMixSpec,
    LinearClassifier,
    Shift,
    analytic_adv_risk_linear,
    monte_carlo_adv_risk,
    natural_adv_accuracy_bound,
    natural_classifier,
    optimal_linear_robust,
    robust_adv_accuracy,
    robust_classifier,
    sample,
    weight_ratio,
)
from .models import MlpClassifier, as_mlp, init_mlp, load_model, model_digest, save_model
from .numerics import RngState
from .poison import CraftConfig, craft, train_crafting_model
from .training import TrainHyper, train_linear_robust_exact, train_natural, train_pgd_at

__version__ = "0.1.0"

__all__ = [
    "AdversarialMlpClassifier",
    "AdversarialPoisoner",
    "AttackConfig",
    "ConfigError",
    "CraftConfig",
    "DataError",
    "Dataset",
    "EvalReport",
    "GaussMixSpec",
    "HypocriticalPoisoner",
    "InputError",
    "InvariantError",
    "LinearClassifier",
    "MixSpec",
    "MlpClassifier",
    "RngState",
    "RobustLogisticRegression",
    "Shift",
    "StabilabError",
    "SweepResult",
    "TrainHyper",
    "TrainingDivergedError",
    "analytic_adv_risk_linear",
    "as_mlp",
    "budget_sweep",
    "craft",
    "dataset_digest",
    "default_attack_suite",
    "evaluate",
    "fgsm",
    "import_idx",
    "init_mlp",
    "linear_worst_case",
    "linear_worst_case_loss",
    "load",
    "load_model",
    "mix",
    "model_digest",
    "monte_carlo_adv_risk",
    "natural_adv_accuracy_bound",
    "natural_classifier",
    "optimal_linear_robust",
    "pgd",
    "robust_adv_accuracy",
    "robust_classifier",
    "sample",
    "save",
    "save_model",
    "split",
    "train_crafting_model",
    "train_linear_robust_exact",
    "train_natural",
    "train_pgd_at",
    "weight_ratio",
    "write_idx",
]
