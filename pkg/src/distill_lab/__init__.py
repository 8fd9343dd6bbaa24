"""distill-lab: noise injection in teacher-student training, desk scale.

Three noise sites around a standard logit-distillation loop: the teacher's
dropout kept active while it supervises (fickle teacher), gaussian noise on
the student's inputs with clean-input teacher targets (soft randomization),
and per-batch uniform label resampling (messy collaboration). Evaluation
covers an l-inf PGD attack with restarts, a procedural corruption suite with
severity tables, and a distribution-shifted split.
"""

from .autodiff import (Tape, Tensor, backward, cross_entropy, kl_divergence,
                       sgd_momentum_step, softmax_temperature)
from .config import ExperimentConfig, config_hash, parse_config, serialize_config
from .corruptions import CORRUPTION_KINDS, SEVERITY_TABLES, CorruptionSpec, apply_corruption
from .data import Dataset, LabelCorruption, corrupt_labels_fixed, generate_synthetic, load_binary, save_binary
from .distillation import (DESK_SCHEDULE, STANDARD_SCHEDULE, DistillConfig, ScheduleSpec,
                           ft_schedule, hinton_loss, lr_at, mc_corrupt_labels, sr_loss, train)
from .errors import ConfigError, NumericError, UndefinedMetricError
from .estimators import DistilledClassifier, SmallNetClassifier
from .models import (DropoutMode, Model, ModelSpec, accuracy, forward, init_model,
                     load_model, save_model, student_spec, teacher_spec)
from .results import RunRecord, RunStore, write_report
from .rng import Rng
from .robustness import (AttackConfig, conditional_accuracy, evaluate_robustness,
                         gaussian_augment, mca, pgd_attack)

__version__ = "0.1.0"
