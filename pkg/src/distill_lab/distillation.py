"""Training procedures: plain cross-entropy (optionally with gaussian input
noise), logit distillation, fickle-teacher distillation (teacher dropout kept
active while supervising), soft randomization (student sees noisy inputs,
teacher sees clean ones), and the messy-collaboration label resampler that can
wrap any of them.

The combined objective is
    (1 - alpha) * CE(student(x), y) + alpha * tau^2 * KL(teacher_probs || student_probs)
with both softmaxes taken at temperature tau and the teacher treated as a
constant target, so gradients reach the student only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import NumericError
from .models import DropoutMode, Model, accuracy, forward
from .rng import Rng
from .robustness import gaussian_augment

__all__ = [
    "ScheduleSpec",
    "DistillConfig",
    "METHODS",
    "DESK_SCHEDULE",
    "STANDARD_SCHEDULE",
    "lr_at",
    "ft_schedule",
    "hinton_loss",
    "hinton_loss_parts",
    "sr_loss",
    "mc_corrupt_labels",
    "EpochStats",
    "TrainHistory",
    "train",
]

METHODS = ("baseline", "hinton", "ft", "sr")

# Fickle-teacher runs need more epochs to average over the noisy supervision;
# the multiplier grows with the teacher's dropout rate and the decays sit at
# fixed fractions of the stretched run.
_FT_DECAY_FRACTIONS = (0.3, 0.6, 0.8)


@dataclass(frozen=True)
class ScheduleSpec:
    """Step-decay learning-rate schedule."""

    total_epochs: int
    initial_lr: float
    decay_factor: float
    decay_epochs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.total_epochs <= 0:
            raise ValueError("total_epochs must be positive")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if self.decay_epochs and self.decay_epochs[-1] >= self.total_epochs:
            raise ValueError("decay epochs must be < total_epochs")


STANDARD_SCHEDULE = ScheduleSpec(200, 0.1, 0.2, (60, 120, 150))
DESK_SCHEDULE = ScheduleSpec(40, 0.1, 0.2, (12, 24, 30))


def lr_at(schedule: ScheduleSpec, epoch: int) -> float:
    """Learning rate in effect at `epoch` (0-based)."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    n_decays = sum(1 for d in schedule.decay_epochs if d <= epoch)
    return schedule.initial_lr * schedule.decay_factor ** n_decays


def _ft_multiplier(dropout_rate: float) -> float:
    if dropout_rate <= 0.2:
        return 1.25
    if dropout_rate <= 0.3:
        return 1.5
    return 1.75


def ft_schedule(base: ScheduleSpec, dropout_rate: float) -> ScheduleSpec:
    """Stretched schedule for fickle-teacher training.

    Rate 0 returns `base` unchanged. Otherwise the epoch count is scaled by
    1.25 / 1.5 / 1.75 (rates up to 0.2 / 0.3 / above) and the decays land at
    30%, 60% and 80% of the stretched run.
    """
    if dropout_rate == 0:
        return base
    total = int(round(base.total_epochs * _ft_multiplier(dropout_rate)))
    decays = tuple(int(math.floor(total * f)) for f in _FT_DECAY_FRACTIONS)
    return ScheduleSpec(total, base.initial_lr, base.decay_factor, decays)


@dataclass(frozen=True)
class DistillConfig:
    """Method selector plus every knob a training run needs."""

    method: str = "hinton"
    alpha: float = 0.9
    tau: float = 4.0
    sigma: float = 0.0
    mc_rate: float = 0.0
    teacher_dropout_rate: float = 0.0
    batch_size: int = 128
    momentum: float = 0.9
    schedule: ScheduleSpec = field(default_factory=lambda: DESK_SCHEDULE)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not 0 <= self.mc_rate <= 1:
            raise ValueError(f"mc_rate must be in [0, 1], got {self.mc_rate}")
        if not 0 <= self.teacher_dropout_rate < 1:
            raise ValueError(f"teacher_dropout_rate must be in [0, 1), got {self.teacher_dropout_rate}")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


# ---------------------------------------------------------------------------
# losses


def _teacher_probs(teacher_logits, tau: float) -> np.ndarray:
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    z = t / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def hinton_loss_parts(student_logits: Tensor, teacher_logits, labels, tau: float) -> tuple[Tensor, Tensor]:
    """(cross-entropy term, temperature-tau KL term), unweighted.

    Logged separately by the trainer so the weighting of the two terms stays
    auditable. The teacher distribution is the KL target; its logits carry no
    gradient.
    """
    student_logits = student_logits if isinstance(student_logits, Tensor) else Tensor(student_logits)
    t_shape = teacher_logits.shape if isinstance(teacher_logits, (Tensor, np.ndarray)) else np.shape(teacher_logits)
    if tuple(t_shape) != student_logits.shape:
        raise ValueError(f"student/teacher logit shapes differ: {student_logits.shape} vs {tuple(t_shape)}")
    ce = ad.cross_entropy(student_logits, labels)
    target = _teacher_probs(teacher_logits, tau)
    kl = ad.kl_divergence(target, ad.log_softmax(student_logits, tau))
    return ce, kl


def hinton_loss(student_logits: Tensor, teacher_logits, labels, alpha: float, tau: float) -> Tensor:
    """(1-alpha) * CE + alpha * tau^2 * KL(teacher || student), batch means."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    ce, kl = hinton_loss_parts(student_logits, teacher_logits, labels, tau)
    return ad.add(ad.scale(ce, 1.0 - alpha), ad.scale(kl, alpha * tau * tau))


def sr_loss(student_logits_noisy: Tensor, teacher_logits_clean, labels, alpha: float, tau: float) -> Tensor:
    """Soft-randomization objective.

    Arithmetically identical to `hinton_loss`; the difference lies in the
    inputs: the caller computes the student logits on noise-augmented images
    and the teacher logits on the clean ones.
    """
    return hinton_loss(student_logits_noisy, teacher_logits_clean, labels, alpha, tau)


def mc_corrupt_labels(labels: np.ndarray, r: float, num_classes: int, rng: Rng) -> np.ndarray:
    """With probability r per label, replace it by a uniform draw over all classes.

    The draw may repeat the original label, so the expected changed fraction
    is r * (num_classes - 1) / num_classes. Every call consumes fresh
    randomness, giving independent corruption per batch.
    """
    if not 0 <= r <= 1:
        raise ValueError(f"rate must be in [0, 1], got {r}")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    hit = rng.uniform(labels.shape) < r
    draws = rng.integers(0, num_classes, labels.shape)
    return np.where(hit, draws, labels)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    ce_term: float
    kl_term: float
    test_acc: float | None


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def final_test_acc(self) -> float | None:
        return self.epochs[-1].test_acc if self.epochs else None


def _resolve_teacher_mode(method: str, override: DropoutMode | None) -> DropoutMode:
    if override is not None:
        return override
    return DropoutMode.ACTIVE if method == "ft" else DropoutMode.INACTIVE


def train(
    student: Model,
    teacher: Model | None,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    config: DistillConfig,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
    teacher_mode: DropoutMode | None = None,
) -> tuple[Model, TrainHistory]:
    """Run one full training and return the (mutated) student and its history.

    Per batch: labels optionally pass through the messy-collaboration
    resampler; the baseline and soft-randomization paths add gaussian noise to
    the student's input; distillation paths query the teacher (inactive
    dropout, or active for the fickle teacher) and apply the combined loss.
    Teacher parameters are never updated. `teacher_mode` overrides the
    per-method teacher dropout mode, for diagnostics.
    """
    method = config.method
    if method != "baseline" and teacher is None:
        raise ValueError(f"method {method!r} requires a teacher")
    if method == "ft":
        if teacher.spec.dropout_rate == 0:
            raise ValueError("fickle-teacher training requires a teacher with dropout_rate > 0")
        if student.spec.dropout_rate > 0:
            raise ValueError("the student must not use dropout in fickle-teacher training")

    schedule = config.schedule
    if method == "ft":
        schedule = ft_schedule(config.schedule, teacher.spec.dropout_rate)

    rng_shuffle = Rng(config.seed, "data-shuffle")
    rng_dropout = Rng(config.seed, "dropout")
    rng_noise = Rng(config.seed, "gaussian-noise")
    rng_mc = Rng(config.seed, "mc-labels")
    t_mode = _resolve_teacher_mode(method, teacher_mode)

    n = len(train_images)
    num_classes = student.spec.num_classes
    params = student.param_arrays()
    history = TrainHistory()

    for epoch in range(schedule.total_epochs):
        lr = lr_at(schedule, epoch)
        order = rng_shuffle.permutation(n)
        loss_sum = ce_sum = kl_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = train_images[idx]
            y = train_labels[idx]
            if config.mc_rate > 0:
                y = mc_corrupt_labels(y, config.mc_rate, num_classes, rng_mc)

            x_student = x
            if method in ("baseline", "sr") and config.sigma > 0:
                x_student = gaussian_augment(x, config.sigma, rng_noise)

            teacher_logits = None
            if method != "baseline":
                teacher_logits = forward(
                    teacher, x, dropout=t_mode, rng=rng_dropout, param_grads=False
                ).data

            with Tape() as tape:
                s_logits = forward(student, Tensor(x_student),
                                   dropout=DropoutMode.ACTIVE, rng=rng_dropout)
                if method == "baseline":
                    ce = ad.cross_entropy(s_logits, y)
                    kl_val = 0.0
                    loss = ce
                else:
                    ce, kl = hinton_loss_parts(s_logits, teacher_logits, y, config.tau)
                    kl_val = kl.item()
                    loss = ad.add(ad.scale(ce, 1.0 - config.alpha),
                                  ad.scale(kl, config.alpha * config.tau * config.tau))
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                ad.backward(tape, loss)

            grads = [p.grad for p in student.params]
            ad.sgd_momentum_step(params, grads, student.velocity, lr, config.momentum)
            student.zero_grad()

            loss_sum += loss.item() * len(idx)
            ce_sum += ce.item() * len(idx)
            kl_sum += kl_val * len(idx)

        test_acc = None
        if eval_images is not None:
            test_acc = accuracy(student, eval_images, eval_labels)
        history.epochs.append(EpochStats(epoch, lr, loss_sum / n, ce_sum / n, kl_sum / n, test_acc))

    return student, history


def desk_config(**overrides) -> DistillConfig:
    """Desk-scale defaults (40-epoch compression of the standard schedule)."""
    return replace(DistillConfig(), **overrides)
