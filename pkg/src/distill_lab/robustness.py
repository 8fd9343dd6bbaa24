"""Adversarial and natural robustness: l-inf PGD with restarts, gaussian input
augmentation, and the corruption metrics (mean corruption accuracy plus
accuracy conditional on clean correctness).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corruptions import CorruptionSpec, apply_corruption
from .errors import UndefinedMetricError
from .models import DropoutMode, Model, forward, predict_labels
from .rng import Rng

__all__ = [
    "AttackConfig",
    "pgd_attack",
    "evaluate_robustness",
    "gaussian_augment",
    "mca",
    "corruption_accuracy_grid",
    "conditional_accuracy",
    "THREADS_ENV_VAR",
]

THREADS_ENV_VAR = "DISTILL_LAB_THREADS"


def _eval_threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class AttackConfig:
    """l-inf PGD parameters on the [0, 1] image scale."""

    epsilon: float = 8 / 255
    step_size: float = 0.03
    steps: int = 20
    restarts: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.steps > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive when steps > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


def _input_gradient(model: Model, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    x_t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        logits = forward(model, x_t, dropout=DropoutMode.INACTIVE, param_grads=False)
        loss = ad.cross_entropy(logits, labels)
        ad.backward(tape, loss)
    return x_t.grad


def _per_sample_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(len(labels)), labels]


def pgd_attack(
    model: Model,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    rng: Rng,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """Projected-gradient l-inf attack; returns one adversarial image per sample.

    Each restart starts from x plus uniform noise in [-eps, eps], then takes
    sign-gradient ascent steps on the cross-entropy, projecting into the
    epsilon ball and the valid range after every step. Across restarts, each
    sample keeps a misclassified iterate if any restart found one, otherwise
    the iterate with the highest loss. Restart noise is derived per sample
    index, so batching does not change the result.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("attack input must lie in [0, 1]")
    if indices is None:
        indices = np.arange(len(x))
    if cfg.steps == 0 or cfg.epsilon == 0:
        return x.copy()

    n = len(x)
    shape_each = x.shape[1:]
    best = x.copy()
    best_loss = np.full(n, -np.inf)
    best_missed = np.zeros(n, dtype=bool)

    for _ in range(cfg.restarts):
        noise = rng.per_index_uniform(indices, shape_each, -cfg.epsilon, cfg.epsilon)
        xa = np.clip(x + noise, 0.0, 1.0)
        for _ in range(cfg.steps):
            g = _input_gradient(model, xa, labels)
            xa = xa + cfg.step_size * np.sign(g)
            xa = np.clip(xa, x - cfg.epsilon, x + cfg.epsilon)
            xa = np.clip(xa, 0.0, 1.0)
        logits = forward(model, xa).data
        loss = _per_sample_ce(logits, labels)
        missed = logits.argmax(axis=1) != labels
        take = (missed & ~best_missed) | ((missed == best_missed) & (loss > best_loss))
        best[take] = xa[take]
        best_loss[take] = loss[take]
        best_missed |= missed

    assert np.max(np.abs(best - x)) <= cfg.epsilon + 1e-9, "pgd left the epsilon ball"
    assert best.min() >= 0.0 and best.max() <= 1.0, "pgd left the valid image range"
    return best


def evaluate_robustness(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: AttackConfig,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Accuracy on adversarial examples; a sample counts as correct only if
    every restart failed to flip it (worst case across restarts).

    Each batch gets a fresh counter-zero rng while the per-sample keys carry
    the global dataset index, so the result is independent of batching.
    """
    correct = 0
    for start in range(0, len(images), batch_size):
        sl = slice(start, min(start + batch_size, len(images)))
        x_adv = pgd_attack(model, images[sl], labels[sl], cfg, Rng(seed, "pgd-init"),
                           indices=np.arange(sl.start, sl.stop))
        preds = predict_labels(model, x_adv)
        correct += int((preds == labels[sl]).sum())
    return correct / len(images)


def gaussian_augment(x: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """x plus iid N(0, sigma^2) per element; deliberately not clipped to [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.normal(x.shape)


# ---------------------------------------------------------------------------
# corruption metrics


def _cell_accuracy(model: Model, images, labels, kind: str, severity: int,
                   seed: int, cell_index: int) -> float:
    rng = Rng(seed, "eval", counter=cell_index)
    corrupted = apply_corruption(images, CorruptionSpec(kind, severity), rng)
    return float((predict_labels(model, corrupted) == labels).mean())


def corruption_accuracy_grid(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    kinds: Sequence[str],
    severities: Sequence[int],
    seed: int = 0,
) -> np.ndarray:
    """Accuracy per (kind, severity) cell. Cells are independent and derive
    their noise from (seed, cell index), so the optional thread pool (capped
    by DISTILL_LAB_THREADS) cannot change the result."""
    if not kinds or not severities:
        raise ValueError("kinds and severities must be non-empty")
    cells = [(ki, si, kind, severity)
             for ki, kind in enumerate(kinds)
             for si, severity in enumerate(severities)]
    grid = np.zeros((len(kinds), len(severities)))

    def run(cell):
        ki, si, kind, severity = cell
        return ki, si, _cell_accuracy(model, images, labels, kind, severity,
                                      seed, ki * len(severities) + si)

    threads = _eval_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    for ki, si, acc in results:
        grid[ki, si] = acc
    return grid


def mca(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    kinds: Sequence[str],
    severities: Sequence[int],
    seed: int = 0,
) -> float:
    """Unweighted mean accuracy over the corruption kind x severity grid."""
    return float(corruption_accuracy_grid(model, images, labels, kinds, severities, seed).mean())


def conditional_accuracy(
    model: Model,
    clean_images: np.ndarray,
    corrupted_images: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Accuracy on corrupted images restricted to samples the model classifies
    correctly when clean. Raises if no clean sample is correct."""
    if len(clean_images) != len(corrupted_images) or len(clean_images) != len(labels):
        raise ValueError("clean/corrupted/labels must be index-aligned")
    clean_ok = predict_labels(model, clean_images) == labels
    if not clean_ok.any():
        raise UndefinedMetricError("no clean sample is classified correctly")
    corrupted_ok = predict_labels(model, corrupted_images) == labels
    return float((clean_ok & corrupted_ok).sum() / clean_ok.sum())
