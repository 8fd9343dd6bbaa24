"""Scikit-learn style estimators wrapping the trainers.

`SmallNetClassifier` trains a lone network (optionally on gaussian-noised
inputs and/or resampled labels); `DistilledClassifier` trains a student under
a teacher with one of the distillation methods. Both follow the usual
estimator contract: constructor stores hyperparameters verbatim, `fit`
produces trailing-underscore attributes, `get_params`/`set_params`/`clone`
work out of the box.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .distillation import DistillConfig, ScheduleSpec, train
from .models import Model, init_model, load_model, predict_logits, student_spec, teacher_spec
from .rng import Rng
from .validation import as_images, as_labels

__all__ = ["SmallNetClassifier", "DistilledClassifier"]

_PRESETS = {"student": student_spec, "teacher": teacher_spec}


class _NetBase(BaseEstimator, ClassifierMixin):
    def _spec(self):
        if self.preset not in _PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {sorted(_PRESETS)}")
        return _PRESETS[self.preset](
            num_classes=self.num_classes,
            input_shape=self.input_shape,
            dropout_rate=self.dropout_rate,
        )

    def _schedule(self):
        return ScheduleSpec(self.epochs, self.lr, self.decay_factor, tuple(self.decay_epochs))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_images(X, self.input_shape)
        logits = predict_logits(self.model_, X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        return predict_logits(self.model_, as_images(X, self.input_shape))

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_images(X, self.input_shape)
        return self.classes_[predict_logits(self.model_, X).argmax(axis=1)]


class SmallNetClassifier(_NetBase):
    """Small conv/MLP net trained with cross-entropy and SGD momentum.

    With sigma > 0 the inputs receive fresh gaussian noise each batch
    (gaussian augmentation); with mc_rate > 0 each batch's labels are
    resampled uniformly at that rate.
    """

    def __init__(self, preset="student", num_classes=10, input_shape=(3, 12, 12),
                 dropout_rate=0.0, sigma=0.0, mc_rate=0.0, epochs=40, batch_size=128,
                 lr=0.1, momentum=0.9, decay_factor=0.2, decay_epochs=(12, 24, 30), seed=0):
        self.preset = preset
        self.num_classes = num_classes
        self.input_shape = input_shape
        self.dropout_rate = dropout_rate
        self.sigma = sigma
        self.mc_rate = mc_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_epochs = decay_epochs
        self.seed = seed

    def fit(self, X, y, eval_set=None):
        X = as_images(X, self.input_shape)
        y = as_labels(y, self.num_classes)
        config = DistillConfig(
            method="baseline", sigma=self.sigma, mc_rate=self.mc_rate,
            batch_size=self.batch_size, momentum=self.momentum,
            schedule=self._schedule(), seed=self.seed,
        )
        model = init_model(self._spec(), Rng(self.seed, "weight-init"))
        eval_X = eval_y = None
        if eval_set is not None:
            eval_X = as_images(eval_set[0], self.input_shape)
            eval_y = as_labels(eval_set[1], self.num_classes)
        _, history = train(model, None, X, y, config, eval_X, eval_y)
        self.model_ = model
        self.history_ = history
        self.classes_ = np.arange(self.num_classes)
        self.n_features_in_ = int(np.prod(self.input_shape))
        return self


class DistilledClassifier(_NetBase):
    """Student classifier trained under a teacher.

    method: "hinton" (static soft targets), "ft" (teacher dropout stays
    active while supervising), or "sr" (student sees gaussian-noised inputs,
    teacher sees clean ones). mc_rate > 0 adds per-batch label resampling on
    top of any method. `teacher` may be a fitted SmallNetClassifier, a Model,
    or a checkpoint path.
    """

    def __init__(self, teacher=None, method="hinton", alpha=0.9, tau=4.0, sigma=0.0,
                 mc_rate=0.0, preset="student", num_classes=10, input_shape=(3, 12, 12),
                 dropout_rate=0.0, epochs=40, batch_size=128, lr=0.1, momentum=0.9,
                 decay_factor=0.2, decay_epochs=(12, 24, 30), seed=0):
        self.teacher = teacher
        self.method = method
        self.alpha = alpha
        self.tau = tau
        self.sigma = sigma
        self.mc_rate = mc_rate
        self.preset = preset
        self.num_classes = num_classes
        self.input_shape = input_shape
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.decay_factor = decay_factor
        self.decay_epochs = decay_epochs
        self.seed = seed

    def _resolve_teacher(self) -> Model:
        teacher = self.teacher
        if isinstance(teacher, SmallNetClassifier):
            teacher._check_fitted()
            return teacher.model_
        if isinstance(teacher, Model):
            return teacher
        if isinstance(teacher, (str, bytes)):
            return load_model(teacher)
        raise ValueError("teacher must be a fitted SmallNetClassifier, a Model, or a checkpoint path")

    def fit(self, X, y, eval_set=None):
        X = as_images(X, self.input_shape)
        y = as_labels(y, self.num_classes)
        teacher = self._resolve_teacher()
        config = DistillConfig(
            method=self.method, alpha=self.alpha, tau=self.tau, sigma=self.sigma,
            mc_rate=self.mc_rate, teacher_dropout_rate=teacher.spec.dropout_rate,
            batch_size=self.batch_size, momentum=self.momentum,
            schedule=self._schedule(), seed=self.seed,
        )
        model = init_model(self._spec(), Rng(self.seed, "weight-init"))
        eval_X = eval_y = None
        if eval_set is not None:
            eval_X = as_images(eval_set[0], self.input_shape)
            eval_y = as_labels(eval_set[1], self.num_classes)
        _, history = train(model, teacher, X, y, config, eval_X, eval_y)
        self.model_ = model
        self.history_ = history
        self.teacher_model_ = teacher
        self.classes_ = np.arange(self.num_classes)
        self.n_features_in_ = int(np.prod(self.input_shape))
        return self
