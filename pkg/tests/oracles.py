"""Independent reference implementations used to verify the package.

Everything here is written straight-line from the defining formulas, on
purpose avoiding the package's own numerics (no shared softmax helpers, no
shift tricks beyond what correctness requires), so a disagreement indicates
a real defect rather than a shared bug.
"""

from __future__ import annotations

import math

import numpy as np


def softmax_rows_reference(logits: np.ndarray, tau: float) -> np.ndarray:
    out = np.zeros_like(logits, dtype=np.float64)
    for i in range(logits.shape[0]):
        row = [math.exp(v / tau - max(logits[i]) / tau) for v in logits[i]]
        s = sum(row)
        out[i] = [v / s for v in row]
    return out


def kd_loss_reference(student_logits, teacher_logits, labels, alpha, tau) -> float:
    """(1-alpha)*CE + alpha*tau^2*KL(teacher^tau || student^tau), batch means."""
    student_logits = np.asarray(student_logits, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    n = student_logits.shape[0]
    ce = 0.0
    s1 = softmax_rows_reference(student_logits, 1.0)
    for i, label in enumerate(labels):
        ce += -math.log(s1[i][label])
    ce /= n
    st = softmax_rows_reference(student_logits, tau)
    tt = softmax_rows_reference(teacher_logits, tau)
    kl = 0.0
    for i in range(n):
        for c in range(student_logits.shape[1]):
            p = tt[i][c]
            if p > 0:
                kl += p * (math.log(p) - math.log(st[i][c]))
    kl /= n
    return (1.0 - alpha) * ce + alpha * tau * tau * kl


def sr_loss_reference(student_logits_noisy, teacher_logits_clean, labels, alpha, tau) -> float:
    return kd_loss_reference(student_logits_noisy, teacher_logits_clean, labels, alpha, tau)


def finite_difference_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
