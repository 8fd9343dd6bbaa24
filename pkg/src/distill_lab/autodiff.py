"""Reverse-mode automatic differentiation over dense float64 tensors.

Ops execute eagerly on numpy arrays. While a Tape is active, each op that
touches a gradient-requiring tensor appends a backward rule; because ops are
recorded in execution order the tape is already topologically sorted, and
one reverse sweep populates gradients for every reachable input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "scale",
    "mul",
    "sum_all",
    "linear_forward",
    "conv2d_forward",
    "relu",
    "avg_pool",
    "flatten",
    "softmax_temperature",
    "log_softmax",
    "cross_entropy",
    "kl_divergence",
    "backward",
    "sgd_momentum_step",
]


class Tensor:
    """Dense float64 array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {what}")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeOp:
    inputs: tuple[Tensor, ...]
    output: Tensor
    # Receives d(loss)/d(output), returns per-input gradients (None = skip).
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Execution-ordered record of differentiable ops (a valid topo order)."""

    ops: list[TapeOp] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self.ops)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.ops.append(TapeOp(inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad for every gradient-requiring tensor feeding `loss`."""
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for op in reversed(tape.ops):
        out_grad = op.output.grad
        if out_grad is None:
            continue  # op not on a path to the loss
        grads = op.backward(out_grad)
        for tensor, grad in zip(op.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            # never mutate .grad in place: backward rules may hand the same
            # array to several inputs (e.g. add), so accumulation reallocates
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; `b` may be a constant array (e.g. a dropout mask)."""
    a = _as_tensor(a)
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        out = Tensor(a.data * b.data)
        return _record(out, (a, b), lambda g: (g * b.data, g * a.data))
    const = np.asarray(b, dtype=np.float64)
    out = Tensor(a.data * const)
    return _record(out, (a,), lambda g: (g * const,))


def sum_all(x: Tensor) -> Tensor:
    """Scalar sum of all elements."""
    x = _as_tensor(x)
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    positive = x.data > 0
    return _record(out, (x,), lambda g: (g * positive,))


def flatten(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    batch = x.shape[0]
    out = Tensor(x.data.reshape(batch, -1))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def linear_forward(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x [B, I], w [I, O], b [O]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"linear bias shape {b.shape} does not match out dim {w.shape[1]}")
    out = Tensor(x.data @ w.data + b.data)

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _record(out, (x, w, b), back)


def avg_pool(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k mean pooling over [B, C, H, W]."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ValueError(f"avg_pool expects [B,C,H,W], got {x.shape}")
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool: spatial dims {h}x{w} not divisible by {k}")
    acc = np.zeros((b, c, h // k, w // k))
    for i in range(k):
        for j in range(k):
            acc += x.data[:, :, i::k, j::k]
    out = Tensor(acc * (1.0 / (k * k)))

    def back(g):
        gs = g * (1.0 / (k * k))
        gx = np.empty_like(x.data)
        for i in range(k):
            for j in range(k):
                gx[:, :, i::k, j::k] = gs
        return (gx,)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# convolution (stride 1, symmetric zero padding) via im2col


def conv2d_forward(x: Tensor, w: Tensor, b: Tensor, padding: int = 1) -> Tensor:
    """2-D convolution, stride 1: x [B,C,H,W], w [O,C,kh,kw], b [O].

    Lowered to one large GEMM over an im2col matrix of shape
    [C*kh*kw, B*Ho*Wo]; the backward pass reuses that matrix.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    bs, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: x has {cin}, w expects {cin_w}")
    if b.shape != (cout,):
        raise ValueError(f"conv2d bias shape {b.shape} does not match out channels {cout}")
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel larger than padded input")

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(cin * kh * kw, bs * ho * wo)
    wm = w.data.reshape(cout, -1)                      # [O, C*kh*kw]
    out_t = wm @ cols                                  # [O, B*Ho*Wo]
    out_data = out_t.reshape(cout, bs, ho, wo).transpose(1, 0, 2, 3) + b.data[None, :, None, None]
    out = Tensor(out_data)

    def back(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3).reshape(cout, bs * ho * wo))
        gw = gm @ cols.T if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wm.T @ gm).reshape(cin, kh, kw, bs, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho, j:j + wo] += gcols[:, i, j].transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, None if gw is None else gw.reshape(w.shape), gm.sum(axis=1)

    return _record(out, (x, w, b), back)


# ---------------------------------------------------------------------------
# probability ops and losses


def _check_logits(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2:
        raise ValueError(f"expected [batch, classes] logits, got shape {logits.shape}")
    logits.check_finite("logits")
    return logits


def softmax_temperature(logits: Tensor, tau: float) -> Tensor:
    """Row-wise softmax of logits / tau, computed shift-stably."""
    logits = _check_logits(_as_tensor(logits))
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = logits.data / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def back(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / tau,)

    return _record(out, (logits,), back)


def log_softmax(logits: Tensor, tau: float = 1.0) -> Tensor:
    logits = _check_logits(_as_tensor(logits))
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = logits.data / tau
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(z - lse)
    p = np.exp(out.data)

    def back(g):
        return ((g - p * g.sum(axis=1, keepdims=True)) / tau,)

    return _record(out, (logits,), back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = _check_logits(_as_tensor(logits))
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = Tensor(-logp[np.arange(n), labels].mean())

    def back(g):
        gz = np.exp(logp)
        gz[np.arange(n), labels] -= 1.0
        return (gz * (g / n),)

    return _record(out, (logits,), back)


def kl_divergence(target_probs, log_probs: Tensor) -> Tensor:
    """Mean over the batch of sum_c p_c (log p_c - log q_c), with 0*log 0 = 0.

    `target_probs` is treated as a constant (no gradient flows into it);
    gradients propagate through `log_probs` only.
    """
    p = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs, dtype=np.float64)
    log_q = _as_tensor(log_probs)
    if p.shape != log_q.shape:
        raise ValueError(f"distribution shape mismatch: {p.shape} vs {log_q.shape}")
    if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("target rows must be non-negative and sum to 1 within 1e-6")
    if np.max(np.abs(np.exp(log_q.data).sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("log_probs rows must exponentiate to a distribution within 1e-6")
    n = p.shape[0]
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = Tensor((plogp - p * log_q.data).sum(axis=1).mean())

    def back(g):
        return (None, (-p) * (g / n))

    return _record(out, (Tensor(p), log_q), back)


# ---------------------------------------------------------------------------
# optimizer


def sgd_momentum_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """In-place update: v <- momentum*v + g; p <- p - lr*v."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("params, grads and velocity must have equal lengths")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch in sgd step: {p.shape}, {g.shape}, {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
