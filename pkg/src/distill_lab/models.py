"""Teacher and student networks with per-forward-pass dropout control.

Two families: a plain MLP and a small stride-1 conv net ("small_conv") made
of conv->relu blocks with optional 2x2 mean pooling after selected blocks and
a final linear classifier. Dropout is inverted (masks scaled by 1/(1-p) when
active), applied after each hidden nonlinearity and never after the final
layer, so inactive mode needs no rescaling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng

__all__ = [
    "ModelSpec",
    "DropoutMode",
    "Model",
    "init_model",
    "forward",
    "predict_logits",
    "predict_labels",
    "accuracy",
    "student_spec",
    "teacher_spec",
    "save_model",
    "load_model",
]

ARCHITECTURES = ("mlp", "small_conv")

CHECKPOINT_MAGIC = b"DLABMDL1"
CHECKPOINT_VERSION = 1


class DropoutMode(Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; `hidden` holds MLP widths or conv channel counts."""

    architecture: str
    input_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    hidden: tuple[int, ...]
    dropout_rate: float = 0.0
    pool_after: tuple[int, ...] = ()  # small_conv block indices followed by 2x2 pooling

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if len(self.input_shape) != 3 or any(d <= 0 for d in self.input_shape):
            raise ValueError(f"input_shape must be (C, H, W) positive, got {self.input_shape}")
        if self.num_classes <= 0:
            raise ValueError("num_classes must be positive")
        if any(w <= 0 for w in self.hidden):
            raise ValueError(f"zero-width layer in {self.hidden}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if any(i < 0 or i >= len(self.hidden) for i in self.pool_after):
            raise ValueError(f"pool_after indices {self.pool_after} out of range")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "pool_after", tuple(int(i) for i in self.pool_after))

    def feature_dim(self) -> int:
        """Flattened width entering the final linear layer."""
        c, h, w = self.input_shape
        if self.architecture == "mlp":
            return self.hidden[-1] if self.hidden else c * h * w
        for i in range(len(self.hidden)):
            if i in self.pool_after:
                if h % 2 or w % 2:
                    raise ValueError(f"cannot 2x2-pool odd spatial dims {h}x{w}")
                h, w = h // 2, w // 2
        channels = self.hidden[-1] if self.hidden else c
        return channels * h * w


def student_spec(
    num_classes: int = 10,
    input_shape: tuple[int, int, int] = (3, 12, 12),
    dropout_rate: float = 0.0,
) -> ModelSpec:
    """Compact 2-block conv net (about 8k parameters at the defaults)."""
    return ModelSpec("small_conv", input_shape, num_classes, (16, 32),
                     dropout_rate=dropout_rate, pool_after=(0, 1))


def teacher_spec(
    num_classes: int = 10,
    input_shape: tuple[int, int, int] = (3, 12, 12),
    dropout_rate: float = 0.3,
) -> ModelSpec:
    """Wider 4-block conv net (about 55k parameters at the defaults)."""
    return ModelSpec("small_conv", input_shape, num_classes, (24, 32, 48, 64),
                     dropout_rate=dropout_rate, pool_after=(0, 1))


class Model:
    """A spec plus its parameter tensors and SGD velocity buffers."""

    def __init__(self, spec: ModelSpec, params: list[Tensor]):
        expected = [shape for shape, _ in _param_layout(spec)]
        if [p.shape for p in params] != expected:
            raise ValueError("parameter shapes inconsistent with spec")
        self.spec = spec
        self.params = params
        self.velocity = [np.zeros_like(p.data) for p in params]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def param_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def _param_layout(spec: ModelSpec) -> list[tuple[tuple[int, ...], int]]:
    """(shape, fan_in) for every parameter tensor, in declaration order."""
    layout: list[tuple[tuple[int, ...], int]] = []
    c, h, w = spec.input_shape
    if spec.architecture == "small_conv":
        cin = c
        for ch in spec.hidden:
            fan_in = cin * 9
            layout.append(((ch, cin, 3, 3), fan_in))
            layout.append((((ch,)), fan_in))
            cin = ch
    else:
        width = c * h * w
        for hw in spec.hidden:
            layout.append(((width, hw), width))
            layout.append(((hw,), width))
            width = hw
    feat = spec.feature_dim()
    layout.append(((feat, spec.num_classes), feat))
    layout.append(((spec.num_classes,), feat))
    return layout


def init_model(spec: ModelSpec, rng: Rng) -> Model:
    """Kaiming fan-in scaled gaussian weights, zero biases; deterministic in rng."""
    params = []
    for shape, fan_in in _param_layout(spec):
        if len(shape) == 1:
            params.append(Tensor(np.zeros(shape), requires_grad=True))
        else:
            std = np.sqrt(2.0 / fan_in)
            params.append(Tensor(rng.normal(shape) * std, requires_grad=True))
    return Model(spec, params)


def _dropout(x: Tensor, rate: float, rng: Rng) -> Tensor:
    # Inverted dropout: keep mask / (1 - rate), so eval needs no rescaling.
    mask = (rng.uniform(x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, mask)


def forward(
    model: Model,
    x,
    dropout: DropoutMode = DropoutMode.INACTIVE,
    rng: Rng | None = None,
    param_grads: bool = True,
) -> Tensor:
    """Compute logits [B, num_classes].

    With inactive dropout the output is a pure function of (model, x); with
    active dropout each call samples fresh masks from `rng`. Set
    `param_grads=False` to treat parameters as constants (used by input-space
    attacks so parameter gradients are neither computed nor accumulated).
    """
    spec = model.spec
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ValueError(f"input shape {x.shape} does not match spec {('B',) + spec.input_shape}")
    use_dropout = dropout is DropoutMode.ACTIVE and spec.dropout_rate > 0
    if use_dropout and rng is None:
        raise ValueError("active dropout requires an rng")

    params = model.params
    if not param_grads:
        params = [Tensor(p.data) for p in params]

    h = x
    if spec.architecture == "small_conv":
        for i in range(len(spec.hidden)):
            w, b = params[2 * i], params[2 * i + 1]
            h = ad.relu(ad.conv2d_forward(h, w, b, padding=1))
            if use_dropout:
                h = _dropout(h, spec.dropout_rate, rng)
            if i in spec.pool_after:
                h = ad.avg_pool(h, 2)
        h = ad.flatten(h)
    else:
        h = ad.flatten(h)
        for i in range(len(spec.hidden)):
            w, b = params[2 * i], params[2 * i + 1]
            h = ad.relu(ad.linear_forward(h, w, b))
            if use_dropout:
                h = _dropout(h, spec.dropout_rate, rng)
    w, b = params[-2], params[-1]
    return ad.linear_forward(h, w, b)


def predict_logits(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inactive-dropout logits computed in batches, outside any tape."""
    chunks = []
    for start in range(0, len(images), batch_size):
        logits = forward(model, images[start:start + batch_size])
        chunks.append(logits.data)
    return np.concatenate(chunks, axis=0)


def predict_labels(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return predict_logits(model, images, batch_size).argmax(axis=1)


def accuracy(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    return float((predict_labels(model, images) == labels).mean())


# ---------------------------------------------------------------------------
# checkpoint io: versioned header, json-encoded spec, little-endian doubles


def save_model(model: Model, path) -> None:
    spec_blob = json.dumps(asdict(model.spec), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(spec_blob)))
        fh.write(spec_blob)
        fh.write(struct.pack("<I", len(model.params)))
        for p in model.params:
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(p.data.astype("<f8", copy=False).tobytes(order="C"))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        version, spec_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        raw = json.loads(fh.read(spec_len).decode())
        spec = ModelSpec(
            architecture=raw["architecture"],
            input_shape=tuple(raw["input_shape"]),
            num_classes=raw["num_classes"],
            hidden=tuple(raw["hidden"]),
            dropout_rate=raw["dropout_rate"],
            pool_after=tuple(raw["pool_after"]),
        )
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = []
        for _ in range(n_params):
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            params.append(Tensor(data.astype(np.float64), requires_grad=True))
    return Model(spec, params)
