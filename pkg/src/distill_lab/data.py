"""Dataset construction: a procedural 10-way oriented-grating task with an
optional distribution-shifted variant, fixed pre-training label corruption,
and a byte-exact binary container for externally produced datasets.

Synthetic task: the class determines the orientation of a striped grating
(with small within-class jitter, so neighbouring classes are genuinely
confusable); colour, phase, stripe width, frequency, background and pixel
noise are per-sample nuisances. The out-of-distribution variant re-renders
the test stream with shifted frequency, contrast and background statistics
while preserving the class semantics, and reduces to the test split exactly
at shift = 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "Dataset",
    "LabelCorruption",
    "generate_synthetic",
    "corrupt_labels_fixed",
    "save_binary",
    "load_binary",
    "RAW_MAGIC",
]

RAW_MAGIC = b"RLI1"

_SPLIT_STREAMS = {"train": 0, "test": 1, "ood": 1}  # ood re-renders the test stream


@dataclass(frozen=True)
class Dataset:
    """Images in [0, 1] with integer labels and provenance metadata."""

    images: np.ndarray  # [N, C, H, W] float64
    labels: np.ndarray  # [N] int64
    num_classes: int
    split: str
    provenance: Mapping = field(default_factory=dict)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images must be [N,C,H,W], got shape {images.shape}")
        if labels.ndim != 1 or len(labels) != len(images):
            raise ValueError("labels must be one per image")
        if not np.all(np.isfinite(images)):
            raise ValueError("non-finite pixel values")
        if images.size and (images.min() < 0 or images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.num_classes,
                       self.split, dict(self.provenance))


@dataclass(frozen=True)
class LabelCorruption:
    """Record of a one-off label corruption applied before training."""

    rate: float
    seed: int
    indices: np.ndarray          # corrupted positions, sorted
    original_labels: np.ndarray  # labels those positions held before


def _hue_to_rgb(h: np.ndarray) -> np.ndarray:
    """Cheap hue wheel: h in [0,1) -> rgb in [0,1], shape h.shape + (3,)."""
    k = (h[..., None] + np.array([0.0, 1 / 3, 2 / 3])) % 1.0
    return np.clip(np.abs(k * 6.0 - 3.0) - 1.0, 0.0, 1.0)


def generate_synthetic(
    num_classes: int = 10,
    per_class: int = 100,
    image_size: int = 12,
    shift: float = 0.0,
    seed: int = 7,
    split: str = "train",
) -> Dataset:
    """Render a class-balanced oriented-grating dataset.

    `shift` is only meaningful for the "ood" split: it moves the rendering
    statistics (grating frequency, contrast, background brightness, pixel
    noise) away from the test distribution. The ood split consumes exactly
    the same random draws as the test split, so shift = 0 reproduces the test
    split bit for bit.
    """
    if split not in _SPLIT_STREAMS:
        raise ValueError(f"unknown split {split!r}")
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if split != "ood" and shift != 0.0:
        raise ValueError("shift applies to the ood split only")

    n = num_classes * per_class
    labels = np.repeat(np.arange(num_classes), per_class)
    gen = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(_SPLIT_STREAMS[split],))))

    # One fixed block of draws per dataset; the shift reinterprets the draws
    # rather than consuming different ones.
    u = gen.uniform(0.0, 1.0, (n, 12))
    pixel_noise = gen.standard_normal((n, 3, image_size, image_size))

    theta = (labels + (u[:, 0] - 0.5) * 0.8) * np.pi / num_classes  # orientation, jittered
    phase = u[:, 1] * 2 * np.pi
    freq = 2.0 + u[:, 2] * 1.5 + shift * 1.5
    contrast = (0.55 + 0.45 * u[:, 3]) * (1.0 - 0.3 * shift)
    duty = (u[:, 4] - 0.5) * 0.8                     # stripe-width threshold
    hue = u[:, 5]                                     # nuisance colour
    bg_brightness = 0.2 + 0.3 * u[:, 6] + 0.2 * shift
    bg_hue = u[:, 7]
    bg_grad_angle = u[:, 8] * 2 * np.pi               # background shading direction
    distractor_on = u[:, 9] < 0.5
    distractor_theta = u[:, 10] * np.pi
    distractor_phase = u[:, 11] * 2 * np.pi
    noise_std = 0.06 + 0.04 * shift

    axis = np.linspace(-1.0, 1.0, image_size)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")

    def stripes(angle, f, ph, thr):
        proj = xx[None] * np.cos(angle)[:, None, None] + yy[None] * np.sin(angle)[:, None, None]
        wave = np.cos(2 * np.pi * f[:, None, None] * proj + ph[:, None, None])
        return (wave > thr[:, None, None]).astype(np.float64)

    fg_mask = stripes(theta, freq, phase, duty)
    d_mask = stripes(distractor_theta, freq, distractor_phase, np.zeros(n))
    d_mask *= 0.35 * distractor_on[:, None, None]

    shading = 0.5 + 0.5 * (xx[None] * np.cos(bg_grad_angle)[:, None, None]
                           + yy[None] * np.sin(bg_grad_angle)[:, None, None]) / np.sqrt(2)
    fg_rgb = _hue_to_rgb(hue)[:, :, None, None]
    bg_rgb = _hue_to_rgb(bg_hue)[:, :, None, None]

    base = bg_brightness[:, None, None, None] * (0.6 + 0.4 * shading[:, None]) * (0.5 + 0.5 * bg_rgb)
    fg = contrast[:, None, None, None] * (0.35 + 0.65 * fg_rgb)
    images = base * (1.0 - fg_mask[:, None]) + fg * fg_mask[:, None]
    images += 0.3 * contrast[:, None, None, None] * d_mask[:, None]
    images += noise_std * pixel_noise
    images = np.clip(images, 0.0, 1.0)

    provenance = {
        "generator": "oriented-gratings",
        "num_classes": num_classes,
        "per_class": per_class,
        "image_size": image_size,
        "shift": shift,
        "seed": seed,
        "split": split,
    }
    return Dataset(images, labels, num_classes, split, provenance)


def corrupt_labels_fixed(dataset: Dataset, rate: float, seed: int) -> tuple[Dataset, LabelCorruption]:
    """Replace a fixed ceil(rate*N) subset of labels with different classes.

    Unlike the per-batch resampler, this corruption happens once and is then
    frozen, and a corrupted label is never the original one, so `rate` equals
    the fraction of wrong labels exactly.
    """
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    n = len(dataset)
    n_corrupt = int(np.ceil(rate * n))
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(99,))))
    chosen = np.sort(gen.permutation(n)[:n_corrupt])
    labels = dataset.labels.copy()
    originals = labels[chosen].copy()
    if n_corrupt:
        offsets = gen.integers(1, dataset.num_classes, size=n_corrupt)
        labels[chosen] = (originals + offsets) % dataset.num_classes
    provenance = dict(dataset.provenance)
    provenance.update({"label_corruption_rate": rate, "label_corruption_seed": seed})
    corrupted = Dataset(dataset.images, labels, dataset.num_classes, dataset.split, provenance)
    return corrupted, LabelCorruption(rate, seed, chosen, originals)


# ---------------------------------------------------------------------------
# binary container: 16-byte header, then records of 1 label byte + C*H*W
# pixel bytes; pixels are stored as uint8 and scaled to [0, 1] on load.


def save_binary(dataset: Dataset, path) -> None:
    c, h, w = dataset.images.shape[1:]
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<HHHH", dataset.num_classes, c, h, w))
        fh.write(b"\x00" * 4)
        pixels = np.round(dataset.images * 255.0).astype(np.uint8)
        for label, img in zip(dataset.labels, pixels):
            fh.write(struct.pack("<B", int(label)))
            fh.write(img.tobytes(order="C"))


def load_binary(path, split: str = "train") -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != RAW_MAGIC:
        raise ValueError(f"{path}: not a raw labeled-image file (bad header)")
    num_classes, c, h, w = struct.unpack("<HHHH", blob[4:12])
    if num_classes == 0 or c == 0 or h == 0 or w == 0:
        raise ValueError(f"{path}: degenerate dimensions in header")
    record = 1 + c * h * w
    body = blob[16:]
    if len(body) % record:
        raise ValueError(f"{path}: truncated file, record {len(body) // record} is incomplete")
    n = len(body) // record
    raw = np.frombuffer(body, dtype=np.uint8).reshape(n, record)
    labels = raw[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise ValueError(f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])} "
                         f">= num_classes {num_classes}")
    images = raw[:, 1:].reshape(n, c, h, w).astype(np.float64) / 255.0
    return Dataset(images, labels, num_classes, split, {"source": str(path)})
