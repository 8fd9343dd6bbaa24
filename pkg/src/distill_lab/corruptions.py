"""Procedural image corruptions with fixed five-level severity tables.

The tables below are the single source of truth for severity parameters, so
results are reproducible bit-for-bit across implementations. Each kind's
parameter is strictly monotone in severity; the direction depends on the
parameter's meaning:

    gaussian_noise   additive noise std            (increasing = harsher)
    shot_noise       photons per unit intensity    (decreasing = harsher)
    impulse_noise    fraction of salt/pepper pixels (increasing)
    gaussian_blur    blur kernel std in pixels     (increasing)
    contrast         scale toward the image mean   (decreasing)
    brightness       additive offset               (increasing)
    saturate         saturation multiplier         (increasing)
    pixelate         resolution fraction kept      (decreasing)

Inputs and outputs are [N, C, H, W] (or [C, H, W]) arrays in [0, 1]; outputs
are clipped back to [0, 1]. Noise kinds consume the provided rng; the others
are fully deterministic, so every kind is a pure function of (x, spec, rng).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng

__all__ = [
    "CORRUPTION_KINDS",
    "SEVERITY_TABLES",
    "CorruptionSpec",
    "severity_parameter",
    "apply_corruption",
]

SEVERITY_TABLES: dict[str, tuple[float, ...]] = {
    "gaussian_noise": (0.04, 0.08, 0.14, 0.22, 0.32),
    "shot_noise": (600.0, 250.0, 100.0, 40.0, 15.0),
    "impulse_noise": (0.02, 0.05, 0.09, 0.16, 0.26),
    "gaussian_blur": (0.5, 0.8, 1.2, 1.8, 2.6),
    "contrast": (0.75, 0.55, 0.40, 0.28, 0.18),
    "brightness": (0.08, 0.16, 0.24, 0.33, 0.45),
    "saturate": (1.6, 2.2, 3.0, 4.2, 6.0),
    "pixelate": (0.70, 0.55, 0.40, 0.30, 0.20),
}

CORRUPTION_KINDS = tuple(SEVERITY_TABLES)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in SEVERITY_TABLES:
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ValueError(f"severity must be in [1, 5], got {self.severity}")


def severity_parameter(kind: str, severity: int) -> float:
    return SEVERITY_TABLES[kind][CorruptionSpec(kind, severity).severity - 1]


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected [N,C,H,W] or [C,H,W], got shape {x.shape}")
    return x, False


def apply_gaussian_noise(x: np.ndarray, std: float, rng: Rng) -> np.ndarray:
    return np.clip(x + std * rng.normal(np.shape(x)), 0.0, 1.0)


def apply_shot_noise(x: np.ndarray, photons: float, rng: Rng) -> np.ndarray:
    counts = rng._tick().poisson(np.asarray(x) * photons)
    return np.clip(counts / photons, 0.0, 1.0)


def apply_impulse_noise(x: np.ndarray, fraction: float, rng: Rng) -> np.ndarray:
    u = rng.uniform(np.shape(x))
    out = np.asarray(x, dtype=np.float64).copy()
    out[u < fraction / 2] = 0.0
    out[(u >= fraction / 2) & (u < fraction)] = 1.0
    return out


def apply_gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    xb, single = _batched(x)
    radius = max(1, int(np.ceil(3.0 * sigma)))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    # separable blur with reflect padding, one axis at a time
    for axis in (2, 3):
        pad = [(0, 0)] * 4
        pad[axis] = (radius, radius)
        padded = np.pad(xb, pad, mode="reflect")
        acc = np.zeros_like(xb)
        for t, tap in enumerate(taps):
            sl = [slice(None)] * 4
            sl[axis] = slice(t, t + xb.shape[axis])
            acc += tap * padded[tuple(sl)]
        xb = acc
    out = np.clip(xb, 0.0, 1.0)
    return out[0] if single else out


def apply_contrast(x: np.ndarray, factor: float) -> np.ndarray:
    xb, single = _batched(x)
    mean = xb.mean(axis=(2, 3), keepdims=True)
    out = np.clip((xb - mean) * factor + mean, 0.0, 1.0)
    return out[0] if single else out


def apply_brightness(x: np.ndarray, offset: float) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64) + offset, 0.0, 1.0)


def apply_saturate(x: np.ndarray, factor: float) -> np.ndarray:
    xb, single = _batched(x)
    gray = xb.mean(axis=1, keepdims=True)
    out = np.clip(gray + factor * (xb - gray), 0.0, 1.0)
    return out[0] if single else out


def apply_pixelate(x: np.ndarray, fraction: float) -> np.ndarray:
    xb, single = _batched(x)
    h, w = xb.shape[2], xb.shape[3]
    nh, nw = max(1, int(round(h * fraction))), max(1, int(round(w * fraction)))
    # box-average down to (nh, nw), then nearest-neighbour back up
    row_edges = (np.arange(h) * nh) // h
    col_edges = (np.arange(w) * nw) // w
    small = np.zeros((xb.shape[0], xb.shape[1], nh, nw))
    counts = np.zeros((nh, nw))
    np.add.at(counts, (row_edges[:, None], col_edges[None, :]), 1.0)
    np.add.at(small.transpose(2, 3, 0, 1), (row_edges[:, None], col_edges[None, :]),
              xb.transpose(2, 3, 0, 1))
    small /= counts[None, None]
    out = np.clip(small[:, :, row_edges[:, None], col_edges[None, :]], 0.0, 1.0)
    return out[0] if single else out


def apply_corruption(x: np.ndarray, spec: CorruptionSpec, rng: Rng) -> np.ndarray:
    """Apply one corruption at its table parameter; output clipped to [0, 1]."""
    param = severity_parameter(spec.kind, spec.severity)
    if spec.kind == "gaussian_noise":
        return apply_gaussian_noise(x, param, rng)
    if spec.kind == "shot_noise":
        return apply_shot_noise(x, param, rng)
    if spec.kind == "impulse_noise":
        return apply_impulse_noise(x, param, rng)
    if spec.kind == "gaussian_blur":
        return apply_gaussian_blur(x, param)
    if spec.kind == "contrast":
        return apply_contrast(x, param)
    if spec.kind == "brightness":
        return apply_brightness(x, param)
    if spec.kind == "saturate":
        return apply_saturate(x, param)
    return apply_pixelate(x, param)
