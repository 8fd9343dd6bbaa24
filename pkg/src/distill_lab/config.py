"""Experiment configuration: a flat `key = value` text format with dotted
keys, strict parsing (unknown or duplicate keys are errors), canonical
serialization (sorted keys, shortest round-trip floats) and a stable hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corruptions import CORRUPTION_KINDS
from .distillation import DistillConfig, ScheduleSpec
from .errors import ConfigError
from .robustness import AttackConfig

__all__ = [
    "ExperimentConfig",
    "DataSection",
    "TrainSection",
    "EvalSection",
    "parse_config",
    "parse_config_file",
    "serialize_config",
    "config_hash",
    "write_manifest",
    "read_manifest",
]


@dataclass(frozen=True)
class DataSection:
    num_classes: int = 10
    per_class_train: int = 100
    per_class_test: int = 50
    per_class_ood: int = 50
    image_size: int = 12
    ood_shift: float = 0.5
    seed: int = 7
    label_corruption: float = 0.0
    train_path: str = ""
    test_path: str = ""
    ood_path: str = ""


@dataclass(frozen=True)
class TrainSection:
    method: str = "hinton"
    alpha: float = 0.9
    tau: float = 4.0
    sigma: float = 0.0
    mc_rate: float = 0.0
    teacher_dropout: float = 0.3
    epochs: int = 40
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    decay_factor: float = 0.2
    decay_epochs: tuple[int, ...] = (12, 24, 30)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class EvalSection:
    subset: int = 256
    pgd_steps_grid: tuple[int, ...] = (1, 5, 10, 15, 20, 100)
    pgd_eps_grid: tuple[int, ...] = (1, 2, 10, 20, 25, 50, 100, 200)  # in 1/255 units
    pgd_eps_steps: int = 20
    severities: tuple[int, ...] = (1, 2, 3, 4, 5)
    kinds: tuple[str, ...] = CORRUPTION_KINDS
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(
        epsilon=8 / 255, step_size=0.03, steps=10, restarts=5))
    eval: EvalSection = field(default_factory=EvalSection)
    teacher_checkpoint: str = ""

    def distill_config(self, seed: int, **overrides) -> DistillConfig:
        t = self.train
        schedule = ScheduleSpec(t.epochs, t.lr, t.decay_factor, t.decay_epochs)
        base = dict(
            method=t.method, alpha=t.alpha, tau=t.tau, sigma=t.sigma,
            mc_rate=t.mc_rate, teacher_dropout_rate=t.teacher_dropout,
            batch_size=t.batch_size, momentum=t.momentum, schedule=schedule, seed=seed,
        )
        base.update(overrides)
        return DistillConfig(**base)


# key -> (section attribute or None for top level, field name, type tag)
_KEYS: dict[str, tuple[str | None, str, str]] = {
    "data.num_classes": ("data", "num_classes", "int"),
    "data.per_class_train": ("data", "per_class_train", "int"),
    "data.per_class_test": ("data", "per_class_test", "int"),
    "data.per_class_ood": ("data", "per_class_ood", "int"),
    "data.image_size": ("data", "image_size", "int"),
    "data.ood_shift": ("data", "ood_shift", "float"),
    "data.seed": ("data", "seed", "int"),
    "data.label_corruption": ("data", "label_corruption", "float"),
    "data.train_path": ("data", "train_path", "str"),
    "data.test_path": ("data", "test_path", "str"),
    "data.ood_path": ("data", "ood_path", "str"),
    "train.method": ("train", "method", "str"),
    "train.alpha": ("train", "alpha", "float"),
    "train.tau": ("train", "tau", "float"),
    "train.sigma": ("train", "sigma", "float"),
    "train.mc_rate": ("train", "mc_rate", "float"),
    "train.teacher_dropout": ("train", "teacher_dropout", "float"),
    "train.epochs": ("train", "epochs", "int"),
    "train.batch_size": ("train", "batch_size", "int"),
    "train.lr": ("train", "lr", "float"),
    "train.momentum": ("train", "momentum", "float"),
    "train.decay_factor": ("train", "decay_factor", "float"),
    "train.decay_epochs": ("train", "decay_epochs", "int_list"),
    "train.seeds": ("train", "seeds", "int_list"),
    "attack.epsilon": ("attack", "epsilon", "float"),
    "attack.step_size": ("attack", "step_size", "float"),
    "attack.steps": ("attack", "steps", "int"),
    "attack.restarts": ("attack", "restarts", "int"),
    "eval.subset": ("eval", "subset", "int"),
    "eval.pgd_steps_grid": ("eval", "pgd_steps_grid", "int_list"),
    "eval.pgd_eps_grid": ("eval", "pgd_eps_grid", "int_list"),
    "eval.pgd_eps_steps": ("eval", "pgd_eps_steps", "int"),
    "eval.severities": ("eval", "severities", "int_list"),
    "eval.kinds": ("eval", "kinds", "str_list"),
    "eval.seed": ("eval", "seed", "int"),
    "teacher.checkpoint": (None, "teacher_checkpoint", "str"),
}


def _parse_value(key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",")) if raw else ()
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",")) if raw else ()
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def _format_value(value, kind: str) -> str:
    if kind in ("int_list", "str_list"):
        return ",".join(str(v) for v in value)
    return repr(value) if kind == "float" else str(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse `key = value` lines; unknown and duplicate keys are rejected."""
    sections = {"data": {}, "train": {}, "attack": {}, "eval": {}}
    top: dict[str, object] = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        seen.add(key)
        section, name, kind = _KEYS[key]
        value = _parse_value(key, raw, kind)
        if section is None:
            top[name] = value
        else:
            sections[section][name] = value
    try:
        return ExperimentConfig(
            data=DataSection(**sections["data"]),
            train=TrainSection(**sections["train"]),
            attack=AttackConfig(**sections["attack"]),
            eval=EvalSection(**sections["eval"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config_file(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every key, sorted, with round-trip-exact formatting."""
    lines = []
    for key in sorted(_KEYS):
        section, name, kind = _KEYS[key]
        obj = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_format_value(getattr(obj, name), kind)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# generic dotted-key manifests (dataset sidecars, per-run records)


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k} = {entries[k]!r}" if isinstance(entries[k], float) else f"{k} = {entries[k]}"
             for k in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, _, raw = stripped.partition("=")
        out[key.strip()] = raw.strip()
    return out
