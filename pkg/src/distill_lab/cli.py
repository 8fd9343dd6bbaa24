"""Command-line experiment orchestration.

Subcommands:
    train-teacher   train the teacher per seed, keep every checkpoint, mark
                    the best one by test accuracy
    distill         train students (method x sweep values x seeds), record
                    metrics, aggregate mean/std per sweep value
    evaluate        attack grids, corruption grid and shifted-split accuracy
                    for one checkpoint
    report          render a results directory into markdown + figure CSVs

Exit codes: 0 success, 2 configuration error, 3 numeric failure (non-finite
values encountered).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, config_hash, parse_config_file,
                     read_manifest, serialize_config, write_manifest)
from .data import Dataset, corrupt_labels_fixed, generate_synthetic, load_binary
from .distillation import train
from .errors import ConfigError, NumericError
from .models import (Model, accuracy, init_model, load_model, save_model,
                     student_spec, teacher_spec)
from .results import RunRecord, RunStore, fmt, write_report
from .rng import Rng
from .robustness import (AttackConfig, conditional_accuracy, corruption_accuracy_grid,
                         evaluate_robustness, mca)
from .corruptions import CorruptionSpec, apply_corruption

__all__ = ["main", "build_datasets", "run_distill", "run_train_teacher", "run_evaluate"]


# ---------------------------------------------------------------------------
# dataset assembly


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(train, test, ood) per the data section; label corruption, when
    requested, is applied once to the training split and then frozen."""
    d = cfg.data
    size = d.image_size
    if d.train_path:
        train_ds = load_binary(d.train_path, split="train")
        test_ds = load_binary(d.test_path, split="test") if d.test_path else train_ds
        ood_ds = load_binary(d.ood_path, split="ood") if d.ood_path else test_ds
    else:
        train_ds = generate_synthetic(d.num_classes, d.per_class_train, size,
                                      seed=d.seed, split="train")
        test_ds = generate_synthetic(d.num_classes, d.per_class_test, size,
                                     seed=d.seed, split="test")
        ood_ds = generate_synthetic(d.num_classes, d.per_class_ood, size,
                                    shift=d.ood_shift, seed=d.seed, split="ood")
    if d.label_corruption > 0:
        train_ds, _ = corrupt_labels_fixed(train_ds, d.label_corruption, d.seed)
    return train_ds, test_ds, ood_ds


def _eval_subset(ds: Dataset, subset: int) -> Dataset:
    if subset <= 0 or subset >= len(ds):
        return ds
    idx = np.linspace(0, len(ds) - 1, subset).round().astype(int)
    return ds.subset(idx)


def _input_shape(cfg: ExperimentConfig) -> tuple[int, int, int]:
    return (3, cfg.data.image_size, cfg.data.image_size)


# ---------------------------------------------------------------------------
# teacher training and lookup


def _teacher_dir(out: Path, dropout: float) -> Path:
    return out / "teachers" / f"dropout-{dropout:g}"


def run_train_teacher(cfg: ExperimentConfig, out: Path, seeds, dropouts) -> Path:
    train_ds, test_ds, _ = build_datasets(cfg)
    last_marker = None
    for dropout in dropouts:
        tdir = _teacher_dir(out, dropout)
        tdir.mkdir(parents=True, exist_ok=True)
        results = []
        for seed in seeds:
            config = cfg.distill_config(seed, method="baseline", sigma=0.0, mc_rate=0.0,
                                        teacher_dropout_rate=dropout)
            spec = teacher_spec(cfg.data.num_classes, _input_shape(cfg), dropout_rate=dropout)
            model = init_model(spec, Rng(seed, "weight-init"))
            t0 = time.perf_counter()
            train(model, None, train_ds.images, train_ds.labels, config)
            wall = time.perf_counter() - t0
            acc = accuracy(model, test_ds.images, test_ds.labels)
            ckpt = tdir / f"teacher-seed{seed}.ckpt"
            save_model(model, ckpt)
            results.append((acc, seed, ckpt.name, wall))
            print(f"teacher dropout={dropout:g} seed={seed}: test_acc={acc:.4f}")
        best_acc, best_seed, best_name, _ = max(results, key=lambda r: (r[0], -r[1]))
        write_manifest(tdir / "best.txt", {
            "checkpoint": best_name, "seed": best_seed, "test_acc": best_acc,
        })
        print(f"teacher dropout={dropout:g}: best seed={best_seed} ({best_acc:.4f})")
        last_marker = tdir / "best.txt"
    return last_marker


def resolve_teacher(cfg: ExperimentConfig, out: Path, dropout: float) -> Model:
    if cfg.teacher_checkpoint:
        return load_model(cfg.teacher_checkpoint)
    marker = _teacher_dir(out, dropout) / "best.txt"
    if not marker.exists():
        raise ConfigError(
            f"no teacher found: set teacher.checkpoint or run train-teacher first "
            f"(looked for {marker})")
    entry = read_manifest(marker)
    return load_model(marker.parent / entry["checkpoint"])


# ---------------------------------------------------------------------------
# distillation runs


_SWEEP_TO_KEY = {"sigma": "sigma", "mc_rate": "mc_rate", "dropout": "teacher_dropout"}


def _default_sweep_param(method: str, cfg: ExperimentConfig) -> str:
    if method == "sr" or (method == "baseline" and cfg.train.sigma > 0):
        return "sigma"
    if method == "ft":
        return "dropout"
    if cfg.train.mc_rate > 0:
        return "mc_rate"
    return "none"


def _final_metrics(model: Model, test_ds: Dataset, ood_ds: Dataset,
                   cfg: ExperimentConfig) -> dict[str, float]:
    sub = _eval_subset(test_ds, cfg.eval.subset)
    return {
        "test_acc": accuracy(model, test_ds.images, test_ds.labels),
        "ood_acc": accuracy(model, ood_ds.images, ood_ds.labels),
        "pgd_acc": evaluate_robustness(model, sub.images, sub.labels, cfg.attack,
                                       seed=cfg.eval.seed),
        "mca": mca(model, sub.images, sub.labels, cfg.eval.kinds, cfg.eval.severities,
                   seed=cfg.eval.seed),
    }


def run_distill(cfg: ExperimentConfig, out: Path, seeds, sweep_param: str,
                sweep_values) -> list[RunRecord]:
    store = RunStore(out)
    train_ds, test_ds, ood_ds = build_datasets(cfg)
    method = cfg.train.method
    records = []
    for value in sweep_values:
        eff_cfg = cfg
        if sweep_param != "none":
            eff_cfg = replace(cfg, train=replace(cfg.train, **{_SWEEP_TO_KEY[sweep_param]: value}))
        teacher = None
        if method != "baseline":
            teacher = resolve_teacher(eff_cfg, out, eff_cfg.train.teacher_dropout)
        chash = config_hash(eff_cfg)
        for seed in seeds:
            config = eff_cfg.distill_config(seed)
            spec = student_spec(cfg.data.num_classes, _input_shape(cfg))
            model = init_model(spec, Rng(seed, "weight-init"))
            t0 = time.perf_counter()
            _, history = train(model, teacher, train_ds.images, train_ds.labels, config,
                               test_ds.images, test_ds.labels)
            wall = time.perf_counter() - t0
            record = RunRecord(
                config_hash=chash, method=method, sweep_param=sweep_param,
                sweep_value=float(value), alpha=config.alpha, tau=config.tau,
                sigma=config.sigma, mc_rate=config.mc_rate,
                teacher_dropout=config.teacher_dropout_rate,
                label_corruption=cfg.data.label_corruption, seed=seed,
                final=_final_metrics(model, test_ds, ood_ds, eff_cfg),
                history=history, wall_clock=wall,
            )
            run_dir = store.append(record)
            save_model(model, run_dir / "student.ckpt")
            (run_dir / "config.txt").write_text(serialize_config(eff_cfg))
            records.append(record)
            print(f"{method} {sweep_param}={value:g} seed={seed}: "
                  f"test_acc={record.final['test_acc']:.4f} pgd_acc={record.final['pgd_acc']:.4f}")
    store.append_aggregates(records)
    return records


# ---------------------------------------------------------------------------
# evaluation grids


def _grid_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_evaluate(cfg: ExperimentConfig, checkpoint: Path, out: Path) -> Path:
    model = load_model(checkpoint)
    _, test_ds, ood_ds = build_datasets(cfg)
    sub = _eval_subset(test_ds, cfg.eval.subset)
    eval_dir = out / f"eval-{Path(checkpoint).stem}"
    eval_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for steps in cfg.eval.pgd_steps_grid:
        acfg = AttackConfig(cfg.attack.epsilon, cfg.attack.step_size, steps, cfg.attack.restarts)
        acc = evaluate_robustness(model, sub.images, sub.labels, acfg, seed=cfg.eval.seed)
        rows.append((steps, fmt(acc)))
        print(f"pgd steps={steps}: robust_acc={acc:.4f}")
    _grid_csv(eval_dir / "pgd_steps_grid.csv", ("steps", "robust_acc"), rows)

    rows = []
    for eps255 in cfg.eval.pgd_eps_grid:
        acfg = AttackConfig(eps255 / 255, cfg.attack.step_size, cfg.eval.pgd_eps_steps,
                            cfg.attack.restarts)
        acc = evaluate_robustness(model, sub.images, sub.labels, acfg, seed=cfg.eval.seed)
        rows.append((eps255, fmt(acc)))
        print(f"pgd eps={eps255}/255: robust_acc={acc:.4f}")
    _grid_csv(eval_dir / "pgd_eps_grid.csv", ("epsilon_255", "robust_acc"), rows)

    kinds, severities = cfg.eval.kinds, cfg.eval.severities
    grid = corruption_accuracy_grid(model, sub.images, sub.labels, kinds, severities,
                                    seed=cfg.eval.seed)
    rows = [(kind, severity, fmt(grid[ki, si]))
            for ki, kind in enumerate(kinds) for si, severity in enumerate(severities)]
    _grid_csv(eval_dir / "corruption_grid.csv", ("kind", "severity", "accuracy"), rows)

    cond_rows = []
    for ki, kind in enumerate(kinds):
        cell_conds = []
        for si, severity in enumerate(severities):
            rng = Rng(cfg.eval.seed, "eval", counter=ki * len(severities) + si)
            corrupted = apply_corruption(sub.images, CorruptionSpec(kind, severity), rng)
            cell_conds.append(conditional_accuracy(model, sub.images, corrupted, sub.labels))
        cond_rows.append((kind, fmt(float(np.mean(cell_conds)))))
    _grid_csv(eval_dir / "conditional_accuracy.csv", ("kind", "conditional_acc"), cond_rows)

    summary = {
        "checkpoint": str(checkpoint),
        "test_acc": accuracy(model, test_ds.images, test_ds.labels),
        "ood_acc": accuracy(model, ood_ds.images, ood_ds.labels),
        "mca": float(grid.mean()),
    }
    write_manifest(eval_dir / "summary.txt", summary)
    print(f"test_acc={summary['test_acc']:.4f} ood_acc={summary['ood_acc']:.4f} "
          f"mca={summary['mca']:.4f}")
    return eval_dir


# ---------------------------------------------------------------------------
# argument handling


def _parse_values(raw: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"bad value for {flag}: {raw!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distill-lab",
                                     description="noise-injection distillation lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train-teacher", "distill", "evaluate", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="experiment config file")
        p.add_argument("--out", type=str, default="results", help="results directory")
        p.add_argument("--seed", type=int, default=None, help="single seed")
        p.add_argument("--seeds", type=str, default=None, help="comma-separated seeds")
        p.add_argument("--method", choices=["baseline", "hinton", "ft", "sr"], default=None)
        p.add_argument("--mc-rate", dest="mc_rate", type=str, default=None,
                       help="label-resampling rate (comma list sweeps)")
        p.add_argument("--sigma", type=str, default=None,
                       help="gaussian input-noise std (comma list sweeps)")
        p.add_argument("--dropout", type=str, default=None,
                       help="teacher dropout rate (comma list sweeps)")
        if name == "evaluate":
            p.add_argument("--checkpoint", type=str, required=True)
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.method:
        overrides["method"] = args.method
    for flag, key in (("sigma", "sigma"), ("mc_rate", "mc_rate"), ("dropout", "teacher_dropout")):
        raw = getattr(args, flag)
        if raw is not None and "," not in raw:
            overrides[key] = _parse_values(raw, "--" + flag.replace("_", "-"))[0]
    if overrides:
        cfg = replace(cfg, train=replace(cfg.train, **overrides))
    return cfg


def _seeds(args, cfg: ExperimentConfig) -> list[int]:
    if args.seed is not None and args.seeds is not None:
        raise ConfigError("pass --seed or --seeds, not both")
    if args.seed is not None:
        return [args.seed]
    if args.seeds is not None:
        try:
            return [int(s) for s in args.seeds.split(",") if s != ""]
        except ValueError:
            raise ConfigError(f"bad value for --seeds: {args.seeds!r}") from None
    return list(cfg.train.seeds)


def _sweep(args, cfg: ExperimentConfig) -> tuple[str, list[float]]:
    swept = [(flag, raw) for flag, raw in (("sigma", args.sigma), ("mc_rate", args.mc_rate),
                                           ("dropout", args.dropout))
             if raw is not None and "," in raw]
    if len(swept) > 1:
        raise ConfigError("only one of --sigma/--mc-rate/--dropout may sweep")
    if swept:
        flag, raw = swept[0]
        return flag, _parse_values(raw, "--" + flag.replace("_", "-"))
    param = _default_sweep_param(cfg.train.method, cfg)
    if param == "none":
        return "none", [0.0]
    current = {"sigma": cfg.train.sigma, "mc_rate": cfg.train.mc_rate,
               "dropout": cfg.train.teacher_dropout}[param]
    return param, [current]


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            path = write_report(Path(args.out))
            print(f"report written to {path}")
            return 0
        cfg = _load_config(args)
        out = Path(args.out)
        seeds = _seeds(args, cfg)
        if args.command == "train-teacher":
            raw = args.dropout
            dropouts = (_parse_values(raw, "--dropout") if raw is not None
                        else [cfg.train.teacher_dropout])
            run_train_teacher(cfg, out, seeds, dropouts)
        elif args.command == "distill":
            sweep_param, sweep_values = _sweep(args, cfg)
            run_distill(cfg, out, seeds, sweep_param, sweep_values)
        else:
            run_evaluate(cfg, Path(args.checkpoint), out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
