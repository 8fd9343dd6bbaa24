"""Run records and the on-disk results store.

Layout under a results directory:

    records.csv        append-only, one row of final metrics per run
    aggregates.csv     mean/std per (method, sweep value), appended per sweep
    runs/<run id>/     manifest.txt (config + metrics + wall clock),
                       history.csv (per-epoch), student.ckpt

records.csv carries only reproducible values (wall clock lives in the
manifest), so re-running a (config, seed) pair appends byte-identical rows
and reports regenerate deterministically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import write_manifest
from .distillation import TrainHistory
from .errors import ConfigError

__all__ = ["RunRecord", "RunStore", "write_report", "fmt"]

RECORD_COLUMNS = (
    "config_hash", "method", "sweep_param", "sweep_value", "alpha", "tau",
    "sigma", "mc_rate", "teacher_dropout", "label_corruption", "seed",
    "test_acc", "ood_acc", "pgd_acc", "mca",
)

AGGREGATE_COLUMNS = (
    "method", "sweep_param", "sweep_value", "n_seeds",
    "test_acc_mean", "test_acc_std", "ood_acc_mean", "ood_acc_std",
    "pgd_acc_mean", "pgd_acc_std", "mca_mean", "mca_std",
)

METRIC_KEYS = ("test_acc", "ood_acc", "pgd_acc", "mca")


def fmt(value) -> str:
    """Shortest round-trip decimal for floats; plain str otherwise."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class RunRecord:
    config_hash: str
    method: str
    sweep_param: str
    sweep_value: float
    alpha: float
    tau: float
    sigma: float
    mc_rate: float
    teacher_dropout: float
    label_corruption: float
    seed: int
    final: dict[str, float]
    history: TrainHistory = field(default_factory=TrainHistory)
    wall_clock: float = 0.0

    def run_id(self) -> str:
        return f"{self.config_hash}-{self.method}-{self.sweep_param}{self.sweep_value:g}-seed{self.seed}"

    def row(self) -> list[str]:
        values = {
            "config_hash": self.config_hash, "method": self.method,
            "sweep_param": self.sweep_param, "sweep_value": self.sweep_value,
            "alpha": self.alpha, "tau": self.tau, "sigma": self.sigma,
            "mc_rate": self.mc_rate, "teacher_dropout": self.teacher_dropout,
            "label_corruption": self.label_corruption, "seed": self.seed,
        }
        values.update({k: self.final.get(k, "") for k in METRIC_KEYS})
        return [fmt(values[c]) for c in RECORD_COLUMNS]


class RunStore:
    """Append-only CSV store with one manifest directory per run."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def records_path(self) -> Path:
        return self.root / "records.csv"

    @property
    def aggregates_path(self) -> Path:
        return self.root / "aggregates.csv"

    def run_dir(self, record: RunRecord) -> Path:
        return self.root / "runs" / record.run_id()

    def append(self, record: RunRecord) -> Path:
        new = not self.records_path.exists()
        with open(self.records_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(RECORD_COLUMNS)
            writer.writerow(record.row())

        run_dir = self.run_dir(record)
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest = {f"metric.{k}": v for k, v in sorted(record.final.items())}
        manifest.update({
            "run.config_hash": record.config_hash,
            "run.method": record.method,
            "run.seed": record.seed,
            "run.sweep_param": record.sweep_param,
            "run.sweep_value": record.sweep_value,
            "run.wall_clock_s": round(record.wall_clock, 3),
        })
        write_manifest(run_dir / "manifest.txt", manifest)
        with open(run_dir / "history.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("epoch", "lr", "train_loss", "ce_term", "kl_term", "test_acc"))
            for e in record.history.epochs:
                writer.writerow((e.epoch, fmt(e.lr), fmt(e.train_loss), fmt(e.ce_term),
                                 fmt(e.kl_term), "" if e.test_acc is None else fmt(e.test_acc)))
        return run_dir

    def read_records(self) -> list[dict[str, str]]:
        if not self.records_path.exists():
            return []
        with open(self.records_path, newline="") as fh:
            return list(csv.DictReader(fh))

    def append_aggregates(self, records: list[RunRecord]) -> list[dict[str, str]]:
        """Aggregate mean / 1-sample-std per (method, sweep value); append rows."""
        groups: dict[tuple[str, str, float], list[RunRecord]] = {}
        for rec in records:
            groups.setdefault((rec.method, rec.sweep_param, rec.sweep_value), []).append(rec)
        rows = []
        for (method, param, value), group in sorted(groups.items()):
            row = {"method": method, "sweep_param": param, "sweep_value": fmt(value),
                   "n_seeds": str(len(group))}
            for key in METRIC_KEYS:
                vals = np.array([g.final[key] for g in group], dtype=np.float64)
                row[f"{key}_mean"] = fmt(vals.mean())
                row[f"{key}_std"] = fmt(vals.std(ddof=1) if len(vals) > 1 else 0.0)
            rows.append(row)
        new = not self.aggregates_path.exists()
        with open(self.aggregates_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
            if new:
                writer.writeheader()
            writer.writerows(rows)
        return rows


def _sort_key(row: dict[str, str]):
    return (row["method"], row["sweep_param"], float(row["sweep_value"]), int(row["seed"]))


def write_report(results_dir) -> Path:
    """Render records into a markdown summary plus per-figure CSV files.

    Deterministic: same records.csv in, same bytes out.
    """
    store = RunStore(results_dir)
    records = store.read_records()
    if not records:
        raise ConfigError(f"no runs found in {results_dir}")
    records = sorted(records, key=_sort_key)
    root = Path(results_dir)

    lines = ["# distill-lab results", "", f"Runs: {len(records)}", "",
             "| method | sweep | value | seed | test_acc | ood_acc | pgd_acc | mca |",
             "|---|---|---|---|---|---|---|---|"]
    for r in records:
        lines.append("| {method} | {sweep_param} | {sweep_value} | {seed} | {test_acc} |"
                     " {ood_acc} | {pgd_acc} | {mca} |".format(**r))
    lines.append("")

    # robustness / accuracy against noise intensity, for noise-trained runs
    sigma_rows = [r for r in records if r["method"] in ("baseline", "sr") and float(r["sigma"]) > 0]
    with open(root / "robustness_vs_sigma.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method", "sigma", "seed", "pgd_acc", "test_acc"))
        for r in sigma_rows:
            writer.writerow((r["method"], r["sigma"], r["seed"], r["pgd_acc"], r["test_acc"]))

    # accuracy against label-resampling rate, per fixed label-corruption level
    mc_rows = [r for r in records if r["method"] in ("hinton", "ft", "sr", "baseline")]
    with open(root / "accuracy_vs_mc_rate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("label_corruption", "method", "mc_rate", "seed", "test_acc"))
        for r in mc_rows:
            writer.writerow((r["label_corruption"], r["method"], r["mc_rate"],
                             r["seed"], r["test_acc"]))

    lines.append("Figure data: robustness_vs_sigma.csv, accuracy_vs_mc_rate.csv")
    lines.append("")
    report_path = root / "report.md"
    report_path.write_text("\n".join(lines))
    return report_path
