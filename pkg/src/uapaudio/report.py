"""Fooling and transferability reports for a crafted perturbation.

A report holds per-class and pooled fooling ratios for two model instances
on the crafting (train) and held-out (valid) splits, plus the mean peak
relative loudness of the perturbation over validation clips.  Undefined
cells (no originally correct clips, or a zero perturbation for the dB
column) stay None and export as empty CSV cells / JSON nulls.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .audio import CANONICAL_LABELS
from .attacks import Perturbation, fooling_ratio
from .loudness import ZeroSignalError, relative_db

CSV_COLUMNS = ("class", "frA_train", "frA_valid", "frB_train", "frB_valid", "mean_db")


@dataclass
class ReportRow:
    label: str
    frA_train: float | None = None
    frA_valid: float | None = None
    frB_train: float | None = None
    frB_valid: float | None = None
    mean_db: float | None = None

    def as_list(self):
        return [self.label, self.frA_train, self.frA_valid, self.frB_train, self.frB_valid, self.mean_db]


@dataclass
class FoolingReport:
    rows: list = field(default_factory=list)       # one ReportRow per class
    total: ReportRow = field(default_factory=lambda: ReportRow("total"))
    metadata: dict = field(default_factory=dict)

    @property
    def classes(self):
        return [row.label for row in self.rows]

    def row(self, label: str) -> ReportRow:
        for row in self.rows:
            if row.label == label:
                return row
        raise KeyError(label)

    def to_dict(self) -> dict:
        def row_dict(row):
            return {
                "class": row.label,
                "frA_train": row.frA_train,
                "frA_valid": row.frA_valid,
                "frB_train": row.frB_train,
                "frB_valid": row.frB_valid,
                "mean_db": row.mean_db,
            }

        return {
            "rows": [row_dict(r) for r in self.rows],
            "total": row_dict(self.total),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FoolingReport":
        def parse(d):
            return ReportRow(
                d["class"], d["frA_train"], d["frA_valid"], d["frB_train"], d["frB_valid"], d["mean_db"]
            )

        return cls(
            rows=[parse(d) for d in data["rows"]],
            total=parse(data["total"]),
            metadata=data.get("metadata", {}),
        )


def _ordered_labels(*sets):
    present = {w.label for group in sets for w in group}
    ordered = [name for name in CANONICAL_LABELS if name in present]
    ordered += sorted(present - set(ordered) - {None})
    return ordered


def _mean_relative_db(values: np.ndarray, clips) -> float | None:
    levels = []
    for clip in clips:
        try:
            levels.append(relative_db(values, clip.samples, "max"))
        except ZeroSignalError:
            continue  # zero perturbation or silent clip: no defined level
    return float(np.mean(levels)) if levels else None


def evaluate_perturbation(v, model_a, model_b, train_set, valid_set, metadata=None) -> FoolingReport:
    """Score one perturbation on both models and both splits.

    Model B is treated as a black box: only its predictions are used.  The
    per-class mean_db column averages the peak relative loudness over that
    class's validation clips; the total row pools all classes.
    """
    values = v.values if isinstance(v, Perturbation) else np.asarray(v, dtype=np.float64)
    labels = _ordered_labels(train_set, valid_set)
    report = FoolingReport(metadata=dict(metadata or {}))
    zero_pert = not np.any(values)

    for label in labels:
        row = ReportRow(label)
        train_sub = [w for w in train_set if w.label == label]
        valid_sub = [w for w in valid_set if w.label == label]
        if train_sub:
            row.frA_train = fooling_ratio(model_a, train_sub, values)
            row.frB_train = fooling_ratio(model_b, train_sub, values)
        if valid_sub:
            row.frA_valid = fooling_ratio(model_a, valid_sub, values)
            row.frB_valid = fooling_ratio(model_b, valid_sub, values)
            row.mean_db = None if zero_pert else _mean_relative_db(values, valid_sub)
        report.rows.append(row)

    report.total = ReportRow(
        "total",
        frA_train=fooling_ratio(model_a, train_set, values),
        frB_train=fooling_ratio(model_b, train_set, values),
        frA_valid=fooling_ratio(model_a, valid_set, values),
        frB_valid=fooling_ratio(model_b, valid_set, values),
        mean_db=None if zero_pert else _mean_relative_db(values, valid_set),
    )
    return report


def export_report(report: FoolingReport, path, fmt: str | None = None) -> None:
    """Write the report as CSV (stable column order) or a JSON mirror."""
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in report.rows + [report.total]:
                writer.writerow(["" if v is None else (v if isinstance(v, str) else repr(v)) for v in row.as_list()])
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_report(path) -> FoolingReport:
    with open(path, encoding="utf-8") as fh:
        return FoolingReport.from_dict(json.load(fh))
