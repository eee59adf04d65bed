"""Loudness metrics and the vocal/background energy partition.

Two decibel metrics are used throughout: a peak metric
``20*log10(max |x_i|)`` and a mean metric ``20*log10(mean |x_i|)``.
Relative loudness of a perturbation v against a clip x is the difference
of the corresponding absolute metrics and is expected to be negative for
perturbations quieter than the signal.  A relative level of -32 dB is the
conventional ceiling for a perturbation to count as unobtrusive.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform

MAX_ACCEPTABLE_DB = -32.0


class ZeroSignalError(ValueError):
    """Raised instead of returning -inf when a signal is identically zero."""


class NoEnergyError(ValueError):
    """Raised when an energy partition is requested for a zero-energy signal."""


def _as_samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def db_max(x) -> float:
    """Peak loudness in dB: 20*log10 of the largest absolute sample."""
    samples = _as_samples(x)
    peak = np.max(np.abs(samples))
    if peak == 0.0:
        raise ZeroSignalError("peak loudness of an all-zero signal is -inf")
    return float(20.0 * np.log10(peak))


def db_mean(x) -> float:
    """Mean loudness in dB: 20*log10 of the mean absolute sample."""
    samples = _as_samples(x)
    mean = np.mean(np.abs(samples))
    if mean == 0.0:
        raise ZeroSignalError("mean loudness of an all-zero signal is -inf")
    return float(20.0 * np.log10(mean))


_METRICS = {"max": db_max, "mean": db_mean}


def relative_db(v, x, metric: str = "max") -> float:
    """Loudness of ``v`` relative to ``x`` under the chosen metric.

    Raises ZeroSignalError if either side is all-zero.
    """
    try:
        fn = _METRICS[metric]
    except KeyError:
        raise ValueError(f"metric must be one of {sorted(_METRICS)}, got {metric!r}") from None
    return fn(v) - fn(x)


@dataclass(frozen=True)
class EnergyPartition:
    """Contiguous 1-based sample range [start, end] holding the bulk of the energy.

    ``start`` and ``end`` are inclusive and satisfy 1 <= start <= end <= length.
    The range is the "vocal" part of a clip; everything outside is background.
    """

    start: int
    end: int
    length: int

    def __post_init__(self):
        if not (1 <= self.start <= self.end <= self.length):
            raise ValueError(f"invalid partition [{self.start}, {self.end}] of {self.length}")

    def vocal(self, samples: np.ndarray) -> np.ndarray:
        return np.asarray(samples)[self.start - 1 : self.end]

    def background(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples)
        return np.concatenate([samples[: self.start - 1], samples[self.end :]])

    @property
    def vocal_length(self) -> int:
        return self.end - self.start + 1


def energy_partition(x, fraction: float = 0.95) -> EnergyPartition:
    """Locate the contiguous range holding ``fraction`` of the signal energy.

    Both bounds come from the cumulative energy curve: ``start`` is the
    first (1-based) sample where the running energy reaches (1-fraction)/2
    of the total, ``end`` the first where it reaches 1-(1-fraction)/2.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    samples = _as_samples(x)
    energy = samples * samples
    cum = np.cumsum(energy)
    total = cum[-1]
    if total == 0.0:
        raise NoEnergyError("cannot partition a zero-energy signal")
    tail = (1.0 - fraction) / 2.0
    # A hair of relative slack so a sample landing exactly on a percentile
    # counts as reaching it despite accumulated rounding.
    lo = tail * total * (1.0 - 1e-12)
    hi = (1.0 - tail) * total * (1.0 - 1e-12)
    start = int(np.searchsorted(cum, lo, side="left")) + 1
    end = int(np.searchsorted(cum, hi, side="left")) + 1
    return EnergyPartition(start=start, end=end, length=samples.shape[0])


@dataclass
class DistortionRecord:
    """Per-clip relative loudness of a perturbation, split by signal part.

    Entries are None where the metric is undefined (an all-zero segment on
    either side).  Silence-class clips carry no vocal entries at all.
    """

    label: str | None
    vocal_db_max: float | None = None
    vocal_db_mean: float | None = None
    background_db_max: float | None = None
    background_db_mean: float | None = None

    def rows(self):
        for part, metric, value in (
            ("vocal", "max", self.vocal_db_max),
            ("vocal", "mean", self.vocal_db_mean),
            ("background", "max", self.background_db_max),
            ("background", "mean", self.background_db_mean),
        ):
            if part == "vocal" and self.label == "silence":
                continue
            yield part, metric, value


@dataclass
class DistortionReport:
    """Relative-loudness audit of one perturbation over a dataset.

    ``skipped_no_energy`` counts clips whose clean signal had no energy to
    partition.  All aggregate means ignore None entries.  The perturbation
    is audited raw, i.e. not re-clipped after addition to the clip.
    """

    records: list[DistortionRecord] = field(default_factory=list)
    skipped_no_energy: int = 0
    fraction: float = 0.95

    def _values(self, part: str, metric: str, label: str | None = None):
        out = []
        for rec in self.records:
            if label is not None and rec.label != label:
                continue
            for p, m, v in rec.rows():
                if p == part and m == metric and v is not None:
                    out.append(v)
        return out

    def mean(self, part: str, metric: str, label: str | None = None) -> float | None:
        values = self._values(part, metric, label)
        return float(np.mean(values)) if values else None

    def per_class_means(self) -> dict:
        labels = sorted({rec.label for rec in self.records}, key=str)
        table = {}
        for label in labels:
            table[label] = {
                f"{part}_{metric}": self.mean(part, metric, label)
                for part in ("vocal", "background")
                for metric in ("max", "mean")
            }
        return table

    def overall_means(self) -> dict:
        return {
            f"{part}_{metric}": self.mean(part, metric)
            for part in ("vocal", "background")
            for metric in ("max", "mean")
        }


def _segment_relative(v_seg: np.ndarray, x_seg: np.ndarray, metric: str) -> float | None:
    if v_seg.size == 0 or x_seg.size == 0:
        return None
    try:
        return relative_db(v_seg, x_seg, metric)
    except ZeroSignalError:
        return None


def distortion_report(v, dataset, fraction: float = 0.95) -> DistortionReport:
    """Audit perturbation loudness per clip, split into vocal and background parts.

    Each clip is partitioned on its clean signal; the perturbation restricted
    to a part is compared against the clip restricted to the same part.
    Clips labelled ``silence`` report only background entries.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    values = v.values if hasattr(v, "values") else _as_samples(v)
    report = DistortionReport(fraction=fraction)
    for clip in dataset:
        samples = _as_samples(clip)
        label = clip.label if isinstance(clip, Waveform) else None
        try:
            part = energy_partition(samples, fraction)
        except NoEnergyError:
            report.skipped_no_energy += 1
            continue
        rec = DistortionRecord(label=label)
        if label != "silence":
            rec.vocal_db_max = _segment_relative(part.vocal(values), part.vocal(samples), "max")
            rec.vocal_db_mean = _segment_relative(part.vocal(values), part.vocal(samples), "mean")
        rec.background_db_max = _segment_relative(
            part.background(values), part.background(samples), "max"
        )
        rec.background_db_mean = _segment_relative(
            part.background(values), part.background(samples), "mean"
        )
        report.records.append(rec)
    return report


def export_distortion(report: DistortionReport, path, fmt: str = "csv") -> None:
    """Write the audit as ``label,part,metric,db`` rows (CSV) or a JSON mirror.

    Undefined entries export as an empty CSV cell / JSON null.
    """
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "part", "metric", "db"])
            for rec in report.records:
                for part, metric, value in rec.rows():
                    writer.writerow(
                        [rec.label or "", part, metric, "" if value is None else repr(value)]
                    )
    elif fmt == "json":
        payload = {
            "fraction": report.fraction,
            "skipped_no_energy": report.skipped_no_energy,
            "rows": [
                {"label": rec.label, "part": part, "metric": metric, "db": value}
                for rec in report.records
                for part, metric, value in rec.rows()
            ],
            "per_class_means": report.per_class_means(),
            "overall_means": report.overall_means(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
