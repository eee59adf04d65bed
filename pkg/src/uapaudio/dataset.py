"""Dataset layout handling and the synthetic desk-scale corpus.

Datasets follow the usual speech-commands layout: one subdirectory per
class label holding 16 kHz mono WAV clips, plus an ``index.json`` at the
root recording the train/valid split.  The synthesizer writes band-limited
tone/chirp prototypes with seeded noise so toy experiments are cheap,
deterministic and still leave room for real recordings via ``ingest``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (
    AudioFormatError,
    CANONICAL_LABELS,
    CLIP_SAMPLES,
    ClipTooLong,
    SAMPLE_RATE,
    Waveform,
    load_wav,
    read_segments_wav,
    save_wav,
)

INDEX_NAME = "index.json"
SYNTH_WORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")

# Center frequencies for synthetic classes; geometric spacing keeps
# neighbouring classes spectrally close so decision margins stay modest.
_BASE_HZ = 350.0
_SPACING = 1.55


class LayoutError(ValueError):
    """Dataset directory does not follow the per-class-subdirectory layout."""


def _class_frequency(class_index: int) -> float:
    return _BASE_HZ * _SPACING**class_index


VARIANTS_PER_CLASS = 2

_ROOM_TONE_RMS = 0.004
_room_tone_cache = None


def room_tone() -> np.ndarray:
    """Fixed faint broadband background shared by every synthetic clip.

    Models recordings captured with one microphone in one room: the common
    background is part of the corpus definition, independent of the dataset
    seed, so clips differ in their content and per-clip noise but share the
    ambience.
    """
    global _room_tone_cache
    if _room_tone_cache is None:
        rng = np.random.default_rng(715517)
        raw = rng.standard_normal(CLIP_SAMPLES + 2)
        smoothed = (raw[:-2] + raw[1:-1] + raw[2:]) / 3.0
        _room_tone_cache = smoothed * (_ROOM_TONE_RMS / np.sqrt(np.mean(smoothed**2)))
        _room_tone_cache.flags.writeable = False
    return _room_tone_cache


def _variant_params(class_index: int, variant: int, n_variants: int):
    """Deterministic carrier parameters for one class prototype variant."""
    freq = _class_frequency(class_index) * (1.0 + 0.05 * (variant - (n_variants - 1) / 2.0))
    # quasi-random but fixed phases, decorrelated across (class, variant)
    slot = class_index * n_variants + variant
    phase = 2.0 * np.pi * ((0.6180339887 * (slot + 1)) % 1.0)
    chirp = 0.05 * (variant - (n_variants - 1) / 2.0)
    return freq, phase, chirp


def synthesize_clip(label: str, class_index: int, rng: np.random.Generator) -> np.ndarray:
    """One second of a band-limited prototype for the given class.

    Each word class has a handful of fixed tone/chirp prototypes (frequency,
    phase and sweep locked per variant, like repeated utterances of one
    word); individual clips vary in amplitude, onset/offset and additive
    noise.  ``silence`` is noise only and ``unknown`` draws from a wider
    variant pool.  The gated envelope leaves quiet noise tails, so every
    clip has distinct vocal and background parts.
    """
    t = np.arange(CLIP_SAMPLES, dtype=np.float64) / SAMPLE_RATE
    ambience = room_tone() + rng.standard_normal(CLIP_SAMPLES) * rng.uniform(0.0006, 0.0012)
    if label == "silence":
        rumble = 0.004 * np.sin(2.0 * np.pi * rng.uniform(40.0, 90.0) * t + rng.uniform(0, 2 * np.pi))
        return np.clip(ambience * rng.uniform(1.5, 3.0) + rumble, -1.0, 1.0)

    if label == "unknown":
        n_variants = 4 * VARIANTS_PER_CLASS
        variant = int(rng.integers(n_variants))
        freq, phase, chirp = _variant_params(7, variant, n_variants)
        freq *= 0.37 + 0.11 * variant
    else:
        variant = int(rng.integers(VARIANTS_PER_CLASS))
        freq, phase, chirp = _variant_params(class_index, variant, VARIANTS_PER_CLASS)

    start = rng.uniform(0.10, 0.22)
    stop = rng.uniform(0.78, 0.90)
    ramp = 0.05
    envelope = np.clip((t - start) / ramp, 0.0, 1.0) * np.clip((stop - t) / ramp, 0.0, 1.0)

    angle = 2.0 * np.pi * freq * (t + 0.5 * chirp * (t - 0.5) ** 2)
    carrier = np.sin(angle + phase) + 0.4 * np.sin(2.0 * angle + 2.0 * phase)

    amplitude = rng.uniform(0.08, 0.16)
    return np.clip(amplitude * envelope * carrier + ambience, -1.0, 1.0)


def default_class_names(n_classes: int, include_silence: bool = False) -> tuple:
    names = list(SYNTH_WORDS)
    if include_silence:
        names = ["silence"] + names
    if n_classes > len(names):
        raise ValueError(f"at most {len(names)} synthetic classes available")
    return tuple(names[:n_classes])


def synth_dataset(
    out_dir,
    n_classes: int = 4,
    per_class: int = 200,
    seed: int = 0,
    class_names=None,
    valid_fraction: float = 0.2,
) -> dict:
    """Write a deterministic synthetic corpus and its split index.

    Returns the index structure.  Word classes are spectrally separable
    (a small trained model reaches high accuracy) while staying close
    enough for adversarial perturbations to matter.
    """
    names = tuple(class_names) if class_names else default_class_names(n_classes)
    if len(names) != n_classes:
        raise ValueError("class_names length must equal n_classes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    files = []
    word_index = 0
    for label in names:
        class_index = word_index
        if label not in ("silence", "unknown"):
            word_index += 1
        (out / label).mkdir(exist_ok=True)
        n_valid = int(round(per_class * valid_fraction))
        split_flags = np.array(["valid"] * n_valid + ["train"] * (per_class - n_valid))
        split_flags = split_flags[rng.permutation(per_class)]
        for i in range(per_class):
            clip = synthesize_clip(label, class_index, rng)
            rel = f"{label}/{label}_{i:04d}.wav"
            save_wav(out / rel, clip)
            files.append({"path": rel, "label": label, "split": str(split_flags[i])})
    index = {
        "seed": seed,
        "labels": list(names),
        "valid_fraction": valid_fraction,
        "files": files,
    }
    with open(out / INDEX_NAME, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)


def ingest_dataset(
    src_dir,
    out_dir,
    seed: int = 0,
    valid_fraction: float = 0.2,
) -> tuple:
    """Normalize an existing corpus into the canonical layout with an index.

    Clips are re-encoded as exactly one second (zero padded); unreadable or
    malformed files are listed in the report rather than aborting the run.
    A ``_background_noise_`` directory is segmented into one-second clips
    under the ``silence`` label.
    """
    src = Path(src_dir)
    if not src.is_dir():
        raise LayoutError(f"{src} is not a directory")
    class_dirs = sorted(p for p in src.iterdir() if p.is_dir())
    if not class_dirs:
        raise LayoutError(f"{src} has no class subdirectories")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    report = IngestReport()
    files = []
    labels = []
    for class_dir in class_dirs:
        label = "silence" if class_dir.name == "_background_noise_" else class_dir.name
        clips = []
        for wav_path in sorted(class_dir.glob("*.wav")):
            try:
                if label == "silence":
                    clips.extend(read_segments_wav(wav_path, label))
                else:
                    clips.append(load_wav(wav_path, label))
            except (AudioFormatError, ClipTooLong, EOFError, OSError) as exc:
                report.rejected.append({"path": str(wav_path), "reason": str(exc)})
        if not clips:
            continue
        labels.append(label)
        (out / label).mkdir(exist_ok=True)
        n = len(clips)
        n_valid = int(round(n * valid_fraction))
        split_flags = np.array(["valid"] * n_valid + ["train"] * (n - n_valid))
        split_flags = split_flags[rng.permutation(n)]
        for i, clip in enumerate(clips):
            rel = f"{label}/{label}_{i:04d}.wav"
            save_wav(out / rel, clip)
            files.append({"path": rel, "label": label, "split": str(split_flags[i])})
            report.accepted += 1
    ordered = [name for name in CANONICAL_LABELS if name in labels]
    ordered += sorted(set(labels) - set(ordered))
    index = {
        "seed": seed,
        "labels": ordered,
        "valid_fraction": valid_fraction,
        "files": files,
    }
    with open(out / INDEX_NAME, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index, report


def load_index(root) -> dict:
    path = Path(root) / INDEX_NAME
    if not path.exists():
        raise LayoutError(f"{root} has no {INDEX_NAME}; run dataset synth/ingest first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_split(root, split: str | None = None) -> list:
    """Clips from the indexed dataset, optionally restricted to one split."""
    root = Path(root)
    index = load_index(root)
    out = []
    for entry in index["files"]:
        if split is not None and entry["split"] != split:
            continue
        out.append(load_wav(root / entry["path"], entry["label"]))
    if not out:
        raise LayoutError(f"{root} has no clips for split {split!r}")
    return out


def scan_directory(root) -> list:
    """Load every clip from a bare per-class directory tree (no index needed)."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise LayoutError(f"{root} has no class subdirectories")
    out = []
    for class_dir in class_dirs:
        for wav_path in sorted(class_dir.glob("*.wav")):
            out.append(load_wav(wav_path, class_dir.name))
    if not out:
        raise LayoutError(f"{root} contains no WAV clips")
    return out
