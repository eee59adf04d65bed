"""Fixed-length audio clips and 16-bit PCM WAV I/O.

All audio handled by this package is mono, 16 kHz, exactly one second long
(16000 samples), stored as float64 amplitudes in [-1, 1].  Integer PCM
values map to floats by division by 32768.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
PCM_SCALE = 32768.0

# Stable label encoding: index in this tuple is the class id.
CANONICAL_LABELS = (
    "silence", "unknown", "yes", "no", "up", "down",
    "left", "right", "on", "off", "stop", "go",
)


class AudioFormatError(ValueError):
    """Base class for rejected audio input."""


class SampleRateMismatch(AudioFormatError):
    pass


class ChannelMismatch(AudioFormatError):
    pass


class SampleWidthMismatch(AudioFormatError):
    pass


class ClipTooLong(AudioFormatError):
    pass


@dataclass(frozen=True)
class Waveform:
    """One second of mono audio with an optional class label.

    ``samples`` is a read-only float64 array of length 16000 with every
    value in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: str | None = None
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] != CLIP_SAMPLES:
            raise ValueError(
                f"waveform must have exactly {CLIP_SAMPLES} samples, got shape {samples.shape}"
            )
        if self.sample_rate != SAMPLE_RATE:
            raise SampleRateMismatch(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")
        amax = np.max(np.abs(samples)) if samples.size else 0.0
        if amax > 1.0:
            raise ValueError(f"sample amplitudes must lie in [-1, 1], max abs is {amax}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def with_offset(self, offset: np.ndarray, label: str | None = None) -> "Waveform":
        """Return a new clip with ``offset`` added and the sum clipped to [-1, 1]."""
        mixed = np.clip(self.samples + np.asarray(offset, dtype=np.float64), -1.0, 1.0)
        return Waveform(mixed, self.sample_rate, label if label is not None else self.label)


def perturbed_samples(samples: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Raw-array version of ``Waveform.with_offset`` used on hot paths.

    ``samples`` may be a batch (..., 16000); the sum is clipped to [-1, 1].
    """
    return np.clip(samples + offset, -1.0, 1.0)


def load_wav(path, label: str | None = None) -> Waveform:
    """Read a mono 16-bit 16 kHz PCM WAV file as a one-second Waveform.

    Shorter clips are zero-padded on the right; anything longer than one
    second is rejected.  Integer samples are scaled by 1/32768.
    """
    with wave.open(str(path), "rb") as wav:
        if wav.getframerate() != SAMPLE_RATE:
            raise SampleRateMismatch(
                f"{path}: expected {SAMPLE_RATE} Hz, got {wav.getframerate()}"
            )
        if wav.getnchannels() != 1:
            raise ChannelMismatch(f"{path}: expected mono, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise SampleWidthMismatch(
                f"{path}: expected 16-bit samples, got {8 * wav.getsampwidth()}-bit"
            )
        n = wav.getnframes()
        if n > CLIP_SAMPLES:
            raise ClipTooLong(f"{path}: {n} samples exceeds the {CLIP_SAMPLES}-sample limit")
        raw = wav.readframes(n)
    ints = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    samples = np.zeros(CLIP_SAMPLES, dtype=np.float64)
    samples[: ints.shape[0]] = ints / PCM_SCALE
    return Waveform(samples, SAMPLE_RATE, label, source=str(path))


def save_wav(path, waveform: Waveform | np.ndarray) -> None:
    """Write samples as mono 16-bit 16 kHz PCM, rounding to the nearest int."""
    samples = waveform.samples if isinstance(waveform, Waveform) else np.asarray(waveform)
    ints = np.clip(np.rint(samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(ints.tobytes())


def read_segments_wav(path, label: str | None = None) -> list[Waveform]:
    """Split an over-length mono WAV into consecutive one-second clips.

    Used for background-noise recordings backing a silence class.  The
    trailing remainder is zero-padded into a final clip when at least a
    tenth of a second long, otherwise dropped.
    """
    with wave.open(str(path), "rb") as wav:
        if wav.getframerate() != SAMPLE_RATE:
            raise SampleRateMismatch(f"{path}: expected {SAMPLE_RATE} Hz")
        if wav.getnchannels() != 1:
            raise ChannelMismatch(f"{path}: expected mono")
        if wav.getsampwidth() != 2:
            raise SampleWidthMismatch(f"{path}: expected 16-bit samples")
        raw = wav.readframes(wav.getnframes())
    ints = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    clips = []
    for start in range(0, ints.shape[0], CLIP_SAMPLES):
        chunk = ints[start : start + CLIP_SAMPLES]
        if chunk.shape[0] < CLIP_SAMPLES:
            if chunk.shape[0] < SAMPLE_RATE // 10:
                break
            padded = np.zeros(CLIP_SAMPLES)
            padded[: chunk.shape[0]] = chunk
            chunk = padded
        clips.append(Waveform(chunk, SAMPLE_RATE, label, source=str(path)))
    return clips


def stack(waveforms) -> np.ndarray:
    """Stack clips into a (batch, 16000) float64 array."""
    return np.stack([w.samples for w in waveforms])


def label_indices(waveforms, label_set) -> np.ndarray:
    """Map clip labels onto integer ids under ``label_set`` ordering."""
    lookup = {name: i for i, name in enumerate(label_set)}
    try:
        return np.array([lookup[w.label] for w in waveforms], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in label set {tuple(label_set)}") from exc


def unpack_pcm_header(path) -> dict:
    """Return basic RIFF/WAVE facts without decoding samples (for manifests)."""
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    riff_size = struct.unpack("<I", head[4:8])[0]
    return {"riff_size": riff_size}
