"""Differentiable MFCC front-end with exact input gradients.

The forward pipeline per frame: Hann window, zero-pad to the FFT size,
power spectrum (squared DFT magnitude over the nonnegative bins), mel
filterbank, floored log, orthonormal DCT-II truncated to the leading
coefficients.  Every stage is linear or has a closed-form derivative, so
the backward pass is an exact vector-Jacobian product rather than an
autodiff approximation; correctness is pinned by finite-difference tests.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np
import scipy.fft

from .audio import CLIP_SAMPLES, SAMPLE_RATE


@dataclass(frozen=True)
class FrontendConfig:
    """Shape and scaling of the MFCC extraction.

    Defaults give 30 ms frames at a 10 ms hop with 40 mel bands and 13
    cepstral coefficients.  A second model instance can use a different
    config; the values are serialized with the model weights.
    """

    frame_length: int = 480
    hop: int = 160
    fft_size: int = 512
    mel_bands: int = 40
    mel_min_hz: float = 20.0
    mel_max_hz: float = 7600.0
    dct_coeffs: int = 13
    log_floor: float = 1e-6
    window: str = "hann"
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.frame_length > self.fft_size:
            raise ValueError("frame_length must not exceed fft_size")
        if self.fft_size % 2 != 0:
            raise ValueError("fft_size must be even")
        if self.hop < 1:
            raise ValueError("hop must be positive")
        if self.dct_coeffs > self.mel_bands:
            raise ValueError("dct_coeffs must not exceed mel_bands")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")
        if not 0.0 <= self.mel_min_hz < self.mel_max_hz <= self.sample_rate / 2:
            raise ValueError("mel band range must satisfy 0 <= min < max <= Nyquist")
        if self.window != "hann":
            raise ValueError("only the Hann window is supported")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int = CLIP_SAMPLES) -> int:
        if n_samples < self.frame_length:
            raise ValueError("signal shorter than one frame")
        return (n_samples - self.frame_length) // self.hop + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FrontendConfig":
        return cls(**data)


# Config used by the primary target model and by the second, differently
# configured instance used for transfer evaluation.
MODEL_A_FRONTEND = FrontendConfig()
MODEL_B_FRONTEND = FrontendConfig(frame_length=400, mel_bands=64, dct_coeffs=16)

# Desk-scale configs: fewer, non-overlapping frames keep toy experiments fast.
TOY_FRONTEND_A = FrontendConfig(
    frame_length=256, hop=512, fft_size=256, mel_bands=20,
    mel_min_hz=100.0, mel_max_hz=7600.0, dct_coeffs=10, log_floor=1e-5,
)
TOY_FRONTEND_B = FrontendConfig(
    frame_length=256, hop=512, fft_size=256, mel_bands=26,
    mel_min_hz=60.0, mel_max_hz=7000.0, dct_coeffs=12, log_floor=1e-5,
)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular mel filters as a (mel_bands, n_bins) matrix.

    Filters are evaluated at the continuous bin frequencies, so every bin
    falls under at most two overlapping triangles.
    """
    mel_points = np.linspace(
        _hz_to_mel(cfg.mel_min_hz), _hz_to_mel(cfg.mel_max_hz), cfg.mel_bands + 2
    )
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(cfg.n_bins, dtype=np.float64) * cfg.sample_rate / cfg.fft_size
    left = hz_points[:-2, None]
    center = hz_points[1:-1, None]
    right = hz_points[2:, None]
    rising = (bin_freqs[None, :] - left) / (center - left)
    falling = (right - bin_freqs[None, :]) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Leading rows of the orthonormal DCT-II as an (n_out, n_in) matrix."""
    j = np.arange(n_in, dtype=np.float64)
    m = np.arange(n_out, dtype=np.float64)[:, None]
    mat = np.cos(np.pi * (2.0 * j[None, :] + 1.0) * m / (2.0 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


@lru_cache(maxsize=16)
def _ops(cfg: FrontendConfig):
    return hann_window(cfg.frame_length), mel_filterbank(cfg), dct_matrix(cfg.dct_coeffs, cfg.mel_bands)


@dataclass(frozen=True)
class FeatureMap:
    """Time-by-coefficient MFCC matrix."""

    values: np.ndarray

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def coeffs(self) -> int:
        return self.values.shape[1]


@dataclass
class MfccCache:
    """Intermediates saved by the forward pass for the exact backward pass."""

    cfg: FrontendConfig
    spectrum: np.ndarray      # complex, (..., frames, n_bins)
    mel_energy: np.ndarray    # pre-floor filterbank outputs, same leading shape
    n_samples: int


def _frame(batch: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(batch, cfg.frame_length, axis=-1)
    return windows[..., :: cfg.hop, :]


def mfcc_forward_batch(batch: np.ndarray, cfg: FrontendConfig):
    """MFCC features for a (..., n_samples) batch; returns (features, cache)."""
    batch = np.asarray(batch, dtype=np.float64)
    window, mel, dct = _ops(cfg)
    frames = _frame(batch, cfg) * window
    spectrum = scipy.fft.rfft(frames, n=cfg.fft_size, axis=-1, workers=-1)
    power = spectrum.real**2 + spectrum.imag**2
    mel_energy = power @ mel.T
    log_mel = np.log(np.maximum(mel_energy, cfg.log_floor))
    features = log_mel @ dct.T
    return features, MfccCache(cfg, spectrum, mel_energy, batch.shape[-1])


def mfcc_backward_batch(cache: MfccCache, upstream: np.ndarray) -> np.ndarray:
    """Exact VJP of ``mfcc_forward_batch`` with respect to the waveform batch.

    ``upstream`` has shape (..., frames, dct_coeffs) and may carry extra
    leading axes that broadcast against the cached intermediates (used to
    push several logit gradients through one cached forward pass).
    """
    cfg = cache.cfg
    window, mel, dct = _ops(cfg)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape[-1] != cfg.dct_coeffs or upstream.shape[-2] != cache.spectrum.shape[-2]:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match cached "
            f"({cache.spectrum.shape[-2]}, {cfg.dct_coeffs}) features"
        )

    d_log = upstream @ dct
    # log(max(E, floor)): zero gradient at and below the floor.
    clipped = np.maximum(cache.mel_energy, cfg.log_floor)
    d_mel = d_log * (cache.mel_energy > cfg.log_floor) / clipped
    d_power = d_mel @ mel

    # Power spectrum |z|^2: sensitivity 2*Re(conj(z) dz).  Folding the
    # half-spectrum weights into the irfft gives the adjoint of rfft.
    h = (2.0 * d_power) * cache.spectrum
    h[..., 1:-1] *= 0.5
    d_frames = cfg.fft_size * scipy.fft.irfft(h, n=cfg.fft_size, axis=-1, workers=-1)
    d_frames = d_frames[..., : cfg.frame_length] * window

    lead = d_frames.shape[:-2]
    grad = np.zeros(lead + (cache.n_samples,), dtype=np.float64)
    for f in range(d_frames.shape[-2]):
        start = f * cfg.hop
        grad[..., start : start + cfg.frame_length] += d_frames[..., f, :]
    return grad


def mfcc_forward(x, cfg: FrontendConfig):
    """Features for a single waveform; returns (FeatureMap, cache)."""
    samples = x.samples if hasattr(x, "samples") else np.asarray(x, dtype=np.float64)
    features, cache = mfcc_forward_batch(samples, cfg)
    return FeatureMap(features), cache


def mfcc_backward(cache: MfccCache, upstream) -> np.ndarray:
    """Waveform-shaped gradient for a single cached forward pass."""
    values = upstream.values if isinstance(upstream, FeatureMap) else upstream
    return mfcc_backward_batch(cache, values)
