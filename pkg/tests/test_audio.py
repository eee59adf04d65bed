import struct
import wave

import numpy as np
import pytest

from uapaudio.audio import (
    CLIP_SAMPLES,
    CANONICAL_LABELS,
    ChannelMismatch,
    ClipTooLong,
    SAMPLE_RATE,
    SampleRateMismatch,
    SampleWidthMismatch,
    Waveform,
    label_indices,
    load_wav,
    perturbed_samples,
    read_segments_wav,
    save_wav,
    stack,
)


def write_pcm(path, ints, rate=SAMPLE_RATE, channels=1, width=2):
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(channels)
        wav.setsampwidth(width)
        wav.setframerate(rate)
        if width == 2:
            wav.writeframes(np.asarray(ints, dtype="<i2").tobytes())
        else:
            wav.writeframes(b"".join(struct.pack("<b", v) for v in ints))


def test_label_set_is_stable():
    assert len(CANONICAL_LABELS) == 12
    assert CANONICAL_LABELS[0] == "silence"
    assert CANONICAL_LABELS.index("yes") == 2
    assert CANONICAL_LABELS[-1] == "go"


def test_load_scales_by_pcm_range(tmp_path):
    path = tmp_path / "half.wav"
    write_pcm(path, np.full(CLIP_SAMPLES, 16384))
    w = load_wav(path)
    assert w.samples.shape == (CLIP_SAMPLES,)
    assert np.all(w.samples == 0.5)


def test_short_clip_is_zero_padded(tmp_path):
    path = tmp_path / "short.wav"
    write_pcm(path, np.full(8000, 1000))
    w = load_wav(path)
    assert np.all(w.samples[:8000] == 1000 / 32768)
    assert np.all(w.samples[8000:] == 0.0)


def test_format_rejections(tmp_path):
    bad_rate = tmp_path / "rate.wav"
    write_pcm(bad_rate, np.zeros(100, dtype=np.int16), rate=8000)
    with pytest.raises(SampleRateMismatch):
        load_wav(bad_rate)

    stereo = tmp_path / "stereo.wav"
    write_pcm(stereo, np.zeros(200, dtype=np.int16), channels=2)
    with pytest.raises(ChannelMismatch):
        load_wav(stereo)

    eight_bit = tmp_path / "eight.wav"
    write_pcm(eight_bit, [0] * 100, width=1)
    with pytest.raises(SampleWidthMismatch):
        load_wav(eight_bit)

    long_clip = tmp_path / "long.wav"
    write_pcm(long_clip, np.zeros(CLIP_SAMPLES + 1, dtype=np.int16))
    with pytest.raises(ClipTooLong):
        load_wav(long_clip)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ints = rng.integers(-32768, 32768, CLIP_SAMPLES)
    w = Waveform(ints / 32768.0)
    path = tmp_path / "rt.wav"
    save_wav(path, w)
    again = load_wav(path)
    assert np.array_equal(w.samples, again.samples)


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.zeros(100))
    with pytest.raises(ValueError):
        Waveform(np.full(CLIP_SAMPLES, 1.5))
    w = Waveform(np.zeros(CLIP_SAMPLES), label="yes")
    with pytest.raises(ValueError):
        w.samples[0] = 1.0  # read-only


def test_with_offset_clips():
    w = Waveform(np.full(CLIP_SAMPLES, 0.9))
    shifted = w.with_offset(np.full(CLIP_SAMPLES, 0.3))
    assert np.all(shifted.samples == 1.0)
    assert np.all(perturbed_samples(w.samples, 0.3) == 1.0)


def test_segment_reader_splits_long_noise(tmp_path):
    path = tmp_path / "noise.wav"
    write_pcm(path, np.arange(2 * CLIP_SAMPLES + 4000, dtype=np.int64) % 3000 - 1500)
    clips = read_segments_wav(path, "silence")
    assert len(clips) == 3
    assert all(c.label == "silence" for c in clips)
    assert np.all(clips[2].samples[4000:] == 0.0)


def test_stack_and_label_indices():
    ws = [
        Waveform(np.zeros(CLIP_SAMPLES), label="no"),
        Waveform(np.zeros(CLIP_SAMPLES), label="yes"),
    ]
    batch = stack(ws)
    assert batch.shape == (2, CLIP_SAMPLES)
    assert label_indices(ws, ("yes", "no")).tolist() == [1, 0]
    with pytest.raises(ValueError):
        label_indices(ws, ("up", "down"))
