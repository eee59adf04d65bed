import numpy as np
import pytest

from uapaudio.audio import CLIP_SAMPLES, SAMPLE_RATE, Waveform
from uapaudio.loudness import (
    DistortionReport,
    NoEnergyError,
    ZeroSignalError,
    db_max,
    db_mean,
    distortion_report,
    energy_partition,
    export_distortion,
    relative_db,
)


def brute_force_partition(samples, fraction=0.95):
    """Independent oracle: scan the running energy sum for both percentiles."""
    cum = []
    running = np.float64(0.0)
    for s in samples:
        running = running + np.float64(s) * np.float64(s)
        cum.append(running)
    total = cum[-1]
    tail = (1.0 - fraction) / 2.0
    lo = tail * total * (1.0 - 1e-12)
    hi = (1.0 - tail) * total * (1.0 - 1e-12)
    a = next(i for i, c in enumerate(cum) if c >= lo) + 1
    b = next(i for i, c in enumerate(cum) if c >= hi) + 1
    return a, b


class TestDbMetrics:
    def test_db_max_values(self):
        x = np.zeros(CLIP_SAMPLES)
        x[10] = 1.0
        assert db_max(x) == pytest.approx(0.0, abs=1e-6)
        x[10] = 0.5
        assert db_max(x) == pytest.approx(-6.020599913279624, abs=1e-6)
        x[10] = 0.01
        assert db_max(x) == pytest.approx(-40.0, abs=1e-6)

    def test_db_mean_values(self):
        assert db_mean(np.ones(CLIP_SAMPLES)) == pytest.approx(0.0, abs=1e-6)
        half = np.zeros(CLIP_SAMPLES)
        half[: CLIP_SAMPLES // 2] = 1.0
        assert db_mean(half) == pytest.approx(-6.020599913279624, abs=1e-6)

    def test_db_mean_sinusoid_matches_rectified_average(self):
        # 440 Hz is incommensurate with the clip length, so the discrete
        # mean of |sin| sits near the analytic 2/pi limit.
        t = np.arange(CLIP_SAMPLES) / SAMPLE_RATE
        x = np.sin(2 * np.pi * 440.0 * t)
        expected = 20.0 * np.log10(np.mean(np.abs(x)))
        assert db_mean(x) == pytest.approx(expected, abs=1e-9)
        assert db_mean(x) == pytest.approx(20.0 * np.log10(2.0 / np.pi), abs=0.05)

    def test_zero_signal_raises(self):
        with pytest.raises(ZeroSignalError):
            db_max(np.zeros(CLIP_SAMPLES))
        with pytest.raises(ZeroSignalError):
            db_mean(np.zeros(CLIP_SAMPLES))

    def test_scaling_shifts_by_20log10(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.5, 0.5, CLIP_SAMPLES)
        for c in (2.0, 0.125, 3.7):
            assert db_max(c * x) == pytest.approx(db_max(x) + 20 * np.log10(c), abs=1e-9)
            assert db_mean(c * x) == pytest.approx(db_mean(x) + 20 * np.log10(c), abs=1e-9)


class TestRelativeDb:
    def test_trivial_values(self):
        x = np.zeros(CLIP_SAMPLES)
        x[0] = 1.0
        v = np.zeros(CLIP_SAMPLES)
        v[1] = 0.01
        assert relative_db(v, x, "max") == pytest.approx(-40.0, abs=1e-6)
        assert relative_db(x, x, "max") == pytest.approx(0.0, abs=1e-12)
        assert relative_db(x, x, "mean") == pytest.approx(0.0, abs=1e-12)

    def test_joint_scaling_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.5, 0.5, CLIP_SAMPLES)
        v = rng.uniform(-0.01, 0.01, CLIP_SAMPLES)
        base = relative_db(v, x, "mean")
        for c in (0.01, 7.0):
            assert relative_db(c * v, c * x, "mean") == pytest.approx(base, abs=1e-9)

    def test_propagates_zero_signal(self):
        x = np.zeros(CLIP_SAMPLES)
        x[0] = 1.0
        with pytest.raises(ZeroSignalError):
            relative_db(np.zeros(CLIP_SAMPLES), x, "max")
        with pytest.raises(ValueError):
            relative_db(x, x, "median")


class TestEnergyPartition:
    def test_impulse(self):
        x = np.zeros(CLIP_SAMPLES)
        x[7999] = 1.0  # sample number 8000
        p = energy_partition(x)
        assert (p.start, p.end) == (8000, 8000)

    def test_constant_signal(self):
        p = energy_partition(np.full(CLIP_SAMPLES, 0.5))
        assert (p.start, p.end) == (400, 15600)

    def test_uniform_block(self):
        x = np.zeros(CLIP_SAMPLES)
        x[4000:8000] = 0.3
        p = energy_partition(x)
        assert (p.start, p.end) == (4100, 7900)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(50, 4000))
            start = int(rng.integers(0, CLIP_SAMPLES - n))
            x = rng.standard_normal(CLIP_SAMPLES) * 0.001
            x[start : start + n] += rng.standard_normal(n) * rng.uniform(0.05, 0.5)
            x = np.clip(x, -1, 1)
            p = energy_partition(x)
            assert (p.start, p.end) == brute_force_partition(x)
            assert 1 <= p.start <= p.end <= CLIP_SAMPLES

    def test_contains_requested_energy(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.standard_normal(CLIP_SAMPLES) * rng.uniform(0.001, 0.1, CLIP_SAMPLES)
            p = energy_partition(x, 0.95)
            total = np.sum(x * x)
            inside = np.sum(x[p.start - 1 : p.end] ** 2)
            assert inside / total >= 0.95 - 2.0 / CLIP_SAMPLES

    def test_errors(self):
        with pytest.raises(NoEnergyError):
            energy_partition(np.zeros(CLIP_SAMPLES))
        with pytest.raises(ValueError):
            energy_partition(np.ones(CLIP_SAMPLES), fraction=1.5)


def spiked_clip(block_amp, spike_amp, quiet_amp=0.001, label="yes"):
    """Loud middle block with edge spikes carrying the percentile mass.

    The spikes pull both partition bounds onto the block edges, so the
    background segments contain only the quiet floor.
    """
    x = np.full(CLIP_SAMPLES, quiet_amp)
    x[4000] = spike_amp
    x[4001:12000] = block_amp
    x[12000] = spike_amp
    return Waveform(x, label=label)


class TestDistortionReport:
    def test_zero_perturbation_has_no_valid_entries(self):
        clips = [spiked_clip(0.05, 0.73)]
        report = distortion_report(np.zeros(CLIP_SAMPLES), clips)
        rec = report.records[0]
        assert rec.vocal_db_max is None and rec.background_db_max is None
        assert report.overall_means()["background_max"] is None

    def test_quiet_perturbation_against_loud_vocal(self):
        clips = [spiked_clip(0.05, 1.0)]
        report = distortion_report(np.full(CLIP_SAMPLES, 0.001), clips)
        rec = report.records[0]
        assert rec.vocal_db_max == pytest.approx(-60.0, abs=1e-6)

    def test_background_distortion_counterexample(self):
        # Background as loud as the ambience itself: far above the -32 dB
        # acceptability line even though the vocal part looks clean.
        clips = [spiked_clip(0.05, 0.73)]
        report = distortion_report(np.full(CLIP_SAMPLES, 0.001), clips)
        rec = report.records[0]
        assert rec.background_db_max == pytest.approx(0.0, abs=1e-9)
        assert rec.background_db_max >= -32.0
        assert rec.vocal_db_max <= -40.0

    def test_silence_clips_report_background_only(self):
        rng = np.random.default_rng(3)
        noise = Waveform(np.clip(rng.standard_normal(CLIP_SAMPLES) * 0.005, -1, 1), label="silence")
        report = distortion_report(np.full(CLIP_SAMPLES, 0.001), [noise])
        rows = list(report.records[0].rows())
        assert all(part == "background" for part, _, _ in rows)

    def test_no_energy_clips_are_counted(self):
        clips = [Waveform(np.zeros(CLIP_SAMPLES), label="yes"), spiked_clip(0.05, 0.73)]
        report = distortion_report(np.full(CLIP_SAMPLES, 0.001), clips)
        assert report.skipped_no_energy == 1
        assert len(report.records) == 1

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            distortion_report(np.zeros(CLIP_SAMPLES), [])

    def test_export_csv_and_json(self, tmp_path):
        clips = [spiked_clip(0.05, 0.73), spiked_clip(0.08, 0.73, label="no")]
        report = distortion_report(np.full(CLIP_SAMPLES, 0.001), clips)
        csv_path = tmp_path / "dist.csv"
        export_distortion(report, csv_path, "csv")
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "label,part,metric,db"
        assert len(lines) == 1 + 2 * 4  # two clips, four (part, metric) rows each

        json_path = tmp_path / "dist.json"
        export_distortion(report, json_path, "json")
        import json

        payload = json.loads(json_path.read_text())
        assert payload["rows"][0]["part"] in ("vocal", "background")
        assert "per_class_means" in payload
