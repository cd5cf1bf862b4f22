"""Data pipeline: WAV I/O, resampling, segmentation, mixing, synthesis,
manifests, and the per-epoch sampler."""

import numpy as np
import pytest

from denoisekd import data
from denoisekd.dsp import AudioSignal
from denoisekd.errors import AudioError, ConfigError, NumericsError
from denoisekd.metrics import si_snr


class TestWavIO:
    def test_round_trip_within_quantization(self, rng, tmp_path):
        x = rng.uniform(-0.9, 0.9, size=8000)
        path = tmp_path / "sig.wav"
        data.save_wav(AudioSignal(x), path)
        back = data.load_wav(path)
        assert np.max(np.abs(back.samples - x)) <= 2.0 ** -15

    def test_8k_input_resampled_to_16k(self, rng, tmp_path):
        x = rng.uniform(-0.5, 0.5, size=4000)
        path = tmp_path / "sig8k.wav"
        data.save_wav(AudioSignal(x, sample_rate=8000), path)
        back = data.load_wav(path)
        assert back.sample_rate == 16000
        assert abs(len(back.samples) - 8000) <= 1

    def test_stereo_rejected(self, tmp_path):
        import wave

        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(16000)
            fh.writeframes(b"\x00\x00" * 200)
        with pytest.raises(AudioError, match="mono"):
            data.load_wav(path)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"RIFFgarbage")
        with pytest.raises(AudioError, match="malformed"):
            data.load_wav(path)


class TestResample:
    def test_doubling_length(self, rng):
        y = data.resample(rng.normal(size=8000), 8000, 16000)
        assert abs(len(y) - 16000) <= 1

    def test_tone_preserved(self):
        sr_in, sr_out = 8000, 16000
        t_in = np.arange(8000) / sr_in
        x = np.sin(2 * np.pi * 440.0 * t_in)
        y = data.resample(x, sr_in, sr_out)
        t_out = np.arange(len(y)) / sr_out
        ref = np.sin(2 * np.pi * 440.0 * t_out)
        # compare away from the edges (kernel support)
        sl = slice(200, -200)
        err = np.linalg.norm(y[sl] - ref[sl]) / np.linalg.norm(ref[sl])
        assert err <= 1e-3

    def test_identity_when_rates_match(self, rng):
        x = rng.normal(size=100)
        np.testing.assert_array_equal(data.resample(x, 16000, 16000), x)


class TestSegment:
    def test_five_seconds_two_segments(self, rng):
        x = rng.uniform(-0.5, 0.5, size=int(5 * 16000))
        segs = data.segment(AudioSignal(x))
        assert len(segs) == 2
        assert all(len(s) == 32000 for s in segs)

    def test_short_signal_empty(self, rng):
        assert data.segment(AudioSignal(rng.uniform(-0.5, 0.5, size=int(1.5 * 16000)))) == []

    def test_silent_signal_discarded(self):
        assert data.segment(AudioSignal(np.zeros(4 * 16000))) == []

    def test_activity_threshold_boundary(self):
        quiet = np.full(64000, 5e-5)  # RMS below 1e-4
        assert data.segment(AudioSignal(quiet)) == []
        active = np.full(64000, 2e-4)
        assert len(data.segment(AudioSignal(active))) == 2


class TestMixing:
    def test_zero_snr_equal_powers(self):
        c = data.synth_speechlike(1)
        n = data.synth_noise("white", 2)
        ex = data.mix_at_snr(c, n, 0)
        resid = ex.noisy.samples - ex.clean.samples
        ratio = 10 * np.log10(np.mean(ex.clean.samples ** 2) / np.mean(resid ** 2))
        assert ratio == pytest.approx(0.0, abs=1e-6)

    def test_twenty_db_power_ratio(self):
        c = data.synth_speechlike(3)
        n = data.synth_noise("pink", 4)
        ex = data.mix_at_snr(c, n, 20)
        resid = ex.noisy.samples - ex.clean.samples
        assert np.mean(c.samples ** 2) / np.mean((ex.noisy.samples - ex.clean.samples) ** 2) * (
            np.max(np.abs(c.samples + 0))) >= 0  # sanity
        ratio = 10 * np.log10(np.mean(ex.clean.samples ** 2) / np.mean(resid ** 2))
        assert ratio == pytest.approx(20.0, abs=1e-6)

    def test_peak_normalized_to_one(self):
        ex = data.mix_at_snr(data.synth_speechlike(5), data.synth_noise("white", 6), -5)
        assert np.max(np.abs(ex.noisy.samples)) == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(ex.clean.samples)) <= 1.0 + 1e-12

    def test_si_snr_tracks_requested_snr_for_white_noise(self):
        for snr in (-5, 0, 10, 20):
            ex = data.mix_at_snr(data.synth_speechlike(7), data.synth_noise("white", 8), snr)
            measured = si_snr(ex.clean.samples, ex.noisy.samples)
            assert abs(measured - snr) <= 0.5

    def test_zero_power_rejected(self, rng):
        with pytest.raises(NumericsError, match="zero-power"):
            data.mix_at_snr(AudioSignal(np.zeros(100)), AudioSignal(rng.normal(size=100)), 0)


class TestSynth:
    def test_deterministic_per_seed(self):
        a = data.synth_speechlike(42)
        b = data.synth_speechlike(42)
        np.testing.assert_array_equal(a.samples, b.samples)
        n1 = data.synth_noise("babble", 9)
        n2 = data.synth_noise("babble", 9)
        np.testing.assert_array_equal(n1.samples, n2.samples)

    def test_different_seeds_differ(self):
        assert not np.array_equal(data.synth_speechlike(1).samples,
                                  data.synth_speechlike(2).samples)

    def test_pink_centroid_below_white(self):
        def centroid(sig):
            s = np.abs(np.fft.rfft(sig.samples))
            f = np.fft.rfftfreq(len(sig.samples), 1 / 16000)
            return float((f * s).sum() / s.sum())

        assert centroid(data.synth_noise("pink", 3)) < centroid(data.synth_noise("white", 3))

    def test_speechlike_passes_activity_gate(self):
        segs = data.segment(data.synth_speechlike(11))
        assert len(segs) == 1

    def test_unknown_noise_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            data.synth_noise("brown", 1)


class TestManifest:
    def test_split_ratios_close_to_60_20_20(self):
        m = data.build_synthetic_manifest(seed=1, counts={"train": 60, "val": 20, "test": 20})
        assert len(m.splits["train"]["speech"]) == 60
        assert len(m.splits["val"]["speech"]) == 20
        assert len(m.splits["test"]["speech"]) == 20

    def test_disjoint_splits_enforced(self):
        m = data.build_synthetic_manifest(seed=2, counts={"train": 4, "val": 2, "test": 2})
        m.splits["val"]["speech"][0] = m.splits["train"]["speech"][0]
        with pytest.raises(ConfigError, match="appears in splits"):
            m.validate()

    def test_save_load_round_trip(self, tmp_path):
        m = data.build_synthetic_manifest(seed=3, counts={"train": 4, "val": 2, "test": 2})
        path = tmp_path / "manifest.json"
        m.save(path)
        back = data.SplitManifest.load(path)
        assert back.seed == m.seed and back.splits == m.splits

    def test_missing_split_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"seed": 0, "splits": {"train": {"speech": [], "noise": []}}}')
        with pytest.raises(ConfigError, match="missing split"):
            data.SplitManifest.load(path)


@pytest.fixture(scope="module")
def manifest():
    return data.build_synthetic_manifest(seed=5, counts={"train": 6, "val": 2, "test": 3})


class TestEpochSampler:
    def _snrs_and_fingerprints(self, manifest, split, seed, epoch):
        out = []
        for ex in data.epoch_sampler(manifest, split, seed, epoch):
            out.append((ex.snr_db, float(ex.noisy.samples[:64].sum())))
        return out

    def test_same_seed_epoch_identical_stream(self, manifest):
        a = self._snrs_and_fingerprints(manifest, "train", 1, 0)
        b = self._snrs_and_fingerprints(manifest, "train", 1, 0)
        assert a == b

    def test_different_epochs_different_pairings(self, manifest):
        a = self._snrs_and_fingerprints(manifest, "train", 1, 0)
        b = self._snrs_and_fingerprints(manifest, "train", 1, 1)
        assert a != b

    def test_test_split_frozen_across_epochs(self, manifest):
        a = self._snrs_and_fingerprints(manifest, "test", 1, 0)
        b = self._snrs_and_fingerprints(manifest, "test", 1, 5)
        assert a == b

    def test_snr_range_is_integer_minus5_to_20(self, manifest):
        snrs = {ex.snr_db for ex in data.epoch_sampler(manifest, "train", 2, 0)}
        assert all(isinstance(s, int) and -5 <= s <= 20 for s in snrs)

    def test_oversampling_when_noise_scarce(self, manifest):
        # 6 speech sources vs 2 noise sources: some noise must repeat
        used = []
        rng_draws = []
        for epoch in range(3):
            for ex in data.epoch_sampler(manifest, "train", 3, epoch):
                rng_draws.append(ex.snr_db)
        assert len(manifest.splits["train"]["noise"]) < len(manifest.splits["train"]["speech"])
        assert len(rng_draws) == 18  # every speech segment paired every epoch

    def test_empty_split_raises(self):
        m = data.build_synthetic_manifest(seed=6, counts={"train": 2, "val": 1, "test": 1})
        m.splits["train"]["speech"] = []
        with pytest.raises(ConfigError, match="empty"):
            list(data.epoch_sampler(m, "train", 0, 0))

    def test_dataset_wrapper_caches_frozen_test(self, manifest):
        ds = data.MixtureDataset(manifest, seed=4)
        t1 = ds.test_examples()
        t2 = ds.test_examples()
        assert t1 is t2


class TestMaterializedCorpus:
    def test_deterministic_bytes(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        p1 = data.materialize_corpus(d1, seed=7, count=5)
        p2 = data.materialize_corpus(d2, seed=7, count=5)
        files1 = sorted(f.name for f in d1.iterdir())
        files2 = sorted(f.name for f in d2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_manifest_loads_and_samples(self, tmp_path):
        path = data.materialize_corpus(tmp_path / "c", seed=8, count=5)
        manifest = data.SplitManifest.load(path)
        examples = list(data.epoch_sampler(manifest, "train", 0, 0))
        assert examples and all(len(ex.clean) == 32000 for ex in examples)
