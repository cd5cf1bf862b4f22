"""Corpus construction: WAV I/O, segmentation, SNR mixing, synthetic signals,
and split manifests with deterministic per-epoch sampling.

Mixtures pair a 2-second clean segment with a noise segment at an integer SNR
drawn uniformly from [-5, 20] dB; the pre-scaling power ratio realizes the
requested SNR exactly, after which both signals are scaled jointly so the
noisy peak is exactly 1. Training/validation pairings are re-drawn every
epoch (noise oversampled when scarce); the test split pairing is frozen.

The manifest is a JSON file listing split membership; entries are either
paths to WAV files or `synth:` URIs resolved in memory, so tests can run
without touching disk while the CLI materializes real files.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioSignal
from .errors import AudioError, ConfigError, NumericsError, ShapeError

SEGMENT_SECONDS = 2.0
SEGMENT_SAMPLES = int(SEGMENT_SECONDS * SAMPLE_RATE)  # 32000
SNR_RANGE_DB = (-5, 20)
ACTIVITY_RMS_THRESHOLD = 1e-4  # relative to full scale
_SPLIT_IDS = {"train": 1, "val": 2, "test": 3}


# ---------------------------------------------------------------------------
# WAV I/O and resampling
# ---------------------------------------------------------------------------

def save_wav(signal, path):
    """Write mono 16-bit little-endian PCM at the signal's sample rate."""
    sig = signal if isinstance(signal, AudioSignal) else AudioSignal(np.asarray(signal))
    pcm = np.clip(np.round(sig.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sig.sample_rate)
        fh.writeframes(pcm.tobytes())


def load_wav(path, target_rate=SAMPLE_RATE) -> AudioSignal:
    """Read a mono 16-bit PCM WAV, resampling to target_rate if needed."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise AudioError(f"{path}: malformed WAV ({exc})") from None
    if channels != 1:
        raise AudioError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32767.0
    if rate != target_rate:
        samples = resample(samples, rate, target_rate)
    return AudioSignal(samples, target_rate)


def resample(x, rate_in, rate_out, taps=64):
    """Windowed-sinc resampler (Hann-windowed, `taps` neighbors per output).

    Output length is round(len * rate_out / rate_in); the anti-alias cutoff is
    min(rate_in, rate_out) / 2.
    """
    x = np.asarray(x, dtype=np.float64)
    if rate_in == rate_out:
        return x.copy()
    n_out = int(round(len(x) * rate_out / rate_in))
    ratio = rate_in / rate_out
    cutoff = min(1.0, 1.0 / ratio)  # fraction of input Nyquist
    half = taps // 2
    pos = np.arange(n_out) * ratio
    base = np.floor(pos).astype(int)
    frac = pos - base
    offsets = np.arange(-half + 1, half + 1)
    # (n_out, taps) sample indices and sinc arguments
    idx = base[:, None] + offsets[None, :]
    t = offsets[None, :] - frac[:, None]
    kernel = cutoff * np.sinc(cutoff * t)
    window = 0.5 + 0.5 * np.cos(np.pi * t / half)
    kernel *= np.where(np.abs(t) <= half, window, 0.0)
    xp = np.pad(x, (half, half))
    return (xp[idx + half] * kernel).sum(axis=1)


# ---------------------------------------------------------------------------
# segmentation and mixing
# ---------------------------------------------------------------------------

def segment(signal, seg_samples=SEGMENT_SAMPLES, activity_rms=ACTIVITY_RMS_THRESHOLD):
    """Consecutive full-length segments with activity above the RMS gate."""
    x = signal.samples if isinstance(signal, AudioSignal) else np.asarray(signal, dtype=np.float64)
    out = []
    for start in range(0, len(x) - seg_samples + 1, seg_samples):
        seg = x[start : start + seg_samples]
        if np.sqrt(np.mean(seg * seg)) >= activity_rms:
            out.append(AudioSignal(seg.copy()))
    return out


@dataclass
class MixExample:
    """One paired clean/noisy segment with its mixing SNR."""

    clean: AudioSignal
    noisy: AudioSignal
    snr_db: int

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise ShapeError(
                f"MixExample lengths differ: {len(self.clean)} vs {len(self.noisy)}"
            )


def mix_at_snr(clean, noise, snr_db) -> MixExample:
    """Mix at an exact pre-scaling SNR, then peak-normalize the pair jointly."""
    c = clean.samples if isinstance(clean, AudioSignal) else np.asarray(clean, dtype=np.float64)
    n = noise.samples if isinstance(noise, AudioSignal) else np.asarray(noise, dtype=np.float64)
    if c.shape != n.shape:
        raise ShapeError(f"mix_at_snr: lengths differ ({c.shape} vs {n.shape})")
    p_clean = float(np.mean(c * c))
    p_noise = float(np.mean(n * n))
    if p_clean <= 0.0 or p_noise <= 0.0:
        raise NumericsError("mix_at_snr: zero-power input")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    noisy = c + gain * n
    peak = float(np.max(np.abs(noisy)))
    if peak <= 0.0:
        raise NumericsError("mix_at_snr: degenerate mixture (zero peak)")
    scale = 1.0 / peak
    return MixExample(AudioSignal(c * scale), AudioSignal(noisy * scale), int(snr_db))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def synth_speechlike(seed, duration=SEGMENT_SECONDS, sample_rate=SAMPLE_RATE) -> AudioSignal:
    """Deterministic speech-like signal: pitched harmonic stack with vibrato,
    syllabic amplitude gating, and formant-shaped spectrum."""
    rng = np.random.default_rng([int(seed), 0x5BEEC4])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    f0_base = rng.uniform(90.0, 220.0)
    vibrato = rng.uniform(2.0, 6.0)
    f0 = f0_base * (1.0 + 0.04 * np.sin(2 * np.pi * vibrato * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    x = np.zeros(n)
    for k in range(1, 13):
        x += (1.0 / k) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # syllabic gating: raised-cosine bursts around 3-5 Hz with pauses
    syllable_rate = rng.uniform(2.5, 5.0)
    gate = 0.5 - 0.5 * np.cos(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
    gate = gate ** rng.uniform(0.8, 2.0)
    x *= 0.15 + 0.85 * gate

    # formant-like spectral bumps
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    envelope = np.full_like(freqs, 0.05)
    for center, width in ((rng.uniform(350, 800), 220.0),
                          (rng.uniform(1000, 1800), 320.0),
                          (rng.uniform(2200, 3200), 450.0)):
        envelope += np.exp(-0.5 * ((freqs - center) / width) ** 2)
    x = np.fft.irfft(spec * envelope, n=n)

    x /= np.max(np.abs(x)) + 1e-12
    return AudioSignal(0.95 * x)


def synth_noise(kind, seed, duration=SEGMENT_SECONDS, sample_rate=SAMPLE_RATE) -> AudioSignal:
    """Deterministic noise: kind in {white, pink, babble}."""
    rng = np.random.default_rng([int(seed), 0x4015E])
    n = int(round(duration * sample_rate))
    if kind == "white":
        x = rng.normal(size=n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.normal(size=n))
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec = spec / np.sqrt(np.maximum(freqs, freqs[1]))
        x = np.fft.irfft(spec, n=n)
    elif kind == "babble":
        x = np.zeros(n)
        for i in range(6):
            x += synth_speechlike(1000 * int(seed) + 17 * i + 3,
                                  duration, sample_rate).samples
    else:
        raise ConfigError(f"unknown noise kind {kind!r}; expected white/pink/babble")
    x /= np.max(np.abs(x)) + 1e-12
    return AudioSignal(0.95 * x)


# ---------------------------------------------------------------------------
# manifests and sampling
# ---------------------------------------------------------------------------

@dataclass
class SplitManifest:
    """Split membership: per split, lists of speech and noise source URIs.

    A source is either 'synth:speechlike:<seed>', 'synth:<kind>:<seed>', or a
    WAV path (relative paths resolve against the manifest's directory).
    """

    seed: int
    splits: dict  # {"train": {"speech": [...], "noise": [...]}, ...}
    base_dir: str = "."

    def validate(self):
        for split in ("train", "val", "test"):
            if split not in self.splits:
                raise ConfigError(f"manifest missing split {split!r}")
            for key in ("speech", "noise"):
                if key not in self.splits[split]:
                    raise ConfigError(f"manifest split {split!r} missing {key!r} list")
        seen = {}
        for split in self.splits:
            for key in ("speech", "noise"):
                for uri in self.splits[split][key]:
                    if uri in seen and seen[uri] != split:
                        raise ConfigError(
                            f"source {uri!r} appears in splits {seen[uri]!r} and {split!r}"
                        )
                    seen[uri] = split

    def save(self, path):
        payload = {"seed": self.seed, "splits": self.splits}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read manifest ({exc})") from None
        m = cls(seed=int(payload.get("seed", 0)), splits=payload.get("splits", {}),
                base_dir=str(path.parent))
        m.validate()
        return m


def resolve_source(uri, base_dir=".") -> AudioSignal:
    """Load a manifest source URI (synth: generators or WAV paths)."""
    if uri.startswith("synth:"):
        parts = uri.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad synth URI {uri!r}; expected synth:<kind>:<seed>")
        _, kind, seed = parts
        if kind == "speechlike":
            return synth_speechlike(int(seed))
        return synth_noise(kind, int(seed))
    path = Path(uri)
    if not path.is_absolute():
        path = Path(base_dir) / path
    return load_wav(path)


def build_synthetic_manifest(seed, counts=None, noise_fraction=0.25) -> SplitManifest:
    """In-memory manifest of synth: URIs, split 60/20/20 unless counts given.

    counts: {"train": n, "val": n, "test": n} speech examples per split; each
    split gets max(2, round(n * noise_fraction)) noise sources cycling through
    white/pink/babble (fewer noises than speech exercises oversampling).
    """
    counts = counts or {"train": 120, "val": 40, "test": 40}
    kinds = ("white", "pink", "babble")
    splits = {}
    uid = 0
    for split in ("train", "val", "test"):
        n = int(counts[split])
        speech = [f"synth:speechlike:{seed * 100003 + uid + i}" for i in range(n)]
        uid += n
        n_noise = max(2, int(round(n * noise_fraction)))
        noise = [
            f"synth:{kinds[i % len(kinds)]}:{seed * 100003 + uid + i}" for i in range(n_noise)
        ]
        uid += n_noise
        splits[split] = {"speech": speech, "noise": noise}
    m = SplitManifest(seed=seed, splits=splits)
    m.validate()
    return m


def epoch_sampler(manifest: SplitManifest, split, seed, epoch):
    """Deterministic stream of MixExample for one split and epoch.

    Training/validation pairings are re-drawn per epoch; the test split always
    uses epoch 0, so it is created once and frozen. Noise sources are drawn
    with replacement (oversampling when there are fewer noises than speech
    segments).
    """
    if split not in _SPLIT_IDS:
        raise ConfigError(f"unknown split {split!r}")
    entries = manifest.splits.get(split, {})
    speech_uris = entries.get("speech", [])
    noise_uris = entries.get("noise", [])
    if not speech_uris or not noise_uris:
        raise ConfigError(f"split {split!r} is empty (speech={len(speech_uris)}, "
                          f"noise={len(noise_uris)})")
    effective_epoch = 0 if split == "test" else int(epoch)
    rng = np.random.default_rng([int(seed), int(manifest.seed),
                                 _SPLIT_IDS[split], effective_epoch])
    lo, hi = SNR_RANGE_DB
    for uri in speech_uris:
        for seg in segment(resolve_source(uri, manifest.base_dir)):
            noise_uri = noise_uris[int(rng.integers(len(noise_uris)))]
            noise_sig = resolve_source(noise_uri, manifest.base_dir)
            if len(noise_sig) < len(seg):
                raise AudioError(f"noise source {noise_uri!r} shorter than a segment")
            start = int(rng.integers(len(noise_sig) - len(seg) + 1))
            noise_seg = AudioSignal(noise_sig.samples[start : start + len(seg)].copy())
            snr = int(rng.integers(lo, hi + 1))
            yield mix_at_snr(seg, noise_seg, snr)


class MixtureDataset:
    """Split-aware example provider with a frozen, cached test set."""

    def __init__(self, manifest: SplitManifest, seed=0):
        self.manifest = manifest
        self.seed = int(seed)
        self._test_cache = None

    def train_examples(self, epoch):
        return list(epoch_sampler(self.manifest, "train", self.seed, epoch))

    def val_examples(self, epoch):
        return list(epoch_sampler(self.manifest, "val", self.seed, epoch))

    def test_examples(self):
        if self._test_cache is None:
            self._test_cache = list(epoch_sampler(self.manifest, "test", self.seed, 0))
        return self._test_cache


def materialize_corpus(out_dir, seed, count, noise_fraction=0.25):
    """Write a deterministic WAV corpus + manifest.json under out_dir.

    `count` is the total number of speech files, split as close as possible
    to 60/20/20; returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = int(round(count * 0.6))
    n_val = int(round(count * 0.2))
    n_test = count - n_train - n_val
    counts = {"train": n_train, "val": n_val, "test": n_test}
    synth = build_synthetic_manifest(seed, counts, noise_fraction)
    splits = {}
    for split, entries in synth.splits.items():
        fs, fn = [], []
        for i, uri in enumerate(entries["speech"]):
            rel = f"{split}_speech_{i:04d}.wav"
            save_wav(resolve_source(uri), out_dir / rel)
            fs.append(rel)
        for i, uri in enumerate(entries["noise"]):
            rel = f"{split}_noise_{i:04d}.wav"
            save_wav(resolve_source(uri), out_dir / rel)
            fn.append(rel)
        splits[split] = {"speech": fs, "noise": fn}
    manifest = SplitManifest(seed=seed, splits=splits, base_dir=str(out_dir))
    manifest.validate()
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path
