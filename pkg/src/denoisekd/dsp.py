"""Time-frequency analysis and synthesis.

Conventions (fixed across the package):
  - 512-point FFT, hop 256 (50% overlap), periodic Hann analysis window.
  - Signals are reflection-padded by fft_size//2 on both sides ("center"
    framing), so a 2-second 16 kHz signal (32000 samples) yields exactly
    T = floor(len/hop) + 1 = 126 frames.
  - A 512-point one-sided spectrum has 257 bins; the Nyquist bin is dropped
    on analysis (F = 256) and restored as zero on synthesis.
  - Synthesis is weighted overlap-add: frames are windowed again and the
    result divided by the overlapped squared window, which inverts the STFT
    exactly and degrades gracefully for modified magnitudes.

`istft_with_phase` is the differentiable path used by training losses: it
maps a magnitude tensor (with a fixed phase) to the time signal, and its
backward pass applies the exact adjoint of that linear map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AudioError, ShapeError
from .tensor import Tensor, _attach, as_tensor

SAMPLE_RATE = 16000
FFT_SIZE = 512
HOP = 256


@dataclass
class AudioSignal:
    """Mono waveform; samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("samples contain non-finite values")

    def __len__(self):
        return len(self.samples)


@dataclass
class Spectrogram:
    """Complex time-frequency grid plus the metadata needed to invert it.

    `values` keeps the full one-sided spectrum (T x (fft_size//2 + 1)) so the
    analysis/synthesis pair is exactly invertible; the model-facing
    `magnitude` and `phase` grids apply the bin-truncation rule (Nyquist
    dropped, T x fft_size//2).
    """

    values: np.ndarray  # complex, (T, fft_size//2 + 1)
    fft_size: int = FFT_SIZE
    hop: int = HOP
    window: str = "hann"
    length: int = 0  # original signal length, for exact istft trimming

    @property
    def magnitude(self):
        """Nonnegative T x (fft_size//2) grid: model input domain."""
        return np.abs(self.values[:, : self.fft_size // 2])

    @property
    def phase(self):
        """Unit-modulus phase factors of the truncated grid; zero bins map to 1+0j."""
        v = self.values[:, : self.fft_size // 2]
        mag = np.abs(v)
        safe = np.where(mag > 0.0, mag, 1.0)
        return np.where(mag > 0.0, v / safe, 1.0 + 0.0j)


def hann_window(n):
    """Periodic Hann window (COLA at 50% overlap: shifted copies sum to 1)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frame_count(length, hop):
    return length // hop + 1


def stft(signal, fft_size=FFT_SIZE, hop=HOP) -> Spectrogram:
    """Analyze a signal into a T x (fft_size//2) complex grid (Nyquist dropped)."""
    if isinstance(signal, AudioSignal):
        x = signal.samples
    else:
        x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"stft expects a 1-D signal, got shape {x.shape}")
    if len(x) < fft_size:
        raise AudioError(f"signal too short for one frame: {len(x)} < fft_size {fft_size}")
    pad = fft_size // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    n_frames = _frame_count(len(x), hop)
    window = hann_window(fft_size)
    frames = sliding_window_view(xp, fft_size)[::hop][:n_frames]
    spec = np.fft.rfft(frames * window, axis=-1)
    return Spectrogram(spec, fft_size=fft_size, hop=hop, length=len(x))


def _ola_normalizer(window, hop, n_frames):
    """Overlapped squared-window envelope used by weighted overlap-add."""
    n = len(window)
    total = (n_frames - 1) * hop + n
    den = np.zeros(total)
    w2 = window * window
    for t in range(n_frames):
        den[t * hop : t * hop + n] += w2
    return den


def _synthesize(spec_full, window, hop, length):
    """Weighted overlap-add of full one-sided frames (..., T, fft//2+1)."""
    fft_size = (spec_full.shape[-1] - 1) * 2
    frames = np.fft.irfft(spec_full, n=fft_size, axis=-1) * window
    n_frames = spec_full.shape[-2]
    total = (n_frames - 1) * hop + fft_size
    lead = spec_full.shape[:-2]
    y = np.zeros(lead + (total,))
    for t in range(n_frames):
        y[..., t * hop : t * hop + fft_size] += frames[..., t, :]
    den = _ola_normalizer(window, hop, n_frames)
    y = y / np.where(den > 1e-8, den, 1.0)
    pad = fft_size // 2
    if pad + length > total:
        raise ShapeError(f"requested length {length} exceeds synthesis span {total - pad}")
    return y[..., pad : pad + length]


def istft(mag, phase, fft_size=FFT_SIZE, hop=HOP, length=None) -> np.ndarray:
    """Reconstruct a signal from magnitude and phase grids of equal shape.

    Grids may carry fft_size//2 bins (truncated form: the Nyquist bin is
    restored as zero) or the full fft_size//2 + 1.
    """
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase)
    if mag.shape != phase.shape:
        raise ShapeError(f"istft: magnitude {mag.shape} and phase {phase.shape} shapes differ")
    if mag.shape[-1] not in (fft_size // 2, fft_size // 2 + 1):
        raise ShapeError(
            f"istft: got {mag.shape[-1]} bins; fft_size {fft_size} implies "
            f"{fft_size // 2} (truncated) or {fft_size // 2 + 1} (full)"
        )
    if length is None:
        length = (mag.shape[-2] - 1) * hop
    spec = mag * phase
    if spec.shape[-1] == fft_size // 2:
        spec = np.concatenate(
            [spec, np.zeros(spec.shape[:-1] + (1,), dtype=spec.dtype)], axis=-1
        )
    return _synthesize(spec, hann_window(fft_size), hop, length)


def istft_spectrogram(spec: Spectrogram) -> np.ndarray:
    """Exactly invert a Spectrogram produced by stft (full one-sided bins)."""
    return _synthesize(spec.values, hann_window(spec.fft_size), spec.hop, spec.length)


def istft_complex(values, fft_size=FFT_SIZE, hop=HOP, length=None) -> np.ndarray:
    """Synthesize from a full one-sided complex grid (..., T, fft//2 + 1)."""
    values = np.asarray(values)
    if values.shape[-1] != fft_size // 2 + 1:
        raise ShapeError(
            f"istft_complex: expected {fft_size // 2 + 1} bins, got {values.shape[-1]}"
        )
    if length is None:
        length = (values.shape[-2] - 1) * hop
    return _synthesize(values, hann_window(fft_size), hop, length)


def cola_deviation(fft_size=FFT_SIZE, hop=HOP, n_frames=16):
    """Max deviation of the overlapped window sum from 1 over the interior."""
    window = hann_window(fft_size)
    total = (n_frames - 1) * hop + fft_size
    acc = np.zeros(total)
    for t in range(n_frames):
        acc[t * hop : t * hop + fft_size] += window
    interior = acc[fft_size : total - fft_size]
    return float(np.max(np.abs(interior - 1.0)))


def istft_with_phase(mag, phase, fft_size=FFT_SIZE, hop=HOP, length=None,
                     nyquist=None) -> Tensor:
    """Differentiable ISTFT of a magnitude Tensor against a fixed phase.

    mag: Tensor of shape (T, F) or (N, T, F); phase: unit-modulus complex
    ndarray of the same shape. `nyquist`, when given, is a fixed complex
    (..., T) column appended as the Nyquist bin (passed through untouched by
    the mask, so an all-ones mask reproduces the original signal exactly).
    Returns the time signal as a Tensor; the backward pass is the exact
    adjoint of the linear magnitude-to-signal map.
    """
    mag = as_tensor(mag)
    phase = np.asarray(phase)
    if mag.shape != phase.shape:
        raise ShapeError(f"istft_with_phase: magnitude {mag.shape} vs phase {phase.shape}")
    if mag.data.ndim not in (2, 3):
        raise ShapeError(f"istft_with_phase expects (T,F) or (N,T,F), got {mag.shape}")
    n_bins = mag.shape[-1]
    if n_bins != fft_size // 2:
        raise ShapeError(f"istft_with_phase: {n_bins} bins but fft_size {fft_size} implies {fft_size // 2}")
    if length is None:
        length = (mag.shape[-2] - 1) * hop

    window = hann_window(fft_size)
    n_frames = mag.shape[-2]
    spec = mag.data * phase
    if nyquist is None:
        last = np.zeros(spec.shape[:-1] + (1,), dtype=spec.dtype)
    else:
        last = np.asarray(nyquist, dtype=spec.dtype)
        if last.shape != spec.shape[:-1]:
            raise ShapeError(
                f"istft_with_phase: nyquist column {last.shape} must match frames {spec.shape[:-1]}"
            )
        last = last[..., None]
    full = np.concatenate([spec, last], axis=-1)
    y = _synthesize(full, window, hop, length)
    out = Tensor(y)

    total = (n_frames - 1) * hop + fft_size
    den = _ola_normalizer(window, hop, n_frames)
    den_safe = np.where(den > 1e-8, den, 1.0)
    pad = fft_size // 2
    # d(frame)/d(mag_b) scale: irfft doubles interior one-sided bins
    scale = np.full(n_bins, 2.0 / fft_size)
    scale[0] = 1.0 / fft_size

    def backward_fn(g):
        lead = g.shape[:-1]
        gfull = np.zeros(lead + (total,))
        gfull[..., pad : pad + length] = g
        u = gfull / den_safe
        if u.ndim == 1:
            v = sliding_window_view(u, fft_size)[::hop][:n_frames] * window
        else:
            v = sliding_window_view(u, fft_size, axis=-1)[:, ::hop][:, :n_frames] * window
        r = np.fft.rfft(v, axis=-1)[..., :n_bins]
        gmag = scale * np.real(np.conj(phase) * r)
        return (np.ascontiguousarray(gmag),)

    return _attach("istft_with_phase", (mag,), out, backward_fn)
