"""Evaluation metrics (numpy, non-differentiable) and the metrics report.

  - si_snr / si_sdr: scale-invariant SNR, Eq.-style projection of the estimate
    onto the target; the two names are the same computation here (documented
    equivalence), capped at +/-120 dB with 1e-12 epsilon in denominators.
  - sdr: plain energy-ratio SDR, 10*log10(||x||^2 / ||x - xhat||^2) — not the
    full BSS-eval decomposition.
  - stoi: classic short-time objective intelligibility at 10 kHz with 15
    one-third-octave bands (first center 150 Hz), 30-frame (384 ms) analysis
    segments, -15 dB clipping, and 40 dB energy-based silence removal.

MetricsReport aggregates per-example rows with population mean/STD and
serializes to a line-oriented text table (documented column order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import AudioSignal, hann_window
from .errors import AudioError, NumericsError, ShapeError

SNR_CAP_DB = 120.0
EPS = 1e-12


def _as_samples(sig):
    if isinstance(sig, AudioSignal):
        return sig.samples
    return np.asarray(sig, dtype=np.float64)


def _check_pair(target, estimate, op):
    x, y = _as_samples(target), _as_samples(estimate)
    if x.shape != y.shape:
        raise ShapeError(f"{op}: lengths differ ({x.shape} vs {y.shape})")
    if float(np.dot(x, x)) <= 0.0:
        raise NumericsError(f"{op}: zero-power target")
    return x, y


def _capped_db(num, den):
    return float(np.clip(10.0 * np.log10((num + EPS) / (den + EPS)), -SNR_CAP_DB, SNR_CAP_DB))


def si_snr(target, estimate) -> float:
    """Scale-invariant SNR in dB (projection-based, estimate-scale invariant)."""
    x, y = _check_pair(target, estimate, "si_snr")
    alpha = float(np.dot(y, x) / np.dot(x, x))
    proj = alpha * x
    resid = y - proj
    return _capped_db(float(np.dot(proj, proj)), float(np.dot(resid, resid)))


def si_sdr(target, estimate) -> float:
    """Identical to si_snr; both names appear in the evaluation protocol."""
    return si_snr(target, estimate)


def sdr(target, estimate) -> float:
    """Plain energy-ratio SDR in dB (scale-sensitive)."""
    x, y = _check_pair(target, estimate, "sdr")
    err = x - y
    return _capped_db(float(np.dot(x, x)), float(np.dot(err, err)))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_FFT = 512
_STOI_N_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30  # frames per analysis segment (384 ms)
_STOI_BETA_DB = -15.0
_STOI_SILENCE_RANGE_DB = 40.0


def _third_octave_bands(fs, nfft, n_bands, min_freq):
    """Boolean (n_bands, nfft//2 + 1) matrix grouping FFT bins into bands."""
    f = np.linspace(0, fs, nfft, endpoint=False)[: nfft // 2 + 1]
    cf = min_freq * 2.0 ** (np.arange(n_bands) / 3.0)
    lo, hi = cf * 2.0 ** (-1.0 / 6.0), cf * 2.0 ** (1.0 / 6.0)
    bands = np.zeros((n_bands, len(f)), dtype=bool)
    for j in range(n_bands):
        lo_i = int(np.argmin(np.abs(f - lo[j])))
        hi_i = int(np.argmin(np.abs(f - hi[j])))
        bands[j, lo_i:hi_i] = True
    return bands


def _frames(x, frame, hop):
    if len(x) < frame:
        return np.empty((0, frame))
    return sliding_window_view(x, frame)[::hop]


def _remove_silent_frames(x, y, frame, hop, range_db):
    """Drop frames whose clean-signal energy sits > range_db below the peak."""
    window = hann_window(frame)
    xf = _frames(x, frame, hop) * window
    if len(xf) == 0:
        return x[:0], y[:0]
    yf = _frames(y, frame, hop) * window
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = energy > energy.max() - range_db
    xf, yf = xf[keep], yf[keep]
    n = len(xf)
    out_len = (n - 1) * hop + frame if n else 0
    xs, ys = np.zeros(out_len), np.zeros(out_len)
    for i in range(n):
        xs[i * hop : i * hop + frame] += xf[i]
        ys[i * hop : i * hop + frame] += yf[i]
    return xs, ys


def _resample_to(x, sr_in, sr_out):
    if sr_in == sr_out:
        return x
    from .data import resample

    return resample(x, sr_in, sr_out)


def stoi(clean, processed, sample_rate=16000) -> float:
    """Short-time objective intelligibility in roughly [0, 1]."""
    x, y = _as_samples(clean), _as_samples(processed)
    if x.shape != y.shape:
        raise ShapeError(f"stoi: lengths differ ({x.shape} vs {y.shape})")
    x = _resample_to(x, sample_rate, _STOI_FS)
    y = _resample_to(y, sample_rate, _STOI_FS)
    hop = _STOI_FRAME // 2
    x, y = _remove_silent_frames(x, y, _STOI_FRAME, hop, _STOI_SILENCE_RANGE_DB)

    xf = _frames(x, _STOI_FRAME, hop)
    yf = _frames(y, _STOI_FRAME, hop)
    if len(xf) < _STOI_SEG:
        raise AudioError(
            f"stoi: only {len(xf)} frames after silence removal; need >= {_STOI_SEG}"
        )
    window = hann_window(_STOI_FRAME)
    xs = np.abs(np.fft.rfft(xf * window, n=_STOI_FFT, axis=1))
    ys = np.abs(np.fft.rfft(yf * window, n=_STOI_FFT, axis=1))
    bands = _third_octave_bands(_STOI_FS, _STOI_FFT, _STOI_N_BANDS, _STOI_MIN_FREQ)
    # band envelopes: (n_frames, n_bands)
    xb = np.sqrt((xs[:, None, :] ** 2 * bands[None]).sum(axis=2))
    yb = np.sqrt((ys[:, None, :] ** 2 * bands[None]).sum(axis=2))

    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    total, count = 0.0, 0
    for m in range(_STOI_SEG, len(xb) + 1):
        xseg = xb[m - _STOI_SEG : m]  # (SEG, bands)
        yseg = yb[m - _STOI_SEG : m]
        norm = np.linalg.norm(xseg, axis=0) / (np.linalg.norm(yseg, axis=0) + EPS)
        yn = np.minimum(yseg * norm, xseg * (1.0 + clip_gain))
        xc = xseg - xseg.mean(axis=0)
        yc = yn - yn.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + EPS
        total += float(((xc * yc).sum(axis=0) / denom).sum())
        count += xseg.shape[1]
    return total / count


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_COLUMNS = ("sdr_db", "si_sdr_db", "stoi")


@dataclass
class MetricsReport:
    """Per-example metric rows plus population mean/STD aggregates."""

    rows: list = field(default_factory=list)  # dicts with the _COLUMNS keys

    def add(self, sdr_db, si_sdr_db, stoi_score):
        self.rows.append(
            {"sdr_db": float(sdr_db), "si_sdr_db": float(si_sdr_db), "stoi": float(stoi_score)}
        )

    def _column(self, key):
        return np.array([r[key] for r in self.rows], dtype=np.float64)

    def mean(self, key):
        return float(self._column(key).mean())

    def std(self, key):
        return float(self._column(key).std())  # population STD

    def summary(self):
        return {k: (self.mean(k), self.std(k)) for k in _COLUMNS}

    def to_text(self):
        """Line-oriented table: '# index sdr_db si_sdr_db stoi', rows, mean, std."""
        lines = ["# index " + " ".join(_COLUMNS)]
        for i, r in enumerate(self.rows):
            lines.append(f"{i} " + " ".join(f"{r[k]:.6f}" for k in _COLUMNS))
        lines.append("mean " + " ".join(f"{self.mean(k):.6f}" for k in _COLUMNS))
        lines.append("std " + " ".join(f"{self.std(k):.6f}" for k in _COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        report = cls()
        for line in text.splitlines():
            parts = line.split()
            if not parts or parts[0] in ("#", "mean", "std"):
                continue
            report.add(*(float(v) for v in parts[1:4]))
        return report

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())
