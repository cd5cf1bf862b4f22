"""Differentiable training losses.

The KD loss is the cosine distance between the adapted teacher latent and the
student latent: 1 - <a, b> / (||a||_2 ||b||_2), computed over row-major
flattened tensors. The supervised loss is negated scale-invariant SNR of the
denoised time signal against the clean target, capped at +/-120 dB with a
1e-12 epsilon guarding denominators. The joint loss is their exact weighted
sum with both weights defaulting to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import NumericsError, ShapeError
from .tensor import Tensor, as_tensor

SNR_CAP_DB = 120.0
EPS = 1e-12
NORM_EPS = 1e-8


@dataclass
class LossWeights:
    lambda_kd: float = 1.0
    lambda_out: float = 1.0

    def __post_init__(self):
        if self.lambda_kd < 0 or self.lambda_out < 0:
            raise ValueError(
                f"loss weights must be nonnegative, got ({self.lambda_kd}, {self.lambda_out})"
            )


def cosine_distance(a, b) -> Tensor:
    """Scale-invariant angular dissimilarity in [0, 2] over whole tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.size != b.size:
        raise ShapeError(f"cosine_distance: element counts differ ({a.shape} vs {b.shape})")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise NumericsError(
            f"cosine_distance: zero-norm operand (norms {na:.3e}, {nb:.3e}); angle undefined"
        )
    return 1.0 - tt.dot(a, b) / (tt.l2_norm(a) * tt.l2_norm(b))


def batched_cosine_distance(a, b) -> Tensor:
    """Mean cosine distance over the leading axis of two (N, ...) tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"batched_cosine_distance: batch sizes differ ({a.shape} vs {b.shape})")
    n = a.shape[0]
    af = tt.reshape(a, (n, -1))
    bf = tt.reshape(b, (n, -1))
    norms_a = np.linalg.norm(af.data, axis=1)
    norms_b = np.linalg.norm(bf.data, axis=1)
    if norms_a.min() <= NORM_EPS or norms_b.min() <= NORM_EPS:
        raise NumericsError("batched_cosine_distance: zero-norm row; angle undefined")
    num = tt.tsum(tt.mul(af, bf), axis=1)
    den = tt.mul(tt.sqrt(tt.tsum(tt.mul(af, af), axis=1)),
                 tt.sqrt(tt.tsum(tt.mul(bf, bf), axis=1)))
    return tt.tmean(1.0 - tt.div(num, den))


def si_snr_loss(target, estimate) -> Tensor:
    """Negated SI-SNR (dB) of `estimate` against a fixed `target`.

    Accepts (L,) pairs or (N, L) batches (mean over the batch). `target` is
    treated as a constant; gradients flow through `estimate` only.
    """
    est = as_tensor(estimate)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if tgt.shape != est.shape:
        raise ShapeError(f"si_snr_loss: target {tgt.shape} vs estimate {est.shape}")
    if tgt.ndim == 1:
        est = tt.reshape(est, (1, -1))
        tgt = tgt[None]
    elif tgt.ndim != 2:
        raise ShapeError(f"si_snr_loss expects (L,) or (N, L), got {tgt.shape}")
    t_power = np.sum(tgt * tgt, axis=1)
    if t_power.min() <= 0.0:
        raise NumericsError("si_snr_loss: zero-power target")

    tgt_t = Tensor(tgt)
    alpha = tt.div(tt.tsum(tt.mul(est, tgt_t), axis=1, keepdims=True), t_power[:, None])
    proj = tt.mul(alpha, tgt_t)
    resid = tt.sub(est, proj)
    num = tt.tsum(tt.mul(proj, proj), axis=1)
    den = tt.tsum(tt.mul(resid, resid), axis=1)
    ratio = tt.div(num + EPS, den + EPS)
    snr_db = tt.clip(10.0 * tt.log10(ratio), -SNR_CAP_DB, SNR_CAP_DB)
    return tt.tmean(-snr_db)


def joint_loss(kd, out, weights: LossWeights = None):
    """Exact weighted sum lambda_kd * kd + lambda_out * out."""
    w = weights or LossWeights()
    if isinstance(kd, Tensor) or isinstance(out, Tensor):
        return w.lambda_kd * as_tensor(kd) + w.lambda_out * as_tensor(out)
    return w.lambda_kd * kd + w.lambda_out * out
