"""Central finite-difference verification of every differentiable operation.

Each check builds a scalar loss from an op applied to random double-precision
inputs, runs backward(), and compares every input gradient against central
differences (h = 1e-5). The reported number is the max elementwise relative
error |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).

Per-op tolerance is 1e-4; the end-to-end model checks (full UNet + joint
loss) use 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .dsp import istft_with_phase, stft
from .losses import batched_cosine_distance, cosine_distance, si_snr_loss
from .models import ModelConfig, build_bottleneck, build_model
from .tensor import Tensor

H_STEP = 1e-5
OP_TOL = 1e-4
MODEL_TOL = 1e-3
_REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def _rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(make_loss, arrays, h=H_STEP):
    """Max relative error across all `arrays` treated as differentiable inputs.

    make_loss(tensors) must rebuild the loss from scratch each call (fresh
    tape); central differences perturb the underlying arrays in place.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = make_loss(tensors)
    tt.backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat, nflat = t.data.ravel(), numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = make_loss([Tensor(x.data) for x in tensors]).item()
            flat[i] = orig - h
            down = make_loss([Tensor(x.data) for x in tensors]).item()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * h)
        worst = max(worst, _rel_error(analytic, numeric))
    return worst


def _fixed_weight(rng, shape):
    """Fixed random downstream weighting, drawn once per check."""
    return Tensor(rng.normal(size=shape))


def _weighted_sum(out, w):
    return tt.tsum(tt.mul(out, w))


def _micro_model_config():
    return ModelConfig(
        name="gradcheck-micro",
        input_shape=(8, 16),
        kernel=(3, 3),
        channels=[2, 4],
        strides=[(1, 2), (2, 2)],
        paddings=[(1, 1), (1, 1)],
    )


def run_suite(seed=0):
    """All gradient checks; returns a list of CheckResult."""
    rng = np.random.default_rng([seed, 0x6AD])
    results = []

    def record(name, err, tol=OP_TOL):
        results.append(CheckResult(name, err, tol))

    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4)) + 3.0  # keep denominators away from zero
    w34 = _fixed_weight(rng, (3, 4))
    for op in ("add", "sub", "mul", "div"):
        err = check_gradients(
            lambda ts, op=op: _weighted_sum(tt.elementwise(op, ts[0], ts[1]), w34),
            [a.copy(), b.copy()],
        )
        record(f"elementwise.{op}", err)

    record("sum", check_gradients(lambda ts: tt.tsum(ts[0]), [rng.normal(size=(4, 5))]))
    w4 = _fixed_weight(rng, (4,))
    record("mean.axis", check_gradients(
        lambda ts: _weighted_sum(tt.tmean(ts[0], axis=1), w4), [rng.normal(size=(4, 5))]))
    record("dot", check_gradients(
        lambda ts: tt.dot(ts[0], ts[1]), [rng.normal(size=6), rng.normal(size=6)]))
    record("l2_norm", check_gradients(
        lambda ts: tt.l2_norm(ts[0]), [rng.normal(size=7) + 2.0]))
    w5 = _fixed_weight(rng, (5,))
    record("log10", check_gradients(
        lambda ts: _weighted_sum(tt.log10(ts[0]), w5),
        [np.abs(rng.normal(size=5)) + 0.5]))

    record("leaky_relu", check_gradients(
        lambda ts: _weighted_sum(tt.leaky_relu(ts[0]), w34),
        [rng.normal(size=(3, 4)) + 0.05]))
    record("sigmoid", check_gradients(
        lambda ts: _weighted_sum(tt.sigmoid(ts[0]), w34), [rng.normal(size=(3, 4))]))

    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    wc = _fixed_weight(rng, (3, 3, 6))
    record("conv2d", check_gradients(
        lambda ts: _weighted_sum(tt.conv2d(ts[0], ts[1], ts[2], (2, 1), (1, 1)), wc),
        [x, w, bias]))

    xt = rng.normal(size=(3, 3, 4))
    wt = rng.normal(size=(3, 2, 3, 3))
    bt = rng.normal(size=2)
    wct = _fixed_weight(rng, (2, 6, 8))
    record("conv2d_transpose", check_gradients(
        lambda ts: _weighted_sum(
            tt.conv2d_transpose(ts[0], ts[1], ts[2], (2, 2), (1, 1), (1, 1)), wct),
        [xt, wt, bt]))

    xn = rng.normal(size=(2, 3, 3))
    wn = _fixed_weight(rng, (2, 3, 3))
    record("instance_norm", check_gradients(
        lambda ts: _weighted_sum(tt.instance_norm(ts[0], ts[1], ts[2]), wn),
        [xn, rng.normal(size=2) + 1.0, rng.normal(size=2)]))

    wl = _fixed_weight(rng, (2, 5, 4))
    record("axis_linear", check_gradients(
        lambda ts: _weighted_sum(tt.axis_linear(ts[0], ts[1], ts[2], 1), wl),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=(5, 3)), rng.normal(size=5)]))

    record("cosine_distance", check_gradients(
        lambda ts: cosine_distance(ts[0], ts[1]),
        [rng.normal(size=(2, 5)), rng.normal(size=(2, 5))]))

    tgt = rng.normal(size=64)
    record("si_snr_loss", check_gradients(
        lambda ts: si_snr_loss(tgt, ts[0]), [tgt + 0.3 * rng.normal(size=64)]))

    ref = rng.normal(size=112)
    spec = stft(ref, fft_size=32, hop=16)
    phase, length = spec.phase, spec.length
    wi = _fixed_weight(rng, (112,))
    record("istft_with_phase", check_gradients(
        lambda ts: _weighted_sum(istft_with_phase(ts[0], phase, 32, 16, length), wi),
        [spec.magnitude.copy()]))

    results.append(_full_model_check(rng))
    return results


def _full_model_check(rng):
    """Full UNet forward + joint KD/supervised loss on a 1-channel 8x16 input."""
    model = build_model(_micro_model_config(), seed=3)
    teacher_latent = rng.normal(size=(3, 4, 4))
    adapter = build_bottleneck((3, 4, 4), model.latent_shape.as_tuple(), seed=4)
    model_names = [n for n, _ in model.parameters()]
    adapter_names = [n for n, _ in adapter.parameters()]

    clean = rng.normal(size=112)
    noisy = clean + 0.4 * rng.normal(size=112)
    spec = stft(noisy, fft_size=32, hop=16)
    mag, phase, length = spec.magnitude, spec.phase, spec.length

    params = [p.data.copy() for _, p in model.parameters()]
    params += [p.data.copy() for _, p in adapter.parameters()]

    def make_loss(tensors):
        for name, t in zip(model_names, tensors[: len(model_names)]):
            model.set_parameter(name, t)
        for name, t in zip(adapter_names, tensors[len(model_names) :]):
            adapter.set_parameter(name, t)
        mask, latent = model.forward(Tensor(mag))
        denoised = tt.mul(mask, Tensor(mag))
        signal = istft_with_phase(denoised, phase, 32, 16, length)
        kd = batched_cosine_distance(
            tt.reshape(adapter.forward(Tensor(teacher_latent)), (1, -1)),
            tt.reshape(latent, (1, -1)),
        )
        out = si_snr_loss(clean, signal)
        return kd + out

    err = check_gradients(make_loss, params)
    return CheckResult("unet_joint_loss", err, MODEL_TOL)


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'operation':<{width}}  max_rel_error  tolerance  status"]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {r.tolerance:9.0e}  {status}")
    return "\n".join(lines) + "\n"
