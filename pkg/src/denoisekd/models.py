"""UNet denoising autoencoders and the latent bottleneck adapter.

An encoder block is conv2d + instance_norm + leaky_relu; a decoder block is
conv2d_transpose + instance_norm + leaky_relu, except the last block which has
no norm and a sigmoid, so the model output is a (0,1)-valued mask over the
input magnitude grid. Skip connections concatenate each encoder block output
(all but the last) onto the input of the mirrored decoder block.

Configs carry explicit per-block channel/stride/padding schedules. The preset
factory solves the padding schedules from the target latent shapes and carries
channel widths calibrated once against the published parameter counts
(t1 ~1.35M, t2 ~2.04M, s1 = s2 ~37k).

The bottleneck adapter is a stack of at most three per-axis affine maps
(C, then H, then W; matching axes are skipped) with no normalization or
nonlinearity, so the whole adapter is affine.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1
_LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class LatentShape:
    channels: int
    height: int
    width: int

    def as_tuple(self):
        return (self.channels, self.height, self.width)

    def __str__(self):
        return f"{{{self.channels}, {self.height}, {self.width}}}"


@dataclass
class ModelConfig:
    """Declarative UNet description; the decoder is derived by mirroring."""

    name: str
    input_shape: tuple  # (T, F)
    kernel: tuple  # (kH, kW)
    channels: list  # per encoder block, strictly positive
    strides: list  # per encoder block, (sH, sW), entries >= 1
    paddings: list  # per encoder block, (pH, pW)

    def validate(self):
        n = len(self.channels)
        if n < 1:
            raise ConfigError("config needs at least one block")
        if not (len(self.strides) == len(self.paddings) == n):
            raise ConfigError(
                f"schedule lengths differ: channels {n}, strides {len(self.strides)}, "
                f"paddings {len(self.paddings)}"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channel schedule must be strictly positive: {self.channels}")
        if any(s[0] < 1 or s[1] < 1 for s in self.strides):
            raise ConfigError(f"stride entries must be >= 1: {self.strides}")
        if any(p[0] < 0 or p[1] < 0 for p in self.paddings):
            raise ConfigError(f"paddings must be nonnegative: {self.paddings}")

    @property
    def n_blocks(self):
        return len(self.channels)

    def encoder_sizes(self):
        """Spatial size after each encoder block, starting from the input."""
        sizes = [tuple(self.input_shape)]
        for i in range(self.n_blocks):
            out = []
            for axis in range(2):
                s = tt.conv_output_size(
                    sizes[-1][axis], self.kernel[axis], self.strides[i][axis],
                    self.paddings[i][axis],
                )
                if s < 1:
                    raise ConfigError(
                        f"{self.name}: block {i + 1} produces non-positive extent "
                        f"{s} on axis {axis} (from {sizes[-1]})"
                    )
                out.append(s)
            sizes.append(tuple(out))
        return sizes

    def latent_shape(self) -> LatentShape:
        sizes = self.encoder_sizes()
        return LatentShape(self.channels[-1], *sizes[-1])

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "kernel": list(self.kernel),
            "channels": list(self.channels),
            "strides": [list(s) for s in self.strides],
            "paddings": [list(p) for p in self.paddings],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=str(d["name"]),
                input_shape=tuple(d["input_shape"]),
                kernel=tuple(d["kernel"]),
                channels=[int(c) for c in d["channels"]],
                strides=[tuple(s) for s in d["strides"]],
                paddings=[tuple(p) for p in d["paddings"]],
            )
        except KeyError as exc:
            raise ConfigError(f"model config missing field {exc}") from None


def _solve_conv_padding(in_size, out_size, kernel, stride):
    """Smallest padding p with floor((in + 2p - k)/s) + 1 == out, or None."""
    lo = (out_size - 1) * stride + kernel - in_size
    hi = lo + stride - 1
    for two_p in range(max(lo, 0), hi + 1):
        if two_p % 2 == 0:
            return two_p // 2
    return None


def _ladder_candidates(in_size, n_halvings, target):
    """Candidate per-halving output ladders from in_size down to target.

    Two constructions cover the published shapes: plain ceil-halving
    (126 -> 63 -> 32 -> ... -> 2), and the odd ladder built backward from the
    target by repeated 2x-1 with the first halving absorbing the remainder
    (256 -> 129 -> 65 -> ... -> 5).
    """
    ceil_ladder, s = [], in_size
    for _ in range(n_halvings):
        s = (s + 1) // 2
        ceil_ladder.append(s)
    odd = [target]
    for _ in range(n_halvings - 1):
        odd.append(2 * odd[-1] - 1)
    return [ceil_ladder, odd[::-1]]


def _solve_axis_paddings(in_size, strides, kernel, target):
    """Padding per block along one axis hitting `target` exactly."""
    if any(s not in (1, 2) for s in strides):
        raise ConfigError(f"preset solver supports strides 1 and 2 only, got {strides}")
    n_halvings = sum(1 for s in strides if s == 2)
    ladders = _ladder_candidates(in_size, n_halvings, target) if n_halvings else [[]]
    for ladder in ladders:
        if ladder and ladder[-1] != target:
            continue
        sizes, pads, step, ok = in_size, [], 0, True
        for s in strides:
            out = sizes if s == 1 else ladder[step]
            p = _solve_conv_padding(sizes, out, kernel, s)
            if p is None or p > kernel:
                ok = False
                break
            pads.append(p)
            if s == 2:
                step += 1
            sizes = out
        if ok and sizes == target:
            return pads
    raise ConfigError(
        f"no padding ladder maps {in_size} -> {target} over strides {strides} "
        f"with kernel {kernel}"
    )


def _doubling_channels(base, n_blocks, c_final, every=1):
    return [min(base * 2 ** ((k - 1) // every), c_final) for k in range(1, n_blocks + 1)]


def preset_config(name) -> ModelConfig:
    """Published architectures (t1/t2/s1/s2) and desk-scale micro variants.

    Latent shapes: t1 {128,126,5}, t2 {128,126,17}, s1 {32,126,5}, s2 {32,2,5}.
    First-block widths are calibrated so parameter counts track the published
    figures; micro presets keep the same mismatch relationships at a fraction
    of the cost.
    """
    t, f = 126, 256
    if name == "t1":
        strides = [(1, 2)] * 6
        return ModelConfig(
            name, (t, f), (5, 5),
            _doubling_channels(7, 6, 128),
            strides,
            _paired_paddings((t, f), strides, (5, 5), (126, 5)),
        )
    if name == "t2":
        strides = [(1, 2), (1, 1), (1, 2), (1, 1), (1, 2), (1, 1), (1, 2)]
        return ModelConfig(
            name, (t, f), (5, 5),
            _doubling_channels(24, 7, 128, every=2),
            strides,
            _paired_paddings((t, f), strides, (5, 5), (126, 17)),
        )
    if name == "s1":
        strides = [(1, 2)] * 6
        return ModelConfig(
            name, (t, f), (3, 3),
            _doubling_channels(2, 6, 32),
            strides,
            _paired_paddings((t, f), strides, (3, 3), (126, 5)),
        )
    if name == "s2":
        strides = [(2, 2)] * 6
        return ModelConfig(
            name, (t, f), (3, 3),
            _doubling_channels(2, 6, 32),
            strides,
            _paired_paddings((t, f), strides, (3, 3), (2, 5)),
        )
    if name == "micro-t1":
        strides = [(2, 2), (1, 2), (1, 2)]
        return ModelConfig(
            name, (t, f), (5, 5),
            [4, 8, 16],
            strides,
            _paired_paddings((t, f), strides, (5, 5), (63, 33)),
        )
    if name == "micro-t2":
        strides = [(2, 2), (1, 1), (1, 2)]
        return ModelConfig(
            name, (t, f), (5, 5),
            [4, 8, 16],
            strides,
            _paired_paddings((t, f), strides, (5, 5), (63, 65)),
        )
    if name == "micro-s1":
        strides = [(2, 2), (1, 2), (1, 2)]
        return ModelConfig(
            name, (t, f), (3, 3),
            [2, 4, 8],
            strides,
            _paired_paddings((t, f), strides, (3, 3), (63, 33)),
        )
    if name == "micro-s2":
        strides = [(2, 2)] * 3
        return ModelConfig(
            name, (t, f), (3, 3),
            [2, 4, 8],
            strides,
            _paired_paddings((t, f), strides, (3, 3), (16, 33)),
        )
    raise ConfigError(f"unknown preset {name!r}; expected t1/t2/s1/s2 or micro-* variants")


PRESET_NAMES = ("t1", "t2", "s1", "s2", "micro-t1", "micro-t2", "micro-s1", "micro-s2")


def _paired_paddings(input_shape, strides, kernel, target):
    per_axis = [
        _solve_axis_paddings(
            input_shape[a], [s[a] for s in strides], kernel[a], target[a]
        )
        for a in range(2)
    ]
    return [(per_axis[0][i], per_axis[1][i]) for i in range(len(strides))]


# ---------------------------------------------------------------------------
# realized model
# ---------------------------------------------------------------------------

def _kaiming_uniform(rng, shape, fan_in, gain):
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _conv_params(rng, c_out, c_in, kh, kw, gain, transpose=False):
    fan_in = c_in * kh * kw
    wshape = (c_in, c_out, kh, kw) if transpose else (c_out, c_in, kh, kw)
    weight = Tensor(_kaiming_uniform(rng, wshape, fan_in, gain), requires_grad=True)
    bb = 1.0 / np.sqrt(fan_in)
    bias = Tensor(rng.uniform(-bb, bb, size=c_out), requires_grad=True)
    return weight, bias


_GAIN_LEAKY = np.sqrt(2.0 / (1.0 + _LEAKY_SLOPE ** 2))


class UNetModel:
    """A realized encoder/decoder pair with skip wiring and named parameters."""

    def __init__(self, config: ModelConfig, seed=0):
        config.validate()
        self.config = config
        self.sizes = config.encoder_sizes()  # n_blocks + 1 spatial sizes
        kh, kw = config.kernel
        rng = np.random.default_rng([seed, 0x5EED])
        in_channels = [1] + list(config.channels[:-1])

        self.encoder = []
        for i, c_out in enumerate(config.channels):
            w, b = _conv_params(rng, c_out, in_channels[i], kh, kw, _GAIN_LEAKY)
            gamma = Tensor(np.ones(c_out), requires_grad=True)
            beta = Tensor(np.zeros(c_out), requires_grad=True)
            self.encoder.append({"weight": w, "bias": b, "gamma": gamma, "beta": beta,
                                 "stride": config.strides[i], "padding": config.paddings[i]})

        # decoder mirrors the encoder back-to-front; block n consumes the
        # skip from encoder block N-n+1 (none for the first decoder block)
        n = config.n_blocks
        self.decoder = []
        for j in range(n):
            enc_i = n - 1 - j  # mirrored encoder block index
            c_out = in_channels[enc_i]
            c_in = config.channels[enc_i] + (config.channels[enc_i] if j > 0 else 0)
            stride = config.strides[enc_i]
            in_size = self.sizes[enc_i + 1]
            out_size = self.sizes[enc_i]
            padding, out_padding = [], []
            for axis in range(2):
                # out = (in - 1)*s - 2p + k + op  =>  2p - op = need
                need = (in_size[axis] - 1) * stride[axis] + config.kernel[axis] - out_size[axis]
                op = need % 2
                if need < 0 or op >= stride[axis]:
                    raise ConfigError(
                        f"{config.name}: decoder block {j + 1} cannot reach size "
                        f"{out_size[axis]} from {in_size[axis]} (stride {stride[axis]})"
                    )
                padding.append((need + op) // 2)
                out_padding.append(op)
            last = j == n - 1
            gain = 1.0 if last else _GAIN_LEAKY
            w, b = _conv_params(rng, c_out, c_in, kh, kw, gain, transpose=True)
            layer = {"weight": w, "bias": b, "stride": stride,
                     "padding": tuple(padding), "output_padding": tuple(out_padding),
                     "last": last}
            if not last:
                layer["gamma"] = Tensor(np.ones(c_out), requires_grad=True)
                layer["beta"] = Tensor(np.zeros(c_out), requires_grad=True)
            self.decoder.append(layer)

    @property
    def latent_shape(self) -> LatentShape:
        return self.config.latent_shape()

    def parameters(self):
        """Ordered (name, Tensor) pairs for every trainable parameter."""
        out = []
        for i, blk in enumerate(self.encoder):
            for key in ("weight", "bias", "gamma", "beta"):
                out.append((f"encoder.{i}.{key}", blk[key]))
        for j, blk in enumerate(self.decoder):
            keys = ("weight", "bias") if blk["last"] else ("weight", "bias", "gamma", "beta")
            for key in keys:
                out.append((f"decoder.{j}.{key}", blk[key]))
        return out

    def set_requires_grad(self, flag):
        for _, p in self.parameters():
            p.requires_grad = bool(flag)

    def set_parameter(self, name, tensor):
        """Swap in a parameter Tensor object (gradient-check plumbing)."""
        part, idx, key = name.split(".")
        blocks = self.encoder if part == "encoder" else self.decoder
        if tensor.shape != blocks[int(idx)][key].shape:
            raise ShapeError(f"set_parameter {name!r}: shape {tensor.shape} mismatch")
        blocks[int(idx)][key] = tensor

    def _check_input(self, x):
        t, f = self.config.input_shape
        if x.data.ndim == 2 and x.shape == (t, f):
            return tt.reshape(x, (1, 1, t, f)), "2d"
        if x.data.ndim == 3 and x.shape == (1, t, f):
            return tt.reshape(x, (1, 1, t, f)), "3d"
        if x.data.ndim == 4 and x.shape[1:] == (1, t, f):
            return x, "4d"
        raise ShapeError(
            f"{self.config.name}: expected input ({t}, {f}) (optionally with leading "
            f"batch/channel axes), got {x.shape}"
        )

    def _encode(self, x4):
        skips = []
        h = x4
        for blk in self.encoder:
            h = tt.conv2d(h, blk["weight"], blk["bias"], blk["stride"], blk["padding"])
            h = tt.instance_norm(h, blk["gamma"], blk["beta"])
            h = tt.leaky_relu(h, _LEAKY_SLOPE)
            skips.append(h)
        return h, skips[:-1]

    def _decode(self, latent, skips):
        h = latent
        for j, blk in enumerate(self.decoder):
            if j > 0:
                h = tt.concat([h, skips[-j]], axis=1)
            h = tt.conv2d_transpose(h, blk["weight"], blk["bias"], blk["stride"],
                                    blk["padding"], blk["output_padding"])
            if blk["last"]:
                h = tt.sigmoid(h)
            else:
                h = tt.instance_norm(h, blk["gamma"], blk["beta"])
                h = tt.leaky_relu(h, _LEAKY_SLOPE)
        return h

    def encode(self, mag):
        """Encoder only: latent tensor for the KD path."""
        x4, kind = self._check_input(tt.as_tensor(mag))
        latent, _ = self._encode(x4)
        return tt.reshape(latent, latent.shape[1:]) if kind != "4d" else latent

    def forward(self, mag):
        """Mask in (0,1) shaped like the input, plus the encoder latent."""
        x4, kind = self._check_input(tt.as_tensor(mag))
        latent, skips = self._encode(x4)
        mask = self._decode(latent, skips)
        if kind == "4d":
            return mask, latent
        t, f = self.config.input_shape
        shape = (t, f) if kind == "2d" else (1, t, f)
        return tt.reshape(mask, shape), tt.reshape(latent, latent.shape[1:])

    __call__ = forward


def build_model(config: ModelConfig, seed=0) -> UNetModel:
    return UNetModel(config, seed=seed)


# ---------------------------------------------------------------------------
# bottleneck adapter
# ---------------------------------------------------------------------------

class BottleneckAdapter:
    """Stacked per-axis affine maps aligning a teacher latent to a student latent.

    One map per mismatched axis, applied in C, H, W order; no nonlinearity or
    normalization between maps, so the adapter is affine (exactly linear with
    biases zeroed).
    """

    AXIS_NAMES = ("C", "H", "W")

    def __init__(self, teacher_shape: LatentShape, student_shape: LatentShape, seed=0):
        self.teacher_shape = teacher_shape
        self.student_shape = student_shape
        rng = np.random.default_rng([seed, 0xB07])
        self.maps = []
        tdims = list(teacher_shape.as_tuple())
        sdims = student_shape.as_tuple()
        for axis in range(3):
            if tdims[axis] == sdims[axis]:
                continue
            fan_in = tdims[axis]
            w = Tensor(_kaiming_uniform(rng, (sdims[axis], fan_in), fan_in, 1.0),
                       requires_grad=True)
            b = Tensor(np.zeros(sdims[axis]), requires_grad=True)
            self.maps.append({"axis": axis, "weight": w, "bias": b})
            tdims[axis] = sdims[axis]

    @property
    def matched_axes(self):
        return tuple(self.AXIS_NAMES[m["axis"]] for m in self.maps)

    def parameters(self):
        out = []
        for m in self.maps:
            name = self.AXIS_NAMES[m["axis"]]
            out.append((f"bottleneck.{name}.weight", m["weight"]))
            out.append((f"bottleneck.{name}.bias", m["bias"]))
        return out

    def set_requires_grad(self, flag):
        for _, p in self.parameters():
            p.requires_grad = bool(flag)

    def set_parameter(self, name, tensor):
        """Swap in a parameter Tensor object (gradient-check plumbing)."""
        _, axis_name, key = name.split(".")
        for m in self.maps:
            if self.AXIS_NAMES[m["axis"]] == axis_name:
                if tensor.shape != m[key].shape:
                    raise ShapeError(f"set_parameter {name!r}: shape {tensor.shape} mismatch")
                m[key] = tensor
                return
        raise ShapeError(f"set_parameter: no bottleneck map for axis {axis_name!r}")

    def forward(self, latent):
        latent = tt.as_tensor(latent)
        batched = latent.data.ndim == 4
        if tuple(latent.shape[1 if batched else 0:]) != self.teacher_shape.as_tuple():
            raise ShapeError(
                f"bottleneck expects teacher latent {self.teacher_shape}, got {latent.shape}"
            )
        h = latent
        for m in self.maps:
            axis = m["axis"] + (1 if batched else 0)
            h = tt.axis_linear(h, m["weight"], m["bias"], axis)
        return h

    __call__ = forward


def build_bottleneck(teacher_shape, student_shape, seed=0) -> BottleneckAdapter:
    t = teacher_shape if isinstance(teacher_shape, LatentShape) else LatentShape(*teacher_shape)
    s = student_shape if isinstance(student_shape, LatentShape) else LatentShape(*student_shape)
    if min(t.as_tuple() + s.as_tuple()) < 1:
        raise ShapeError(f"latent shapes must be positive: {t} -> {s}")
    return BottleneckAdapter(t, s, seed=seed)


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

def count_params(model) -> int:
    """Exact number of trainable scalars."""
    return int(sum(p.size for _, p in model.parameters()))


def count_mops(model, input_shape=None) -> float:
    """Millions of arithmetic ops for one forward pass.

    Convention: one multiply-accumulate = 2 ops; bias adds, normalization
    (~6 ops/element) and activations (1 op/element) are included.
    """
    cfg = model.config
    kh, kw = cfg.kernel
    sizes = cfg.encoder_sizes() if input_shape is None else _sizes_for(cfg, input_shape)
    in_channels = [1] + list(cfg.channels[:-1])
    ops = 0.0
    for i, c_out in enumerate(cfg.channels):
        oh, ow = sizes[i + 1]
        elems = c_out * oh * ow
        ops += elems * (2 * in_channels[i] * kh * kw + 1)  # MACs + bias
        ops += elems * 7  # instance norm + leaky relu
    n = cfg.n_blocks
    for j in range(n):
        enc_i = n - 1 - j
        c_out = in_channels[enc_i]
        c_in = cfg.channels[enc_i] + (cfg.channels[enc_i] if j > 0 else 0)
        oh, ow = sizes[enc_i]
        elems = c_out * oh * ow
        ops += elems * (2 * c_in * kh * kw + 1)
        ops += elems * (4 if j == n - 1 else 7)  # sigmoid, or norm + relu
    return ops / 1e6


def _sizes_for(cfg, input_shape):
    probe = ModelConfig(cfg.name, tuple(input_shape), cfg.kernel, cfg.channels,
                        cfg.strides, cfg.paddings)
    return probe.encoder_sizes()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"DKDCKPT\n"


def save_checkpoint(path, model, kind="unet", extra=None):
    """Write a versioned container: JSON manifest + packed float64 arrays.

    Arrays are stored little-endian in manifest order; the manifest records
    every parameter's name and shape so loaders can validate byte counts.
    """
    params = model.parameters()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "params": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "extra": extra or {},
    }
    if kind == "unet":
        manifest["config"] = model.config.to_dict()
    elif kind == "bottleneck":
        manifest["teacher_shape"] = list(model.teacher_shape.as_tuple())
        manifest["student_shape"] = list(model.student_shape.as_tuple())
    header = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def _read_container(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    n = int.from_bytes(blob[len(_MAGIC) : len(_MAGIC) + 8], "little")
    start = len(_MAGIC) + 8
    try:
        manifest = json.loads(blob[start : start + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {manifest.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    payload = blob[start + n :]
    expected = sum(int(np.prod(e["shape"])) for e in manifest["params"]) * 8
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes but the manifest "
            f"declares {expected} (params: {len(manifest['params'])})"
        )
    return manifest, payload


def _unpack(manifest, payload):
    arrays, offset = {}, 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
        offset += nbytes
    return arrays


def load_checkpoint(path, seed=0):
    """Rebuild the saved model (UNetModel or BottleneckAdapter) plus its extras."""
    manifest, payload = _read_container(path)
    arrays = _unpack(manifest, payload)
    if manifest["kind"] == "unet":
        model = UNetModel(ModelConfig.from_dict(manifest["config"]), seed=seed)
    elif manifest["kind"] == "bottleneck":
        model = BottleneckAdapter(
            LatentShape(*manifest["teacher_shape"]),
            LatentShape(*manifest["student_shape"]),
            seed=seed,
        )
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {manifest['kind']!r}")
    for name, p in model.parameters():
        if name not in arrays:
            raise CheckpointError(f"{path}: manifest lacks parameter {name!r}")
        if arrays[name].shape != p.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                f"model expects {p.shape}"
            )
        p.data = arrays[name].copy()
    return model, manifest.get("extra", {})


def params_digest(model):
    """Stable byte-level digest of all parameters (frozen-teacher checks)."""
    import hashlib

    h = hashlib.sha256()
    for name, p in model.parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()
