"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation the models and losses need lives here:
elementwise arithmetic (broadcasting, with gradients unbroadcast on the way
back), reductions, activations, 2-D convolution and its transpose, instance
normalization, and a handful of structural ops (reshape, concat, per-axis
linear maps).

Computation is recorded as a graph of `Node` records hanging off result
tensors; `backward(loss)` replays it in reverse topological order, visiting
each node exactly once, and then marks the tape consumed so a second backward
raises instead of silently accumulating.

Convolution ops accept an optional leading batch axis (N, C, H, W) on top of
the documented (C, H, W) form. The patch gather/scatter inner loops are
delegated to `denoisekd.kernels` (compiled or numpy backend, bit-identical).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import NumericsError, ShapeError, TapeError

_LN10 = math.log(10.0)


class Node:
    """One executed differentiable op: inputs, output, and a backward closure."""

    __slots__ = ("name", "inputs", "output", "backward_fn", "released")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.released = False


class Tensor:
    """A float64 n-d array, optionally tracking gradients.

    `data` is owned and must not be mutated after creation (except by the
    optimizer, which owns parameter tensors). `grad` is populated by
    `backward` for every tensor on the tape with requires_grad=True.
    """

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def detach(self):
        """A view of the same data with no tape attached."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _attach(name, inputs, out, backward_fn):
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(name, inputs, out, backward_fn)
    return out


def backward(loss):
    """Populate `.grad` on every gradient-requiring tensor reachable from `loss`.

    The loss must be a scalar. The traversed tape is consumed: a second
    backward through any of its nodes raises TapeError.
    """
    if not isinstance(loss, Tensor):
        raise TapeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not require grad; nothing to backpropagate")

    loss.grad = np.ones_like(loss.data)
    if loss.node is None:
        return

    # iterative post-order topological sort over the node graph
    topo = []
    seen = set()
    stack = [(loss.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.released:
            raise TapeError(f"tape already consumed at op '{node.name}'; rebuild the graph")
        stack.append((node, True))
        for t in node.inputs:
            if t.node is not None:
                stack.append((t.node, False))

    for node in reversed(topo):
        g = node.output.grad
        node.released = True
        if g is None:
            continue
        grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            t.grad = gi if t.grad is None else t.grad + gi
        # drop saved context so activations can be freed promptly
        node.backward_fn = None
        node.inputs = ()
        node.output = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _unbroadcast(g, shape):
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(name, a, b, fwd, bwd):
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are incompatible") from None
    out = Tensor(fwd(a.data, b.data))

    def backward_fn(g):
        ga, gb = bwd(g, a.data, b.data)
        return (
            _unbroadcast(ga, a.shape) if ga is not None else None,
            _unbroadcast(gb, b.shape) if gb is not None else None,
        )

    return _attach(name, (a, b), out, backward_fn)


def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y: (g, g))


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y: (g, -g))


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, x, y: (g * y, g * x))


def div(a, b):
    """Elementwise division; IEEE semantics on zero denominators (may yield inf)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return _binary("div", a, b, np.divide,
                       lambda g, x, y: (g / y, -g * x / (y * y)))


def elementwise(op_kind, a, b):
    """Dispatch by name; op_kind in {add, sub, mul, div}."""
    try:
        op = {"add": add, "sub": sub, "mul": mul, "div": div}[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return op(a, b)


def neg(a):
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _attach("neg", (a,), out, lambda g: (-g,))


# ---------------------------------------------------------------------------
# reductions and linear algebra
# ---------------------------------------------------------------------------

def _restore_axes(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        expanded = list(g.shape)
        for a in sorted(axes):
            expanded.insert(a, 1)
        g = g.reshape(expanded)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def backward_fn(g):
        return (np.ascontiguousarray(_restore_axes(g, shape, axis, keepdims)),)

    return _attach("sum", (a,), out, backward_fn)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.shape
    count = a.size if axis is None else a.data.size // out.data.size

    def backward_fn(g):
        return (np.ascontiguousarray(_restore_axes(g, shape, axis, keepdims)) / count,)

    return _attach("mean", (a,), out, backward_fn)


def dot(a, b):
    """Dot product over flattened elements; operands must have equal size."""
    a, b = as_tensor(a), as_tensor(b)
    if a.size != b.size:
        raise ShapeError(f"dot: element counts differ ({a.shape} vs {b.shape})")
    out = Tensor(float(np.dot(a.data.ravel(), b.data.ravel())))

    def backward_fn(g):
        s = float(g)
        return (s * b.data.reshape(a.shape), s * a.data.reshape(b.shape))

    return _attach("dot", (a, b), out, backward_fn)


def l2_norm(a):
    """Euclidean norm over all elements: sqrt(dot(a, a))."""
    return sqrt(dot(a, a))


def sqrt(a):
    a = as_tensor(a)
    root = np.sqrt(a.data)
    out = Tensor(root)

    def backward_fn(g):
        return (g / (2.0 * root),)

    return _attach("sqrt", (a,), out, backward_fn)


def log10(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericsError("log10 of a non-positive value")
    out = Tensor(np.log10(a.data))

    def backward_fn(g):
        return (g / (a.data * _LN10),)

    return _attach("log10", (a,), out, backward_fn)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where unclamped."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data > lo) & (a.data < hi)

    def backward_fn(g):
        return (g * inside,)

    return _attach("clip", (a,), out, backward_fn)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    old = a.shape

    def backward_fn(g):
        return (g.reshape(old),)

    return _attach("reshape", (a,), out, backward_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    split_at = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, split_at, axis=axis))

    return _attach("concat", tuple(tensors), out, backward_fn)


def axis_linear(x, weight, bias, axis):
    """Affine map along one axis: out[i, ...] = sum_j W[i, j] x[j, ...] + b[i].

    This is what a 1x1-kernel convolution acting along `axis` computes; it is
    the building block of the latent bottleneck adapter.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.data.ndim != 2:
        raise ShapeError(f"axis_linear: weight must be 2-D, got {weight.shape}")
    axis = axis % x.data.ndim
    if x.shape[axis] != weight.shape[1]:
        raise ShapeError(
            f"axis_linear: axis {axis} has extent {x.shape[axis]}, weight expects {weight.shape[1]}"
        )
    inputs = [x, weight]
    moved = np.moveaxis(x.data, axis, 0)
    out_data = np.moveaxis(np.tensordot(weight.data, moved, axes=([1], [0])), 0, axis)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"axis_linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        bshape = [1] * out_data.ndim
        bshape[axis] = -1
        out_data = out_data + bias.data.reshape(bshape)
        inputs.append(bias)
    out = Tensor(out_data)

    def backward_fn(g):
        gm = np.moveaxis(g, axis, 0)
        gx = np.moveaxis(np.tensordot(weight.data.T, gm, axes=([1], [0])), 0, axis)
        gw = gm.reshape(gm.shape[0], -1) @ moved.reshape(moved.shape[0], -1).T
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(gm.reshape(gm.shape[0], -1).sum(axis=1))
        return tuple(grads)

    return _attach("axis_linear", tuple(inputs), out, backward_fn)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def leaky_relu(a, slope=0.01):
    a = as_tensor(a)
    scale = np.where(a.data >= 0.0, 1.0, slope)
    out = Tensor(a.data * scale)

    def backward_fn(g):
        return (g * scale,)

    return _attach("leaky_relu", (a,), out, backward_fn)


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _attach("sigmoid", (a,), out, backward_fn)


def activation(kind, a, **kwargs):
    """Dispatch by name; kind in {leaky_relu, sigmoid}."""
    if kind == "leaky_relu":
        return leaky_relu(a, **kwargs)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _as_batched(t, what):
    if t.data.ndim == 3:
        return t.data[None], True
    if t.data.ndim == 4:
        return t.data, False
    raise ShapeError(f"{what} must be (C,H,W) or (N,C,H,W), got {t.shape}")


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)):
    """Strided 2-D cross-correlation.

    x: (C_in, H, W) or (N, C_in, H, W); weight: (C_out, C_in, kH, kW);
    bias: (C_out,) or None. Output spatial extents follow
    floor((S + 2p - k)/s) + 1.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _as_batched(x, "conv2d input")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-D, got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv2d: input has {xd.shape[1]} channels, weight expects {c_in}")
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d: strides must be >= 1, got {stride}")
    hp, wp = xd.shape[2] + 2 * ph, xd.shape[3] + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    out_h = conv_output_size(xd.shape[2], kh, sh, ph)
    out_w = conv_output_size(xd.shape[3], kw, sw, pw)

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = kernels.im2col(xp, kh, kw, sh, sw, out_h, out_w)
    w2 = weight.data.reshape(c_out, -1)
    out_data = np.matmul(w2, cols)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
        out_data = out_data + bias.data[:, None]
    out_data = out_data.reshape(xd.shape[0], c_out, out_h, out_w)
    out = Tensor(out_data[0] if squeeze else out_data)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        gb = g[None] if squeeze else g
        g2 = np.ascontiguousarray(gb.reshape(gb.shape[0], c_out, -1))
        gx = gw = gbias = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            gxp = kernels.col2im(np.ascontiguousarray(gcols), c_in, hp, wp,
                                 kh, kw, sh, sw, out_h, out_w)
            gx = gxp[:, :, ph:hp - ph, pw:wp - pw]
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        if weight.requires_grad:
            # batched GEMM beats einsum here: (N,C_out,L) x (N,L,K) -> sum over N
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gbias = g2.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gbias)

    return _attach("conv2d", inputs, out, backward_fn)


def conv_transpose_output_size(size, kernel, stride, padding, output_padding):
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def conv2d_transpose(x, weight, bias=None, stride=(1, 1), padding=(0, 0),
                     output_padding=(0, 0)):
    """Transposed 2-D convolution: the gradient-adjoint of conv2d.

    x: (C_in, H, W) or (N, C_in, H, W); weight: (C_in, C_out, kH, kW) — the
    same array a matching conv2d would use with its channel axes read in the
    opposite roles, so dot(conv2d(a, w), b) == dot(a, conv2d_transpose(b, w)).
    Output extents follow (S - 1)*s - 2p + k + output_padding.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xd, squeeze = _as_batched(x, "conv2d_transpose input")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose: weight must be 4-D, got {weight.shape}")
    c_in, c_out, kh, kw = weight.shape
    if xd.shape[1] != c_in:
        raise ShapeError(
            f"conv2d_transpose: input has {xd.shape[1]} channels, weight expects {c_in}"
        )
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    if oph >= sh or opw >= sw:
        raise ShapeError(f"conv2d_transpose: output_padding {output_padding} must be < stride {stride}")
    out_h = conv_transpose_output_size(xd.shape[2], kh, sh, ph, oph)
    out_w = conv_transpose_output_size(xd.shape[3], kw, sw, pw, opw)
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(
            f"conv2d_transpose: computed output extent ({out_h}x{out_w}) is not positive"
        )
    hp, wp = out_h + 2 * ph, out_w + 2 * pw

    n, _, in_h, in_w = xd.shape
    w2 = weight.data.reshape(c_in, -1)  # (C_in, C_out*kh*kw)
    x2 = np.ascontiguousarray(xd.reshape(n, c_in, in_h * in_w))
    cols = np.matmul(w2.T, x2)  # (N, C_out*kh*kw, in_h*in_w)
    yp = kernels.col2im(np.ascontiguousarray(cols), c_out, hp, wp,
                        kh, kw, sh, sw, in_h, in_w)
    out_data = yp[:, :, ph:hp - ph, pw:wp - pw]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d_transpose: bias shape {bias.shape} != ({c_out},)")
        out_data = out_data + bias.data[None, :, None, None]
    out = Tensor(np.ascontiguousarray(out_data[0] if squeeze else out_data))

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(g):
        gb = g[None] if squeeze else g
        gp = np.pad(gb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gx = gw = gbias = None
        gcols = None
        if x.requires_grad or weight.requires_grad:
            gcols = kernels.im2col(np.ascontiguousarray(gp), kh, kw, sh, sw, in_h, in_w)
        if x.requires_grad:
            gx = np.matmul(w2, gcols).reshape(n, c_in, in_h, in_w)
            gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        if weight.requires_grad:
            gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gbias = gb.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gbias)

    return _attach("conv2d_transpose", inputs, out, backward_fn)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def instance_norm(x, gamma, beta, eps=1e-5):
    """Per-channel spatial normalization: gamma * (x - mean)/sqrt(var + eps) + beta.

    Statistics are computed over the H, W axes of each (sample, channel) pair;
    H*W must be at least 2 for the variance to be meaningful.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd, squeeze = _as_batched(x, "instance_norm input")
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"instance_norm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    hw = xd.shape[2] * xd.shape[3]
    if hw < 2:
        raise ShapeError("instance_norm: H*W must be >= 2 (variance undefined)")
    mean = xd.mean(axis=(2, 3), keepdims=True)
    var = xd.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv_std
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = Tensor(out_data[0] if squeeze else out_data)

    def backward_fn(g):
        gb = g[None] if squeeze else g
        ggamma = (gb * xhat).sum(axis=(0, 2, 3))
        gbeta = gb.sum(axis=(0, 2, 3))
        gh = gb * gamma.data[None, :, None, None]
        gx = inv_std * (
            gh
            - gh.mean(axis=(2, 3), keepdims=True)
            - xhat * (gh * xhat).mean(axis=(2, 3), keepdims=True)
        )
        gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        return (gx, ggamma, gbeta)

    return _attach("instance_norm", (x, gamma, beta), out, backward_fn)
