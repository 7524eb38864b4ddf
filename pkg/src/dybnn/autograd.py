"""Minimal reverse-mode differentiation over numpy arrays.

Every differentiable op builds its output through :func:`_result`, which links
the output to its parents and to a backward rule looked up by ``op_id`` in
:data:`GRAD_RULES`. Only the op set used by the models in this package is
provided.

The sign binarizer (:func:`sign_ste`) has a thread-local *policy* so gradient
checks can swap its forward/backward behaviour without touching model code:

``"ste"``        sign forward, clipped straight-through backward (default)
``"surrogate"``  hard-tanh forward, same backward (so backward is exact)
``"detached"``   sign forward, zero backward (true a.e. derivative)

Independently, :func:`record_signs` / :func:`replay_signs` capture and replay
sign outputs so a perturbed forward sees exactly the same binary pattern.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ArgumentError, DimensionError

STE_CLIP = 1.0


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.sign_mode = "ste"
        self.tape = None
        self.replay = None


_state = _State()


def get_default_dtype():
    return _state.dtype


def set_default_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ArgumentError(f"unsupported compute dtype {dtype}; use float32 or float64")
    _state.dtype = dtype.type


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the compute dtype (64-bit verification mode)."""
    old = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


@contextlib.contextmanager
def sign_policy(mode: str):
    if mode not in ("ste", "surrogate", "detached"):
        raise ArgumentError(f"unknown sign policy {mode!r}")
    old = _state.sign_mode
    _state.sign_mode = mode
    try:
        yield
    finally:
        _state.sign_mode = old


@contextlib.contextmanager
def record_signs():
    """Collect every sign output produced inside the block, in call order."""
    tape: list[np.ndarray] = []
    old = _state.tape
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = old


@contextlib.contextmanager
def replay_signs(tape):
    """Make sign sites return the recorded outputs instead of recomputing."""
    old = _state.replay
    _state.replay = iter(tape)
    try:
        yield
    finally:
        _state.replay = old


# --------------------------------------------------------------------------
# registry


class GradRule(NamedTuple):
    op_id: str
    backward: Callable


GRAD_RULES: dict[str, GradRule] = {}


def register_grad(op_id: str):
    def deco(fn):
        if op_id in GRAD_RULES:
            raise ArgumentError(f"grad rule {op_id!r} registered twice")
        GRAD_RULES[op_id] = GradRule(op_id, fn)
        return fn

    return deco


@dataclass
class Node:
    op_id: str
    parents: tuple
    saved: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# tensor


class Tensor:
    """Dense real-valued array with optional gradient storage."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _state.dtype
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    # -- introspection
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- backward
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(f"gradient shape {grad.shape} != tensor shape {self.shape}")
        order = _toposort(self)
        grads = {id(self): grad}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            node = t._node
            if node is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            pgrads = GRAD_RULES[node.op_id].backward(node, g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise DimensionError(
                        f"rule {node.op_id!r} returned grad {pg.shape} for input {p.shape}"
                    )
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg
            # free saved activations once consumed
            t._node = None

    # -- operators
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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def abs(self):
        return tabs(self)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data, op_id, parents, **saved):
    out = Tensor(data, dtype=data.dtype)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = Node(op_id, tuple(parents), saved)
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _result(a.data + b.data, "add", (a, b))


@register_grad("add")
def _add_grad(node, g):
    a, b = node.parents
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def sub(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _result(a.data - b.data, "sub", (a, b))


@register_grad("sub")
def _sub_grad(node, g):
    a, b = node.parents
    return unbroadcast(g, a.shape), -unbroadcast(g, b.shape)


def mul(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _result(a.data * b.data, "mul", (a, b))


@register_grad("mul")
def _mul_grad(node, g):
    a, b = node.parents
    ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def div(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _result(a.data / b.data, "div", (a, b))


@register_grad("div")
def _div_grad(node, g):
    a, b = node.parents
    ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
    gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
    return ga, gb


def neg(a):
    return _result(-a.data, "neg", (a,))


@register_grad("neg")
def _neg_grad(node, g):
    return (-g,)


def tabs(a):
    return _result(np.abs(a.data), "abs", (a,))


@register_grad("abs")
def _abs_grad(node, g):
    (a,) = node.parents
    return (g * np.sign(a.data),)


def relu(a):
    return _result(np.maximum(a.data, 0), "relu", (a,))


@register_grad("relu")
def _relu_grad(node, g):
    (a,) = node.parents
    return (g * (a.data > 0),)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return _result(0.5 * x * (1.0 + t), "gelu", (a,), t=t)


@register_grad("gelu")
def _gelu_grad(node, g):
    (a,) = node.parents
    x, t = a.data, node.saved["t"]
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)


# --------------------------------------------------------------------------
# shape / reduction


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _result(np.matmul(a.data, b.data), "matmul", (a, b))


@register_grad("matmul")
def _matmul_grad(node, g):
    a, b = node.parents
    ga = gb = None
    if a.requires_grad:
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if b.requires_grad:
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return ga, gb


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    return _result(a.data.sum(axis=axes, keepdims=keepdims), "sum", (a,), axes=axes, keepdims=keepdims)


def _expand_to(g, shape, axes, keepdims):
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


@register_grad("sum")
def _sum_grad(node, g):
    (a,) = node.parents
    return (np.array(_expand_to(g, a.shape, node.saved["axes"], node.saved["keepdims"])),)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return _result(
        a.data.mean(axis=axes, keepdims=keepdims), "mean", (a,), axes=axes, keepdims=keepdims, count=count
    )


@register_grad("mean")
def _mean_grad(node, g):
    (a,) = node.parents
    s = node.saved
    return (_expand_to(g, a.shape, s["axes"], s["keepdims"]) / s["count"],)


def reshape(a, shape):
    return _result(a.data.reshape(shape), "reshape", (a,))


@register_grad("reshape")
def _reshape_grad(node, g):
    (a,) = node.parents
    return (g.reshape(a.shape),)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    return _result(a.data.transpose(axes), "transpose", (a,), axes=tuple(axes))


@register_grad("transpose")
def _transpose_grad(node, g):
    return (g.transpose(np.argsort(node.saved["axes"])),)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), sizes=sizes, axis=axis)


@register_grad("concat")
def _concat_grad(node, g):
    bounds = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, bounds, axis=node.saved["axis"]))


# --------------------------------------------------------------------------
# normalisation / probabilities


def softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    return _result(y, "softmax", (a,), y=y, axis=axis)


@register_grad("softmax")
def _softmax_grad(node, g):
    y, axis = node.saved["y"], node.saved["axis"]
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def cross_entropy(logits, labels, reduction="mean"):
    """Softmax cross-entropy against integer labels."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy wants (B, K) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    picked = x[np.arange(len(labels)), labels]
    per = lse - picked
    if reduction == "mean":
        val, scale = per.mean(), 1.0 / len(labels)
    elif reduction == "sum":
        val, scale = per.sum(), 1.0
    else:
        raise ArgumentError(f"unknown reduction {reduction!r}")
    p = np.exp(x - lse[:, None])
    return _result(np.asarray(val, dtype=x.dtype), "cross_entropy", (logits,), p=p, labels=labels, scale=scale)


@register_grad("cross_entropy")
def _ce_grad(node, g):
    p = node.saved["p"].copy()
    p[np.arange(len(node.saved["labels"])), node.saved["labels"]] -= 1.0
    return (p * (node.saved["scale"] * g),)


def layer_norm(x, weight, bias, eps=1e-5):
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    return _result(xhat * weight.data + bias.data, "layer_norm", (x, weight, bias), xhat=xhat, inv=inv)


@register_grad("layer_norm")
def _ln_grad(node, g):
    x, w, b = node.parents
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    gw = unbroadcast(g * xhat, w.shape) if w.requires_grad else None
    gb = unbroadcast(g, b.shape) if b.requires_grad else None
    gx = None
    if x.requires_grad:
        d = g * w.data
        n = x.shape[-1]
        gx = inv / n * (n * d - d.sum(-1, keepdims=True) - xhat * (d * xhat).sum(-1, keepdims=True))
    return gx, gw, gb


def batch_norm2d(x, weight, bias, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalisation over (N, H, W); running buffers are updated in place."""
    if x.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"batch_norm2d: input {x.shape} vs {weight.shape[0]} channels")
    axes = (0, 2, 3)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(-1) * (m / max(m - 1, 1))
    else:
        mu = running_mean.reshape(1, -1, 1, 1).astype(x.dtype)
        var = running_var.reshape(1, -1, 1, 1).astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    w = weight.data.reshape(1, -1, 1, 1)
    out = xhat * w + bias.data.reshape(1, -1, 1, 1)
    return _result(out, "batch_norm2d", (x, weight, bias), xhat=xhat, inv=inv, training=training)


@register_grad("batch_norm2d")
def _bn_grad(node, g):
    x, w, b = node.parents
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    axes = (0, 2, 3)
    gw = (g * xhat).sum(axis=axes) if w.requires_grad else None
    gb = g.sum(axis=axes) if b.requires_grad else None
    gx = None
    if x.requires_grad:
        d = g * w.data.reshape(1, -1, 1, 1)
        if node.saved["training"]:
            m = x.data.size // x.shape[1]
            gx = inv / m * (m * d - d.sum(axis=axes, keepdims=True) - xhat * (d * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = d * inv
    return gx, gw, gb


# --------------------------------------------------------------------------
# convolution / pooling


def _pad(x, padding, value):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _out_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def im2col(x, kh, kw, stride=1, padding=0, pad_value=0.0):
    """Lower an NCHW array to patch rows of shape (N*OH*OW, C*KH*KW)."""
    n, c, h, w = x.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})")
    xp = _pad(x, padding, pad_value)
    oh, ow = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return cols, oh, ow


def _col2im(dcols, x_shape, kh, kw, stride, padding, oh, ow):
    n, c, h, w = x_shape
    d = dcols.reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(x, weight, bias=None, stride=1, padding=0, pad_value=0.0):
    """2-D cross-correlation via patch-matrix lowering; ``pad_value`` fills the border."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIHW weight")
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, weight expects {c}")
    cols, oh, ow = im2col(x.data, kh, kw, stride, padding, pad_value)
    out = cols @ weight.data.reshape(o, -1).T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[0], oh, ow, o).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(
        np.ascontiguousarray(out), "conv2d", parents, cols=cols, stride=stride, padding=padding, oh=oh, ow=ow
    )


@register_grad("conv2d")
def _conv_grad(node, g):
    x, w = node.parents[:2]
    s = node.saved
    o, c, kh, kw = w.shape
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
    gw = (g2.T @ s["cols"]).reshape(w.shape) if w.requires_grad else None
    gx = None
    if x.requires_grad:
        dcols = g2 @ w.data.reshape(o, -1)
        gx = _col2im(dcols, x.shape, kh, kw, s["stride"], s["padding"], s["oh"], s["ow"])
    out = [gx, gw]
    if len(node.parents) == 3:
        out.append(g2.sum(axis=0))
    return tuple(out)


def max_pool2d(x, kernel, stride, padding=0):
    n, c, h, w = x.shape
    xp = _pad(x.data, padding, -np.inf)
    oh, ow = _out_size(h, kernel, stride, padding), _out_size(w, kernel, stride, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return _result(out, "max_pool2d", (x,), arg=arg, kernel=kernel, stride=stride, padding=padding)


@register_grad("max_pool2d")
def _maxpool_grad(node, g):
    (x,) = node.parents
    s = node.saved
    k, st, p = s["kernel"], s["stride"], s["padding"]
    n, c, h, w = x.shape
    oh, ow = g.shape[2:]
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=g.dtype)
    for idx in range(k * k):
        i, j = divmod(idx, k)
        dxp[:, :, i : i + st * oh : st, j : j + st * ow : st] += g * (s["arg"] == idx)
    if p:
        dxp = dxp[:, :, p:-p, p:-p]
    return (dxp,)


def avg_pool2d(x, kernel):
    """Non-overlapping average pooling (stride == kernel)."""
    n, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by {kernel}")
    out = x.data.reshape(n, c, h // kernel, kernel, w // kernel, kernel).mean(axis=(3, 5))
    return _result(out, "avg_pool2d", (x,), kernel=kernel)


@register_grad("avg_pool2d")
def _avgpool_grad(node, g):
    k = node.saved["kernel"]
    return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)


# --------------------------------------------------------------------------
# binarisation primitives


def ste_sign_grad(upstream, saved_input, clip=STE_CLIP):
    """Straight-through gradient: pass ``upstream`` where ``|saved_input| <= clip``."""
    up = upstream.data if isinstance(upstream, Tensor) else np.asarray(upstream)
    xs = saved_input.data if isinstance(saved_input, Tensor) else np.asarray(saved_input)
    if up.shape != xs.shape:
        raise DimensionError(f"ste_sign_grad: upstream {up.shape} vs input {xs.shape}")
    if not clip > 0:
        raise ArgumentError("clip must be positive")
    return np.where(np.abs(xs) <= clip, up, np.zeros((), dtype=up.dtype))


def sign_ste(x, threshold=None, clip=STE_CLIP):
    """Binarize ``x - threshold`` to +1 (> 0) / -1 (<= 0).

    Backward passes the upstream gradient where ``|x - threshold| <= clip``; the
    threshold receives the negated masked gradient summed over its broadcast.
    """
    parents = (x,) if threshold is None else (x, as_tensor(threshold, x))
    diff = x.data if threshold is None else x.data - parents[1].data
    if _state.replay is not None:
        out = next(_state.replay)
    elif _state.sign_mode == "surrogate":
        out = np.clip(diff, -1.0, 1.0)
    else:
        one = np.ones((), dtype=diff.dtype)
        out = np.where(diff > 0, one, -one)
    if _state.tape is not None:
        _state.tape.append(out)
    return _result(out, "sign_ste", parents, diff=diff, clip=clip, mode=_state.sign_mode)


@register_grad("sign_ste")
def _sign_grad(node, g):
    s = node.saved
    if s["mode"] == "detached":
        gm = np.zeros_like(g)
    else:
        gm = ste_sign_grad(g, s["diff"], s["clip"])
    gx = unbroadcast(gm, node.parents[0].shape)
    if len(node.parents) == 1:
        return (gx,)
    return gx, -unbroadcast(gm, node.parents[1].shape)


def rprelu(x, beta, gamma, zeta):
    """Shifted PReLU: x-gamma+zeta above gamma, beta*(x-gamma)+zeta below."""
    x, beta, gamma, zeta = (as_tensor(t, x) for t in (x, beta, gamma, zeta))
    d = x.data - gamma.data
    pos = d > 0
    out = np.where(pos, d, beta.data * d) + zeta.data
    return _result(out, "rprelu", (x, beta, gamma, zeta), d=d, pos=pos)


@register_grad("rprelu")
def _rprelu_grad(node, g):
    x, beta, gamma, zeta = node.parents
    d, pos = node.saved["d"], node.saved["pos"]
    dx = g * np.where(pos, 1.0, beta.data)
    return (
        unbroadcast(dx, x.shape),
        unbroadcast(g * np.where(pos, 0.0, d), beta.shape),
        -unbroadcast(dx, gamma.shape),
        unbroadcast(g, zeta.shape),
    )
