"""Module/parameter plumbing and the full-precision layers."""

from __future__ import annotations

import contextlib
import threading
import zlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError, NumericFault


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, parameter name).

    Initial values therefore do not depend on construction order, so two
    models that share parameter names share their initial values.
    """
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def uniform(bound):
    return lambda rng, shape: rng.uniform(-bound, bound, size=shape)


def constant(value):
    return lambda rng, shape: np.full(shape, value)


zeros = constant(0.0)
ones = constant(1.0)


def normal(std):
    return lambda rng, shape: rng.normal(0.0, std, size=shape)


class Parameter(Tensor):
    __slots__ = ("init",)

    def __init__(self, shape, init=zeros):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init


# --------------------------------------------------------------------------
# layer observation: shape probes and finite checks


class _Observer(threading.local):
    def __init__(self):
        self.shapes = None
        self.check_finite = False
        self.thresholds = None


_obs = _Observer()


def observe(name, t):
    """Called by layers at the point their declared output is produced."""
    if name is None:
        return
    if _obs.shapes is not None:
        _obs.shapes[name] = tuple(t.shape[1:])
    if _obs.check_finite and not np.all(np.isfinite(t.data)):
        raise NumericFault("non-finite activation", layer=name)


def observe_thresholds(name, alpha):
    if _obs.thresholds is not None and name is not None:
        _obs.thresholds.setdefault(name, []).append(np.array(alpha))


@contextlib.contextmanager
def shape_probe():
    """Collect ``{layer name: per-sample output shape}`` during a forward pass."""
    old = _obs.shapes
    _obs.shapes = {}
    try:
        yield _obs.shapes
    finally:
        _obs.shapes = old


@contextlib.contextmanager
def finite_checks():
    old = _obs.check_finite
    _obs.check_finite = True
    try:
        yield
    finally:
        _obs.check_finite = old


@contextlib.contextmanager
def threshold_probe():
    """Collect the thresholds each binarizer applied, keyed by layer name."""
    old = _obs.thresholds
    _obs.thresholds = {}
    try:
        yield _obs.thresholds
    finally:
        _obs.thresholds = old


# --------------------------------------------------------------------------


class Module:
    """Container of parameters, buffers and child modules.

    Buffers are non-trainable numpy arrays listed in ``_buffers``.
    """

    _buffers: tuple = ()

    def __init__(self):
        self.training = True
        self.name = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key in self._buffers:
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def init_parameters(self, seed: int):
        dtype = ag.get_default_dtype()
        for name, p in self.named_parameters():
            p.data = np.asarray(p.init(param_rng(seed, name), p.shape), dtype=dtype)
            p.grad = None
        return self

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        out = {n: p.data.copy() for n, p in self.named_parameters()}
        out.update({n: b.copy() for n, b in self.named_buffers()})
        return out

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if strict and (missing or unexpected):
            raise DimensionError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            if name in own:
                if own[name].shape != value.shape:
                    raise DimensionError(f"{name}: stored {value.shape} vs model {own[name].shape}")
                own[name].data = np.array(value, dtype=own[name].dtype)
            elif name in bufs:
                bufs[name][...] = value

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter((out_features, in_features), uniform(1.0 / np.sqrt(in_features)))
        self.bias = Parameter((out_features,), zeros) if bias else None

    def forward(self, x):
        y = x @ self.weight.transpose()
        if self.bias is not None:
            y = y + self.bias
        observe(self.name, y)
        return y


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter((out_ch, in_ch, kernel, kernel), uniform(1.0 / np.sqrt(fan_in)))
        self.bias = Parameter((out_ch,), zeros) if bias else None

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter((channels,), ones)
        self.bias = Parameter((channels,), zeros)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x):
        y = ag.batch_norm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )
        observe(self.name, y)
        return y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter((dim,), ones)
        self.bias = Parameter((dim,), zeros)

    def forward(self, x):
        y = ag.layer_norm(x, self.weight, self.bias, self.eps)
        observe(self.name, y)
        return y


def name_layers(root: Module):
    """Give every module a dotted name (used by observation hooks)."""
    root.name = root.name or "model"
    stack = [("", root)]
    while stack:
        prefix, mod = stack.pop()
        for key, child in mod.children():
            full = prefix + key
            if child.name is None:
                child.name = full
            stack.append((full + ".", child))
    return root
