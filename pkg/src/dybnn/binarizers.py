"""Activation and weight binarizers.

Layouts: convolutional activations are (B, C, H, W); token activations are
(B, N, D). Channel-wise thresholds vary along C (or D for tokens) and are
shared across spatial positions (or tokens); token-wise thresholds vary along
N and are shared across the embedding dimension.

All thresholds follow the tie rule ``x <= t -> -1``.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor, sign_ste
from .bitkernel import PackedBitMatrix, binary_conv2d, binary_gemm, pack_signs
from .errors import ArgumentError, ContractViolation, DimensionError
from .nn import Module, Parameter, constant, observe, observe_thresholds, uniform, zeros

CNN_GAMMA = 16
TRANSFORMER_GAMMA = 4


class _Strict(threading.local):
    enabled = False


_strict = _Strict()


@contextlib.contextmanager
def strict_binary_inputs():
    """Assert every binary layer receives exactly +-1 inputs."""
    old = _strict.enabled
    _strict.enabled = True
    try:
        yield
    finally:
        _strict.enabled = old


def _check_pm1(x, where):
    if _strict.enabled and ag._state.sign_mode != "surrogate":
        if not np.all(np.abs(x.data) == 1):
            raise ContractViolation(f"{where}: binary layer input is not +-1")


def squeeze_width(channels: int, gamma: int) -> int:
    """Hidden width of the threshold hyperfunction: max(1, round(C / gamma))."""
    if channels < 1 or gamma < 1:
        raise ArgumentError(f"channels and gamma must be >= 1 (got {channels}, {gamma})")
    return max(1, int(math.floor(channels / gamma + 0.5)))


# --------------------------------------------------------------------------
# parameter records


@dataclass
class StaticThresholds:
    a: np.ndarray


@dataclass
class DySignParams:
    """Hyperfunction weights: W1 squeezes (r x C), W2 expands (C x r)."""

    W1: object
    W2: object
    gamma: int = CNN_GAMMA
    use_gelu: bool = False
    mode: str = "channel"

    def __post_init__(self):
        if self.mode not in ("channel", "token"):
            raise ArgumentError(f"mode must be 'channel' or 'token', got {self.mode!r}")
        r, c = np.shape(_data(self.W1))
        if np.shape(_data(self.W2)) != (c, r):
            raise DimensionError(f"W2 must be {(c, r)}, got {np.shape(_data(self.W2))}")

    @property
    def size(self):
        return np.shape(_data(self.W1))[1]


@dataclass
class PReLUParams:
    beta: object
    gamma_shift: object
    zeta_shift: object
    dynamic: bool = False


@dataclass(eq=False)
class BinaryWeightMeta:
    alpha_w: float
    u: float
    packed: PackedBitMatrix


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# --------------------------------------------------------------------------
# functional forms


def _stat_axes(ndim, mode):
    if ndim == 4:
        if mode != "channel":
            raise DimensionError("token-wise thresholds need (B, N, D) input")
        return (2, 3), 1
    if ndim == 3:
        return ((1,), 2) if mode == "channel" else ((2,), 1)
    raise DimensionError(f"expected (B, C, H, W) or (B, N, D) input, got {ndim}-D")


def _broadcast_view(alpha, ndim, mode):
    """(B, L) or (L,) thresholds -> shape that broadcasts against the input."""
    if alpha.ndim == 1:
        alpha = alpha.reshape(1, -1)
    b, n = alpha.shape
    if ndim == 4:
        return alpha.reshape(b, n, 1, 1)
    return alpha.reshape(b, 1, n) if mode == "channel" else alpha.reshape(b, n, 1)


def sign(x):
    """+1 where x > 0, else -1; straight-through backward."""
    return sign_ste(as_tensor(x))


def rsign(x, t, mode="channel"):
    """Sign against a static per-channel (or per-token) threshold."""
    x = as_tensor(x)
    a = t.a if isinstance(t, StaticThresholds) else t
    a = as_tensor(a, x)
    _, axis = _stat_axes(x.ndim, mode)
    if a.ndim != 1 or a.shape[0] != x.shape[axis]:
        raise DimensionError(f"{a.shape[0] if a.ndim else 0} thresholds for {x.shape[axis]} channels")
    return sign_ste(x, _broadcast_view(a, x.ndim, mode))


def hyperfunction(stat, W1, W2, use_gelu=False):
    """Two bias-free linear maps, optional GELU between: stat (B, C) -> (B, C)."""
    h = stat @ as_tensor(W1, stat).transpose()
    if use_gelu:
        h = ag.gelu(h)
    return h @ as_tensor(W2, stat).transpose()


def dysign_thresholds(X, p: DySignParams):
    """Per-sample thresholds (B, L) from the global statistics of ``X``."""
    X = as_tensor(X)
    axes, axis = _stat_axes(X.ndim, p.mode)
    if X.shape[axis] != p.size:
        raise DimensionError(f"hyperfunction built for {p.size} {p.mode}s, input has {X.shape[axis]}")
    stat = ag.mean(X, axis=axes)
    return hyperfunction(stat, p.W1, p.W2, p.use_gelu)


def dysign(X, p: DySignParams):
    X = as_tensor(X)
    alpha = dysign_thresholds(X, p)
    return sign_ste(X, _broadcast_view(alpha, X.ndim, p.mode))


def _gap(X):
    if X.ndim != 4:
        raise DimensionError("PReLU shifts operate on (B, C, H, W) maps")
    return ag.mean(X, axis=(2, 3))


def dyprelu(X, p: PReLUParams, hyper=None):
    """Shifted PReLU; in dynamic mode the shifts come from ``hyper`` = (gamma_params, zeta_params)."""
    X = as_tensor(X)
    c = X.shape[1]
    beta = as_tensor(p.beta, X)
    if beta.shape != (c,):
        raise DimensionError(f"beta has shape {beta.shape}, input has {c} channels")
    if p.dynamic:
        if hyper is None:
            raise ArgumentError("dynamic PReLU needs hyperfunction parameters")
        hg, hz = hyper
        stat = _gap(X)
        g = hyperfunction(stat, hg.W1, hg.W2, hg.use_gelu).reshape(X.shape[0], c, 1, 1)
        z = hyperfunction(stat, hz.W1, hz.W2, hz.use_gelu).reshape(X.shape[0], c, 1, 1)
    else:
        g = as_tensor(p.gamma_shift, X)
        z = as_tensor(p.zeta_shift, X)
        if g.shape != (c,) or z.shape != (c,):
            raise DimensionError("shift vectors must match the channel count")
        g, z = g.reshape(1, c, 1, 1), z.reshape(1, c, 1, 1)
    return ag.rprelu(X, beta.reshape(1, c, 1, 1), g, z)


def binary_weight(W):
    """Differentiable (sign(W - mean(W)), mean(|W|)) pair."""
    W = as_tensor(W)
    u = ag.mean(W)
    signs = sign_ste(W, u)
    alpha = ag.mean(ag.tabs(W))
    return signs, alpha


def binarize_weights(W) -> BinaryWeightMeta:
    """Zero-mean sign pattern with scale mean(|W|), packed row-wise."""
    W = _data(W)
    if W.size == 0:
        raise ArgumentError("cannot binarize an empty weight")
    W2 = W.reshape(W.shape[0], -1) if W.ndim > 1 else W.reshape(1, -1)
    with ag.no_grad():
        signs, alpha = binary_weight(Tensor(W2))
    u = float(W.mean())
    return BinaryWeightMeta(alpha_w=float(alpha.data), u=u, packed=pack_signs(signs.data))


def shifted_attention_sign(P, s, atol=1e-5):
    """sign(P - s) for row-stochastic attention ``P``."""
    P = as_tensor(P)
    rows = P.data.sum(axis=-1)
    if not np.allclose(rows, 1.0, rtol=0, atol=atol):
        raise ContractViolation(f"attention rows must sum to 1 (max deviation {np.abs(rows - 1).max():.2e})")
    s = as_tensor(s, P)
    if not np.all(np.isfinite(s.data)):
        raise ContractViolation("attention shift must be finite")
    return sign_ste(P, s)


# --------------------------------------------------------------------------
# modules


def _hyper_init(init, c):
    if init == "zeros":
        return zeros
    if init == "uniform":
        return uniform(1.0 / math.sqrt(c))
    raise ArgumentError(f"unknown hyperfunction init {init!r}")


class Hyperfunction(Module):
    def __init__(self, size, gamma, use_gelu=False, init="uniform"):
        super().__init__()
        r = squeeze_width(size, gamma)
        self.size, self.gamma, self.use_gelu = size, gamma, use_gelu
        self.W1 = Parameter((r, size), _hyper_init(init, size))
        self.W2 = Parameter((size, r), _hyper_init(init, size))

    def forward(self, stat):
        return hyperfunction(stat, self.W1, self.W2, self.use_gelu)


class Sign(Module):
    kind = "sign"

    def forward(self, x):
        y = sign(x)
        observe(self.name, y)
        return y


class RSign(Module):
    kind = "rsign"

    def __init__(self, size, mode="channel"):
        super().__init__()
        self.mode = mode
        self.threshold = Parameter((size,), zeros)

    def forward(self, x):
        y = rsign(x, self.threshold, self.mode)
        observe_thresholds(self.name, np.broadcast_to(self.threshold.data, (x.shape[0], self.threshold.shape[0])))
        observe(self.name, y)
        return y


class DySign(Module):
    kind = "dysign"

    def __init__(self, size, gamma=CNN_GAMMA, mode="channel", use_gelu=False, init="uniform"):
        super().__init__()
        self.mode = mode
        self.hyper = Hyperfunction(size, gamma, use_gelu, init)

    @property
    def params(self):
        h = self.hyper
        return DySignParams(h.W1, h.W2, h.gamma, h.use_gelu, self.mode)

    def forward(self, x):
        alpha = dysign_thresholds(x, self.params)
        observe_thresholds(self.name, alpha.data)
        y = sign_ste(x, _broadcast_view(alpha, x.ndim, self.mode))
        observe(self.name, y)
        return y


def make_binarizer(kind, size, gamma, mode="channel", use_gelu=False, init="uniform"):
    if kind == "sign":
        return Sign()
    if kind == "rsign":
        return RSign(size, mode)
    if kind == "dysign":
        return DySign(size, gamma, mode, use_gelu, init)
    raise ArgumentError(f"unknown binarizer {kind!r}")


class RPReLU(Module):
    kind = "rprelu"

    def __init__(self, channels, slope=0.25):
        super().__init__()
        self.beta = Parameter((channels,), constant(slope))
        self.gamma_shift = Parameter((channels,), zeros)
        self.zeta_shift = Parameter((channels,), zeros)

    def forward(self, x):
        y = dyprelu(x, PReLUParams(self.beta, self.gamma_shift, self.zeta_shift))
        observe(self.name, y)
        return y


class DyPReLU(Module):
    kind = "dyprelu"

    def __init__(self, channels, gamma=CNN_GAMMA, slope=0.25, init="uniform"):
        super().__init__()
        self.beta = Parameter((channels,), constant(slope))
        self.hyper_gamma = Hyperfunction(channels, gamma, init=init)
        self.hyper_zeta = Hyperfunction(channels, gamma, init=init)

    def forward(self, x):
        hg = DySignParams(self.hyper_gamma.W1, self.hyper_gamma.W2, self.hyper_gamma.gamma)
        hz = DySignParams(self.hyper_zeta.W1, self.hyper_zeta.W2, self.hyper_zeta.gamma)
        y = dyprelu(x, PReLUParams(self.beta, None, None, dynamic=True), (hg, hz))
        observe(self.name, y)
        return y


def make_activation(kind, channels, gamma=CNN_GAMMA, init="uniform"):
    if kind == "rprelu":
        return RPReLU(channels)
    if kind == "dyprelu":
        return DyPReLU(channels, gamma, init=init)
    raise ArgumentError(f"unknown activation {kind!r}")


class BinaryLinear(Module):
    """alpha_w * (sign(X) . sign(W - u)^T) + b over +-1 inputs."""

    kind = "linear_binary"

    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter((out_features, in_features), uniform(1.0 / math.sqrt(in_features)))
        self.bias = Parameter((out_features,), zeros) if bias else None
        self.binarize_weights = True

    def counts_and_scale(self, xb):
        if self.binarize_weights:
            signs, alpha = binary_weight(self.weight)
            return xb @ signs.transpose(), alpha
        return xb @ self.weight.transpose(), None

    def forward(self, xb, packed=False):
        _check_pm1(xb, self.name or "linear_binary")
        if packed and self.binarize_weights:
            counts, alpha = self._packed_counts(xb)
        else:
            counts, alpha = self.counts_and_scale(xb)
        y = counts if alpha is None else counts * alpha
        if self.bias is not None:
            y = y + self.bias
        observe(self.name, y)
        return y

    def _packed_counts(self, xb):
        with ag.no_grad():
            signs, alpha = binary_weight(self.weight)
        flat = xb.data.reshape(-1, self.in_features)
        c = binary_gemm(pack_signs(flat), pack_signs(signs.data))
        counts = c.astype(xb.dtype).reshape(*xb.shape[:-1], self.out_features)
        return Tensor(counts), alpha

    def meta(self) -> BinaryWeightMeta:
        return binarize_weights(self.weight)


class BinaryConv2d(Module):
    kind = "conv_binary"

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=1):
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter((out_ch, in_ch, kernel, kernel), uniform(1.0 / math.sqrt(fan_in)))
        self.binarize_weights = True

    def forward(self, xb, packed=False):
        _check_pm1(xb, self.name or "conv_binary")
        if not self.binarize_weights:
            y = ag.conv2d(xb, self.weight, None, self.stride, self.padding, pad_value=-1.0)
        elif packed:
            with ag.no_grad():
                signs, alpha = binary_weight(self.weight)
            c = binary_conv2d(xb.data, signs.data, self.stride, self.padding)
            y = Tensor(c.astype(xb.dtype)) * alpha
        else:
            signs, alpha = binary_weight(self.weight)
            y = ag.conv2d(xb, signs, None, self.stride, self.padding, pad_value=-1.0) * alpha
        observe(self.name, y)
        return y
