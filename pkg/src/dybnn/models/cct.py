"""Fully binarized compact convolutional transformer.

Tokenizer (conv -> ReLU -> max-pool) and classifier stay full precision. Every
linear map inside the encoder is a :class:`BinaryLinear` fed by a binarizer,
and the attention probabilities are binarized against a learnable shift.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..binarizers import (
    TRANSFORMER_GAMMA, BinaryLinear, make_binarizer, shifted_attention_sign,
)
from ..bitkernel import binary_gemm, pack_signs
from ..errors import ConfigError
from ..nn import Conv2d, LayerNorm, Linear, Module, Parameter, constant, normal, observe
from .graph import GraphBuilder, LayerGraph


@dataclass
class CCTConfig:
    in_channels: int = 3
    image_size: int = 32
    num_classes: int = 10
    embed_dim: int = 128
    num_layers: int = 2
    num_heads: int = 2
    mlp_ratio: float = 2.0
    tokenizer_kernel: int = 3
    tokenizer_stride: int = 1
    pool_kernel: int = 3
    pool_stride: int = 2
    binarizer: str = "dysign"
    # threshold granularity for rsign/dysign: "token" or "channel"
    token_mode: str = "token"
    gamma: int = TRANSFORMER_GAMMA
    hyper_init: str = "uniform"
    # "per_query": one shift per head and query row; "full": an N x N matrix per head
    shift_shape: str = "per_query"
    # "uniform" starts the shift at 1/N; "zeros" reproduces the all-(+1) degeneracy
    shift_init: str = "uniform"

    @property
    def tokenizer_padding(self):
        return self.tokenizer_kernel // 2

    @property
    def pool_padding(self):
        return self.pool_kernel // 2

    @property
    def grid(self):
        s = (self.image_size + 2 * self.tokenizer_padding - self.tokenizer_kernel) // self.tokenizer_stride + 1
        return (s + 2 * self.pool_padding - self.pool_kernel) // self.pool_stride + 1

    @property
    def num_tokens(self):
        return self.grid**2

    @property
    def hidden_dim(self):
        return int(round(self.embed_dim * self.mlp_ratio))

    def validate(self):
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads", field="model.num_heads")
        if self.binarizer not in ("sign", "rsign", "dysign"):
            raise ConfigError("must be sign, rsign or dysign", field="model.binarizer")
        if self.token_mode not in ("token", "channel"):
            raise ConfigError("must be 'token' or 'channel'", field="model.token_mode")
        if self.shift_shape not in ("per_query", "full"):
            raise ConfigError("must be 'per_query' or 'full'", field="model.shift_shape")
        if self.shift_init not in ("uniform", "zeros"):
            raise ConfigError("must be 'uniform' or 'zeros'", field="model.shift_init")
        if self.num_layers < 0:
            raise ConfigError("must be >= 0", field="model.num_layers")
        if self.grid < 1:
            raise ConfigError("tokenizer leaves no tokens", field="model.image_size")
        return self


def _site(kind, name, dim, tokens, mode, gamma, init):
    size = tokens if mode == "token" else dim
    b = make_binarizer(kind, size, gamma, mode, use_gelu=True, init=init)
    b.name = name
    return b


def _cfg_site(cfg, name, dim):
    return _site(cfg.binarizer, name, dim, cfg.num_tokens, cfg.token_mode, cfg.gamma, cfg.hyper_init)


def _split_heads(t, heads):
    b, n, d = t.shape
    return t.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    b, h, n, d = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def _packed_bmm(a, b):
    """Batched +-1 product a @ b over leading dims via packed kernels."""
    lead = a.shape[:-2]
    out = np.empty(lead + (a.shape[-2], b.shape[-1]), dtype=np.int64)
    for idx in np.ndindex(*lead):
        out[idx] = binary_gemm(pack_signs(a[idx]), pack_signs(b[idx].T))
    return out


class BinaryMHSA(Module):
    """Multi-head self-attention with binary Q/K/V/output maps and binarized attention.

    Binarizer sites: block input, Q, K, V and the merged context. The
    attention probabilities are binarized as sign(P - shift).
    """

    def __init__(self, prefix, dim, heads, tokens, binarizer="dysign", mode="token",
                 gamma=TRANSFORMER_GAMMA, hyper_init="uniform", shift_shape="per_query", shift_init="uniform"):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"embed_dim {dim} not divisible by {heads} heads", field="model.num_heads")
        self.heads, self.head_dim = heads, dim // heads

        def site(tag):
            return _site(binarizer, f"{prefix}.{tag}", dim, tokens, mode, gamma, hyper_init)

        self.bin_in = site("bin_in")
        self.q = BinaryLinear(dim, dim)
        self.k = BinaryLinear(dim, dim)
        self.v = BinaryLinear(dim, dim)
        self.bin_q, self.bin_k, self.bin_v = site("bin_q"), site("bin_k"), site("bin_v")
        shape = (heads, tokens, 1) if shift_shape == "per_query" else (heads, tokens, tokens)
        self.shift = Parameter(shape, constant(1.0 / tokens if shift_init == "uniform" else 0.0))
        self.bin_ctx = site("bin_ctx")
        self.proj = BinaryLinear(dim, dim)
        for tag in ("q", "k", "v", "proj"):
            getattr(self, tag).name = f"{prefix}.{tag}"
        self.name = prefix
        # keep_last stores scores, probabilities, binarized attention and context for inspection
        self.keep_last = False
        self.last = {}

    def forward(self, x, packed=False):
        xb = self.bin_in(x)
        sq = _split_heads(self.bin_q(self.q(xb, packed)), self.heads)
        sk = _split_heads(self.bin_k(self.k(xb, packed)), self.heads)
        sv = _split_heads(self.bin_v(self.v(xb, packed)), self.heads)
        # scores are scaled by the embedding width D, not the per-head width
        scale = 1.0 / math.sqrt(self.heads * self.head_dim)
        if packed:
            with ag.no_grad():
                alpha_v = ag.mean(ag.tabs(self.v.weight))
            scores = Tensor(_packed_bmm(sq.data, np.swapaxes(sk.data, -1, -2)).astype(x.dtype)) * scale
        else:
            alpha_v = ag.mean(ag.tabs(self.v.weight))
            scores = (sq @ sk.transpose(0, 1, 3, 2)) * scale
        probs = ag.softmax(scores, axis=-1)
        pb = shifted_attention_sign(probs, self.shift)
        if packed:
            ctx = Tensor(_packed_bmm(pb.data, sv.data).astype(x.dtype)) * alpha_v
        else:
            ctx = (pb @ sv) * alpha_v
        if self.keep_last:
            self.last = {"scores": scores.data, "probs": probs.data, "attention": pb.data, "context": ctx.data}
        out = self.proj(self.bin_ctx(_merge_heads(ctx)), packed)
        observe(self.name, out)
        return out


class BinaryFFN(Module):
    def __init__(self, prefix, cfg: CCTConfig):
        super().__init__()
        d, h = cfg.embed_dim, cfg.hidden_dim
        self.bin1 = _cfg_site(cfg, f"{prefix}.bin1", d)
        self.fc1 = BinaryLinear(d, h)
        self.bin2 = _cfg_site(cfg, f"{prefix}.bin2", h)
        self.fc2 = BinaryLinear(h, d)

    def forward(self, x, packed=False):
        h = ag.gelu(self.fc1(self.bin1(x), packed))
        out = self.fc2(self.bin2(h), packed)
        observe(self.name, out)
        return out


class EncoderBlock(Module):
    def __init__(self, prefix, cfg):
        super().__init__()
        self.prefix = prefix
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.mhsa = BinaryMHSA(
            f"{prefix}.mhsa", cfg.embed_dim, cfg.num_heads, cfg.num_tokens, cfg.binarizer, cfg.token_mode,
            cfg.gamma, cfg.hyper_init, cfg.shift_shape, cfg.shift_init,
        )
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.ffn = BinaryFFN(f"{prefix}.ffn", cfg)
        self.norm1.name, self.mhsa.name = f"{prefix}.norm1", f"{prefix}.mhsa"
        self.norm2.name, self.ffn.name = f"{prefix}.norm2", f"{prefix}.ffn"

    def forward(self, x, packed=False):
        x = x + self.mhsa(self.norm1(x), packed)
        observe(f"{self.prefix}.add1", x)
        x = x + self.ffn(self.norm2(x), packed)
        observe(f"{self.prefix}.add2", x)
        return x


class SeqPool(Module):
    """Softmax-weighted sum of tokens with a learned scoring map."""

    def __init__(self, dim):
        super().__init__()
        self.score = Linear(dim, 1)

    def forward(self, x):
        w = ag.softmax(self.score(x), axis=1)  # (B, N, 1)
        out = (w.transpose(0, 2, 1) @ x).reshape(x.shape[0], x.shape[2])
        observe(self.name, out)
        return out


def seqpool(tokens, score_weight, score_bias):
    """Functional SeqPool on (B, N, D) tokens."""
    tokens = ag.as_tensor(tokens)
    s = tokens @ ag.as_tensor(score_weight, tokens).transpose() + ag.as_tensor(score_bias, tokens)
    w = ag.softmax(s, axis=1)
    return (w.transpose(0, 2, 1) @ tokens).reshape(tokens.shape[0], tokens.shape[2])


class BinaryCCT(Module):
    def __init__(self, cfg: CCTConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.tokenizer = Conv2d(cfg.in_channels, d, cfg.tokenizer_kernel, cfg.tokenizer_stride, cfg.tokenizer_padding)
        self.pos_embed = Parameter((1, cfg.num_tokens, d), normal(0.02))
        self.blocks = [EncoderBlock(f"blocks.{i}", cfg) for i in range(cfg.num_layers)]
        self.norm = LayerNorm(d) if cfg.num_layers else None
        self.pool = SeqPool(d)
        self.classifier = Linear(d, cfg.num_classes)
        if self.norm is not None:
            self.norm.name = "norm"
        self.pool.name, self.classifier.name = "seqpool", "classifier"

    def forward(self, x, packed=False):
        c = self.cfg
        x = self.tokenizer(x)
        observe("tokenizer", x)
        x = ag.relu(x)
        observe("tokenizer_relu", x)
        x = ag.max_pool2d(x, c.pool_kernel, c.pool_stride, c.pool_padding)
        observe("tokenizer_pool", x)
        b, d = x.shape[:2]
        x = x.reshape(b, d, -1).transpose(0, 2, 1)
        observe("tokens", x)
        x = x + self.pos_embed
        observe("pos_embed", x)
        for blk in self.blocks:
            x = blk(x, packed)
        if self.norm is not None:
            x = self.norm(x)
        return self.classifier(self.pool(x))

    def attention_modules(self):
        return [b.mhsa for b in self.blocks]


def build_dybinarycct(cfg: CCTConfig | None = None, seed: int = 0, materialize: bool = True) -> LayerGraph:
    """Validated LayerGraph; ``materialize=False`` skips parameter init and detaches the model."""
    cfg = (cfg or CCTConfig()).validate()
    model = BinaryCCT(cfg)
    if materialize:
        model.init_parameters(seed)
    d, n, hid = cfg.embed_dim, cfg.num_tokens, cfg.hidden_dim
    shape = (cfg.in_channels, cfg.image_size, cfg.image_size)
    g = GraphBuilder(shape)
    conv_s = (cfg.image_size + 2 * cfg.tokenizer_padding - cfg.tokenizer_kernel) // cfg.tokenizer_stride + 1
    g.add(
        "tokenizer", "conv_fp", (d, conv_s, conv_s), in_channels=cfg.in_channels, out_channels=d,
        kernel=cfg.tokenizer_kernel, stride=cfg.tokenizer_stride, padding=cfg.tokenizer_padding,
    )
    g.add("tokenizer_relu", "relu")
    g.add("tokenizer_pool", "maxpool", (d, cfg.grid, cfg.grid), kernel=cfg.pool_kernel, stride=cfg.pool_stride)
    g.add("tokens", "tokens", (n, d))
    g.add("pos_embed", "pos_embed")
    site = dict(binarizer=cfg.binarizer, mode=cfg.token_mode, gamma=cfg.gamma, tokens=n)
    for i in range(cfg.num_layers):
        p = f"blocks.{i}"
        g.add(f"{p}.norm1", "layernorm")
        g.add(f"{p}.mhsa", "mhsa_binary", precision="binary", embed_dim=d, heads=cfg.num_heads, **site)
        g.add(f"{p}.add1", "residual_add", block=p)
        g.add(f"{p}.norm2", "layernorm")
        g.add(f"{p}.ffn", "ffn_binary", precision="binary", embed_dim=d, hidden_dim=hid, **site)
        g.add(f"{p}.add2", "residual_add", block=p)
    if cfg.num_layers:
        g.add("norm", "layernorm")
    g.add("seqpool", "seqpool", (d,), tokens=n, embed_dim=d)
    g.add("classifier", "linear_fp", (cfg.num_classes,), in_features=d, out_features=cfg.num_classes, tokens=1)
    doc = {"family": "cct", **asdict(cfg)}
    return LayerGraph(g.layers, shape, cfg.num_classes, doc, model if materialize else None).validate()
