"""Operation counting over a LayerGraph.

One multiply-accumulate counts as one operation. Binary conv/linear MACs are
BOPs; everything else is FLOPs; ``ops = bops / 64 + flops``.

Two conventions are supported:

``published``
    FLOPs from full-precision conv/linear MACs, sequence pooling, one per
    element for batchnorm and the PReLU family, and the threshold
    hyperfunctions. Softmax, layer norm, GELU, ReLU, pooling, weight scaling
    and residual adds are free. This reproduces the published totals for the
    ReActNet and BinaryCCT presets.
``full``
    Additionally charges every elementwise op with the per-element constants
    in ``FULL_PER_ELEMENT``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .binarizers import squeeze_width
from .errors import ArgumentError, ConfigError
from .models.graph import LayerGraph

CONVENTIONS = ("published", "full")

FULL_PER_ELEMENT = {
    "softmax": 4,  # max-subtract, exp, sum share, divide
    "layernorm": 5,
    "gelu": 8,
    "relu": 1,
    "residual_add": 1,
    "pos_embed": 1,
    "scale": 1,  # alpha_w multiply on a binary layer output
    "threshold": 1,  # subtract a learned threshold before sign
    "avgpool": 1,  # per input element
}


def _prod(shape):
    return int(math.prod(shape))


def dysign_overhead(channels: int, gamma: int) -> int:
    """FLOPs a threshold hyperfunction adds: C for the pooled statistic plus two C x r maps."""
    return channels + 2 * channels * squeeze_width(channels, gamma)


def dyprelu_overhead(channels: int, gamma: int) -> int:
    return 2 * dysign_overhead(channels, gamma)


def eq_residual(bops, flops, ops):
    """Relative gap between a stated ``ops`` and bops/64 + flops."""
    implied = bops / 64 + flops
    return abs(ops - implied) / implied


@dataclass
class LayerCost:
    name: str
    kind: str
    bops: int = 0
    flops: int = 0

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "bops": self.bops, "flops": self.flops}


@dataclass
class CostReport:
    layers: list
    convention: str = "published"
    reference: dict = field(default_factory=dict)

    @property
    def bops(self) -> int:
        return sum(l.bops for l in self.layers)

    @property
    def flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def ops(self) -> float:
        return self.bops / 64 + self.flops

    def by_kind(self):
        out = {}
        for l in self.layers:
            b, f = out.get(l.kind, (0, 0))
            out[l.kind] = (b + l.bops, f + l.flops)
        return out

    def footer(self):
        lines = [f"convention: {self.convention}; ops = bops/64 + flops"]
        ref = self.reference
        if ref:
            dev = (self.ops - ref["ops"]) / ref["ops"]
            lines.append(
                f"reference: bops {ref['bops']:.3g}  flops {ref['flops']:.3g}  ops {ref['ops']:.3g}"
                f"  (computed ops deviate {dev:+.2%})"
            )
            gap = eq_residual(ref["bops"], ref["flops"], ref["ops"])
            if gap > 0.01:
                lines.append(f"note: the reference row itself departs from bops/64 + flops by {gap:.1%}")
        return lines

    def format_table(self):
        w = max([len(l.name) for l in self.layers] + [5])
        rows = [f"{'layer':<{w}}  {'kind':<16} {'bops':>15} {'flops':>13}"]
        for l in self.layers:
            rows.append(f"{l.name:<{w}}  {l.kind:<16} {l.bops:>15,d} {l.flops:>13,d}")
        rows.append(f"{'total':<{w}}  {'':<16} {self.bops:>15,d} {self.flops:>13,d}")
        rows.append(f"ops = {self.ops:,.1f} ({self.ops:.4g})")
        rows.extend(self.footer())
        return "\n".join(rows)

    def to_dict(self):
        return {
            "convention": self.convention,
            "layers": [l.to_dict() for l in self.layers],
            "totals": {"bops": self.bops, "flops": self.flops, "ops": self.ops},
            "reference": dict(self.reference),
            "footer": self.footer(),
        }


def _conv_macs(spec):
    p = spec.params
    cout, ho, wo = spec.out_shape
    return cout * ho * wo * p["in_channels"] * p["kernel"] ** 2


def _hyper_gelu(size, gamma, full):
    return FULL_PER_ELEMENT["gelu"] * squeeze_width(size, gamma) if full else 0


def _site_size(p, dim):
    return p["tokens"] if p["mode"] == "token" else dim


def _binarizer_flops(kind, size, elems, gamma, full, gelu=False):
    f = 0
    if kind == "dysign":
        f += dysign_overhead(size, gamma)
        if gelu:
            f += _hyper_gelu(size, gamma, full)
    if full and kind in ("rsign", "dysign"):
        f += FULL_PER_ELEMENT["threshold"] * elems
    return f


def _mhsa(spec, full):
    p = spec.params
    n, d, h = p["tokens"], p["embed_dim"], p["heads"]
    bops = 4 * n * d * d + 2 * n * n * d
    size = _site_size(p, d)
    flops = 5 * _binarizer_flops(p["binarizer"], size, n * d, p["gamma"], full, gelu=True)
    if full:
        flops += (FULL_PER_ELEMENT["softmax"] + FULL_PER_ELEMENT["threshold"] + 1) * h * n * n  # +1: score scaling
        flops += FULL_PER_ELEMENT["scale"] * 5 * n * d  # q, k, v, context, proj
        flops += 4 * n * d  # biases
    return bops, flops


def _ffn(spec, full):
    p = spec.params
    n, d, hid = p["tokens"], p["embed_dim"], p["hidden_dim"]
    bops = 2 * n * d * hid
    flops = _binarizer_flops(p["binarizer"], _site_size(p, d), n * d, p["gamma"], full, gelu=True)
    flops += _binarizer_flops(p["binarizer"], _site_size(p, hid), n * hid, p["gamma"], full, gelu=True)
    if full:
        flops += FULL_PER_ELEMENT["gelu"] * n * hid
        flops += FULL_PER_ELEMENT["scale"] * (n * hid + n * d) + n * hid + n * d
    return bops, flops


def layer_cost(spec, convention="published") -> LayerCost:
    full = convention == "full"
    kind, p = spec.kind, spec.params
    out = _prod(spec.out_shape)
    inp = _prod(spec.in_shape)
    bops = flops = 0
    if kind == "conv_fp":
        flops = _conv_macs(spec)
        if p.get("batchnorm"):
            flops += out
    elif kind == "conv_binary":
        bops = _conv_macs(spec)
        if full:
            flops = FULL_PER_ELEMENT["scale"] * out
    elif kind == "linear_fp":
        flops = p["in_features"] * p["out_features"] * p.get("tokens", 1)
    elif kind == "linear_binary":
        bops = p["in_features"] * p["out_features"] * p.get("tokens", 1)
        if full:
            flops = FULL_PER_ELEMENT["scale"] * out
    elif kind in ("sign", "rsign", "dysign"):
        flops = _binarizer_flops(kind, p.get("channels", spec.in_shape[0]), inp, p.get("gamma", 16), full)
    elif kind == "batchnorm":
        flops = out
    elif kind == "rprelu":
        flops = out
    elif kind == "dyprelu":
        flops = out + dyprelu_overhead(p.get("channels", spec.out_shape[0]), p.get("gamma", 16))
    elif kind == "seqpool":
        flops = 2 * p["tokens"] * p["embed_dim"]
        if full:
            flops += FULL_PER_ELEMENT["softmax"] * p["tokens"]
    elif kind == "mhsa_binary":
        bops, flops = _mhsa(spec, full)
    elif kind == "ffn_binary":
        bops, flops = _ffn(spec, full)
    elif full:
        if kind == "maxpool":
            flops = out * p.get("kernel", 1) ** 2
        elif kind == "avgpool":
            flops = FULL_PER_ELEMENT["avgpool"] * inp
        elif kind in FULL_PER_ELEMENT:
            flops = FULL_PER_ELEMENT[kind] * out
    return LayerCost(spec.name, kind, int(bops), int(flops))


def count_ops(graph: LayerGraph, input_shape=None, convention="published", reference=None) -> CostReport:
    """Per-layer BOPs/FLOPs for one sample of ``input_shape``."""
    if convention not in CONVENTIONS:
        raise ArgumentError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    if input_shape is not None and tuple(input_shape) != tuple(graph.input_shape):
        raise ConfigError(
            f"graph was resolved for input {tuple(graph.input_shape)}, not {tuple(input_shape)}", field="input_shape"
        )
    graph.validate()
    layers = [layer_cost(s, convention) for s in graph.layers]
    return CostReport(layers, convention, dict(reference or {}))


def binarizer_sites(graph: LayerGraph):
    """(kind, size, gamma) for every threshold site, including those inside encoder blocks."""
    sites = []
    for s in graph.layers:
        p = s.params
        if s.kind in ("sign", "rsign", "dysign"):
            sites.append((s.kind, p.get("channels", s.in_shape[0]), p.get("gamma", 16)))
        elif s.kind == "mhsa_binary":
            sites += [(p["binarizer"], _site_size(p, p["embed_dim"]), p["gamma"])] * 5
        elif s.kind == "ffn_binary":
            sites.append((p["binarizer"], _site_size(p, p["embed_dim"]), p["gamma"]))
            sites.append((p["binarizer"], _site_size(p, p["hidden_dim"]), p["gamma"]))
    return sites
