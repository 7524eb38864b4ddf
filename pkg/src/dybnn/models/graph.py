"""Declarative model description shared by execution and cost accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor
from ..errors import ConfigError
from ..nn import Module, shape_probe

LAYER_KINDS = frozenset(
    {
        "conv_fp", "conv_binary", "linear_fp", "linear_binary",
        "sign", "dysign", "rsign", "dyprelu", "rprelu",
        "batchnorm", "layernorm", "gelu", "relu", "maxpool", "avgpool",
        "mhsa_binary", "ffn_binary", "seqpool", "residual_add",
        "duplicate_concat", "pos_embed", "tokens",
    }
)
BINARIZER_KINDS = frozenset({"sign", "rsign", "dysign"})
ACTIVATION_KINDS = frozenset({"rprelu", "dyprelu", "relu", "gelu"})
# binary kinds whose binarizers live inside the block template
SELF_BINARIZING = frozenset({"mhsa_binary", "ffn_binary"})


@dataclass
class LayerSpec:
    """One entry of a model description.

    ``in_shape``/``out_shape`` are per-sample. ``branch`` is ``"shortcut"`` for
    ops applied to the residual path of a block.
    """

    name: str
    kind: str
    in_shape: tuple
    out_shape: tuple
    precision: str = "fp"
    params: dict = field(default_factory=dict)
    branch: str = "main"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}", field=self.name)
        self.in_shape = tuple(self.in_shape)
        self.out_shape = tuple(self.out_shape)

    def to_dict(self):
        return {
            "name": self.name, "kind": self.kind, "in_shape": list(self.in_shape),
            "out_shape": list(self.out_shape), "precision": self.precision,
            "params": dict(self.params), "branch": self.branch,
        }


@dataclass
class LayerGraph:
    layers: list
    input_shape: tuple
    num_classes: int
    config: dict = field(default_factory=dict)
    model: Module | None = field(default=None, repr=False, compare=False)

    def kinds(self, branch="main"):
        return [l.kind for l in self.layers if branch is None or l.branch == branch]

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def __call__(self, x, **kwargs):
        if self.model is None:
            raise ConfigError("graph has no executable model attached")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return self.model(x, **kwargs)

    def named_parameters(self):
        return self.model.named_parameters()

    def validate(self):
        """Check chain compatibility, precision flags and binarizer placement."""
        main = [l for l in self.layers if l.branch == "main"]
        if not main:
            raise ConfigError("empty graph")
        if main[0].precision != "fp" or main[-1].precision != "fp":
            raise ConfigError("first and last layers must be full precision")
        if main[0].in_shape != tuple(self.input_shape):
            raise ConfigError(f"first layer expects {main[0].in_shape}, graph input is {self.input_shape}")
        if main[-1].out_shape != (self.num_classes,):
            raise ConfigError(f"classifier emits {main[-1].out_shape}, expected ({self.num_classes},)")
        for prev, cur in zip(main, main[1:]):
            if cur.in_shape != prev.out_shape:
                raise ConfigError(f"{prev.out_shape} -> {cur.in_shape} shape break", field=cur.name)
            if cur.kind in ("conv_binary", "linear_binary") and prev.kind not in BINARIZER_KINDS:
                raise ConfigError(f"{cur.kind} must follow a binarizer", field=cur.name)
        return self

    def shape_audit(self, batch=2, seed=0):
        """Run a probe batch and return {name: (declared, observed)} for mismatches."""
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((batch, *self.input_shape)))
        with shape_probe() as seen:
            self(x)
        bad = {}
        for l in self.layers:
            if l.name in seen and seen[l.name] != l.out_shape:
                bad[l.name] = (l.out_shape, seen[l.name])
        missing = [l.name for l in self.layers if l.name not in seen]
        return bad, missing

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "config": self.config,
            "layers": [l.to_dict() for l in self.layers],
        }


class GraphBuilder:
    """Accumulates LayerSpecs while tracking the running main-branch shape."""

    def __init__(self, input_shape):
        self.layers: list[LayerSpec] = []
        self.shape = tuple(input_shape)

    def add(self, name, kind, out_shape=None, precision="fp", branch="main", in_shape=None, **params):
        out_shape = self.shape if out_shape is None else tuple(out_shape)
        spec = LayerSpec(
            name, kind, self.shape if in_shape is None else in_shape, out_shape, precision, params, branch
        )
        self.layers.append(spec)
        if branch == "main":
            self.shape = out_shape
        return spec
