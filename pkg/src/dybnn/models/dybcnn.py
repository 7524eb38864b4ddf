"""ReActNet-style binary CNN with swappable binarizer / activation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .. import autograd as ag
from ..binarizers import CNN_GAMMA, BinaryConv2d, make_activation, make_binarizer
from ..errors import ConfigError
from ..nn import BatchNorm2d, Conv2d, Linear, Module, observe
from .graph import GraphBuilder, LayerGraph

BINARIZERS = ("sign", "rsign", "dysign")
ACTIVATIONS = ("rprelu", "dyprelu")


@dataclass
class BCNNConfig:
    in_channels: int = 3
    image_size: int = 32
    num_classes: int = 10
    stem_channels: int = 32
    stem_stride: int = 1
    widths: tuple = (32, 64, 128)
    strides: tuple = (1, 2, 2)
    # "basic": one 3x3 unit per block; "reactnet": 3x3 unit then 1x1 unit
    block_style: str = "basic"
    binarizer: str = "dysign"
    activation: str = "dyprelu"
    gamma: int = CNN_GAMMA
    hyper_init: str = "uniform"

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.strides = tuple(self.strides)

    def validate(self):
        if self.binarizer not in BINARIZERS:
            raise ConfigError(f"must be one of {BINARIZERS}", field="model.binarizer")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"must be one of {ACTIVATIONS}", field="model.activation")
        if self.block_style not in ("basic", "reactnet"):
            raise ConfigError("must be 'basic' or 'reactnet'", field="model.block_style")
        if len(self.widths) != len(self.strides):
            raise ConfigError("widths and strides differ in length", field="model.strides")
        if self.gamma < 1:
            raise ConfigError("must be >= 1", field="model.gamma")
        size = self.image_size
        if size % self.stem_stride:
            raise ConfigError(f"stem stride {self.stem_stride} does not divide {size}", field="model.stem_stride")
        size //= self.stem_stride
        cin = self.stem_channels
        for i, (w, s) in enumerate(zip(self.widths, self.strides)):
            if s not in (1, 2) or size % s:
                raise ConfigError(f"stride {s} on a {size}x{size} map", field=f"model.strides[{i}]")
            if w not in (cin, 2 * cin):
                raise ConfigError(f"width {w} from {cin} channels (only x1 or x2)", field=f"model.widths[{i}]")
            size //= s
            cin = w
        return self


class Unit(Module):
    """binarizer -> binary conv -> BN -> (+ shortcut) -> activation."""

    def __init__(self, prefix, cfg, cin, cout, kernel, stride):
        super().__init__()
        self.stride, self.expand = stride, cout == 2 * cin
        self.binarizer = make_binarizer(cfg.binarizer, cin, cfg.gamma, init=cfg.hyper_init)
        self.conv = BinaryConv2d(cin, cout, kernel, stride, kernel // 2)
        self.bn = BatchNorm2d(cout)
        self.act = make_activation(cfg.activation, cout, cfg.gamma, init=cfg.hyper_init)
        self.binarizer.name = f"{prefix}.binarizer"
        self.conv.name = f"{prefix}.conv"
        self.bn.name = f"{prefix}.bn"
        self.act.name = f"{prefix}.act"
        self.pool_name = f"{prefix}.shortcut_pool"
        self.dup_name = f"{prefix}.duplicate"
        self.add_name = f"{prefix}.add"

    def forward(self, x, packed=False):
        y = self.bn(self.conv(self.binarizer(x), packed=packed))
        sc = x
        if self.stride == 2:
            sc = ag.avg_pool2d(sc, 2)
            observe(self.pool_name, sc)
        if self.expand:
            sc = ag.concat([sc, sc], axis=1)
            observe(self.dup_name, sc)
        y = y + sc
        observe(self.add_name, y)
        return self.act(y)

    def specs(self, g: GraphBuilder, cfg, cin, cout, kernel):
        c, h, w = g.shape
        prefix = self.add_name.rsplit(".", 1)[0]
        g.add(self.binarizer.name, cfg.binarizer, channels=cin, gamma=cfg.gamma, mode="channel")
        ho, wo = h // self.stride, w // self.stride
        g.add(
            self.conv.name, "conv_binary", (cout, ho, wo), precision="binary",
            in_channels=cin, out_channels=cout, kernel=kernel, stride=self.stride, padding=kernel // 2,
        )
        g.add(self.bn.name, "batchnorm", channels=cout)
        sc_shape = (cin, h, w)
        if self.stride == 2:
            g.add(self.pool_name, "avgpool", (cin, ho, wo), branch="shortcut", in_shape=sc_shape, kernel=2)
            sc_shape = (cin, ho, wo)
        if self.expand:
            g.add(self.dup_name, "duplicate_concat", (cout, ho, wo), branch="shortcut", in_shape=sc_shape)
        g.add(self.add_name, "residual_add", block=prefix)
        g.add(self.act.name, cfg.activation, channels=cout, gamma=cfg.gamma)


class DyBCNN(Module):
    def __init__(self, cfg: BCNNConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, 3, cfg.stem_stride, 1)
        self.stem_bn = BatchNorm2d(cfg.stem_channels)
        self.units = []
        cin = cfg.stem_channels
        for i, (w, s) in enumerate(zip(cfg.widths, cfg.strides)):
            if cfg.block_style == "basic":
                self.units.append(Unit(f"blocks.{i}", cfg, cin, w, 3, s))
            else:
                self.units.append(Unit(f"blocks.{i}.dw", cfg, cin, cin, 3, s))
                self.units.append(Unit(f"blocks.{i}.pw", cfg, cin, w, 1, 1))
            cin = w
        self.classifier = Linear(cin, cfg.num_classes)
        self.stem.name, self.classifier.name = None, "classifier"

    def forward(self, x, packed=False):
        x = self.stem_bn(self.stem(x))
        observe("stem", x)
        for u in self.units:
            x = u(x, packed=packed)
        x = ag.mean(x, axis=(2, 3))
        observe("pool", x)
        return self.classifier(x)


def build_dybcnn(cfg: BCNNConfig | None = None, seed: int = 0, materialize: bool = True) -> LayerGraph:
    """Validated LayerGraph; ``materialize=False`` skips parameter init and detaches the model."""
    cfg = (cfg or BCNNConfig()).validate()
    model = DyBCNN(cfg)
    if materialize:
        model.init_parameters(seed)
    shape = (cfg.in_channels, cfg.image_size, cfg.image_size)
    g = GraphBuilder(shape)
    s0 = cfg.image_size // cfg.stem_stride
    g.add(
        "stem", "conv_fp", (cfg.stem_channels, s0, s0),
        in_channels=cfg.in_channels, out_channels=cfg.stem_channels, kernel=3,
        stride=cfg.stem_stride, padding=1, batchnorm=True,
    )
    cin = cfg.stem_channels
    units = iter(model.units)
    for w in cfg.widths:
        if cfg.block_style == "basic":
            next(units).specs(g, cfg, cin, w, 3)
        else:
            next(units).specs(g, cfg, cin, cin, 3)
            next(units).specs(g, cfg, cin, w, 1)
        cin = w
    g.add("pool", "avgpool", (cin,), kernel="global")
    g.add("classifier", "linear_fp", (cfg.num_classes,), in_features=cin, out_features=cfg.num_classes, tokens=1)
    cfg_doc = {"family": "bcnn", **asdict(cfg)}
    cfg_doc["widths"], cfg_doc["strides"] = list(cfg.widths), list(cfg.strides)
    return LayerGraph(g.layers, shape, cfg.num_classes, cfg_doc, model if materialize else None).validate()
