"""Named model configurations.

``reference`` holds published operation counts for the full-size presets so
cost reports can print them next to the computed values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from ..errors import ConfigError
from .cct import CCTConfig, build_dybinarycct
from .dybcnn import BCNNConfig, build_dybcnn

# MobileNetV1-shaped binary backbone at 224 px
_REACTNET_WIDTHS = (64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024)
_REACTNET_STRIDES = (1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1)
_IMAGENET = dict(
    image_size=224, num_classes=1000, stem_channels=32, stem_stride=2,
    widths=_REACTNET_WIDTHS, strides=_REACTNET_STRIDES, block_style="reactnet",
)
_CCT6 = dict(embed_dim=256, num_layers=6, num_heads=4, mlp_ratio=2.0)
_CCT7 = dict(embed_dim=256, num_layers=7, num_heads=4, mlp_ratio=2.0)


@dataclass(frozen=True)
class Preset:
    name: str
    family: str  # "bcnn" or "cct"
    config: dict
    reference: dict = field(default_factory=dict)
    description: str = ""

    def make_config(self, **overrides):
        cls = BCNNConfig if self.family == "bcnn" else CCTConfig
        known = {f.name for f in fields(cls)}
        bad = sorted(set(overrides) - known)
        if bad:
            raise ConfigError(f"unknown override(s) {bad} for {self.name}", field=f"model.{bad[0]}")
        return replace(cls(**self.config), **overrides)

    def build(self, seed=0, materialize=True, **overrides):
        cfg = self.make_config(**overrides)
        if self.family == "bcnn":
            return build_dybcnn(cfg, seed, materialize)
        return build_dybinarycct(cfg, seed, materialize)


def _ref(bops, flops, ops):
    return {"bops": bops, "flops": flops, "ops": ops}


PRESETS = {
    p.name: p
    for p in [
        Preset("dybcnn-micro", "bcnn", {}, description="desk-scale 3-block DyBCNN, dysign + dyprelu"),
        Preset(
            "bcnn-micro", "bcnn", {"binarizer": "sign", "activation": "rprelu"},
            description="desk-scale 3-block baseline, sign + rprelu",
        ),
        Preset(
            "reactnet-a", "bcnn", {**_IMAGENET, "binarizer": "rsign", "activation": "rprelu"},
            _ref(4.82e9, 0.22e8, 0.97e8), "MobileNetV1-style ReActNet at 224 px",
        ),
        Preset(
            "dybcnn-a", "bcnn", {**_IMAGENET, "binarizer": "dysign", "activation": "dyprelu"},
            _ref(4.82e9, 0.24e8, 0.99e8), "ReActNet backbone with dynamic thresholds",
        ),
        Preset("dybinarycct-2", "cct", {}, description="desk-scale 2-layer DyBinaryCCT, token-wise dysign"),
        Preset("binarycct-2", "cct", {"binarizer": "sign"}, description="desk-scale 2-layer BinaryCCT"),
        Preset("binarycct-6", "cct", {**_CCT6, "binarizer": "sign"}, _ref(1.01e9, 7.23e6, 22.96e6), "CCT-6/3x1, binary"),
        Preset("dybinarycct-6", "cct", {**_CCT6}, _ref(1.01e9, 11.16e6, 26.89e6), "CCT-6/3x1 with dysign"),
        Preset("binarycct-7", "cct", {**_CCT7, "binarizer": "sign"}, _ref(1.17e9, 7.23e6, 25.59e6), "CCT-7/3x1, binary"),
        Preset("dybinarycct-7", "cct", {**_CCT7}, _ref(1.17e9, 11.81e6, 30.17e6), "CCT-7/3x1 with dysign"),
    ]
}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", field="model.preset") from None
