"""Run configuration documents (YAML) and their resolution into graphs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml

from .data import SynthSpec
from .errors import ConfigError
from .models import BCNNConfig, CCTConfig, build_dybcnn, build_dybinarycct, get_preset
from .train import TrainConfig


@dataclass
class ModelSection:
    preset: str = "dybinarycct-2"
    binarizer: str | None = None
    activation: str | None = None
    # threshold granularity for transformer presets: "token" or "channel"
    mode: str | None = None
    gamma: int | None = None
    # any further preset field, e.g. {"num_layers": 4}
    overrides: dict = field(default_factory=dict)

    def resolved_overrides(self, family):
        out = dict(self.overrides)
        if self.binarizer is not None:
            out["binarizer"] = self.binarizer
        if self.gamma is not None:
            out["gamma"] = self.gamma
        if self.activation is not None:
            if family != "bcnn":
                raise ConfigError("activation applies to convolutional presets only", field="model.activation")
            out["activation"] = self.activation
        if self.mode is not None:
            if family == "cct":
                out["token_mode"] = self.mode
            elif self.mode != "channel":
                raise ConfigError("convolutional presets use channel-wise thresholds", field="model.mode")
        return out


@dataclass
class DataSection:
    # "synthetic" or "cifar10"
    dataset: str = "synthetic"
    root: str = "data/cifar-10-batches-bin"
    stats: str = "conventional"
    synth: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    out: str = "runs/default"
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["data"]["synth"]["class_prior"] = (
            None if self.data.synth.class_prior is None else list(self.data.synth.class_prior)
        )
        return d


def _build(cls, doc, path):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError("expected a mapping", field=path)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", field=f"{path}.{key}" if path else key)
        sub = _SECTIONS.get((cls, key))
        kwargs[key] = _build(sub, value, f"{path}.{key}" if path else key) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e), field=path or None) from e


_SECTIONS = {
    (RunConfig, "model"): ModelSection,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataSection,
    (DataSection, "synth"): SynthSpec,
}


def run_config_from_dict(doc) -> RunConfig:
    cfg = _build(RunConfig, doc or {}, "")
    if cfg.data.synth.class_prior is not None:
        cfg.data.synth.class_prior = tuple(cfg.data.synth.class_prior)
    if cfg.data.dataset not in ("synthetic", "cifar10"):
        raise ConfigError("must be 'synthetic' or 'cifar10'", field="data.dataset")
    cfg.train.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"unparseable YAML: {e}") from e
    return run_config_from_dict(doc)


def dump_yaml(doc, path):
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def build_graph(section: ModelSection, seed=0, materialize=True):
    preset = get_preset(section.preset)
    graph = preset.build(seed, materialize, **section.resolved_overrides(preset.family))
    graph.config["preset"] = preset.name
    return graph, preset


def graph_from_config(doc, seed=0, materialize=True):
    """Rebuild a graph from the ``config`` document stored on a LayerGraph."""
    doc = dict(doc)
    family = doc.pop("family", None)
    doc.pop("preset", None)
    if family == "bcnn":
        return build_dybcnn(BCNNConfig(**doc), seed, materialize)
    if family == "cct":
        return build_dybinarycct(CCTConfig(**doc), seed, materialize)
    raise ConfigError(f"unknown model family {family!r}", field="model.family")
