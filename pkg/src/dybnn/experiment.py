"""Paired-seed comparison of a static binarizer against its dynamic counterpart.

Both arms of a pair are built from the same seed, so every parameter they
share starts from identical values and the only difference is the
binarization scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .models import get_preset
from .train import TrainConfig, run_training

# family -> (baseline arm, dynamic arm); each arm is (label, preset, overrides)
DESK_PAIRS = {
    "cct": (
        ("sign", "dybinarycct-2", {"binarizer": "sign"}),
        ("dysign", "dybinarycct-2", {}),
    ),
    "cnn": (
        ("sign+rprelu", "dybcnn-micro", {"binarizer": "sign", "activation": "rprelu"}),
        ("dysign+dyprelu", "dybcnn-micro", {}),
    ),
}


@dataclass
class PairedResult:
    family: str
    baseline: str
    dynamic: str
    seeds: list
    accuracy: dict = field(default_factory=dict)  # arm label -> final test top-1 per seed

    def mean(self, arm):
        return float(np.mean(self.accuracy[arm]))

    @property
    def gap(self):
        """Mean dynamic-minus-baseline accuracy."""
        return self.mean(self.dynamic) - self.mean(self.baseline)

    @property
    def wins(self):
        return int(sum(d > b for b, d in zip(self.accuracy[self.baseline], self.accuracy[self.dynamic])))

    def to_dict(self):
        return {
            "family": self.family, "baseline": self.baseline, "dynamic": self.dynamic, "seeds": list(self.seeds),
            "accuracy": {k: list(v) for k, v in self.accuracy.items()},
            "mean": {k: self.mean(k) for k in self.accuracy}, "gap": self.gap, "wins": self.wins,
        }


def paired_comparison(family, train, test, seeds, cfg: TrainConfig, overrides=None, progress=None):
    """Train both arms of ``DESK_PAIRS[family]`` once per seed; return final test accuracies.

    ``overrides`` apply to both arms (e.g. image size and class count for
    synthetic data). ``progress`` is called as ``progress(arm, seed, top1)``.
    """
    (b_label, b_preset, b_over), (d_label, d_preset, d_over) = DESK_PAIRS[family]
    result = PairedResult(family, b_label, d_label, list(seeds), {b_label: [], d_label: []})
    for seed in seeds:
        for label, preset, over in ((b_label, b_preset, b_over), (d_label, d_preset, d_over)):
            graph = get_preset(preset).build(seed, **{**(overrides or {}), **over})
            history = run_training(graph, train, test, replace(cfg, seed=seed))
            top1 = history[-1]["test_top1"] if history else float("nan")
            result.accuracy[label].append(top1)
            if progress is not None:
                progress(label, seed, top1)
    return result
