"""Optimisation loop: Adam with linear learning-rate decay, evaluation, two-phase runs."""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .binarizers import BinaryConv2d, BinaryLinear
from .checkpoint import MetricsLog, load_checkpoint, model_checkpoint, restore_model, save_checkpoint
from .data import BatchStream
from .errors import ConfigError, NumericFault, UnsupportedError
from .nn import finite_checks


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    # "linear": lr falls linearly to zero over the run; "constant": no decay
    schedule: str = "linear"
    augment: bool = False
    seed: int = 0
    # two-phase: phase 1 trains with real-valued weights, phase 2 binarizes them
    two_phase: bool = False
    phase1_epochs: int = 0

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("must be >= 0", field="train.epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", field="train.batch_size")
        if not self.lr > 0:
            raise ConfigError("must be > 0", field="train.lr")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)", field="train.beta1")
        if self.schedule not in ("linear", "constant"):
            raise ConfigError("must be 'linear' or 'constant'", field="train.schedule")
        if self.two_phase and not 0 < self.phase1_epochs < self.epochs:
            raise ConfigError("two-phase runs need 0 < phase1_epochs < epochs", field="train.phase1_epochs")
        return self


class Adam:
    def __init__(self, named_params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(named_params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for n, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state(self):
        arrays = {f"m.{n}": a for n, a in self.m.items()}
        arrays.update({f"v.{n}": a for n, a in self.v.items()})
        return arrays, {"t": self.t, "lr": self.lr, "betas": list(self.betas), "eps": self.eps,
                        "weight_decay": self.weight_decay}

    def load_state(self, arrays, meta):
        self.t = int(meta["t"])
        for n in self.m:
            self.m[n][...] = arrays[f"m.{n}"]
            self.v[n][...] = arrays[f"v.{n}"]


def linear_decay(base_lr, step, total_steps):
    return base_lr * max(0.0, 1.0 - step / max(1, total_steps))


def set_weight_binarization(model, enabled: bool):
    """Toggle sign(W) in every binary layer; off means real-valued weights."""
    for m in model.modules():
        if isinstance(m, (BinaryLinear, BinaryConv2d)):
            m.binarize_weights = enabled


def distillation_loss(*args, **kwargs):
    raise UnsupportedError("distillation from a real-valued teacher is not implemented; use cross-entropy")


def _locate_fault(model, x):
    """Re-run the forward with finite checks to name the first non-finite layer."""
    with ag.no_grad(), finite_checks():
        try:
            model(Tensor(x))
        except NumericFault as e:
            return e.layer
    return None


def forward_backward(model, x, y):
    """One loss evaluation and backward pass; returns (loss, logits array)."""
    logits = model(Tensor(x))
    loss = ag.cross_entropy(logits, y)
    if not np.isfinite(loss.data):
        layer = _locate_fault(model, x)
        raise NumericFault("non-finite loss", layer=layer or "loss")
    loss.backward()
    return float(loss.data), logits.data


def evaluate(model, stream):
    was = model.training
    model.eval()
    total = correct = 0
    loss_sum = 0.0
    with ag.no_grad():
        for x, y in stream.epoch_batches(0):
            logits = model(Tensor(x))
            loss_sum += float(ag.cross_entropy(logits, y, reduction="sum").data)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            total += len(y)
    model.train(was)
    return {"loss": loss_sum / max(1, total), "top1": correct / max(1, total)}


def fit(model, train_stream, test_stream, cfg: TrainConfig, epochs=None, log=None, phase=1, epoch_offset=0):
    """Train ``model`` for ``epochs`` (default ``cfg.epochs``) with a fresh Adam state.

    Returns (per-epoch records, optimizer). Records are also written to ``log``.
    Shuffling uses the global epoch index ``epoch_offset + e``.
    """
    cfg.validate()
    epochs = cfg.epochs if epochs is None else epochs
    opt = Adam(model.named_parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)
    steps_per_epoch = len(train_stream)
    total = epochs * steps_per_epoch
    history = []
    model.train()
    lr = cfg.lr
    for epoch in range(epochs):
        t0 = time.perf_counter()
        loss_sum = correct = seen = 0
        for i, (x, y) in enumerate(train_stream.epoch_batches(epoch_offset + epoch)):
            step = epoch * steps_per_epoch + i
            lr = linear_decay(cfg.lr, step, total) if cfg.schedule == "linear" else cfg.lr
            opt.zero_grad()
            loss, logits = forward_backward(model, x, y)
            opt.step(lr)
            loss_sum += loss * len(y)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(y)
        rec = {
            "epoch": epoch_offset + epoch + 1, "phase": phase, "train_loss": loss_sum / max(1, seen),
            "train_top1": correct / max(1, seen), "lr": lr,
        }
        if test_stream is not None:
            ev = evaluate(model, test_stream)
            rec.update({"test_loss": ev["loss"], "test_top1": ev["top1"]})
        rec["seconds"] = round(time.perf_counter() - t0, 3)
        history.append(rec)
        if log is not None:
            log.write({k: v for k, v in rec.items() if k != "seconds"})
    return history, opt


def run_training(graph, train_data, test_data, cfg: TrainConfig, out_dir=None, config_doc=None):
    """Full run, optionally two-phase, writing metrics and checkpoints under ``out_dir``.

    In two-phase mode the phase-1 model (real-valued weights) is saved, then
    reloaded from disk to start phase 2 with binarized weights.
    """
    cfg.validate()
    model = graph.model
    doc = config_doc if config_doc is not None else {"model": graph.config, "train": asdict(cfg)}
    train_stream = BatchStream(train_data, cfg.batch_size, True, cfg.seed, cfg.augment)
    test_stream = BatchStream(test_data, 256, shuffle=False) if test_data is not None else None
    log = MetricsLog(os.path.join(out_dir, "metrics.jsonl")) if out_dir else None
    history = []
    offset = 0
    if cfg.two_phase:
        set_weight_binarization(model, False)
        h, opt = fit(model, train_stream, test_stream, cfg, cfg.phase1_epochs, log, phase=1)
        history += h
        offset = cfg.phase1_epochs
        if out_dir:
            path = save_checkpoint(os.path.join(out_dir, "phase1.ckpt"), model_checkpoint(model, doc, offset, opt))
            restore_model(model, load_checkpoint(path))
        set_weight_binarization(model, True)
    h, opt = fit(model, train_stream, test_stream, cfg, cfg.epochs - offset, log, phase=2 if cfg.two_phase else 1,
                 epoch_offset=offset)
    history += h
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), model_checkpoint(model, doc, cfg.epochs, opt))
    return history
