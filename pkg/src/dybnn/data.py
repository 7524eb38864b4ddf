"""Datasets: CIFAR-10 binary batches and seeded synthetic image clusters."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, IngestionError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
# conventional per-channel statistics of the CIFAR-10 training set
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


@dataclass
class LabeledBatch:
    """Images (N, C, H, W) and integer labels.

    ``images`` may be uint8 pixels (normalised lazily by streams) or floats that
    are already normalised; ``meta`` records the statistics used.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ArgumentError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ArgumentError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()

    def subset(self, idx):
        return LabeledBatch(self.images[idx], self.labels[idx], self.num_classes, dict(self.meta))


def normalize(images, mean, std, dtype=np.float32):
    """uint8 pixels -> per-channel standardised floats; float input passes through."""
    if images.dtype != np.uint8:
        return images.astype(dtype, copy=False)
    m = np.asarray(mean, dtype=dtype).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=dtype).reshape(1, -1, 1, 1)
    return (images.astype(dtype) / 255.0 - m) / s


def augment(images, rng, pad=4):
    """Random horizontal flip and pad-then-crop, one draw per image."""
    n, _, h, w = images.shape
    flip = rng.random(n) < 0.5
    out = np.where(flip[:, None, None, None], images[..., ::-1], images)
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    rows = dy[:, None] + np.arange(h)[None, :]
    cols = dx[:, None] + np.arange(w)[None, :]
    return padded[np.arange(n)[:, None, None, None], np.arange(images.shape[1])[None, :, None, None],
                  rows[:, None, :, None], cols[:, None, None, :]]


class BatchStream:
    """Re-iterable minibatch stream with seeded order and augmentation.

    Epoch ``e`` uses generator ``[seed, e]``, so two streams with the same
    arguments produce identical batches and digests.
    """

    def __init__(self, data: LabeledBatch, batch_size, shuffle=True, seed=0, augment=False, drop_last=False):
        if batch_size < 1:
            raise ArgumentError("batch_size must be >= 1")
        self.data, self.batch_size = data, batch_size
        self.shuffle, self.seed, self.augment, self.drop_last = shuffle, seed, augment, drop_last
        self.mean = data.meta.get("mean", CIFAR_MEAN)
        self.std = data.meta.get("std", CIFAR_STD)
        self.epoch = 0

    def __len__(self):
        n = len(self.data)
        return n // self.batch_size if self.drop_last else -(-n // self.batch_size)

    def epoch_batches(self, epoch):
        rng = np.random.default_rng([self.seed, epoch])
        n = len(self.data)
        order = rng.permutation(n) if self.shuffle else np.arange(n)
        for start in range(0, n, self.batch_size):
            idx = order[start : start + self.batch_size]
            if self.drop_last and len(idx) < self.batch_size:
                break
            x = self.data.images[idx]
            if self.augment:
                x = augment(x, rng)
            yield normalize(x, self.mean, self.std), self.data.labels[idx]

    def __iter__(self):
        yield from self.epoch_batches(self.epoch)
        self.epoch += 1

    def digest(self, epoch=0) -> str:
        h = hashlib.sha256()
        for x, y in self.epoch_batches(epoch):
            h.update(x.tobytes())
            h.update(y.astype("<i8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# CIFAR-10


def read_cifar10_file(path):
    """Parse one binary batch file into (uint8 images (N, 3, 32, 32), labels)."""
    path = os.fspath(path)
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise IngestionError(f"cannot read: {e.strerror or e}", path=path, offset=0) from e
    if raw.size == 0:
        raise IngestionError("empty file", path=path, offset=0)
    full = raw.size // CIFAR_RECORD
    if raw.size % CIFAR_RECORD:
        raise IngestionError(
            f"truncated record ({raw.size % CIFAR_RECORD} of {CIFAR_RECORD} bytes)", path=path, offset=full * CIFAR_RECORD
        )
    recs = raw.reshape(full, CIFAR_RECORD)
    labels = recs[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IngestionError(f"label byte {labels[bad[0]]} out of range", path=path, offset=int(bad[0]) * CIFAR_RECORD)
    return recs[:, 1:].reshape(full, *CIFAR_SHAPE), labels


def channel_stats(images, chunk=4096):
    """Streaming per-channel mean/std of uint8 images, in [0, 1] units."""
    c = images.shape[1]
    total = np.zeros(c)
    sq = np.zeros(c)
    count = 0
    for start in range(0, len(images), chunk):
        x = images[start : start + chunk].astype(np.float64) / 255.0
        total += x.sum(axis=(0, 2, 3))
        sq += (x * x).sum(axis=(0, 2, 3))
        count += x.shape[0] * x.shape[2] * x.shape[3]
    mean = total / count
    return tuple(mean), tuple(np.sqrt(np.maximum(sq / count - mean**2, 0.0)))


@dataclass
class Cifar10:
    train: LabeledBatch
    test: LabeledBatch


def load_cifar10(directory, stats="conventional") -> Cifar10:
    """Read the five training batches and the test batch from ``directory``.

    ``stats="fit"`` replaces the conventional normalisation constants with
    statistics computed on the training images.
    """
    directory = os.fspath(directory)

    def read(names):
        parts = []
        for name in names:
            path = os.path.join(directory, name)
            if not os.path.exists(path):
                raise IngestionError("missing CIFAR-10 batch file", path=path, offset=0)
            parts.append(read_cifar10_file(path))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    xtr, ytr = read(CIFAR_TRAIN_FILES)
    xte, yte = read(CIFAR_TEST_FILES)
    if stats == "fit":
        mean, std = channel_stats(xtr)
    elif stats == "conventional":
        mean, std = CIFAR_MEAN, CIFAR_STD
    else:
        raise ArgumentError(f"stats must be 'conventional' or 'fit', got {stats!r}")
    meta = {"dataset": "cifar10", "mean": list(mean), "std": list(std)}
    return Cifar10(LabeledBatch(xtr, ytr, 10, dict(meta)), LabeledBatch(xte, yte, 10, dict(meta)))


def cifar10_available(directory) -> bool:
    return all(os.path.exists(os.path.join(os.fspath(directory), f)) for f in CIFAR_TRAIN_FILES + CIFAR_TEST_FILES)


# --------------------------------------------------------------------------
# synthetic


@dataclass
class SynthSpec:
    num_classes: int = 10
    channels: int = 3
    image_size: int = 32
    n_train: int = 2000
    n_test: int = 500
    # prototype amplitude relative to unit pixel noise
    separation: float = 1.0
    noise: float = 1.0
    # lower-resolution grid the prototypes are drawn on before upsampling
    prototype_grid: int = 4
    class_prior: tuple | None = None

    def validate(self):
        if self.num_classes < 1:
            raise ArgumentError("synthetic dataset needs at least one class")
        if self.n_train < 0 or self.n_test < 0 or self.channels < 1 or self.image_size < 1:
            raise ArgumentError("sizes must be positive")
        if self.image_size % self.prototype_grid:
            raise ArgumentError("prototype_grid must divide image_size")
        if self.class_prior is not None:
            p = np.asarray(self.class_prior, dtype=float)
            if p.shape != (self.num_classes,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ArgumentError("class_prior must be a probability vector over the classes")
        return self


@dataclass
class SynthData:
    train: LabeledBatch
    test: LabeledBatch
    prototypes: np.ndarray


def synth_dataset(spec: SynthSpec | None = None, seed: int = 0) -> SynthData:
    """Gaussian clusters around smooth per-class prototype images."""
    spec = (spec or SynthSpec()).validate()
    rng = np.random.default_rng(seed)
    g, s = spec.prototype_grid, spec.image_size
    coarse = rng.standard_normal((spec.num_classes, spec.channels, g, g))
    protos = np.repeat(np.repeat(coarse, s // g, axis=2), s // g, axis=3) * spec.separation
    meta = {"dataset": "synthetic", "seed": seed, "mean": [0.0] * spec.channels, "std": [1.0] * spec.channels}

    def draw(n):
        y = rng.choice(spec.num_classes, size=n, p=spec.class_prior)
        x = protos[y] + spec.noise * rng.standard_normal((n, spec.channels, s, s))
        return LabeledBatch(x.astype(np.float32), y, spec.num_classes, dict(meta))

    return SynthData(draw(spec.n_train), draw(spec.n_test), protos.astype(np.float32))
