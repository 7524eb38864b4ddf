import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dybnn.data import (
    CIFAR_RECORD, CIFAR_TEST_FILES, CIFAR_TRAIN_FILES, BatchStream, LabeledBatch, SynthSpec, augment,
    channel_stats, load_cifar10, read_cifar10_file, synth_dataset,
)
from dybnn.errors import ArgumentError, IngestionError


def write_batch(path, labels, seed):
    rng = np.random.default_rng(seed)
    recs = np.empty((len(labels), CIFAR_RECORD), dtype=np.uint8)
    recs[:, 0] = labels
    recs[:, 1:] = rng.integers(0, 256, (len(labels), 3072), dtype=np.uint8)
    recs.tofile(path)
    return recs


@pytest.fixture
def cifar_dir(tmp_path):
    for i, name in enumerate(CIFAR_TRAIN_FILES + CIFAR_TEST_FILES):
        write_batch(tmp_path / name, np.arange(20) % 10, i)
    return tmp_path


def test_record_layout(tmp_path):
    recs = write_batch(tmp_path / "b.bin", [7, 3], 0)
    x, y = read_cifar10_file(tmp_path / "b.bin")
    assert y.tolist() == [7, 3]
    # channel-planar: first 1024 pixel bytes are the red plane
    np.testing.assert_array_equal(x[0, 0].reshape(-1), recs[0, 1:1025])
    np.testing.assert_array_equal(x[1, 2].reshape(-1), recs[1, 2049:])


def test_truncated_file_names_offset(tmp_path):
    write_batch(tmp_path / "b.bin", [1, 2, 3], 0)
    raw = (tmp_path / "b.bin").read_bytes()
    (tmp_path / "b.bin").write_bytes(raw[:-10])
    with pytest.raises(IngestionError) as e:
        read_cifar10_file(tmp_path / "b.bin")
    assert e.value.offset == 2 * CIFAR_RECORD
    assert e.value.path.endswith("b.bin")


def test_bad_label_names_offset(tmp_path):
    write_batch(tmp_path / "b.bin", [1, 12, 3], 0)
    with pytest.raises(IngestionError) as e:
        read_cifar10_file(tmp_path / "b.bin")
    assert e.value.offset == CIFAR_RECORD


def test_missing_file(cifar_dir):
    os.remove(cifar_dir / "data_batch_3.bin")
    with pytest.raises(IngestionError) as e:
        load_cifar10(cifar_dir)
    assert "data_batch_3.bin" in str(e.value)


def test_load_counts_and_fit_normalisation(cifar_dir):
    d = load_cifar10(cifar_dir, stats="fit")
    assert len(d.train) == 100 and len(d.test) == 20
    stream = BatchStream(d.train, 32, shuffle=False)
    x = np.concatenate([b for b, _ in stream])
    np.testing.assert_allclose(x.mean(axis=(0, 2, 3)), 0.0, atol=1e-2)
    np.testing.assert_allclose(x.std(axis=(0, 2, 3)), 1.0, atol=1e-2)


def test_streaming_stats_match_direct(rng):
    imgs = rng.integers(0, 256, (50, 3, 4, 4), dtype=np.uint8)
    mean, std = channel_stats(imgs, chunk=7)
    direct = imgs.astype(np.float64) / 255
    np.testing.assert_allclose(mean, direct.mean(axis=(0, 2, 3)), rtol=1e-10)
    np.testing.assert_allclose(std, direct.std(axis=(0, 2, 3)), rtol=1e-8)


def test_conventional_stats_recorded(cifar_dir):
    d = load_cifar10(cifar_dir)
    assert d.train.meta["mean"] == pytest.approx([0.4914, 0.4822, 0.4465])


def test_stream_determinism(cifar_dir):
    d = load_cifar10(cifar_dir)
    a = BatchStream(d.train, 16, seed=3, augment=True)
    b = BatchStream(d.train, 16, seed=3, augment=True)
    assert a.digest(0) == b.digest(0)
    assert a.digest(0) != a.digest(1)
    assert BatchStream(d.train, 16, seed=4, augment=True).digest(0) != a.digest(0)


def test_stream_covers_every_record_once(rng):
    data = LabeledBatch(rng.standard_normal((23, 1, 2, 2)).astype(np.float32), np.arange(23) % 3, 3)
    s = BatchStream(data, 5, seed=1)
    assert len(s) == 5
    labels = np.concatenate([y for _, y in s])
    assert sorted(labels.tolist()) == sorted(data.labels.tolist())
    assert len(BatchStream(data, 5, drop_last=True)) == 4


def test_augment_flip_and_crop_preserve_content(rng):
    x = rng.integers(1, 256, (64, 3, 8, 8)).astype(np.uint8)
    out = augment(x, np.random.default_rng(0), pad=2)
    assert out.shape == x.shape
    # every output pixel is zero padding or comes from the (possibly flipped) source
    for i in range(4):
        vals = set(np.unique(out[i]).tolist()) - {0}
        assert vals <= set(np.unique(x[i]).tolist())


def test_labeled_batch_validation():
    with pytest.raises(ArgumentError):
        LabeledBatch(np.zeros((2, 1, 1, 1)), [0, 5], 3)
    with pytest.raises(ArgumentError):
        LabeledBatch(np.zeros((2, 1, 1, 1)), [0], 3)


def test_synth_determinism():
    a, b = synth_dataset(SynthSpec(n_train=50, n_test=10), 9), synth_dataset(SynthSpec(n_train=50, n_test=10), 9)
    assert a.train.digest() == b.train.digest() and a.test.digest() == b.test.digest()
    assert synth_dataset(SynthSpec(n_train=50, n_test=10), 10).train.digest() != a.train.digest()


def test_synth_zero_classes():
    with pytest.raises(ArgumentError):
        synth_dataset(SynthSpec(num_classes=0))


def test_synth_class_prior_within_three_sigma():
    prior = (0.5, 0.3, 0.2)
    d = synth_dataset(SynthSpec(num_classes=3, n_train=10_000, n_test=0, image_size=4, class_prior=prior), 0)
    counts = np.bincount(d.train.labels, minlength=3)
    for k, p in enumerate(prior):
        assert abs(counts[k] - 10_000 * p) <= 3 * np.sqrt(10_000 * p * (1 - p))


def test_two_separated_classes_are_linearly_separable():
    d = synth_dataset(SynthSpec(num_classes=2, n_train=200, n_test=0, image_size=8, separation=3.0, noise=0.5), 1)
    x = d.train.images.reshape(200, -1).astype(np.float64)
    y = np.where(d.train.labels == 1, 1.0, -1.0)
    w = np.zeros(x.shape[1])
    for _ in range(50):  # perceptron
        for xi, yi in zip(x, y):
            if yi * (xi @ w) <= 0:
                w += yi * xi
    assert np.all(np.sign(x @ w) == y)


@given(st.integers(1, 5), st.integers(0, 2**63 - 1))
def test_synth_any_seed(classes, seed):
    d = synth_dataset(SynthSpec(num_classes=classes, n_train=8, n_test=2, image_size=4), seed)
    assert d.train.images.shape == (8, 3, 4, 4)
    assert d.train.labels.max() < classes
