import gzip
import struct

import numpy as np
import pytest

from optg import datasets, masking, nn
from optg.datasets import BatchIterator, Dataset
from optg.errors import FileError, FormatError, InputError
from optg.optim import Trainer, evaluate
from optg.schedules import LrSchedule


def write_mnist(tmp_path, images, labels, prefix="train", gz=False):
    img, lab = tmp_path / f"{prefix}-images-idx3-ubyte", tmp_path / f"{prefix}-labels-idx1-ubyte"
    datasets.write_idx(img, lab, images, labels)
    if gz:
        for p in (img, lab):
            p.with_name(p.name + ".gz").write_bytes(gzip.compress(p.read_bytes()))
            p.unlink()
    return img, lab


def test_idx_zero_image(tmp_path):
    write_mnist(tmp_path, np.zeros((1, 28, 28)), [3])
    ds = datasets.load_mnist_idx(tmp_path)
    assert ds.inputs.shape == (1, 1, 28, 28)
    np.testing.assert_array_equal(ds.inputs, (0 - 0.1307) / 0.3081)
    assert ds.labels.tolist() == [3]


def test_idx_gzip_and_scaling(tmp_path):
    write_mnist(tmp_path, np.full((2, 28, 28), 255), [1, 2], prefix="t10k", gz=True)
    ds = datasets.load_mnist_idx(tmp_path, split="test")
    np.testing.assert_allclose(ds.inputs, (1 - 0.1307) / 0.3081, rtol=1e-15)
    assert ds.split == "test"


def test_idx_empty(tmp_path):
    write_mnist(tmp_path, np.zeros((0, 28, 28)), [])
    assert len(datasets.load_mnist_idx(tmp_path)) == 0


def test_idx_count_mismatch(tmp_path):
    write_mnist(tmp_path, np.zeros((2, 28, 28)), [1])
    with pytest.raises(FormatError):
        datasets.load_mnist_idx(tmp_path)


def test_idx_bad_magic_reports_offset(tmp_path):
    img, lab = write_mnist(tmp_path, np.zeros((1, 28, 28)), [1])
    raw = bytearray(img.read_bytes())
    raw[3] = 0x01
    img.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        datasets.load_mnist_idx(img, lab)
    assert exc.value.offset == 0 and exc.value.exit_code == 3


def test_idx_truncated(tmp_path):
    img, lab = write_mnist(tmp_path, np.zeros((2, 28, 28)), [1, 2])
    img.write_bytes(img.read_bytes()[:-5])
    with pytest.raises(FormatError):
        datasets.load_mnist_idx(img, lab)


def test_idx_missing_file(tmp_path):
    with pytest.raises(FileError):
        datasets.load_mnist_idx(tmp_path)


def cifar_record(label, value):
    return bytes([label]) + bytes([value]) * 3072


def test_cifar_record_all_255(tmp_path):
    path = tmp_path / "one.bin"
    path.write_bytes(cifar_record(7, 255))
    ds = datasets.load_cifar10_binary(path, standardize=False)
    assert ds.labels.tolist() == [7]
    np.testing.assert_array_equal(ds.inputs, np.ones((1, 3, 32, 32)))
    std = datasets.load_cifar10_binary(path)
    np.testing.assert_allclose(std.inputs[0, :, 0, 0],
                               (1 - np.array(datasets.CIFAR10_MEAN)) / np.array(datasets.CIFAR10_STD))


def test_cifar_channel_planar(tmp_path):
    rec = bytes([2]) + bytes([10]) * 1024 + bytes([20]) * 1024 + bytes([30]) * 1024
    path = tmp_path / "planar.bin"
    path.write_bytes(rec)
    x = datasets.load_cifar10_binary(path, standardize=False).inputs
    np.testing.assert_allclose(x[0, :, 5, 7], np.array([10, 20, 30]) / 255)


def test_cifar_zero_length(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert len(datasets.load_cifar10_binary(path)) == 0


def test_cifar_bad_size_and_label(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(cifar_record(1, 0)[:-1])
    with pytest.raises(FormatError):
        datasets.load_cifar10_binary(path)
    path.write_bytes(cifar_record(1, 0) + cifar_record(10, 0))
    with pytest.raises(FormatError) as exc:
        datasets.load_cifar10_binary(path)
    assert exc.value.offset == 3073


def test_cifar_directory_layout(tmp_path):
    for i in range(1, 6):
        (tmp_path / f"data_batch_{i}.bin").write_bytes(cifar_record(i, i))
    (tmp_path / "test_batch.bin").write_bytes(cifar_record(0, 0) * 2)
    assert datasets.load_cifar10_binary(tmp_path).labels.tolist() == [1, 2, 3, 4, 5]
    assert len(datasets.load_cifar10_binary(tmp_path, split="test")) == 2


def test_synthetic_deterministic_and_empty():
    a, b = datasets.synthetic_blobs(3, 50), datasets.synthetic_blobs(3, 50)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert len(datasets.synthetic_blobs(3, 0)) == 0
    with pytest.raises(InputError):
        datasets.synthetic_blobs(0, 10, classes=1)


def test_simplex_means_are_equidistant():
    m = datasets.simplex_means(np.random.default_rng(0), 4, 16, 10.0)
    d = np.linalg.norm(m[:, None] - m[None], axis=-1)
    np.testing.assert_allclose(d[~np.eye(4, dtype=bool)], 10.0, rtol=1e-12)


def test_linear_probe_separates_blobs():
    train = datasets.synthetic_blobs(0, 1000, classes=2, dim=2, separation=10.0)
    model = nn.build_model("mlp:", (2,), 2, np.random.default_rng(0))
    Trainer(model, masking.attach_masks(model), LrSchedule(0.1, 5), BatchIterator(train, 32)).fit()
    assert evaluate(model, train) > 99.0


def test_cache_round_trip(tmp_path):
    ds = datasets.synthetic_blobs(1, 37, classes=3, dim=5)
    ds.mean, ds.std = (0.5,), (2.0,)
    datasets.save_cache(ds, tmp_path / "c.bin")
    back = datasets.load_cache(tmp_path / "c.bin")
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert (back.split, back.num_classes, back.mean, back.std) == ("train", 3, (0.5,), (2.0,))


def test_cache_rejects_garbage(tmp_path):
    path = tmp_path / "c.bin"
    path.write_bytes(b"NOTCACHE" + b"\0" * 20)
    with pytest.raises(FormatError):
        datasets.load_cache(path)
    ds = datasets.synthetic_blobs(1, 5)
    datasets.save_cache(ds, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError):
        datasets.load_cache(path)


def test_cache_version_checked(tmp_path):
    path = tmp_path / "c.bin"
    datasets.save_cache(datasets.synthetic_blobs(1, 5), path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        datasets.load_cache(path)


def test_iterator_visits_every_index_once():
    ds = Dataset(np.arange(103.0)[:, None], np.zeros(103), num_classes=1)
    it = BatchIterator(ds, 10, seed=5)
    seen = np.concatenate([x[:, 0] for x, _ in it.epoch(3)])
    assert sorted(seen.tolist()) == list(range(103))
    np.testing.assert_array_equal(it.permutation(3), BatchIterator(ds, 10, seed=5).permutation(3))
    assert not np.array_equal(it.permutation(3), it.permutation(4))


def test_dataset_invariants():
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1)), [0])
    with pytest.raises(InputError):
        Dataset(np.zeros((1, 1)), [10], num_classes=10)
    assert len(Dataset(np.zeros((5, 1)), np.zeros(5)).subset(3)) == 3
