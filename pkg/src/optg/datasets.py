"""Dataset readers (MNIST IDX, CIFAR-10 binary), synthetic blobs and batching."""

from dataclasses import dataclass, field
import gzip
import os
from pathlib import Path
import struct

import numpy as np

from .errors import FileError, FormatError, InputError

MNIST_MEAN, MNIST_STD = 0.1307, 0.3081
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10
    mean: tuple = ()
    std: tuple = ()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise InputError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.inputs.shape[1:])

    def subset(self, limit):
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.inputs[:limit], self.labels[:limit], self.split, self.num_classes,
                       self.mean, self.std)


@dataclass
class BatchIterator:
    """Shuffled mini-batches; the order of epoch ``e`` depends only on (seed, e)."""

    dataset: Dataset
    batch_size: int = 128
    seed: int = 0
    shuffle: bool = True
    epoch_counter: int = field(default=0)

    def permutation(self, epoch):
        n = len(self.dataset)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([self.seed, epoch]).permutation(n)

    def epoch(self, epoch):
        self.epoch_counter = epoch
        order = self.permutation(epoch)
        for i in range(0, len(order), self.batch_size):
            idx = order[i:i + self.batch_size]
            yield self.dataset.inputs[idx], self.dataset.labels[idx]

    def __iter__(self):
        return self.epoch(self.epoch_counter + 1)


# --------------------------------------------------------------------------
# MNIST IDX
# --------------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if not path.exists():
        raise FileError(f"missing file {path}")
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def _idx_header(raw, magic, ndim, name):
    if len(raw) < 4:
        raise FormatError(f"{name}: file shorter than the magic number", offset=len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{name}: bad magic 0x{got:08x}, expected 0x{magic:08x}", offset=0)
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{name}: truncated header", offset=len(raw))
    return struct.unpack(">" + "I" * ndim, raw[4:end]), end


def parse_idx_images(raw, name="images"):
    (n, rows, cols), off = _idx_header(raw, IDX_IMAGES_MAGIC, 3, name)
    need = off + n * rows * cols
    if len(raw) < need:
        raise FormatError(f"{name}: expected {n} images of {rows}x{cols}", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=off).reshape(n, rows, cols)


def parse_idx_labels(raw, name="labels"):
    (n,), off = _idx_header(raw, IDX_LABELS_MAGIC, 1, name)
    if len(raw) < off + n:
        raise FormatError(f"{name}: expected {n} labels", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=off)


def load_mnist_idx(images_path, labels_path=None, split="train"):
    """Read an IDX image/label pair (optionally gzipped) into a standardized Dataset.

    With a single directory argument the conventional file names are used.
    """
    if labels_path is None:
        prefix = "train" if split == "train" else "t10k"
        d = Path(images_path)
        images_path = d / f"{prefix}-images-idx3-ubyte"
        labels_path = d / f"{prefix}-labels-idx1-ubyte"
    images = parse_idx_images(_read_bytes(images_path), str(images_path))
    labels = parse_idx_labels(_read_bytes(labels_path), str(labels_path))
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", offset=4)
    x = (images.astype(np.float64) / 255.0 - MNIST_MEAN) / MNIST_STD
    return Dataset(x[:, None, :, :], labels.astype(np.int64), split, 10, (MNIST_MEAN,), (MNIST_STD,))


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (N,H,W) and labels as uncompressed IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --------------------------------------------------------------------------
# CIFAR-10 binary
# --------------------------------------------------------------------------

def parse_cifar10_records(raw, name="cifar"):
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{name}: size {len(raw)} is not a multiple of {CIFAR_RECORD}",
                          offset=len(raw) - len(raw) % CIFAR_RECORD)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0]
    bad = np.flatnonzero(labels >= 10)
    if bad.size:
        raise FormatError(f"{name}: label {labels[bad[0]]} out of range", offset=int(bad[0]) * CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10_binary(path, split="train", standardize=True):
    """Read CIFAR-10 binary batches.

    ``path`` is a single ``.bin`` file or the ``cifar-10-batches-bin``
    directory (``data_batch_{1..5}.bin`` for train, ``test_batch.bin`` for test).
    """
    path = Path(path)
    if path.is_dir():
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        files = [path / n for n in names]
    else:
        files = [path]
    xs, ys = [], []
    for f in files:
        x, y = parse_cifar10_records(_read_bytes(f), str(f))
        xs.append(x)
        ys.append(y)
    x = np.concatenate(xs).astype(np.float64) / 255.0
    y = np.concatenate(ys).astype(np.int64)
    if standardize:
        mean = np.array(CIFAR10_MEAN)[None, :, None, None]
        std = np.array(CIFAR10_STD)[None, :, None, None]
        x = (x - mean) / std
        return Dataset(x, y, split, 10, CIFAR10_MEAN, CIFAR10_STD)
    return Dataset(x, y, split, 10)


# --------------------------------------------------------------------------
# synthetic
# --------------------------------------------------------------------------

def simplex_means(rng, classes, dim, separation):
    """Vertices of a regular simplex, randomly rotated, with pairwise distance ``separation``."""
    if dim < classes - 1:
        dirs = rng.standard_normal((classes, dim))
        return separation / np.sqrt(2.0) * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    centered = np.eye(classes) - 1.0 / classes
    q, _ = np.linalg.qr(centered.T)
    coords = centered @ q[:, :classes - 1]          # edge length sqrt(2)
    rot, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return separation / np.sqrt(2.0) * coords @ rot[:, :classes - 1].T


def synthetic_blobs(seed, n, classes=4, dim=16, separation=4.0, split="train"):
    """Unit-variance Gaussian blobs around the vertices of a seeded random simplex.

    The class means depend on ``seed`` only; ``split`` selects an
    independent sample stream, so train and test share the same task.
    """
    if classes < 2:
        raise InputError("need at least two classes")
    means = simplex_means(np.random.default_rng([seed, 0]), classes, dim, separation)
    rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    labels = rng.integers(0, classes, size=n)
    x = means[labels] + rng.standard_normal((n, dim))
    return Dataset(x, labels, split, classes)


# --------------------------------------------------------------------------
# cache format
# --------------------------------------------------------------------------

CACHE_MAGIC = b"OPTGDSET"
CACHE_VERSION = 1


def save_cache(dataset, path):
    """Versioned header followed by little-endian float64 inputs and int64 labels."""
    split = dataset.split.encode()
    shape = dataset.inputs.shape
    head = CACHE_MAGIC + struct.pack("<III", CACHE_VERSION, dataset.num_classes, len(shape))
    head += struct.pack(f"<{len(shape)}Q", *shape)
    head += struct.pack("<H", len(split)) + split
    stats = list(dataset.mean) + list(dataset.std)
    head += struct.pack("<H", len(dataset.mean)) + struct.pack(f"<{len(stats)}d", *stats)
    with open(path, "wb") as f:
        f.write(head)
        f.write(np.ascontiguousarray(dataset.inputs, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())


def load_cache(path):
    raw = Path(path).read_bytes()
    if raw[:8] != CACHE_MAGIC:
        raise FormatError("not a dataset cache file", offset=0)
    version, num_classes, ndim = struct.unpack_from("<III", raw, 8)
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported cache version {version}", offset=8)
    off = 20
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    (slen,) = struct.unpack_from("<H", raw, off)
    split = raw[off + 2:off + 2 + slen].decode()
    off += 2 + slen
    (nstat,) = struct.unpack_from("<H", raw, off)
    stats = struct.unpack_from(f"<{2 * nstat}d", raw, off + 2)
    off += 2 + 16 * nstat
    count = int(np.prod(shape))
    if len(raw) != off + 8 * count + 8 * shape[0]:
        raise FormatError("cache payload size mismatch", offset=off)
    x = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
    y = np.frombuffer(raw, dtype="<i8", count=shape[0], offset=off + 8 * count).astype(np.int64)
    return Dataset(x, y, split, num_classes, tuple(stats[:nstat]), tuple(stats[nstat:]))


# --------------------------------------------------------------------------
# MNIST sample bundled with mlxtend
# --------------------------------------------------------------------------

def export_mlxtend_mnist(out_dir, test_fraction=0.2, seed=0):
    """Write the 5000-image MNIST sample shipped with ``mlxtend`` as IDX files.

    The sample is split into ``train-*`` and ``t10k-*`` files in ``out_dir``
    so that :func:`load_mnist_idx` reads it like the full dataset.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:
        raise FileError("mlxtend is not installed; pip install mlxtend") from exc
    x, y = mnist_data()
    x = np.asarray(x, dtype=np.uint8).reshape(-1, 28, 28)
    y = np.asarray(y, dtype=np.uint8)
    order = np.random.default_rng(seed).permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    test, train = order[:n_test], order[n_test:]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte", x[train], y[train])
    write_idx(out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte", x[test], y[test])
    return out


def mnist_dir_or_sample(data_dir=None, cache_root=None):
    """Directory with MNIST IDX files.

    An explicit ``data_dir`` is used as is; otherwise ``$OPTG_MNIST_DIR``;
    otherwise the mlxtend sample exported under ``$OPTG_CACHE_DIR``.
    """
    if data_dir:
        return Path(data_dir)
    if os.environ.get("OPTG_MNIST_DIR"):
        return Path(os.environ["OPTG_MNIST_DIR"])
    root = Path(cache_root or os.environ.get("OPTG_CACHE_DIR", Path.home() / ".cache" / "optg"))
    target = root / "mnist-sample"
    if not (target / "t10k-labels-idx1-ubyte").exists():
        export_mlxtend_mnist(target)
    return target
