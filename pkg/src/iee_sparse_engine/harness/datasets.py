"""
Dataset ingestion: MNIST-format IDX files, CIFAR-10 binary batches, synthetic generators
"""

import gzip
import logging
import os
import urllib.request
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ConfigError, DataFormatError
from ..reproducibility.state_manager import seed_stream

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3072

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}
MNIST_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"


class DatasetKind(str, Enum):
    """Supported dataset sources"""
    IDX_IMAGES = "idx-images"
    CIFAR_BINARY = "cifar-binary"
    SYNTHETIC = "synthetic"


class DatasetSpec(BaseModel):
    """The ``data`` section of an experiment"""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind = DatasetKind.SYNTHETIC
    path: Optional[str] = None
    download: bool = False
    train_images: str = MNIST_FILES["train_images"]
    train_labels: str = MNIST_FILES["train_labels"]
    test_images: str = MNIST_FILES["test_images"]
    test_labels: str = MNIST_FILES["test_labels"]
    train_batches: List[str] = Field(default_factory=lambda: [f"data_batch_{i}.bin" for i in range(1, 6)])
    test_batches: List[str] = Field(default_factory=lambda: ["test_batch.bin"])
    generator: Literal["two-moons", "blobs", "regression"] = "two-moons"
    n_samples: int = Field(default=2048, gt=0)
    n_test: int = Field(default=512, ge=0)
    n_features: int = Field(default=2, gt=0)
    n_classes: int = Field(default=2, gt=0)
    noise: float = Field(default=0.1, ge=0.0)
    batch_size: int = Field(default=128, gt=0)
    mean: List[float] = Field(default_factory=list)
    std: List[float] = Field(default_factory=list)
    flatten: bool = True
    limit: Optional[int] = Field(default=None, gt=0)


def _open(path: Path):
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path: str, expected_magic: Optional[int] = None) -> np.ndarray:
    """
    Parse an IDX file (optionally gzipped) of unsigned bytes.

    Args:
        path: File path
        expected_magic: 0x00000803 for images, 0x00000801 for labels

    Returns:
        uint8 array with the header's dimensions

    Raises:
        DataFormatError: magic mismatch (offset 0) or truncated payload
    """
    with _open(Path(path)) as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header (offset 0)")
    magic = int.from_bytes(raw[:4], "big")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0 (expected unsigned-byte data)")
    if expected_magic is not None and magic != expected_magic:
        raise DataFormatError(f"{path}: IDX magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX dimensions at offset 4")
    dims = [int.from_bytes(raw[4 + 4 * k: 8 + 4 * k], "big") for k in range(ndim)]
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header < count:
        raise DataFormatError(
            f"{path}: IDX payload truncated at offset {len(raw)}, expected {header + count} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path: str, array: np.ndarray):
    """Write a uint8 array as an uncompressed IDX file."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(bytes([0, 0, 0x08, array.ndim]))
        for dim in array.shape:
            f.write(int(dim).to_bytes(4, "big"))
        f.write(array.tobytes())


def read_cifar_binary(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parse a CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.

    Returns:
        (images uint8 (N, 3, 32, 32), labels uint8 (N,))
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD_BYTES != 0:
        offset = (raw.size // CIFAR_RECORD_BYTES) * CIFAR_RECORD_BYTES
        raise DataFormatError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD_BYTES}-byte records "
            f"(partial record at offset {offset})"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataFormatError(f"{path}: label {labels[bad]} > 9 at offset {bad * CIFAR_RECORD_BYTES}")
    return records[:, 1:].reshape(-1, 3, 32, 32), labels


def data_dir(spec: DatasetSpec) -> Path:
    """``IEE_DATA_DIR`` overrides the spec's path; the default cache is ``~/.cache/iee``."""
    env = os.environ.get("IEE_DATA_DIR")
    if env:
        return Path(env)
    if spec.path:
        return Path(spec.path)
    return Path.home() / ".cache" / "iee"


def _fetch_mnist(directory: Path, names: List[str]):
    directory.mkdir(parents=True, exist_ok=True)
    for name in names:
        target = directory / name
        if target.exists():
            continue
        logger.info("downloading %s", name)
        urllib.request.urlretrieve(MNIST_MIRROR + name, target)


def synthetic_arrays(spec: DatasetSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw ``n_samples + n_test`` points from the configured generator.

    ``two-moons`` gives 2-D two-class points, ``blobs`` isotropic Gaussian
    clusters in ``n_features`` dimensions, ``regression`` a noisy linear
    target (float labels of width ``n_classes``).
    """
    n = spec.n_samples + spec.n_test
    if spec.generator == "two-moons":
        half = n // 2
        angles = rng.uniform(0.0, np.pi, n)
        labels = np.r_[np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)]
        x = np.where(labels == 0, np.cos(angles), 1.0 - np.cos(angles))
        y = np.where(labels == 0, np.sin(angles), 0.5 - np.sin(angles))
        points = np.stack([x, y], axis=1) + rng.normal(0.0, spec.noise, (n, 2))
        order = rng.permutation(n)
        return points[order].astype(np.float32), labels[order]
    if spec.generator == "blobs":
        centers = rng.normal(0.0, 3.0, (spec.n_classes, spec.n_features))
        labels = rng.integers(0, spec.n_classes, n)
        points = centers[labels] + rng.normal(0.0, max(spec.noise, 1e-6) * 5.0, (n, spec.n_features))
        return points.astype(np.float32), labels.astype(np.int64)
    weights = rng.normal(0.0, 1.0, (spec.n_features, spec.n_classes))
    points = rng.normal(0.0, 1.0, (n, spec.n_features))
    targets = points @ weights + rng.normal(0.0, spec.noise, (n, spec.n_classes))
    return points.astype(np.float32), targets.astype(np.float32)


class Dataset:
    """
    Train/test arrays with a deterministic per-epoch batch stream.

    The shuffle of epoch ``e`` is drawn from the ``shuffle`` sub-stream of
    the root seed keyed by ``e``, so every strategy sharing a seed sees the
    same data order.
    """

    def __init__(
        self,
        train: Tuple[np.ndarray, np.ndarray],
        test: Tuple[np.ndarray, np.ndarray],
        batch_size: int,
        seed: int = 0,
    ):
        self.x_train, self.y_train = train
        self.x_test, self.y_test = test
        self.batch_size = batch_size
        self.seed = seed

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.x_train.shape[1:])

    @property
    def num_train(self) -> int:
        return int(self.x_train.shape[0])

    @property
    def batches_per_epoch(self) -> int:
        return max(1, self.num_train // self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        return seed_stream(self.seed, "shuffle", epoch).permutation(self.num_train)

    def batch(self, epoch: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Mini-batch ``index`` of ``epoch`` (incomplete trailing batches are dropped)."""
        order = self.epoch_order(epoch)
        rows = order[index * self.batch_size:(index + 1) * self.batch_size]
        return self.x_train[rows], self.y_train[rows]

    def batches(self, epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        order = self.epoch_order(epoch)
        for index in range(self.batches_per_epoch):
            rows = order[index * self.batch_size:(index + 1) * self.batch_size]
            yield self.x_train[rows], self.y_train[rows]

    def sample_batch(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """One batch of distinct training rows drawn with ``rng``, outside the epoch order."""
        rows = rng.choice(self.num_train, size=min(self.batch_size, self.num_train), replace=False)
        return self.x_train[rows], self.y_train[rows]

    def stream(self, start_iteration: int = 0) -> Iterator[Tuple[int, int, np.ndarray, np.ndarray]]:
        """Endless ``(epoch, iteration, x, y)`` stream, resumable at any iteration."""
        per_epoch = self.batches_per_epoch
        iteration = start_iteration
        while True:
            epoch, index = divmod(iteration, per_epoch)
            order = self.epoch_order(epoch)
            for k in range(index, per_epoch):
                rows = order[k * self.batch_size:(k + 1) * self.batch_size]
                yield epoch, iteration, self.x_train[rows], self.y_train[rows]
                iteration += 1

    def test_batches(self, batch_size: int = 1024) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        for start in range(0, self.x_test.shape[0], batch_size):
            yield self.x_test[start:start + batch_size], self.y_test[start:start + batch_size]


def _normalize(images: np.ndarray, spec: DatasetSpec, channel_axis: int) -> np.ndarray:
    x = images.astype(np.float32) / 255.0
    if spec.mean:
        shape = [1] * x.ndim
        shape[channel_axis] = len(spec.mean)
        mean = np.asarray(spec.mean, dtype=np.float32).reshape(shape)
        std = np.asarray(spec.std or [1.0] * len(spec.mean), dtype=np.float32).reshape(shape)
        x = (x - mean) / std
    return x


def load_dataset(spec: DatasetSpec, seed: int = 0) -> Dataset:
    """
    Load or generate the dataset a spec describes.

    Args:
        spec: Dataset section of the experiment
        seed: Root seed (synthetic draws and shuffles derive from it)

    Returns:
        Dataset with normalized float32 inputs
    """
    if spec.kind == DatasetKind.SYNTHETIC:
        x, y = synthetic_arrays(spec, seed_stream(seed, "data"))
        split = spec.n_samples
        return Dataset((x[:split], y[:split]), (x[split:], y[split:]), spec.batch_size, seed)

    directory = data_dir(spec)
    if spec.kind == DatasetKind.IDX_IMAGES:
        names = [spec.train_images, spec.train_labels, spec.test_images, spec.test_labels]
        if spec.download:
            _fetch_mnist(directory, names)
        missing = [n for n in names if not (directory / n).exists()]
        if missing:
            raise ConfigError(f"data: missing IDX files in {directory}: {', '.join(missing)}")
        images = [read_idx(str(directory / n), IDX_IMAGES_MAGIC) for n in (spec.train_images, spec.test_images)]
        labels = [read_idx(str(directory / n), IDX_LABELS_MAGIC) for n in (spec.train_labels, spec.test_labels)]
        xs = [_normalize(im[:, None, :, :], spec, 1) for im in images]
    else:
        parts = []
        for group in (spec.train_batches, spec.test_batches):
            missing = [n for n in group if not (directory / n).exists()]
            if missing:
                raise ConfigError(f"data: missing CIFAR batches in {directory}: {', '.join(missing)}")
            decoded = [read_cifar_binary(str(directory / n)) for n in group]
            parts.append((np.concatenate([d[0] for d in decoded]), np.concatenate([d[1] for d in decoded])))
        xs = [_normalize(parts[0][0], spec, 1), _normalize(parts[1][0], spec, 1)]
        labels = [parts[0][1], parts[1][1]]
    for k, label in enumerate(labels):
        if label.shape[0] != xs[k].shape[0]:
            raise DataFormatError(f"data: {xs[k].shape[0]} images but {label.shape[0]} labels")
    if spec.flatten:
        xs = [x.reshape(x.shape[0], -1) for x in xs]
    ys = [np.asarray(label, dtype=np.int64) for label in labels]
    if spec.limit is not None:
        xs[0], ys[0] = xs[0][:spec.limit], ys[0][:spec.limit]
    return Dataset((xs[0], ys[0]), (xs[1], ys[1]), spec.batch_size, seed)
