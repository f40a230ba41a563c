"""Dataset loading, synthesis, and the two on-disk image formats.

Images are float64 in [0, 1] shaped (N, C, H, W); labels are int64.
Both classic formats are supported for reading and writing:

* the big-endian IDX format (u8 images with magic 0x00000803, u8 labels
  with magic 0x00000801), used by the 28x28 digit set;
* the 3073-byte-record binary format (1 label byte + 3072 channel-major
  pixel bytes per record) used by the 32x32 color set.

Writers exist so adversarial examples can be dumped back out in the same
format their source dataset came in.  Malformed files raise
DataFormatError with the offset or field that broke.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, DataFormatError
from .tensor import DTYPE, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073

# Canonical file names for the two downloadable sets, per split.
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}

DATA_DIR_ENV = "WTFREE_DATA_DIR"


@dataclass
class LabeledImageSet:
    """A batch of images with integer class labels.

    Invariants, checked at construction: images are (N, C, H, W) float64
    inside [0, 1]; labels are (N,) integers inside [0, n_classes).
    """

    images: np.ndarray
    labels: np.ndarray
    name: str
    n_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels)
        if self.images.ndim != 4:
            raise ContractError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ContractError(f"labels must be integers, got dtype {self.labels.dtype}")
        self.labels = self.labels.astype(np.int64)
        if self.labels.shape != (self.images.shape[0],):
            raise ContractError(
                f"{self.images.shape[0]} images but labels shaped {self.labels.shape}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ContractError(
                f"pixel values must lie in [0, 1], got "
                f"[{self.images.min()}, {self.images.max()}]"
            )
        if self.n_classes < 2:
            raise ContractError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(
                f"labels must lie in [0, {self.n_classes}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def input_shape(self) -> tuple:
        return self.images.shape[1:]

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(
            images=self.images[idx], labels=self.labels[idx],
            name=self.name, n_classes=self.n_classes,
        )

    def take(self, n: int, seed: Optional[int] = None) -> "LabeledImageSet":
        """First n samples, or a seeded random n-subset when a seed is given."""
        n = min(int(n), len(self))
        if seed is None:
            return self.subset(slice(0, n))
        idx = make_rng(seed).permutation(len(self))[:n]
        return self.subset(idx)


def batch_indices(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
    """Yield index arrays covering range(n), shuffled when an rng is given.

    The final batch may be short; every sample appears exactly once.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


# ------------------------------------------------------------- IDX format


def _open_bytes(path) -> bytes:
    if str(path).endswith(".gz"):
        with gzip.open(path, "rb") as f:
            return f.read()
    with open(path, "rb") as f:
        return f.read()


def _idx_header(buf: bytes, path, want_magic: int, ndim: int):
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise DataFormatError(f"{path}: file too short for an IDX header ({len(buf)} bytes)")
    fields = struct.unpack(f">{1 + ndim}I", buf[:need])
    if fields[0] != want_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{fields[0]:08x}, expected 0x{want_magic:08x}"
        )
    return fields[1:], buf[need:]


def load_idx_images(path) -> np.ndarray:
    """(N, 1, H, W) float64 in [0, 1] from a big-endian u8 IDX image file."""
    buf = _open_bytes(path)
    (n, h, w), body = _idx_header(buf, path, IDX_IMAGES_MAGIC, 3)
    if len(body) != n * h * w:
        raise DataFormatError(
            f"{path}: header promises {n}x{h}x{w}={n * h * w} pixels, body has {len(body)} bytes"
        )
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(n, 1, h, w)
    return pixels.astype(DTYPE) / 255.0


def load_idx_labels(path) -> np.ndarray:
    buf = _open_bytes(path)
    (n,), body = _idx_header(buf, path, IDX_LABELS_MAGIC, 1)
    if len(body) != n:
        raise DataFormatError(f"{path}: header promises {n} labels, body has {len(body)} bytes")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_mnist_idx(images_path, labels_path, name: str = "mnist") -> LabeledImageSet:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images_path} has {images.shape[0]} images but "
            f"{labels_path} has {labels.shape[0]} labels"
        )
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{labels_path}: label {labels.max()} out of range for 10 classes")
    return LabeledImageSet(images=images, labels=labels, name=name, n_classes=10)


def save_idx_images(path, images: np.ndarray) -> None:
    """Quantize (N, 1, H, W) floats in [0, 1] to u8 and write IDX."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] != 1:
        raise ContractError(f"IDX image files hold one channel, got shape {images.shape}")
    n, _, h, w = images.shape
    u8 = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w))
        f.write(u8.tobytes())


def save_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ContractError("IDX labels must fit in a byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------- CIFAR binary


def load_cifar10_binary(paths, name: str = "cifar10") -> LabeledImageSet:
    """Concatenate one or more 3073-byte-record batch files."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    chunks, labels = [], []
    for path in paths:
        buf = _open_bytes(path)
        if not buf or len(buf) % CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: size {len(buf)} is not a positive multiple of {CIFAR_RECORD}"
            )
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        lab = records[:, 0].astype(np.int64)
        if lab.max() > 9:
            bad = int(np.argmax(records[:, 0] > 9))
            raise DataFormatError(
                f"{path}: record {bad} has label {lab.max()} out of range for 10 classes"
            )
        chunks.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(DTYPE) / 255.0)
        labels.append(lab)
    return LabeledImageSet(
        images=np.concatenate(chunks),
        labels=np.concatenate(labels),
        name=name,
        n_classes=10,
    )


def save_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[1:] != (3, 32, 32):
        raise ContractError(f"expected (N, 3, 32, 32) images, got {images.shape}")
    u8 = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((images.shape[0], CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = u8.reshape(images.shape[0], -1)
    with open(path, "wb") as f:
        f.write(records.tobytes())


# ------------------------------------------------------ synthetic images


def synthetic_gaussians(
    n_samples: int,
    input_shape: Sequence[int] = (1, 14, 14),
    n_classes: int = 2,
    seed: int = 0,
    template_seed: int = 42,
    separation: float = 1.0,
    noise: float = 0.1,
    name: str = "synthetic",
) -> LabeledImageSet:
    """Class-conditional Gaussian blobs rendered as images.

    Each class gets a fixed random template; samples are the template
    plus pixel noise, squashed into [0, 1].  The templates come from
    ``template_seed`` alone, so two splits drawn with different sample
    seeds share the same classes and a model trained on one generalizes
    to the other.  With the default separation the task is easy enough
    that a small net reaches high accuracy in a few epochs, which makes
    this the hermetic stand-in for real data in tests and demos.
    """
    if n_samples < 1:
        raise ContractError(f"n_samples must be >= 1, got {n_samples}")
    if separation < 0 or noise < 0:
        raise ContractError("separation and noise must be non-negative")
    shape = tuple(int(e) for e in input_shape)
    if len(shape) != 3:
        raise ContractError(f"input_shape must be (C, H, W), got {shape}")
    template_rng = make_rng(template_seed)
    templates = 0.5 + separation * 0.15 * template_rng.uniform(-1.0, 1.0, size=(n_classes, *shape))
    rng = make_rng(seed)
    labels = rng.integers(0, n_classes, size=n_samples)
    images = templates[labels] + noise * rng.standard_normal((n_samples, *shape))
    images = np.clip(images, 0.0, 1.0)
    return LabeledImageSet(images=images, labels=labels, name=name, n_classes=n_classes)


# ------------------------------------------------------- file discovery


def resolve_data_dir(explicit: Optional[str] = None) -> Optional[str]:
    """Explicit path if given, else the WTFREE_DATA_DIR environment variable."""
    if explicit:
        return explicit
    return os.environ.get(DATA_DIR_ENV) or None


def _find(directory: str, filename: str) -> Optional[str]:
    for candidate in (filename, filename + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    return None


def load_named_dataset(dataset: str, split: str, data_dir: Optional[str] = None) -> LabeledImageSet:
    """Load "mnist" or "cifar10" by conventional file names, or synthesize.

    For "synthetic" no files are involved; train and test splits use
    different derived seeds so they are disjoint draws.
    """
    if split not in ("train", "test"):
        raise ContractError(f"split must be 'train' or 'test', got {split!r}")
    if dataset == "synthetic":
        seed = 1000 if split == "train" else 2000
        n = 2000 if split == "train" else 500
        # 16x16 is the smallest square the stock convolutional network
        # accepts (two conv5+pool2 stages), so the built-in dataset is
        # sized to feed it directly.
        return synthetic_gaussians(n, input_shape=(1, 16, 16), seed=seed, separation=2.0)
    if dataset not in ("mnist", "cifar10"):
        raise ContractError(f"unknown dataset {dataset!r}")
    directory = resolve_data_dir(data_dir)
    if not directory:
        raise DataFormatError(
            f"no data directory for {dataset!r}: pass one or set {DATA_DIR_ENV}"
        )
    wanted = MNIST_FILES[split] if dataset == "mnist" else CIFAR_FILES[split]
    found = [_find(directory, f) for f in wanted]
    missing = [w for w, f in zip(wanted, found) if f is None]
    if missing:
        raise DataFormatError(f"missing {dataset} files in {directory}: {missing}")
    if dataset == "mnist":
        return load_mnist_idx(found[0], found[1], name=f"mnist-{split}")
    return load_cifar10_binary(found, name=f"cifar10-{split}")
