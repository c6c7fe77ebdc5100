"""Dataset ingestion, splitting, Z-score normalisation and image export."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Sample, rng_stream
from .errors import FileError, FormatError, InvalidArgumentError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    shape: tuple[int, int, int]  # (H, W, C)
    num_classes: int
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.shape) != 3:
            raise InvalidArgumentError(f"descriptor shape must be (H, W, C), got {self.shape}")
        channels = self.shape[2]
        if self.num_classes < 2:
            raise InvalidArgumentError("a dataset needs at least two classes")
        if len(self.means) != channels or len(self.stds) != channels:
            raise InvalidArgumentError("need one mean and one std per channel")
        if any(s <= 0 for s in self.stds):
            raise InvalidArgumentError("stds must be strictly positive")

    @property
    def num_features(self) -> int:
        h, w, c = self.shape
        return h * w * c

    @property
    def num_positions(self) -> int:
        return self.shape[0] * self.shape[1]


CIFAR10 = DatasetDescriptor(
    "cifar10", (32, 32, 3), 10, (0.4914, 0.4822, 0.4465), (0.2023, 0.1994, 0.2010)
)
IMAGENETTE = DatasetDescriptor(
    "imagenette", (128, 128, 3), 10, (0.485, 0.456, 0.406), (0.229, 0.224, 0.225)
)
MNIST = DatasetDescriptor("mnist", (28, 28, 1), 10, (0.0,), (1.0,))
PRESETS = {d.name: d for d in (CIFAR10, IMAGENETTE, MNIST)}


@dataclass(frozen=True)
class Dataset:
    """Samples stored as one ``(n, H, W, C)`` array plus an int label vector."""

    x: np.ndarray
    y: np.ndarray
    descriptor: DatasetDescriptor
    split: str = "train"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 4 or x.shape[1:] != self.descriptor.shape:
            raise InvalidArgumentError(
                f"sample shape {x.shape[1:]} does not match descriptor {self.descriptor.shape}"
            )
        if y.shape != (x.shape[0],):
            raise InvalidArgumentError("label vector length differs from sample count")
        if y.size and (y.min() < 0 or y.max() >= self.descriptor.num_classes):
            raise InvalidArgumentError("label outside [0, C)")
        if self.split not in ("train", "test"):
            raise InvalidArgumentError(f"unknown split tag {self.split!r}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return int(self.y.shape[0])

    def __getitem__(self, i) -> Sample:
        return Sample(self.x[i], int(self.y[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def flat(self) -> np.ndarray:
        return self.x.reshape(len(self), -1)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, x=self.x[idx], y=self.y[idx])

    def with_split(self, split: str) -> "Dataset":
        return replace(self, split=split)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FileError(f"no such file: {path}") from exc


def load_idx(image_path, label_path, split="train", descriptor=None) -> Dataset:
    """Parse an IDX image/label file pair (MNIST layout), scaling bytes to [0, 1]."""
    raw_img = _read(image_path)
    raw_lbl = _read(label_path)
    if len(raw_img) < 16:
        raise FormatError(f"{image_path}: truncated IDX header")
    if len(raw_lbl) < 8:
        raise FormatError(f"{label_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw_img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{image_path}: bad image magic 0x{magic:08x}")
    lmagic, lcount = struct.unpack(">II", raw_lbl[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"{label_path}: bad label magic 0x{lmagic:08x}")
    if lcount != count:
        raise FormatError(f"image count {count} != label count {lcount}")
    need = count * rows * cols
    if len(raw_img) - 16 < need:
        raise FormatError(f"{image_path}: truncated payload")
    if len(raw_lbl) - 8 < lcount:
        raise FormatError(f"{label_path}: truncated payload")
    pixels = np.frombuffer(raw_img, dtype=np.uint8, count=need, offset=16)
    labels = np.frombuffer(raw_lbl, dtype=np.uint8, count=lcount, offset=8).astype(np.int64)
    x = pixels.reshape(count, rows, cols, 1).astype(np.float64) / 255.0
    if descriptor is None:
        n_cls = max(10, int(labels.max()) + 1) if labels.size else 10
        descriptor = DatasetDescriptor("idx", (rows, cols, 1), n_cls, (0.0,), (1.0,))
    return Dataset(x, labels, descriptor, split)


def load_cifar10_binary(path, split="train", descriptor=CIFAR10) -> Dataset:
    """Parse CIFAR-10 binary records: 1 label byte + 1024 R + 1024 G + 1024 B."""
    raw = _read(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise FormatError(f"{path}: label byte {labels.max()} > 9")
    planar = records[:, 1:].reshape(-1, 3, 32, 32)
    x = planar.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return Dataset(x, labels, descriptor, split)


def synth_gaussians(n_per_class: int, d: int, num_classes: int, separation: float,
                    seed: int, shape=None) -> Dataset:
    """Isotropic unit-variance Gaussian blobs; class c is centred at ``separation * e_c``.

    ``shape`` optionally views the d features as an (H, W, C) image; the
    default is ``(d, 1, 1)``. Samples come out shuffled.
    """
    if d < 1 or num_classes < 2 or n_per_class < 1:
        raise InvalidArgumentError("need d >= 1, C >= 2 and n_per_class >= 1")
    if not separation > 0:
        raise InvalidArgumentError(f"separation must be positive, got {separation}")
    if shape is None:
        shape = (d, 1, 1)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != d:
        raise InvalidArgumentError(f"shape {shape} does not hold {d} features")
    rng = rng_stream(seed, "synth")
    centers = np.zeros((num_classes, d))
    for c in range(num_classes):
        centers[c, c % d] = separation
    y = np.repeat(np.arange(num_classes), n_per_class)
    x = centers[y] + rng.standard_normal((y.size, d))
    perm = rng.permutation(y.size)
    desc = DatasetDescriptor(
        "synthetic", shape, num_classes, (0.0,) * shape[2], (1.0,) * shape[2]
    )
    return Dataset(x[perm].reshape((-1,) + shape), y[perm], desc, "train")


def train_test_split(ds: Dataset, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Deterministic split by stream order: the first fraction is training data."""
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError("train_fraction must lie in (0, 1)")
    cut = int(round(len(ds) * train_fraction))
    idx = np.arange(len(ds))
    return ds.subset(idx[:cut]).with_split("train"), ds.subset(idx[cut:]).with_split("test")


def _channel_stats(desc: DatasetDescriptor, x):
    x = np.asarray(x, dtype=np.float64)
    shape = desc.shape
    if x.shape[-3:] != shape:
        raise InvalidArgumentError(f"tensor shape {x.shape} does not end with {shape}")
    return x, np.asarray(desc.means), np.asarray(desc.stds)


def normalize(x, desc: DatasetDescriptor) -> np.ndarray:
    x, mean, std = _channel_stats(desc, x)
    return (x - mean) / std


def denormalize(x, desc: DatasetDescriptor) -> np.ndarray:
    x, mean, std = _channel_stats(desc, x)
    return x * std + mean


def normalize_dataset(ds: Dataset) -> Dataset:
    return replace(ds, x=normalize(ds.x, ds.descriptor))


def to_bytes_image(x, desc: DatasetDescriptor) -> np.ndarray:
    """Denormalise a (H, W, C) tensor and quantise it to uint8."""
    pixels = denormalize(x, desc) * 255.0
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def write_pnm(path, x, desc: DatasetDescriptor) -> Path:
    """Write a normalised tensor as binary PGM (1 channel) or PPM (3 channels)."""
    img = to_bytes_image(x, desc)
    h, w, c = img.shape
    if c == 1:
        header = b"P5\n%d %d\n255\n" % (w, h)
    elif c == 3:
        header = b"P6\n%d %d\n255\n" % (w, h)
    else:
        raise InvalidArgumentError(f"cannot export {c}-channel images")
    path = Path(path)
    path.write_bytes(header + img.tobytes())
    return path


def read_pnm(path) -> np.ndarray:
    """Read back a P5/P6 file written by :func:`write_pnm` as uint8 (H, W, C)."""
    raw = _read(path)
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    w, h = (int(v) for v in parts[1].split())
    c = 1 if parts[0] == b"P5" else 3
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, c)
