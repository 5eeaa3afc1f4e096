"""Datasets: synthetic Gaussian mixtures, MNIST IDX files, label masking, batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .objectives import UNLABELED, LabelRegime
from .rng import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    regime: LabelRegime
    split: str = "train"

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.x.ndim != 2 or len(self.labels) != len(self.x):
            raise ValueError(f"{len(self.labels)} labels for x of shape {self.x.shape}")
        marked = self.labels[self.labels != UNLABELED]
        top = max(self.regime.real_indices) + 1
        if np.any((marked < 0) | (marked >= top)):
            raise ValueError("label outside the regime's class range")

    def __len__(self):
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass
class LabeledBatch:
    """A batch of rows with discriminator targets.

    Fake batches additionally carry the generator classes they were
    conditioned on, the sampled generator function and its forward tape.
    """

    x: np.ndarray
    labels: np.ndarray
    regime: LabelRegime | None = None
    gen_classes: np.ndarray | None = None
    function: object = None
    tape: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class GmmSpec:
    means: tuple[tuple[float, float], ...] = ((-2.0, 0.0), (2.0, 0.0))
    cov_scale: float = 0.25
    per_class_count: int = 500

    def __post_init__(self):
        if len(self.means) < 1:
            raise ValueError("GMM needs at least one component")
        if len(set(map(tuple, self.means))) != len(self.means):
            raise ValueError("GMM means must be pairwise distinct")
        if self.cov_scale < 0 or self.per_class_count < 0:
            raise ValueError("cov_scale and per_class_count must be nonnegative")

    @property
    def K(self) -> int:
        return len(self.means)


def make_gmm(spec: GmmSpec, rng: Rng, split: str = "train") -> Dataset:
    gen = rng.generator()
    xs, ys = [], []
    for k, mean in enumerate(spec.means):
        noise = gen.standard_normal((spec.per_class_count, 2))
        xs.append(np.asarray(mean, dtype=np.float64) + spec.cov_scale * noise)
        ys.append(np.full(spec.per_class_count, k))
    return Dataset(np.concatenate(xs), np.concatenate(ys),
                   LabelRegime("supervised", spec.K), split)


def write_idx(images_path, labels_path, images: np.ndarray, labels: Sequence[int]):
    """Write uint8 images (count, rows, cols) and labels as uncompressed IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        import gzip
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def read_idx(images_path, labels_path, num_classes: int = 10, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] and rows flattened."""
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise FormatError(f"{images_path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise FormatError(f"{images_path}: expected {count * rows * cols} pixels, found {pixels.size}")

    raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise FormatError(f"{labels_path}: truncated header")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
    if n_labels != count:
        raise FormatError(f"{count} images but {n_labels} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size != n_labels:
        raise FormatError(f"{labels_path}: expected {n_labels} labels, found {labels.size}")

    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), LabelRegime("supervised", num_classes), split)


def mask_labels(data: Dataset, labeled_per_class: int, rng: Rng) -> Dataset:
    """Keep ``labeled_per_class`` random labels per class; mark the rest unlabeled."""
    gen = rng.generator()
    K = data.regime.num_classes
    labels = np.full(len(data), UNLABELED, dtype=np.int64)
    for k in range(K):
        idx = np.flatnonzero(data.labels == k)
        if len(idx) < labeled_per_class:
            raise ValueError(f"class {k} has {len(idx)} examples, "
                             f"cannot keep {labeled_per_class} labeled")
        keep = gen.choice(idx, size=labeled_per_class, replace=False)
        labels[keep] = k
    return replace(data, labels=labels, regime=data.regime.with_kind("semi_supervised"))


def one_hot(labels: Sequence[int], K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any((labels < 0) | (labels >= K)):
        raise ValueError(f"labels must lie in [0, {K})")
    out = np.zeros((len(labels), K))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def batches(data: Dataset, n: int, rng: Rng) -> list[LabeledBatch]:
    """Shuffle once with ``rng`` and cut into full batches of ``n`` rows."""
    if n < 1:
        raise ValueError("batch size must be >= 1")
    perm = rng.generator().permutation(len(data))
    out = []
    for start in range(0, len(data) - n + 1, n):
        idx = perm[start:start + n]
        out.append(LabeledBatch(data.x[idx], data.labels[idx], data.regime))
    return out


def with_labeled_rows(batch: LabeledBatch, data: Dataset, n: int, rng: Rng) -> LabeledBatch:
    """Append ``n`` rows drawn with replacement from the labeled rows of ``data``."""
    if n < 0:
        raise ValueError("labeled row count must be >= 0")
    pool = np.flatnonzero(np.asarray(data.labels) != UNLABELED)
    if n == 0 or len(pool) == 0:
        return batch
    idx = pool[rng.generator().integers(0, len(pool), size=n)]
    return LabeledBatch(np.concatenate([batch.x, data.x[idx]]),
                        np.concatenate([np.asarray(batch.labels), np.asarray(data.labels)[idx]]),
                        batch.regime)


def balanced_classes(count: int, K: int) -> np.ndarray:
    """``count // K`` of each class, remainder assigned round-robin from class 0."""
    return np.arange(count) % K
