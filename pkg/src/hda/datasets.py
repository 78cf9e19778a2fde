"""Labeled datasets: synthetic generators, domain shifts, file formats, batching.

Features always live in [0, 1]^(N x D) as float64; labels are int64 per row.
Generators are pure functions of their seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, InputError
from .seeding import Seed, seed_seq

DOMAIN_TAGS = ("source", "target", "adversarial")

# stream ids, one per independent random consumer
_STREAM_MOON_NOISE = 40
_STREAM_BLOB_NOISE = 41
_STREAM_SHIFT_NOISE = 42


@dataclass(frozen=True)
class LabeledDataset:
    """An immutable feature matrix with per-row class labels and a domain tag."""

    features: np.ndarray
    labels: np.ndarray
    domain_tag: str
    class_count: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InputError(f"features must be a non-empty 2-d matrix, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InputError("features contain non-finite values")
        if feats.min() < 0.0 or feats.max() > 1.0:
            raise InputError(
                f"features must lie in [0, 1], got range "
                f"[{feats.min():.6g}, {feats.max():.6g}]"
            )
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise InputError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} rows"
            )
        if self.class_count < 1:
            raise InputError(f"class_count must be >= 1, got {self.class_count}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise InputError(
                f"labels must lie in [0, {self.class_count}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        if self.domain_tag not in DOMAIN_TAGS:
            raise InputError(
                f"domain_tag must be one of {DOMAIN_TAGS}, got {self.domain_tag!r}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def subset(d: LabeledDataset, idx) -> LabeledDataset:
    """Row-subset of a dataset (same tag and class count)."""
    idx = np.asarray(idx)
    if idx.size == 0:
        raise InputError("cannot take an empty subset")
    return LabeledDataset(d.features[idx], d.labels[idx], d.domain_tag, d.class_count)


# --------------------------------------------------------------------------
# Synthetic generators
# --------------------------------------------------------------------------

# Two interleaved half circles are generated on the canonical arcs
#   class 0: (cos t, sin t),            t in [0, pi]
#   class 1: (1 - cos t, 0.5 - sin t),  t in [0, pi]
# whose joint bounding box is [-1, 2] x [-0.5, 1].  A fixed affine map scales
# both axes by 1/3 (so rotations of the result stay shape-preserving) and
# centers the y-range, landing everything in [0, 1]^2 with margin.
def _moons_to_unit(points: np.ndarray) -> np.ndarray:
    out = np.empty_like(points)
    out[:, 0] = (points[:, 0] + 1.0) / 3.0
    out[:, 1] = (points[:, 1] + 0.5) / 3.0 + 0.25
    return out


def gen_two_moons(n: int, noise_sigma: float, seed: Seed) -> LabeledDataset:
    """Two interleaved half-circle classes in [0, 1]^2, balanced to +-1.

    With noise_sigma == 0 every point lies exactly on one of the canonical
    arcs mapped into the unit square.
    """
    if n < 2:
        raise InputError(f"need at least 2 samples, got {n}")
    if noise_sigma < 0:
        raise InputError(f"noise_sigma must be >= 0, got {noise_sigma}")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    pts = np.empty((n, 2))
    pts[:n0, 0] = np.cos(t0)
    pts[:n0, 1] = np.sin(t0)
    pts[n0:, 0] = 1.0 - np.cos(t1)
    pts[n0:, 1] = 0.5 - np.sin(t1)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed_seq(seed, _STREAM_MOON_NOISE))
        pts += rng.normal(0.0, noise_sigma, size=pts.shape)
    feats = np.clip(_moons_to_unit(pts), 0.0, 1.0)
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return LabeledDataset(feats, labels, "source", 2)


def gen_gaussian_blobs(n: int, centers, sigma: float, seed: Seed) -> LabeledDataset:
    """Isotropic Gaussian blobs, one class per center, clipped to [0, 1]^D."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    k = centers.shape[0]
    if k < 2:
        raise InputError(f"need at least 2 centers, got {k}")
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    if n < k:
        raise InputError(f"need at least one sample per center ({k}), got n={n}")
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    labels = np.repeat(np.arange(k, dtype=np.int64), counts)
    rng = np.random.default_rng(seed_seq(seed, _STREAM_BLOB_NOISE))
    feats = centers[labels] + sigma * rng.standard_normal((n, centers.shape[1]))
    return LabeledDataset(np.clip(feats, 0.0, 1.0), labels, "source", k)


@dataclass(frozen=True)
class ShiftSpec:
    """A synthetic domain shift: rotate about the centroid, translate, add
    Gaussian noise, add a per-feature bias, then clip back to [0, 1].

    Empty translation/channel_bias means "none".  Rotation is in radians and
    only defined for 2-d features.
    """

    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    noise_sigma: float = 0.0
    channel_bias: tuple[float, ...] = ()
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InputError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "channel_bias", tuple(float(v) for v in self.channel_bias))


def apply_shift(d: LabeledDataset, spec: ShiftSpec) -> LabeledDataset:
    """Produce the shifted copy of ``d`` tagged as the target domain.

    Labels are carried over unchanged; an all-default spec returns the
    features untouched.
    """
    x = d.features.copy()
    if spec.rotation != 0.0:
        if d.dim != 2:
            raise ConfigurationError(
                f"rotation is only defined for 2-d features, got dim {d.dim}"
            )
        c = x.mean(axis=0)
        cos, sin = np.cos(spec.rotation), np.sin(spec.rotation)
        rot = np.array([[cos, -sin], [sin, cos]])
        x = (x - c) @ rot.T + c
    if spec.translation:
        if len(spec.translation) != d.dim:
            raise ConfigurationError(
                f"translation has {len(spec.translation)} entries for dim {d.dim}"
            )
        x = x + np.asarray(spec.translation)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed_seq(spec.seed, _STREAM_SHIFT_NOISE))
        x = x + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    if spec.channel_bias:
        if len(spec.channel_bias) != d.dim:
            raise ConfigurationError(
                f"channel_bias has {len(spec.channel_bias)} entries for dim {d.dim}"
            )
        x = x + np.asarray(spec.channel_bias)
    return LabeledDataset(np.clip(x, 0.0, 1.0), d.labels.copy(), "target", d.class_count)


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------


class BatchIterator:
    """Yields seeded batch index arrays; every epoch visits each row once.

    The order of an epoch is a pure function of (seed, epoch): resuming or
    re-running a given epoch reproduces the identical batch sequence.
    """

    def __init__(self, n_items: int, batch_size: int, seed: Seed):
        if n_items < 1:
            raise InputError(f"n_items must be >= 1, got {n_items}")
        if batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {batch_size}")
        self.n_items = int(n_items)
        self.batch_size = int(batch_size)
        self.seed = seed_seq(seed)

    def epoch_batches(self, epoch: int) -> Iterator[np.ndarray]:
        order = np.random.default_rng(seed_seq(self.seed, epoch)).permutation(self.n_items)
        for start in range(0, self.n_items, self.batch_size):
            yield order[start:start + self.batch_size]


# --------------------------------------------------------------------------
# IDX image/label files (big-endian)
# --------------------------------------------------------------------------

IDX_LABEL_MAGIC = 0x00000801
IDX_IMAGE_MAGIC = 0x00000803


def load_idx(path) -> np.ndarray:
    """Parse an IDX file.

    Label files (magic 0x00000801) return int64 vectors; image files (magic
    0x00000803) return float64 matrices of shape (N, H*W) with bytes scaled
    to [0, 1] by division by 255.
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: expected at least 4 header bytes, got {len(data)}")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_LABEL_MAGIC:
        if len(data) < 8:
            raise FormatError(f"{path}: expected 8 header bytes, got {len(data)}")
        (n,) = struct.unpack(">I", data[4:8])
        expected = 8 + n
        if len(data) != expected:
            raise FormatError(
                f"{path}: label payload expected {expected} bytes total, got {len(data)}"
            )
        return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)
    if magic == IDX_IMAGE_MAGIC:
        if len(data) < 16:
            raise FormatError(f"{path}: expected 16 header bytes, got {len(data)}")
        n, h, w = struct.unpack(">III", data[4:16])
        expected = 16 + n * h * w
        if len(data) != expected:
            raise FormatError(
                f"{path}: image payload expected {expected} bytes total, got {len(data)}"
            )
        raw = np.frombuffer(data, dtype=np.uint8, offset=16)
        return raw.reshape(n, h * w).astype(np.float64) / 255.0
    raise FormatError(
        f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x} "
        f"(labels) or 0x{IDX_IMAGE_MAGIC:08x} (images)"
    )


def save_idx_images(path, images: np.ndarray) -> None:
    """Write a uint8 image stack of shape (N, H, W) as an IDX image file."""
    images = np.asarray(images)
    if images.dtype != np.uint8 or images.ndim != 3:
        raise InputError(
            f"images must be uint8 with shape (N, H, W), got {images.dtype} {images.shape}"
        )
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w) + images.tobytes())


def save_idx_labels(path, labels) -> None:
    """Write integer labels in [0, 255] as an IDX label file."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labels must be a 1-d integer array, got {labels.dtype} {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise InputError("IDX labels must fit in a byte")
    Path(path).write_bytes(
        struct.pack(">II", IDX_LABEL_MAGIC, labels.size) + labels.astype(np.uint8).tobytes()
    )


def dataset_from_idx(images_path, labels_path, domain_tag: str = "source",
                     class_count: int | None = None) -> LabeledDataset:
    """Pair an IDX image file with an IDX label file."""
    feats = load_idx(images_path)
    labels = load_idx(labels_path)
    if feats.ndim != 2:
        raise InputError(f"{images_path} is not an image file")
    if labels.ndim != 1:
        raise InputError(f"{labels_path} is not a label file")
    if feats.shape[0] != labels.shape[0]:
        raise InputError(
            f"image/label counts differ: {feats.shape[0]} vs {labels.shape[0]}"
        )
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(feats, labels, domain_tag, class_count)


# --------------------------------------------------------------------------
# Internal dataset format (little-endian)
#
# offset  size   field
# 0       4      magic  b"HDAD"
# 4       4      format version (u32 LE)
# 8       8      row count N (u64 LE)
# 16      8      feature dim D (u64 LE)
# 24      8      class count C (u64 LE)
# 32      1      domain tag (u8: 0=source, 1=target, 2=adversarial)
# 33      N*D*8  features, float64 LE, row-major
# then    N*8    labels, int64 LE
# --------------------------------------------------------------------------

DATASET_MAGIC = b"HDAD"
DATASET_VERSION = 1
_TAG_CODE = {tag: i for i, tag in enumerate(DOMAIN_TAGS)}
_CODE_TAG = {i: tag for tag, i in _TAG_CODE.items()}


def save_dataset(d: LabeledDataset, path) -> None:
    """Write a dataset in the internal binary format (lossless round trip)."""
    header = struct.pack(
        "<4sIQQQB", DATASET_MAGIC, DATASET_VERSION, d.n, d.dim, d.class_count,
        _TAG_CODE[d.domain_tag],
    )
    Path(path).write_bytes(
        header + d.features.astype("<f8").tobytes() + d.labels.astype("<i8").tobytes()
    )


def load_dataset(path) -> LabeledDataset:
    """Read a dataset written by save_dataset; malformed files never yield
    a partial dataset."""
    data = Path(path).read_bytes()
    header_size = struct.calcsize("<4sIQQQB")
    if len(data) < header_size:
        raise FormatError(
            f"{path}: dataset header needs {header_size} bytes, got {len(data)}"
        )
    magic, version, n, dim, class_count, tag_code = struct.unpack(
        "<4sIQQQB", data[:header_size]
    )
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad dataset magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(
            f"{path}: unsupported dataset format version {version}, "
            f"expected {DATASET_VERSION}"
        )
    if tag_code not in _CODE_TAG:
        raise FormatError(f"{path}: unknown domain tag code {tag_code}")
    expected = header_size + n * dim * 8 + n * 8
    if len(data) != expected:
        raise FormatError(
            f"{path}: dataset payload expected {expected} bytes total, got {len(data)}"
        )
    feats = np.frombuffer(data, dtype="<f8", count=n * dim, offset=header_size)
    labels = np.frombuffer(data, dtype="<i8", count=n, offset=header_size + n * dim * 8)
    return LabeledDataset(
        feats.reshape(n, dim).copy(), labels.copy(), _CODE_TAG[tag_code], class_count
    )
