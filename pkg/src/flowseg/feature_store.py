"""On-disk representation of feature maps, masks and background datasets.

Binary layouts (all integers little-endian u32, all reals little-endian
IEEE-754 binary32):

* FTNS feature file: magic ``FTNS``, format version (=1), layer_id, h, w,
  f, downsample_factor, image_id byte length + UTF-8 bytes, then h*w*f
  reals in row-major (row, column, channel) order.
* MSK1 mask file: magic ``MSK1``, H, W, then H*W bytes with 1=background
  and 0=foreground.
* FDST dataset file: magic ``FDST``, version (=1), layer_id, f, n, then
  n*f reals, then a u32 length-prefixed JSON provenance list.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

FTNS_MAGIC = b"FTNS"
MASK_MAGIC = b"MSK1"
DATASET_MAGIC = b"FDST"
FORMAT_VERSION = 1

BACKGROUND = 1
FOREGROUND = 0
MIXED = 2

# Guard against absurd header values before allocating payload buffers.
_MAX_GRID_CELLS = 1 << 28


@dataclass(frozen=True)
class ImageMeta:
    """Source image geometry: height, width, channel count and identifier."""

    height: int
    width: int
    channels: int
    image_id: str

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"image dimensions must be >= 1, got {self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise ValidationError(f"channel count must be 1 or 3, got {self.channels}")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One encoder layer's h x w grid of f-dimensional feature vectors."""

    layer_id: int
    downsample_factor: int
    image_id: str
    values: np.ndarray  # (h, w, f) float32

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return (
            self.layer_id == other.layer_id
            and self.downsample_factor == other.downsample_factor
            and self.image_id == other.image_id
            and self.values.shape == other.values.shape
            and bool((self.values == other.values).all())
        )

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValidationError(f"feature values must be h x w x f, got shape {values.shape}")
        if min(values.shape) < 1:
            raise ValidationError(f"feature grid dimensions must be >= 1, got {values.shape}")
        if self.downsample_factor < 1:
            raise ValidationError("downsample_factor must be a positive integer")
        if not np.isfinite(values).all():
            raise ValidationError(f"feature map {self.image_id!r} layer {self.layer_id} contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def matches_image(self, meta: ImageMeta) -> bool:
        """Grid shape is the ceiling division of the image shape by the stride."""
        d = self.downsample_factor
        return (
            self.grid_h == math.ceil(meta.height / d)
            and self.grid_w == math.ceil(meta.width / d)
        )


@dataclass(frozen=True)
class PixelMask:
    """H x W binary mask, 1 = background, 0 = foreground."""

    values: np.ndarray  # (H, W) uint8

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValidationError(f"mask must be a non-empty H x W array, got shape {values.shape}")
        if not np.isin(values, (0, 1)).all():
            raise ValidationError("mask values must be 0 (foreground) or 1 (background)")
        object.__setattr__(self, "values", values.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureLabelGrid:
    """Per-cell background-proportion scores and the labels derived from them."""

    score: np.ndarray  # (h, w) float64 in [0, 1]
    label: np.ndarray  # (h, w) uint8 over {BACKGROUND, FOREGROUND, MIXED}

    def __post_init__(self) -> None:
        score = np.asarray(self.score, dtype=np.float64)
        label = np.asarray(self.label, dtype=np.uint8)
        if score.shape != label.shape or score.ndim != 2:
            raise ValidationError("score and label grids must share one h x w shape")
        if score.min() < 0.0 or score.max() > 1.0:
            raise ValidationError("scores must lie in [0, 1]")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "label", label)


@dataclass
class FeatureDataset:
    """Background feature vectors pooled across images for one layer."""

    layer_id: int
    vectors: np.ndarray  # (n, f) float32
    provenance: list[tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"dataset vectors must be n x f, got shape {vectors.shape}")
        self.vectors = vectors

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def write_feature_map(fmap: FeatureMap, path: str | os.PathLike) -> None:
    """Serialize a feature map to the FTNS layout (byte-exact, platform independent)."""
    image_id = fmap.image_id.encode("utf-8")
    header = struct.pack(
        "<4sIIIIIII",
        FTNS_MAGIC,
        FORMAT_VERSION,
        fmap.layer_id,
        fmap.grid_h,
        fmap.grid_w,
        fmap.dim,
        fmap.downsample_factor,
        len(image_id),
    )
    payload = fmap.values.astype("<f4", copy=False).tobytes(order="C")
    atomic_write_bytes(path, header + image_id + payload)


def read_feature_map(path: str | os.PathLike) -> FeatureMap:
    """Parse an FTNS file, validating magic, version and payload size."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != FTNS_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {FTNS_MAGIC!r}")
        version, layer_id, h, w, f, downsample, id_len = struct.unpack(
            "<IIIIIII", _read_exact(fh, 28, "header")
        )
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        if h < 1 or w < 1 or f < 1 or h * w > _MAX_GRID_CELLS:
            raise FormatError(f"{path}: implausible grid dimensions {h}x{w}x{f}")
        image_id = _read_exact(fh, id_len, "image id").decode("utf-8")
        raw = _read_exact(fh, 4 * h * w * f, "feature payload")
        trailing = fh.read(1)
    if trailing:
        raise FormatError(f"{path}: trailing bytes after declared payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(h, w, f)
    return FeatureMap(layer_id=layer_id, downsample_factor=downsample, image_id=image_id, values=values)


def write_mask(mask: PixelMask, path: str | os.PathLike) -> None:
    """Serialize a binary mask to the MSK1 layout."""
    header = struct.pack("<4sII", MASK_MAGIC, mask.height, mask.width)
    atomic_write_bytes(path, header + mask.values.tobytes(order="C"))


def read_mask(path: str | os.PathLike) -> PixelMask:
    """Parse an MSK1 file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MASK_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MASK_MAGIC!r}")
        height, width = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if height < 1 or width < 1 or height * width > _MAX_GRID_CELLS:
            raise FormatError(f"{path}: implausible mask dimensions {height}x{width}")
        raw = _read_exact(fh, height * width, "mask payload")
    values = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    if not np.isin(values, (0, 1)).all():
        raise FormatError(f"{path}: mask bytes outside {{0, 1}}")
    return PixelMask(values=values)


def write_dataset(dataset: FeatureDataset, path: str | os.PathLike) -> None:
    """Serialize a feature dataset (vectors + provenance) to the FDST layout."""
    n, f = dataset.vectors.shape
    header = struct.pack("<4sIIII", DATASET_MAGIC, FORMAT_VERSION, dataset.layer_id, f, n)
    payload = dataset.vectors.astype("<f4", copy=False).tobytes(order="C")
    prov = json.dumps(
        [[image_id, int(i), int(j)] for image_id, i, j in dataset.provenance],
        separators=(",", ":"),
    ).encode("utf-8")
    atomic_write_bytes(path, header + payload + struct.pack("<I", len(prov)) + prov)


def read_dataset(path: str | os.PathLike) -> FeatureDataset:
    """Parse an FDST file."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        version, layer_id, f, n = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        raw = _read_exact(fh, 4 * n * f, "vector payload")
        (prov_len,) = struct.unpack("<I", _read_exact(fh, 4, "provenance length"))
        prov_raw = _read_exact(fh, prov_len, "provenance")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(n, f)
    provenance = [(entry[0], entry[1], entry[2]) for entry in json.loads(prov_raw.decode("utf-8"))]
    return FeatureDataset(layer_id=layer_id, vectors=vectors, provenance=provenance)


def score_receptive_fields(mask: PixelMask, downsample: int, rf_radius: int = 0) -> np.ndarray:
    """Background proportion per feature cell.

    Each cell (i, j) covers the nominal d x d pixel block starting at
    (i*d, j*d), dilated by rf_radius pixels on every side and clipped to
    the image. The score is the fraction of background pixels inside that
    clipped window, always in [0, 1].
    """
    if downsample < 1:
        raise ValidationError("downsample factor must be >= 1")
    if rf_radius < 0:
        raise ValidationError("rf_radius must be >= 0")
    height, width = mask.height, mask.width
    grid_h = math.ceil(height / downsample)
    grid_w = math.ceil(width / downsample)

    background = (mask.values == BACKGROUND).astype(np.int64)
    integral = np.zeros((height + 1, width + 1), dtype=np.int64)
    integral[1:, 1:] = background.cumsum(axis=0).cumsum(axis=1)

    rows = np.arange(grid_h)
    cols = np.arange(grid_w)
    r0 = np.clip(rows * downsample - rf_radius, 0, height)
    r1 = np.clip((rows + 1) * downsample + rf_radius, 0, height)
    c0 = np.clip(cols * downsample - rf_radius, 0, width)
    c1 = np.clip((cols + 1) * downsample + rf_radius, 0, width)

    counts = (
        integral[np.ix_(r1, c1)]
        - integral[np.ix_(r0, c1)]
        - integral[np.ix_(r1, c0)]
        + integral[np.ix_(r0, c0)]
    )
    areas = np.outer(r1 - r0, c1 - c0)
    return counts / areas


def assign_feature_labels(
    scores: np.ndarray, bg_thresh: float = 0.95, fg_thresh: float = 0.05
) -> FeatureLabelGrid:
    """Map background-proportion scores to cell labels.

    score >= bg_thresh -> background, score <= fg_thresh -> foreground,
    anything in between -> mixed. Both boundaries are inclusive.
    """
    if not (0.0 <= fg_thresh < bg_thresh <= 1.0):
        raise ValidationError(
            f"thresholds must satisfy 0 <= fg_thresh < bg_thresh <= 1, got ({bg_thresh}, {fg_thresh})"
        )
    scores = np.asarray(scores, dtype=np.float64)
    label = np.full(scores.shape, MIXED, dtype=np.uint8)
    label[scores >= bg_thresh] = BACKGROUND
    label[scores <= fg_thresh] = FOREGROUND
    return FeatureLabelGrid(score=scores, label=label)


def collect_background_features(
    maps: list[FeatureMap], labels: list[FeatureLabelGrid]
) -> FeatureDataset:
    """Pool the feature vectors of background-labeled cells, with provenance.

    Inputs must be aligned pairwise (same layer, same grids). An empty
    result is returned with a warning rather than an error; training a
    density estimator on it is what fails.
    """
    if len(maps) != len(labels):
        raise ValidationError(f"got {len(maps)} maps but {len(labels)} label grids")
    if not maps:
        raise ValidationError("no feature maps given")
    layer_id = maps[0].layer_id
    dim = maps[0].dim
    chunks: list[np.ndarray] = []
    provenance: list[tuple[str, int, int]] = []
    for fmap, grid in zip(maps, labels):
        if fmap.layer_id != layer_id or fmap.dim != dim:
            raise ValidationError("all maps must share one layer_id and feature dimension")
        if grid.label.shape != (fmap.grid_h, fmap.grid_w):
            raise ValidationError(
                f"label grid {grid.label.shape} does not match feature grid "
                f"({fmap.grid_h}, {fmap.grid_w}) for image {fmap.image_id!r}"
            )
        keep = grid.label == BACKGROUND
        if keep.any():
            chunks.append(fmap.values[keep])
            for i, j in np.argwhere(keep):
                provenance.append((fmap.image_id, int(i), int(j)))
    if chunks:
        vectors = np.concatenate(chunks, axis=0)
    else:
        warnings.warn(f"layer {layer_id}: no background-labeled cells, dataset is empty")
        vectors = np.empty((0, dim), dtype=np.float32)
    return FeatureDataset(layer_id=layer_id, vectors=vectors, provenance=provenance)
