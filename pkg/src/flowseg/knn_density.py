"""k-nearest-neighbor kernel density over stored background features.

Vectors are stored unit-normalized; queries use the cosine distance
1 - cos(a, b), which lies in [0, 2]. The likelihood score of a query is
the mean of exp(-d) over its k nearest stored vectors, so scores lie in
[exp(-2), 1] and the derived -log score lies in [0, 2]. Search is exact
brute force; ties are broken by insertion order.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .feature_store import FeatureDataset, FeatureMap, atomic_write_bytes

INDEX_MAGIC = b"KNNX"
INDEX_VERSION = 1

MAX_COSINE_DISTANCE = 2.0
_MIN_NORM = 1e-12


@dataclass(frozen=True)
class KnnIndex:
    """Unit-normalized background vectors supporting cosine-distance queries."""

    unit_vectors: np.ndarray  # (n, f) float64, rows unit length

    def __post_init__(self) -> None:
        vectors = np.asarray(self.unit_vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValidationError("index needs at least one stored vector")
        norms = np.linalg.norm(vectors, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValidationError("stored vectors must be unit length within 1e-6")
        object.__setattr__(self, "unit_vectors", vectors)

    @property
    def count(self) -> int:
        return self.unit_vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.unit_vectors.shape[1]


def build_index(dataset: FeatureDataset | np.ndarray) -> KnnIndex:
    """Normalize and store every dataset vector; zero vectors are rejected."""
    vectors = dataset.vectors if isinstance(dataset, FeatureDataset) else dataset
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValidationError("cannot build an index from an empty dataset")
    norms = np.linalg.norm(vectors, axis=1)
    if (norms < _MIN_NORM).any():
        bad = int(np.argmax(norms < _MIN_NORM))
        raise ValidationError(f"dataset vector {bad} has near-zero norm and no direction")
    return KnnIndex(unit_vectors=vectors / norms[:, None])


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), in [0, 2]; both inputs must be non-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a < _MIN_NORM or norm_b < _MIN_NORM:
        raise ValidationError("cosine distance is undefined for zero-norm vectors")
    return float(1.0 - (a @ b) / (norm_a * norm_b))


def knn_score(query: np.ndarray, index: KnnIndex, k: int) -> float:
    """Kernel likelihood score: mean of exp(-d) over the k nearest neighbors."""
    if not 1 <= k <= index.count:
        raise ValidationError(f"k must lie in [1, {index.count}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    norm = np.linalg.norm(query)
    if norm < _MIN_NORM:
        raise ValidationError("query has near-zero norm")
    # Rounding can push a perfect match to a tiny negative distance; clamp
    # so scores stay within [exp(-2), 1].
    distances = np.clip(1.0 - index.unit_vectors @ (query / norm), 0.0, MAX_COSINE_DISTANCE)
    order = np.argsort(distances, kind="stable")[:k]
    return float(np.exp(-distances[order]).mean())


def _nll_rows(rows: np.ndarray, index: KnnIndex, k: int) -> tuple[np.ndarray, np.ndarray]:
    """-log(knn_score) per row; zero-norm rows get the maximum value 2.0."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    degenerate = norms < _MIN_NORM
    safe = np.where(degenerate, 1.0, norms)
    units = rows / safe[:, None]

    distances = np.clip(1.0 - units @ index.unit_vectors.T, 0.0, MAX_COSINE_DISTANCE)
    if k < index.count:
        nearest = np.partition(distances, k - 1, axis=1)[:, :k]
    else:
        nearest = distances
    scores = np.exp(-nearest).mean(axis=1)
    values = -np.log(scores)
    values[degenerate] = MAX_COSINE_DISTANCE
    return values, degenerate


def knn_nll_vectors(vectors: np.ndarray, index: KnnIndex, k: int) -> np.ndarray:
    """-log(knn_score) for a batch of plain vectors (calibration helper)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != index.dim:
        raise ValidationError(f"expected (n, {index.dim}) vectors, got shape {vectors.shape}")
    if not 1 <= k <= index.count:
        raise ValidationError(f"k must lie in [1, {index.count}], got {k}")
    values, degenerate = _nll_rows(vectors, index, k)
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} zero-norm vectors scored at the maximum value")
    return values


def knn_score_map(
    fmap: FeatureMap, index: KnnIndex, k: int, return_flags: bool = False
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Per-cell -log(knn_score) grid, the NLL analogue used for fusion.

    Zero-norm cells cannot be scored; they receive the maximum finite
    grid value (2.0, the -log of the minimum possible score) and are
    reported via a warning, or via a flag grid when ``return_flags``.
    """
    if fmap.dim != index.dim:
        raise ValidationError(f"feature dimension {fmap.dim} does not match index dimension {index.dim}")
    if not 1 <= k <= index.count:
        raise ValidationError(f"k must lie in [1, {index.count}], got {k}")
    flat = fmap.values.reshape(-1, fmap.dim).astype(np.float64)
    values, degenerate = _nll_rows(flat, index, k)
    grid = values.reshape(fmap.grid_h, fmap.grid_w)
    flags = degenerate.reshape(fmap.grid_h, fmap.grid_w)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} zero-norm cells in {fmap.image_id!r} layer "
            f"{fmap.layer_id} scored at the maximum grid value"
        )
    if return_flags:
        return grid, flags
    return grid


class KnnScorer:
    """Callable adapter giving a kNN index the same map-scoring face as a flow."""

    def __init__(self, index: KnnIndex, k: int):
        if not 1 <= k <= index.count:
            raise ValidationError(f"k must lie in [1, {index.count}], got {k}")
        self.index = index
        self.k = k

    def score_map(self, fmap: FeatureMap) -> np.ndarray:
        return knn_score_map(fmap, self.index, self.k)


def save_index(index: KnnIndex, path: str) -> None:
    """Serialize to the KNNX layout: header then normalized float32 rows."""
    header = struct.pack("<4sIII", INDEX_MAGIC, INDEX_VERSION, index.dim, index.count)
    atomic_write_bytes(path, header + index.unit_vectors.astype("<f4").tobytes(order="C"))


def load_index(path: str) -> KnnIndex:
    """Parse a KNNX file; rows are re-normalized to absorb float32 rounding."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != INDEX_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {INDEX_MAGIC!r}")
    if len(data) < 16:
        raise FormatError(f"{path}: truncated header")
    version, dim, count = struct.unpack("<III", data[4:16])
    if version != INDEX_VERSION:
        raise FormatError(f"{path}: unsupported index version {version}")
    expected = 16 + 4 * dim * count
    if len(data) != expected:
        raise FormatError(f"{path}: payload size {len(data) - 16} does not match header")
    vectors = np.frombuffer(data[16:], dtype="<f4").reshape(count, dim).astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    return KnnIndex(unit_vectors=vectors / norms[:, None])
