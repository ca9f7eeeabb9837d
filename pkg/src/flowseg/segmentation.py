"""Pixel-resolution likelihood maps and binary masks from cell grids.

Cell grids are upsampled with bilinear interpolation under the half-pixel
center convention: output pixel i samples source coordinate
(i + 0.5) * (h / H) - 0.5, clamped to [0, h - 1]. The full per-image
pipeline scores every layer, calibrates, upsamples, fuses, and thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

import numpy as np

from .ensemble import FusionModel, LayerCalibration, calibrate_nll
from .errors import FlowsegError, ValidationError
from .feature_store import FeatureMap


class MapScorer(Protocol):
    """Anything that turns a feature map into a per-cell NLL grid."""

    def score_map(self, fmap: FeatureMap) -> np.ndarray: ...


@dataclass(frozen=True)
class LikelihoodMap:
    """H x W foreground evidence (higher = more foreground-like)."""

    values: np.ndarray
    image_id: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValidationError(f"likelihood map must be H x W, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("likelihood map contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SegmentationMask:
    """Binary foreground decision per pixel plus the threshold that made it."""

    foreground: np.ndarray  # (H, W) bool
    threshold: float

    def __post_init__(self) -> None:
        foreground = np.asarray(self.foreground, dtype=bool)
        if foreground.ndim != 2:
            raise ValidationError(f"mask must be H x W, got shape {foreground.shape}")
        object.__setattr__(self, "foreground", foreground)

    def to_pixel_mask_values(self) -> np.ndarray:
        """MSK1 convention: background = 1, foreground = 0."""
        return (~self.foreground).astype(np.uint8)


@dataclass(frozen=True)
class SegmentationResult:
    likelihood: LikelihoodMap
    mask: SegmentationMask
    layer_maps: dict[int, np.ndarray]


def bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize an h x w grid up to height x width with half-pixel centers."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValidationError(f"grid must be 2-D, got shape {grid.shape}")
    h, w = grid.shape
    if h > height or w > width:
        raise ValidationError(f"target {height}x{width} is smaller than source {h}x{w}")

    src_r = np.clip((np.arange(height) + 0.5) * (h / height) - 0.5, 0.0, h - 1.0)
    src_c = np.clip((np.arange(width) + 0.5) * (w / width) - 0.5, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.intp)
    c0 = np.floor(src_c).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0)[:, None]
    fc = (src_c - c0)[None, :]

    top = grid[np.ix_(r0, c0)] * (1.0 - fc) + grid[np.ix_(r0, c1)] * fc
    bottom = grid[np.ix_(r1, c0)] * (1.0 - fc) + grid[np.ix_(r1, c1)] * fc
    return top * (1.0 - fr) + bottom * fr


def threshold_map(lmap: LikelihoodMap, tau: float) -> SegmentationMask:
    """Pixels scoring at or above tau are foreground."""
    if not np.isfinite(tau):
        raise ValidationError("threshold must be finite")
    return SegmentationMask(foreground=lmap.values >= tau, threshold=float(tau))


def segment_image(
    feature_maps: Mapping[int, FeatureMap],
    scorers: Mapping[int, MapScorer],
    calibrations: Mapping[int, LayerCalibration],
    fusion: FusionModel,
    tau: float,
    height: int,
    width: int,
) -> SegmentationResult:
    """Full composition: score, calibrate, upsample per layer, fuse, threshold.

    Layer grids generally differ in shape, so every calibrated grid is
    upsampled to pixel resolution before fusion; logistic fusion needs the
    per-layer values aligned at each location.
    """
    if not feature_maps:
        raise ValidationError("no feature maps given")
    layer_ids = sorted(feature_maps)
    missing = [l for l in layer_ids if l not in scorers or l not in calibrations]
    if missing:
        raise ValidationError(f"missing scorer or calibration for layers {missing}")

    image_id = next(iter(feature_maps.values())).image_id
    layer_maps: dict[int, np.ndarray] = {}
    for layer_id in layer_ids:
        fmap = feature_maps[layer_id]
        try:
            nll = scorers[layer_id].score_map(fmap)
            calibrated = calibrate_nll(nll, calibrations[layer_id])
            layer_maps[layer_id] = bilinear_upsample(calibrated, height, width)
        except FlowsegError as err:
            raise type(err)(f"layer {layer_id} of image {image_id!r}: {err}") from err

    grids = [layer_maps[l] for l in layer_ids]
    try:
        if len(grids) == 1:
            fused = grids[0] if fusion.mode != "logistic" else fusion.fuse(grids)
        else:
            fused = fusion.fuse(grids)
    except FlowsegError as err:
        raise type(err)(f"fusing image {image_id!r}: {err}") from err

    likelihood = LikelihoodMap(values=fused, image_id=image_id)
    return SegmentationResult(
        likelihood=likelihood,
        mask=threshold_map(likelihood, tau),
        layer_maps=layer_maps,
    )
