"""Cross-layer calibration and fusion of per-layer NLL grids.

Raw NLL values from different layers live on different scales, so each
layer is first centered around its training-feature mean NLL and then
standardized with mean/std constants estimated on a validation set. The
calibrated grids are fused per cell: elementwise min ("all layers agree"),
elementwise max ("any layer objects"), or a logistic regression fitted on
a small labeled set (the default).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

FUSION_MODES = ("min", "max", "logistic")


@dataclass(frozen=True)
class LayerCalibration:
    """Centering and normalization constants for one layer's NLL values."""

    layer_id: int
    train_mean_nll: float
    val_mean: float
    val_std: float

    def __post_init__(self) -> None:
        for name in ("train_mean_nll", "val_mean", "val_std"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"calibration constant {name} must be finite")
        if self.val_std <= 0.0:
            raise ValidationError("validation std must be positive")


def fit_calibration(layer_id: int, train_nll: np.ndarray, val_nll: np.ndarray) -> LayerCalibration:
    """Estimate calibration constants from training and validation NLL values."""
    train_nll = np.asarray(train_nll, dtype=np.float64).ravel()
    val_nll = np.asarray(val_nll, dtype=np.float64).ravel()
    if train_nll.size == 0 or val_nll.size == 0:
        raise ValidationError("calibration needs non-empty training and validation NLL values")
    train_mean = float(train_nll.mean())
    centered = val_nll - train_mean
    std = float(centered.std())
    if std <= 0.0:
        raise ValidationError(f"layer {layer_id}: validation NLLs are constant, cannot normalize")
    return LayerCalibration(
        layer_id=layer_id,
        train_mean_nll=train_mean,
        val_mean=float(centered.mean()),
        val_std=std,
    )


def center_nll(nll_grid: np.ndarray, calibration: LayerCalibration, layer_id: int | None = None) -> np.ndarray:
    """Subtract the layer's training-feature mean NLL, elementwise."""
    if layer_id is not None and layer_id != calibration.layer_id:
        raise ValidationError(f"calibration is for layer {calibration.layer_id}, not {layer_id}")
    return np.asarray(nll_grid, dtype=np.float64) - calibration.train_mean_nll


def normalize_nll(centered_grid: np.ndarray, calibration: LayerCalibration) -> np.ndarray:
    """Standardize a centered grid with the validation mean and std."""
    return (np.asarray(centered_grid, dtype=np.float64) - calibration.val_mean) / calibration.val_std


def calibrate_nll(nll_grid: np.ndarray, calibration: LayerCalibration) -> np.ndarray:
    """Center then normalize in one step."""
    return normalize_nll(center_nll(nll_grid, calibration), calibration)


def _stacked(grids: list[np.ndarray]) -> np.ndarray:
    if len(grids) < 2:
        raise ValidationError("fusion needs at least two layers")
    shape = np.asarray(grids[0]).shape
    for grid in grids[1:]:
        if np.asarray(grid).shape != shape:
            raise ValidationError(f"grid shapes differ: {shape} vs {np.asarray(grid).shape}")
    return np.stack([np.asarray(g, dtype=np.float64) for g in grids])


def fuse_min(grids: list[np.ndarray]) -> np.ndarray:
    """Foreground only where all layers agree: elementwise minimum."""
    return _stacked(grids).min(axis=0)


def fuse_max(grids: list[np.ndarray]) -> np.ndarray:
    """Foreground where any layer objects: elementwise maximum."""
    return _stacked(grids).max(axis=0)


@dataclass
class FusionModel:
    """Fusion rule: min, max, or a fitted logistic regression."""

    mode: str
    weights: np.ndarray | None = None
    bias: float | None = None
    converged: bool = True

    def __post_init__(self) -> None:
        if self.mode not in FUSION_MODES:
            raise ValidationError(f"fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")
        if self.mode == "logistic":
            if self.weights is None or self.bias is None:
                raise ValidationError("logistic fusion requires fitted weights and bias")
            self.weights = np.asarray(self.weights, dtype=np.float64)
        elif self.weights is not None or self.bias is not None:
            raise ValidationError(f"{self.mode} fusion carries no parameters")

    def fuse(self, grids: list[np.ndarray]) -> np.ndarray:
        if self.mode == "min":
            return fuse_min(grids)
        if self.mode == "max":
            return fuse_max(grids)
        return fuse_logistic(grids, self)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-3,
    max_iter: int = 20000,
    tol: float = 1e-6,
) -> FusionModel:
    """Fit sigmoid(w.v + b) to foreground labels by full-batch gradient descent.

    The objective is the mean logistic loss plus (l2/2)*|w|^2 (the bias is
    unregularized), minimized from a zero start with a fixed step derived
    from a smoothness bound, so the fit is deterministic. Stops when the
    gradient max-norm drops below ``tol``; if the iteration cap is reached
    first, the best iterate seen is returned and a warning is issued.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ValidationError("features must be (n, layers) aligned with n labels")
    if not ((labels == 0) | (labels == 1)).all():
        raise ValidationError("labels must be 0 (background) or 1 (foreground)")
    if labels.min() == labels.max():
        raise ValidationError("logistic fit needs both classes present")

    n, n_layers = features.shape
    weights = np.zeros(n_layers)
    bias = 0.0
    # 1/4 bounds the sigmoid curvature; the +1 accounts for the bias column.
    lipschitz = 0.25 * (float((features**2).sum(axis=1).mean()) + 1.0) + l2
    step = 1.0 / lipschitz

    best = (np.inf, weights.copy(), bias)
    converged = False
    for _ in range(max_iter):
        margin = features @ weights + bias
        prob = _sigmoid(margin)
        # Mean logistic loss via the numerically stable softplus form.
        loss = float(np.mean(np.logaddexp(0.0, margin) - labels * margin)) + 0.5 * l2 * float(
            weights @ weights
        )
        if loss < best[0]:
            best = (loss, weights.copy(), bias)
        residual = prob - labels
        grad_w = features.T @ residual / n + l2 * weights
        grad_b = float(residual.mean())
        if max(np.abs(grad_w).max(), abs(grad_b)) < tol:
            converged = True
            break
        weights = weights - step * grad_w
        bias = bias - step * grad_b

    if not converged:
        warnings.warn(f"logistic fit did not reach tol={tol} within {max_iter} iterations")
        _, weights, bias = best
    return FusionModel(mode="logistic", weights=weights, bias=float(bias), converged=converged)


def fuse_logistic(grids: list[np.ndarray], model: FusionModel) -> np.ndarray:
    """Per-cell sigmoid(w.v + b) over the stacked layer values."""
    if model.mode != "logistic":
        raise ValidationError(f"fusion model has mode {model.mode!r}, not logistic")
    stacked = _stacked(grids) if len(grids) >= 2 else np.stack([np.asarray(grids[0], dtype=np.float64)])
    if model.weights is None or stacked.shape[0] != model.weights.size:
        raise ValidationError(
            f"model has {0 if model.weights is None else model.weights.size} weights "
            f"but {stacked.shape[0]} layers were given"
        )
    margin = np.tensordot(model.weights, stacked, axes=(0, 0)) + model.bias
    # Saturated sigmoids round to exactly 0 or 1 in float64; keep the
    # output inside the open interval.
    return np.clip(_sigmoid(margin), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def save_calibrations(calibrations: list[LayerCalibration], path: str) -> None:
    """Plain-text lines: layer_id,train_mean,val_mean,val_std."""
    from .feature_store import atomic_write_bytes

    lines = [
        f"{c.layer_id},{c.train_mean_nll!r},{c.val_mean!r},{c.val_std!r}"
        for c in calibrations
    ]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_calibrations(path: str) -> list[LayerCalibration]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            layer_id, train_mean, val_mean, val_std = line.split(",")
            out.append(
                LayerCalibration(
                    layer_id=int(layer_id),
                    train_mean_nll=float(train_mean),
                    val_mean=float(val_mean),
                    val_std=float(val_std),
                )
            )
    return out


def save_fusion(model: FusionModel, path: str) -> None:
    """First line: mode. Logistic models add one line of weights then bias."""
    from .feature_store import atomic_write_bytes

    lines = [model.mode]
    if model.mode == "logistic":
        parts = [repr(float(w)) for w in model.weights] + [repr(float(model.bias))]
        lines.append(",".join(parts))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_fusion(path: str) -> FusionModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty fusion file")
    mode = lines[0]
    if mode != "logistic":
        return FusionModel(mode=mode)
    values = [float(v) for v in lines[1].split(",")]
    return FusionModel(mode="logistic", weights=np.asarray(values[:-1]), bias=values[-1])
