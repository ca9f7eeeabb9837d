"""Pipeline configuration: one JSON document, overridable from the CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import ValidationError
from .flow import TrainConfig
from .synthetic import SyntheticSpec

ESTIMATORS = ("flow", "knn", "both")
DEFAULT_LAYERS = (3, 4, 5, 6)


@dataclass(frozen=True)
class SplitFractions:
    train: float = 0.5
    val: float = 0.2
    fit: float = 0.15
    # Remainder is the test split.

    def __post_init__(self) -> None:
        for name in ("train", "val", "fit"):
            if not (0.0 < getattr(self, name) < 1.0):
                raise ValidationError(f"split fraction {name} must lie in (0, 1)")
        if self.train + self.val + self.fit > 1.0:
            raise ValidationError("train + val + fit fractions must not exceed 1")


@dataclass(frozen=True)
class PipelineConfig:
    features_dir: str = "corpus/features"
    masks_dir: str = "corpus/masks"
    out_dir: str = "out"
    layers: tuple[int, ...] = DEFAULT_LAYERS
    estimator: str = "both"
    fusion: str = "logistic"
    seed: int = 0
    splits: SplitFractions = field(default_factory=SplitFractions)
    bg_thresh: float = 0.95
    fg_thresh: float = 0.05
    rf_radius: dict[int, int] = field(default_factory=dict)  # per layer; missing -> 0
    # Desk-scale training defaults; the flow module's own defaults keep the
    # full chain length for production-sized feature sets.
    flow: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=1e-3, batch_size=256, max_epochs=40, patience=6,
        validation_fraction=0.1, n_layers=8, hidden=64,
    ))
    k: int = 5
    max_index_vectors: int | None = None
    target_tpr: float = 0.95
    figures: bool = True
    workers: int = 1
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("layer list must be non-empty")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.fusion not in ("min", "max", "logistic"):
            raise ValidationError(f"unknown fusion mode {self.fusion!r}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    @property
    def estimators(self) -> tuple[str, ...]:
        return ("flow", "knn") if self.estimator == "both" else (self.estimator,)

    def rf_radius_for(self, layer_id: int) -> int:
        return self.rf_radius.get(layer_id, 0)


def _parse_layers(value) -> tuple[int, ...]:
    if isinstance(value, str):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return tuple(int(v) for v in value)


def config_from_dict(raw: dict) -> PipelineConfig:
    """Build a config from parsed JSON, applying defaults for missing keys."""
    known = {
        "features_dir", "masks_dir", "out_dir", "layers", "estimator", "fusion",
        "seed", "splits", "bg_thresh", "fg_thresh", "rf_radius", "flow", "k",
        "max_index_vectors", "target_tpr", "figures", "workers", "synthetic",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")

    kwargs: dict = {k: raw[k] for k in known & set(raw)}
    if "layers" in kwargs:
        kwargs["layers"] = _parse_layers(kwargs["layers"])
    if "splits" in kwargs:
        kwargs["splits"] = SplitFractions(**kwargs["splits"])
    if "rf_radius" in kwargs:
        value = kwargs["rf_radius"]
        if isinstance(value, dict):
            kwargs["rf_radius"] = {int(k): int(v) for k, v in value.items()}
        else:
            layers = kwargs.get("layers", DEFAULT_LAYERS)
            kwargs["rf_radius"] = {layer: int(value) for layer in layers}
    seed = int(raw.get("seed", 0))
    flow_kwargs = dict(kwargs.get("flow", {}))
    flow_kwargs.setdefault("seed", seed)
    flow_kwargs.setdefault("learning_rate", 1e-3)
    flow_kwargs.setdefault("max_epochs", 40)
    flow_kwargs.setdefault("patience", 6)
    flow_kwargs.setdefault("n_layers", 8)
    kwargs["flow"] = TrainConfig(**flow_kwargs)
    synthetic = dict(kwargs.get("synthetic", {}))
    if "layer_taps" in synthetic:
        synthetic["layer_taps"] = {int(k): int(v) for k, v in synthetic["layer_taps"].items()}
    synthetic.setdefault("seed", seed)
    kwargs["synthetic"] = SyntheticSpec(**synthetic)
    return PipelineConfig(**kwargs)


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON: {err}") from err
    return config_from_dict(raw)


def apply_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """CLI flags beat config-file values; None means 'not given'."""
    updates = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "layers":
            value = _parse_layers(value)
        updates[key] = value
    if not updates:
        return config
    if "seed" in updates:
        updates["flow"] = replace(config.flow, seed=updates["seed"])
        updates["synthetic"] = replace(config.synthetic, seed=updates["seed"])
    return replace(config, **updates)
