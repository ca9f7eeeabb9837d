"""End-to-end orchestration of the scoring workflow.

Commands map 1:1 to the CLI: prepare (label + collect background
datasets), train (density models + calibrations), fit-fusion (logistic
weights + operating threshold), segment (likelihood maps + masks),
evaluate (metric tables + figures) and bench (timings + artifact sizes).

Image ids are discovered from the mask directory; each image is assigned
to the train/val/fit/test split by a seeded hash of its id, so splits are
stable across runs and machines.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import ensemble, metrics
from .config import PipelineConfig
from .errors import ValidationError
from .feature_store import (
    BACKGROUND,
    FOREGROUND,
    MIXED,
    FeatureMap,
    PixelMask,
    assign_feature_labels,
    atomic_write_bytes,
    collect_background_features,
    read_dataset,
    read_feature_map,
    read_mask,
    score_receptive_fields,
    write_dataset,
    write_feature_map,
    write_mask,
)
from .flow import FlowModel, load_model, save_model, train as train_flow
from .knn_density import KnnScorer, build_index, knn_nll_vectors, load_index, save_index
from .segmentation import LikelihoodMap, SegmentationResult, segment_image
from .synthetic import generate_corpus

SPLITS = ("train", "val", "fit", "test")


# ---------------------------------------------------------------------------
# corpus discovery and split assignment


def discover_image_ids(masks_dir: str) -> list[str]:
    if not os.path.isdir(masks_dir):
        raise ValidationError(f"mask directory {masks_dir!r} does not exist")
    ids = sorted(
        name[: -len(".msk")] for name in os.listdir(masks_dir) if name.endswith(".msk")
    )
    if not ids:
        raise ValidationError(f"no .msk files found in {masks_dir!r}")
    return ids


def split_of(image_id: str, seed: int, splits) -> str:
    """Deterministic split assignment by seeded hash of the image id."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).digest()
    fraction = int.from_bytes(digest[:8], "big") / 2**64
    if fraction < splits.train:
        return "train"
    if fraction < splits.train + splits.val:
        return "val"
    if fraction < splits.train + splits.val + splits.fit:
        return "fit"
    return "test"


def split_image_ids(config: PipelineConfig) -> dict[str, list[str]]:
    assignment: dict[str, list[str]] = {name: [] for name in SPLITS}
    for image_id in discover_image_ids(config.masks_dir):
        assignment[split_of(image_id, config.seed, config.splits)].append(image_id)
    return assignment


def feature_path(config: PipelineConfig, image_id: str, layer_id: int) -> str:
    return os.path.join(config.features_dir, f"{image_id}_layer{layer_id}.ftns")


def mask_path(config: PipelineConfig, image_id: str) -> str:
    return os.path.join(config.masks_dir, f"{image_id}.msk")


def load_image_inputs(
    config: PipelineConfig, image_id: str
) -> tuple[PixelMask, dict[int, FeatureMap]]:
    mask = read_mask(mask_path(config, image_id))
    maps = {}
    for layer_id in config.layers:
        path = feature_path(config, image_id, layer_id)
        if not os.path.exists(path):
            raise ValidationError(f"missing feature file {path!r}")
        maps[layer_id] = read_feature_map(path)
    return mask, maps


# ---------------------------------------------------------------------------
# artifact locations


def dataset_path(config: PipelineConfig, layer_id: int, split: str) -> str:
    return os.path.join(config.out_dir, "datasets", f"layer{layer_id}_{split}.fdst")


def flow_model_path(config: PipelineConfig, layer_id: int) -> str:
    return os.path.join(config.out_dir, "models", f"flow_layer{layer_id}.nvpf")


def flow_log_path(config: PipelineConfig, layer_id: int) -> str:
    return os.path.join(config.out_dir, "models", f"flow_layer{layer_id}.log")


def knn_index_path(config: PipelineConfig, layer_id: int) -> str:
    return os.path.join(config.out_dir, "models", f"knn_layer{layer_id}.knnx")


def calibration_path(config: PipelineConfig, estimator: str) -> str:
    return os.path.join(config.out_dir, "calibrations", f"{estimator}.txt")


def fusion_path(config: PipelineConfig, estimator: str) -> str:
    return os.path.join(config.out_dir, "fusion", f"{estimator}.txt")


def threshold_path(config: PipelineConfig, estimator: str) -> str:
    return os.path.join(config.out_dir, "fusion", f"{estimator}_threshold.txt")


def segment_dir(config: PipelineConfig, estimator: str) -> str:
    return os.path.join(config.out_dir, "segment", estimator)


def reports_dir(config: PipelineConfig) -> str:
    return os.path.join(config.out_dir, "reports")


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(config: PipelineConfig) -> dict:
    """Write the bundled synthetic corpus into the configured input dirs."""
    return generate_corpus(config.features_dir, config.masks_dir, config.synthetic)


def cmd_prepare(config: PipelineConfig) -> dict:
    """Label cells by receptive-field scoring and pool background datasets.

    Writes one train and one val dataset per layer plus a JSON summary of
    kept/discarded cell counts.
    """
    assignment = split_image_ids(config)
    for needed in ("train", "val"):
        if not assignment[needed]:
            raise ValidationError(f"the {needed} split is empty; add images or change the seed")

    inputs: dict[str, tuple[PixelMask, dict[int, FeatureMap]]] = {}
    for split in ("train", "val"):
        for image_id in assignment[split]:
            inputs[image_id] = load_image_inputs(config, image_id)

    summary: dict = {"splits": {name: assignment[name] for name in SPLITS}, "layers": {}}
    for layer_id in config.layers:
        layer_summary = {}
        for split in ("train", "val"):
            maps, label_grids = [], []
            counts = {"background": 0, "foreground": 0, "mixed": 0}
            for image_id in assignment[split]:
                mask, feature_maps = inputs[image_id]
                fmap = feature_maps[layer_id]
                scores = score_receptive_fields(
                    mask, fmap.downsample_factor, config.rf_radius_for(layer_id)
                )
                grid = assign_feature_labels(scores, config.bg_thresh, config.fg_thresh)
                counts["background"] += int((grid.label == BACKGROUND).sum())
                counts["foreground"] += int((grid.label == FOREGROUND).sum())
                counts["mixed"] += int((grid.label == MIXED).sum())
                maps.append(fmap)
                label_grids.append(grid)
            dataset = collect_background_features(maps, label_grids)
            if len(dataset) == 0:
                raise ValidationError(
                    f"layer {layer_id} {split} split produced no background features; "
                    "relax bg_thresh or check the masks"
                )
            path = dataset_path(config, layer_id, split)
            _ensure_parent(path)
            write_dataset(dataset, path)
            layer_summary[split] = {"kept": len(dataset), **counts}
        summary["layers"][str(layer_id)] = layer_summary

    summary_path = os.path.join(config.out_dir, "prepare_summary.json")
    _ensure_parent(summary_path)
    atomic_write_bytes(
        summary_path, (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )
    return summary


def _subsample(vectors: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    if cap is None or vectors.shape[0] <= cap:
        return vectors
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA5]))
    keep = rng.choice(vectors.shape[0], size=cap, replace=False)
    return vectors[np.sort(keep)]


def cmd_train(config: PipelineConfig) -> dict:
    """Fit the requested density estimators per layer plus their calibrations."""
    summary: dict = {estimator: {} for estimator in config.estimators}
    for estimator in config.estimators:
        calibrations = []
        for layer_id in config.layers:
            train_set = read_dataset(dataset_path(config, layer_id, "train"))
            val_set = read_dataset(dataset_path(config, layer_id, "val"))
            train_vectors = train_set.vectors.astype(np.float64)
            val_vectors = val_set.vectors.astype(np.float64)

            if estimator == "flow":
                flow_config = config.flow
                model, log = train_flow(train_set, flow_config, val_vectors=val_vectors)
                model_file = flow_model_path(config, layer_id)
                _ensure_parent(model_file)
                save_model(model, model_file)
                atomic_write_bytes(flow_log_path(config, layer_id), log.to_text().encode("utf-8"))
                train_nll = -model.log_prob(train_vectors)
                val_nll = -model.log_prob(val_vectors)
                summary[estimator][layer_id] = {
                    "epochs": len(log.records),
                    "best_val_nll": min(r.val_nll for r in log.records),
                    "stopped_early": log.stopped_early,
                }
            else:
                index = build_index(_subsample(train_vectors, config.max_index_vectors, config.seed))
                index_file = knn_index_path(config, layer_id)
                _ensure_parent(index_file)
                save_index(index, index_file)
                train_nll = knn_nll_vectors(train_vectors, index, config.k)
                val_nll = knn_nll_vectors(val_vectors, index, config.k)
                summary[estimator][layer_id] = {"stored": index.count}

            calibrations.append(ensemble.fit_calibration(layer_id, train_nll, val_nll))
        path = calibration_path(config, estimator)
        _ensure_parent(path)
        ensemble.save_calibrations(calibrations, path)
    return summary


@dataclass
class EstimatorArtifacts:
    """Everything segment/evaluate need for one estimator."""

    estimator: str
    scorers: dict[int, FlowModel | KnnScorer]
    calibrations: dict[int, ensemble.LayerCalibration]
    fusion: ensemble.FusionModel
    threshold: float


def load_scorers(config: PipelineConfig, estimator: str) -> dict[int, FlowModel | KnnScorer]:
    scorers: dict[int, FlowModel | KnnScorer] = {}
    for layer_id in config.layers:
        if estimator == "flow":
            scorers[layer_id] = load_model(flow_model_path(config, layer_id))
        else:
            scorers[layer_id] = KnnScorer(load_index(knn_index_path(config, layer_id)), config.k)
    return scorers


def load_calibration_map(config: PipelineConfig, estimator: str) -> dict[int, ensemble.LayerCalibration]:
    loaded = ensemble.load_calibrations(calibration_path(config, estimator))
    by_layer = {c.layer_id: c for c in loaded}
    missing = [l for l in config.layers if l not in by_layer]
    if missing:
        raise ValidationError(f"calibration file lacks layers {missing}; rerun train")
    return {l: by_layer[l] for l in config.layers}


def load_artifacts(config: PipelineConfig, estimator: str) -> EstimatorArtifacts:
    fusion = ensemble.load_fusion(fusion_path(config, estimator))
    with open(threshold_path(config, estimator), "r", encoding="utf-8") as fh:
        threshold = float(fh.read().strip())
    return EstimatorArtifacts(
        estimator=estimator,
        scorers=load_scorers(config, estimator),
        calibrations=load_calibration_map(config, estimator),
        fusion=fusion,
        threshold=threshold,
    )


def _calibrated_pixel_grids(
    config: PipelineConfig,
    scorers: dict[int, FlowModel | KnnScorer],
    calibrations: dict[int, ensemble.LayerCalibration],
    feature_maps: dict[int, FeatureMap],
    height: int,
    width: int,
) -> dict[int, np.ndarray]:
    from .segmentation import bilinear_upsample

    grids = {}
    for layer_id in config.layers:
        nll = scorers[layer_id].score_map(feature_maps[layer_id])
        calibrated = ensemble.calibrate_nll(nll, calibrations[layer_id])
        grids[layer_id] = bilinear_upsample(calibrated, height, width)
    return grids


def _fusion_samples(
    config: PipelineConfig,
    scorers: dict[int, FlowModel | KnnScorer],
    calibrations: dict[int, ensemble.LayerCalibration],
    image_ids: list[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Cell-level fusion samples at the finest configured layer grid.

    Coarser layers are upsampled to the finest grid so every sample carries
    one calibrated value per layer; labels come from receptive-field scoring
    at the finest stride, with mixed cells dropped.
    """
    from .segmentation import bilinear_upsample

    feature_rows: list[np.ndarray] = []
    label_rows: list[np.ndarray] = []
    for image_id in image_ids:
        mask, feature_maps = load_image_inputs(config, image_id)
        finest_layer = min(config.layers, key=lambda l: feature_maps[l].downsample_factor)
        reference = feature_maps[finest_layer]
        grid_shape = (reference.grid_h, reference.grid_w)

        per_layer = []
        for layer_id in config.layers:
            nll = scorers[layer_id].score_map(feature_maps[layer_id])
            calibrated = ensemble.calibrate_nll(nll, calibrations[layer_id])
            per_layer.append(bilinear_upsample(calibrated, *grid_shape).ravel())

        scores = score_receptive_fields(
            mask, reference.downsample_factor, config.rf_radius_for(finest_layer)
        )
        labels = assign_feature_labels(scores, config.bg_thresh, config.fg_thresh).label.ravel()
        keep = labels != MIXED
        feature_rows.append(np.column_stack(per_layer)[keep])
        label_rows.append((labels[keep] == FOREGROUND).astype(np.float64))
    return np.concatenate(feature_rows), np.concatenate(label_rows)


def cmd_fit_fusion(config: PipelineConfig) -> dict:
    """Fit the fusion rule on the fitting split and pick the default threshold.

    The threshold is the fused-score value achieving the target TPR on the
    fitting images' pixels.
    """
    assignment = split_image_ids(config)
    fit_ids = assignment["fit"]
    if not fit_ids:
        raise ValidationError("the fit split is empty; add images or change the seed")

    summary: dict = {}
    for estimator in config.estimators:
        scorers = load_scorers(config, estimator)
        calibrations = load_calibration_map(config, estimator)

        report: dict = {"mode": config.fusion}
        if config.fusion == "logistic":
            samples, labels = _fusion_samples(config, scorers, calibrations, fit_ids)
            if labels.min() == labels.max():
                raise ValidationError("fitting split contains a single class; cannot fit fusion")
            fusion = ensemble.fit_logistic(samples, labels)
            label_bools = labels.astype(bool)
            per_layer_auroc = {
                layer_id: metrics.auroc(
                    metrics.ScoredPixels(scores=samples[:, column], labels=label_bools)
                )
                for column, layer_id in enumerate(config.layers)
            }
            fused_cells = ensemble.fuse_logistic(list(samples.T), fusion)
            fused_auroc = metrics.auroc(
                metrics.ScoredPixels(scores=fused_cells, labels=label_bools)
            )
            report["fit_auroc_per_layer"] = {str(k): v for k, v in per_layer_auroc.items()}
            report["fit_auroc_fused"] = fused_auroc
            report["converged"] = fusion.converged
        else:
            fusion = ensemble.FusionModel(mode=config.fusion)

        fusion_file = fusion_path(config, estimator)
        _ensure_parent(fusion_file)
        ensemble.save_fusion(fusion, fusion_file)

        # Operating threshold: fused pixel score reaching the target TPR on
        # the fitting images.
        fused_scores, pixel_labels = [], []
        for image_id in fit_ids:
            mask, feature_maps = load_image_inputs(config, image_id)
            grids = _calibrated_pixel_grids(
                config, scorers, calibrations, feature_maps, mask.height, mask.width
            )
            stacked = [grids[l] for l in config.layers]
            fused = fusion.fuse(stacked) if len(stacked) > 1 or fusion.mode == "logistic" else stacked[0]
            fused_scores.append(fused.ravel())
            pixel_labels.append(mask.values.ravel() == 0)
        pooled = metrics.ScoredPixels(
            scores=np.concatenate(fused_scores), labels=np.concatenate(pixel_labels)
        )
        tau = metrics.threshold_at_tpr(pooled, config.target_tpr)
        atomic_write_bytes(threshold_path(config, estimator), f"{tau!r}\n".encode("utf-8"))
        report["threshold"] = tau

        report_path = os.path.join(config.out_dir, "fusion", f"{estimator}_fit_report.json")
        atomic_write_bytes(
            report_path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8")
        )
        summary[estimator] = report
    return summary


def _segment_one(
    config: PipelineConfig, artifacts: EstimatorArtifacts, image_id: str
) -> SegmentationResult:
    mask, feature_maps = load_image_inputs(config, image_id)
    return segment_image(
        feature_maps=feature_maps,
        scorers=artifacts.scorers,
        calibrations=artifacts.calibrations,
        fusion=artifacts.fusion,
        tau=artifacts.threshold,
        height=mask.height,
        width=mask.width,
    )


def _write_segmentation(
    config: PipelineConfig, estimator: str, image_id: str, result: SegmentationResult
) -> None:
    out_dir = segment_dir(config, estimator)
    os.makedirs(out_dir, exist_ok=True)
    fused_map = FeatureMap(
        layer_id=0,
        downsample_factor=1,
        image_id=image_id,
        values=result.likelihood.values[:, :, None].astype(np.float32),
    )
    write_feature_map(fused_map, os.path.join(out_dir, f"{image_id}_fused.ftns"))
    write_mask(
        PixelMask(values=result.mask.to_pixel_mask_values()),
        os.path.join(out_dir, f"{image_id}_mask.msk"),
    )
    for layer_id, grid in result.layer_maps.items():
        layer_map = FeatureMap(
            layer_id=layer_id,
            downsample_factor=1,
            image_id=image_id,
            values=grid[:, :, None].astype(np.float32),
        )
        write_feature_map(layer_map, os.path.join(out_dir, f"{image_id}_layer{layer_id}.ftns"))


def cmd_segment(config: PipelineConfig, image_ids: list[str] | None = None) -> dict:
    """Segment the given images (default: the test split) per estimator."""
    assignment = split_image_ids(config)
    available = sorted(set().union(*[set(v) for v in assignment.values()]))
    if image_ids is None:
        image_ids = assignment["test"]
        if not image_ids:
            raise ValidationError("the test split is empty; pass image ids explicitly")
    unknown = [i for i in image_ids if i not in available]
    if unknown:
        raise ValidationError(f"unknown image ids {unknown}; available: {available}")

    summary: dict = {}
    for estimator in config.estimators:
        artifacts = load_artifacts(config, estimator)

        def job(image_id: str):
            result = _segment_one(config, artifacts, image_id)
            _write_segmentation(config, estimator, image_id, result)
            return image_id, float(result.mask.foreground.mean())

        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(job, image_ids))
        else:
            results = [job(image_id) for image_id in image_ids]
        summary[estimator] = {image_id: fraction for image_id, fraction in results}
    return summary


def _read_segment_outputs(
    config: PipelineConfig, estimator: str, image_ids: list[str]
) -> tuple[dict[int, list[LikelihoodMap]], list[LikelihoodMap], list[PixelMask]]:
    out_dir = segment_dir(config, estimator)
    per_layer: dict[int, list[LikelihoodMap]] = {l: [] for l in config.layers}
    fused: list[LikelihoodMap] = []
    masks: list[PixelMask] = []
    for image_id in image_ids:
        fused_path = os.path.join(out_dir, f"{image_id}_fused.ftns")
        if not os.path.exists(fused_path):
            raise ValidationError(f"missing segmentation output {fused_path!r}; run segment first")
        fused.append(
            LikelihoodMap(values=read_feature_map(fused_path).values[:, :, 0], image_id=image_id)
        )
        for layer_id in config.layers:
            layer_path = os.path.join(out_dir, f"{image_id}_layer{layer_id}.ftns")
            per_layer[layer_id].append(
                LikelihoodMap(values=read_feature_map(layer_path).values[:, :, 0], image_id=image_id)
            )
        masks.append(read_mask(mask_path(config, image_id)))
    return per_layer, fused, masks


def _metrics_table(rows: list[tuple[str, metrics.MetricsReport]]) -> str:
    header = f"{'row':<18} {'FPR@95%TPR':>11} {'AR':>8} {'AP':>8} {'AUROC':>8}"
    lines = [header, "-" * len(header)]
    for name, report in rows:
        lines.append(
            f"{name:<18} {report.fpr_at_95tpr:>11.4f} {report.average_recall:>8.4f} "
            f"{report.average_precision:>8.4f} {report.auroc:>8.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_evaluate(config: PipelineConfig, image_ids: list[str] | None = None) -> dict:
    """Metric rows per layer and fused, written as table, kv lines and figures."""
    assignment = split_image_ids(config)
    if image_ids is None:
        image_ids = assignment["test"]
    if not image_ids:
        raise ValidationError("no images to evaluate")
    for image_id in image_ids:
        if not os.path.exists(mask_path(config, image_id)):
            raise ValidationError(f"missing ground-truth mask for {image_id!r}")

    os.makedirs(reports_dir(config), exist_ok=True)
    summary: dict = {}
    for estimator in config.estimators:
        per_layer, fused, masks = _read_segment_outputs(config, estimator, image_ids)
        rows: list[tuple[str, metrics.MetricsReport]] = []
        for layer_id in config.layers:
            rows.append(
                (f"{estimator} layer {layer_id}",
                 metrics.evaluate(per_layer[layer_id], masks, config.target_tpr))
            )
        ensemble_row = (
            f"{estimator} ensemble",
            metrics.evaluate(fused, masks, config.target_tpr),
        )
        rows.append(ensemble_row)

        table = _metrics_table(rows)
        atomic_write_bytes(
            os.path.join(reports_dir(config), f"{estimator}_metrics.txt"), table.encode("utf-8")
        )
        kv_lines = [f"row={name.replace(' ', '_')}, {report.to_kv()}" for name, report in rows]
        atomic_write_bytes(
            os.path.join(reports_dir(config), f"{estimator}_metrics.kv"),
            ("\n".join(kv_lines) + "\n").encode("utf-8"),
        )

        if config.figures:
            from . import figures

            pooled = metrics.pool_pixels(fused, masks)
            figures.save_roc_pr_figure(
                pooled,
                os.path.join(reports_dir(config), f"{estimator}_roc_pr.png"),
                title=f"{estimator} ensemble ({len(image_ids)} images)",
            )
            figures.save_layer_auroc_figure(
                {name: report.auroc for name, report in rows},
                os.path.join(reports_dir(config), f"{estimator}_auroc.png"),
            )
            figures.save_likelihood_figure(
                fused[0],
                masks[0],
                os.path.join(reports_dir(config), f"{estimator}_{fused[0].image_id}_map.png"),
            )

        summary[estimator] = {name: report for name, report in rows}
    return summary


def _time_scorer(scorer, fmap: FeatureMap, repeats: int = 3) -> float:
    """Median wall-clock seconds for one full map scoring."""
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        scorer.score_map(fmap)
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def bench_pair(
    flow_model: FlowModel, knn_scorer: KnnScorer, fmap: FeatureMap, repeats: int = 3
) -> dict:
    """Head-to-head scoring timings for one feature map (seconds)."""
    return {
        "flow_seconds": _time_scorer(flow_model, fmap, repeats),
        "knn_seconds": _time_scorer(knn_scorer, fmap, repeats),
    }


def cmd_bench(config: PipelineConfig, repeats: int = 3) -> dict:
    """Per-layer scoring wall-clock and artifact sizes; reports, asserts nothing."""
    assignment = split_image_ids(config)
    pool = assignment["test"] or discover_image_ids(config.masks_dir)
    image_id = pool[0]
    _, feature_maps = load_image_inputs(config, image_id)

    rows: dict = {}
    for layer_id in config.layers:
        fmap = feature_maps[layer_id]
        entry: dict = {"grid": f"{fmap.grid_h}x{fmap.grid_w}", "dim": fmap.dim}
        flow_file = flow_model_path(config, layer_id)
        knn_file = knn_index_path(config, layer_id)
        if os.path.exists(flow_file):
            model = load_model(flow_file)
            entry["flow_ms"] = _time_scorer(model, fmap, repeats) * 1e3
            entry["flow_bytes"] = os.path.getsize(flow_file)
        if os.path.exists(knn_file):
            scorer = KnnScorer(load_index(knn_file), config.k)
            entry["knn_ms"] = _time_scorer(scorer, fmap, repeats) * 1e3
            entry["knn_bytes"] = os.path.getsize(knn_file)
        if not ("flow_ms" in entry or "knn_ms" in entry):
            raise ValidationError(f"no trained artifacts found for layer {layer_id}; run train")
        rows[layer_id] = entry

    bench_dir = os.path.join(config.out_dir, "bench")
    os.makedirs(bench_dir, exist_ok=True)
    lines = []
    for layer_id, entry in rows.items():
        parts = [f"layer={layer_id}", f"grid={entry['grid']}", f"dim={entry['dim']}"]
        for key in ("flow_ms", "knn_ms"):
            if key in entry:
                parts.append(f"{key}={entry[key]:.3f}")
        for key in ("flow_bytes", "knn_bytes"):
            if key in entry:
                parts.append(f"{key}={entry[key]}")
        lines.append(", ".join(parts))
    atomic_write_bytes(os.path.join(bench_dir, "bench.kv"), ("\n".join(lines) + "\n").encode("utf-8"))

    if config.figures:
        from . import figures

        figures.save_bench_figure(rows, os.path.join(bench_dir, "bench.png"))
    return rows
