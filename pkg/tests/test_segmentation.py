import numpy as np
import pytest

from flowseg.ensemble import FusionModel, LayerCalibration, calibrate_nll, fit_calibration
from flowseg.errors import ValidationError
from flowseg.feature_store import FeatureMap
from flowseg.flow import TrainConfig, init_model, train
from flowseg.segmentation import (
    LikelihoodMap,
    bilinear_upsample,
    segment_image,
    threshold_map,
)


class TestBilinearUpsample:
    def test_constant_grid_stays_constant(self):
        grid = np.full((3, 4), 2.5)
        out = bilinear_upsample(grid, 9, 16)
        np.testing.assert_array_equal(out, np.full((9, 16), 2.5))

    def test_half_pixel_hand_values(self):
        out = bilinear_upsample(np.array([[0.0, 1.0]]), 1, 4)
        np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-15)

    def test_identity_when_same_size(self):
        rng = np.random.default_rng(0)
        grid = rng.normal(size=(5, 7))
        np.testing.assert_array_equal(bilinear_upsample(grid, 5, 7), grid)

    def test_downscale_rejected(self):
        with pytest.raises(ValidationError):
            bilinear_upsample(np.zeros((4, 4)), 2, 8)

    def test_output_respects_input_bounds(self):
        rng = np.random.default_rng(1)
        grid = rng.normal(size=(3, 5))
        out = bilinear_upsample(grid, 17, 23)
        assert out.min() >= grid.min() - 1e-12
        assert out.max() <= grid.max() + 1e-12


class TestThresholdMap:
    def test_boundary_value_is_foreground(self):
        lmap = LikelihoodMap(values=np.array([[1.0, 0.5]]))
        mask = threshold_map(lmap, 1.0)
        assert mask.foreground[0, 0]
        assert not mask.foreground[0, 1]

    def test_below_minimum_marks_everything(self):
        lmap = LikelihoodMap(values=np.array([[1.0, 2.0]]))
        assert threshold_map(lmap, 0.0).foreground.all()

    def test_above_maximum_marks_nothing(self):
        lmap = LikelihoodMap(values=np.array([[1.0, 2.0]]))
        assert not threshold_map(lmap, 3.0).foreground.any()

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        lmap = LikelihoodMap(values=rng.normal(size=(6, 6)))
        low = threshold_map(lmap, -0.5).foreground
        high = threshold_map(lmap, 0.5).foreground
        assert (high <= low).all()  # tighter threshold selects a subset

    def test_mask_export_convention(self):
        lmap = LikelihoodMap(values=np.array([[1.0, -1.0]]))
        mask = threshold_map(lmap, 0.0)
        np.testing.assert_array_equal(mask.to_pixel_mask_values(), [[0, 1]])

    def test_non_finite_threshold_rejected(self):
        lmap = LikelihoodMap(values=np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            threshold_map(lmap, np.nan)


def constant_feature_map(layer_id, downsample, grid_h, grid_w, dim, value, image_id="img000"):
    return FeatureMap(
        layer_id=layer_id,
        downsample_factor=downsample,
        image_id=image_id,
        values=np.full((grid_h, grid_w, dim), value, dtype=np.float32),
    )


class TestSegmentImage:
    def test_constant_input_gives_uniform_class(self):
        model = init_model(2, 2, 8, seed=0)
        fmap = constant_feature_map(3, 2, 4, 4, 2, 0.0)
        calibration = LayerCalibration(layer_id=3, train_mean_nll=0.0, val_mean=0.0, val_std=1.0)
        result = segment_image(
            feature_maps={3: fmap},
            scorers={3: model},
            calibrations={3: calibration},
            fusion=FusionModel(mode="max"),
            tau=0.0,
            height=8,
            width=8,
        )
        assert result.likelihood.values.shape == (8, 8)
        assert result.mask.foreground.all()  # NLL ln(2pi) >= 0 everywhere

    def test_matches_manual_stage_composition(self):
        rng = np.random.default_rng(3)
        dims = {3: 3, 4: 3}
        models = {l: init_model(dims[l], 2, 8, seed=l) for l in dims}
        for model in models.values():
            for param in model.params():
                param += rng.normal(scale=0.1, size=param.shape)
        fmaps = {
            3: FeatureMap(3, 2, "img000", rng.normal(size=(4, 4, 3)).astype(np.float32)),
            4: FeatureMap(4, 4, "img000", rng.normal(size=(2, 2, 3)).astype(np.float32)),
        }
        calibrations = {
            l: fit_calibration(l, rng.normal(size=50), rng.normal(size=50)) for l in dims
        }
        fusion = FusionModel(mode="logistic", weights=np.array([0.7, 1.1]), bias=-0.2)
        result = segment_image(fmaps, models, calibrations, fusion, tau=0.5, height=8, width=8)

        by_hand = []
        for l in (3, 4):
            nll = models[l].score_map(fmaps[l])
            calibrated = calibrate_nll(nll, calibrations[l])
            by_hand.append(bilinear_upsample(calibrated, 8, 8))
        from flowseg.ensemble import fuse_logistic

        expected = fuse_logistic(by_hand, fusion)
        np.testing.assert_array_equal(result.likelihood.values, expected)
        np.testing.assert_array_equal(result.mask.foreground, expected >= 0.5)
        assert set(result.layer_maps) == {3, 4}

    def test_out_of_distribution_half_is_detected(self):
        # Train on a tight in-distribution blob, present an image whose right
        # half carries far-away features; the mask should split left/right.
        rng = np.random.default_rng(4)
        background = rng.normal(size=(4000, 2))
        config = TrainConfig(
            learning_rate=2e-3, batch_size=128, max_epochs=20, patience=5,
            validation_fraction=0.2, seed=0, n_layers=4, hidden=16,
        )
        model, _ = train(background, config)

        grid = 16
        values = np.empty((grid, grid, 2), dtype=np.float32)
        values[:, : grid // 2] = rng.normal(size=(grid, grid // 2, 2))
        values[:, grid // 2 :] = 8.0 + rng.normal(size=(grid, grid // 2, 2))
        fmap = FeatureMap(3, 4, "img000", values)

        train_nll = -model.log_prob(background[:1000])
        val_nll = -model.log_prob(rng.normal(size=(500, 2)))
        calibration = fit_calibration(3, train_nll, val_nll)

        result = segment_image(
            feature_maps={3: fmap},
            scorers={3: model},
            calibrations={3: calibration},
            fusion=FusionModel(mode="max"),
            tau=3.0,  # three validation standard deviations above typical
            height=64,
            width=64,
        )
        foreground = result.mask.foreground
        assert foreground[:, 32:].mean() > 0.9
        assert foreground[:, :32].mean() < 0.1

    def test_missing_calibration_rejected(self):
        model = init_model(2, 2, 8, seed=0)
        fmap = constant_feature_map(3, 2, 2, 2, 2, 0.0)
        with pytest.raises(ValidationError):
            segment_image({3: fmap}, {3: model}, {}, FusionModel(mode="min"), 0.0, 4, 4)

    def test_stage_errors_carry_layer_context(self):
        model = init_model(3, 2, 8, seed=0)  # wrong dimension for the map
        fmap = constant_feature_map(3, 2, 2, 2, 2, 0.0)
        calibration = LayerCalibration(layer_id=3, train_mean_nll=0.0, val_mean=0.0, val_std=1.0)
        with pytest.raises(ValidationError, match="layer 3"):
            segment_image({3: fmap}, {3: model}, {3: calibration}, FusionModel(mode="min"), 0.0, 4, 4)
