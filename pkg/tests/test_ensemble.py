import numpy as np
import pytest

from flowseg.ensemble import (
    FusionModel,
    LayerCalibration,
    calibrate_nll,
    center_nll,
    fit_calibration,
    fit_logistic,
    fuse_logistic,
    fuse_max,
    fuse_min,
    load_calibrations,
    load_fusion,
    normalize_nll,
    save_calibrations,
    save_fusion,
)
from flowseg.errors import ValidationError
from flowseg.metrics import ScoredPixels, auroc


class TestCentering:
    def test_training_values_center_to_zero_mean(self):
        rng = np.random.default_rng(0)
        train_nll = rng.normal(loc=5.0, size=(4, 6))
        calibration = fit_calibration(3, train_nll, rng.normal(loc=5.0, size=40))
        centered = center_nll(train_nll, calibration)
        assert abs(centered.mean()) < 1e-12

    def test_constant_grid_at_train_mean_maps_to_zero(self):
        calibration = LayerCalibration(layer_id=4, train_mean_nll=2.5, val_mean=0.0, val_std=1.0)
        grid = np.full((3, 3), 2.5)
        np.testing.assert_array_equal(center_nll(grid, calibration), np.zeros((3, 3)))

    def test_centering_commutes_with_permutation(self):
        rng = np.random.default_rng(1)
        calibration = LayerCalibration(layer_id=3, train_mean_nll=1.0, val_mean=0.2, val_std=2.0)
        grid = rng.normal(size=(4, 5))
        permuted = grid[::-1, ::-1]
        np.testing.assert_array_equal(
            center_nll(grid, calibration)[::-1, ::-1], center_nll(permuted, calibration)
        )

    def test_layer_mismatch_rejected(self):
        calibration = LayerCalibration(layer_id=3, train_mean_nll=1.0, val_mean=0.0, val_std=1.0)
        with pytest.raises(ValidationError):
            center_nll(np.zeros((2, 2)), calibration, layer_id=4)


class TestNormalization:
    def test_validation_values_standardize(self):
        rng = np.random.default_rng(2)
        train_nll = rng.normal(loc=3.0, size=200)
        val_nll = rng.normal(loc=3.2, scale=1.7, size=300)
        calibration = fit_calibration(5, train_nll, val_nll)
        normalized = normalize_nll(center_nll(val_nll, calibration), calibration)
        assert abs(normalized.mean()) < 1e-9
        assert abs(normalized.std() - 1.0) < 1e-9

    def test_identity_when_constants_trivial(self):
        calibration = LayerCalibration(layer_id=3, train_mean_nll=0.0, val_mean=0.0, val_std=1.0)
        grid = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(calibrate_nll(grid, calibration), grid)

    def test_ranking_preserved(self):
        rng = np.random.default_rng(3)
        calibration = LayerCalibration(layer_id=3, train_mean_nll=1.3, val_mean=-0.4, val_std=2.2)
        grid = rng.normal(size=30)
        transformed = calibrate_nll(grid, calibration)
        np.testing.assert_array_equal(np.argsort(grid), np.argsort(transformed))

    def test_zero_std_rejected(self):
        with pytest.raises(ValidationError):
            LayerCalibration(layer_id=3, train_mean_nll=0.0, val_mean=0.0, val_std=0.0)
        with pytest.raises(ValidationError):
            fit_calibration(3, np.ones(5), np.ones(5))


class TestMinMaxFusion:
    def test_min_picks_smaller(self):
        fused = fuse_min([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
        np.testing.assert_array_equal(fused, np.full((2, 2), 1.0))

    def test_max_picks_larger(self):
        fused = fuse_max([np.full((2, 2), 1.0), np.full((2, 2), 3.0)])
        np.testing.assert_array_equal(fused, np.full((2, 2), 3.0))

    def test_idempotent_on_identical_grids(self):
        rng = np.random.default_rng(4)
        grid = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(fuse_min([grid, grid.copy()]), grid)
        np.testing.assert_array_equal(fuse_max([grid, grid.copy()]), grid)

    def test_commutative_under_layer_order(self):
        rng = np.random.default_rng(5)
        grids = [rng.normal(size=(3, 3)) for _ in range(4)]
        np.testing.assert_array_equal(fuse_max(grids), fuse_max(grids[::-1]))
        np.testing.assert_array_equal(fuse_min(grids), fuse_min(grids[::-1]))

    def test_min_bounds_inputs_bounds_max(self):
        rng = np.random.default_rng(6)
        grids = [rng.normal(size=(5, 5)) for _ in range(3)]
        low = fuse_min(grids)
        high = fuse_max(grids)
        for grid in grids:
            assert (low <= grid).all()
            assert (grid <= high).all()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            fuse_min([np.zeros((2, 2)), np.zeros((3, 2))])

    def test_single_grid_rejected(self):
        with pytest.raises(ValidationError):
            fuse_min([np.zeros((2, 2))])


class TestLogisticFit:
    def test_zero_model_outputs_half(self):
        model = FusionModel(mode="logistic", weights=np.zeros(3), bias=0.0)
        grids = [np.zeros((2, 2)) for _ in range(3)]
        np.testing.assert_array_equal(fuse_logistic(grids, model), np.full((2, 2), 0.5))

    def test_separable_data_ranks_perfectly(self):
        features = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        labels = np.array([0, 0, 1, 1])
        model = fit_logistic(features, labels)
        scores = fuse_logistic([features[:, 0]], model)
        assert auroc(ScoredPixels(scores=scores, labels=labels.astype(bool))) == 1.0
        assert model.weights[0] > 0.0

    def test_duplicating_samples_leaves_fit_unchanged(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(30, 2))
        labels = (features.sum(axis=1) + 0.3 * rng.normal(size=30) > 0).astype(int)
        model_a = fit_logistic(features, labels)
        model_b = fit_logistic(np.tile(features, (2, 1)), np.tile(labels, 2))
        np.testing.assert_allclose(model_a.weights, model_b.weights, atol=1e-9)
        assert model_a.bias == pytest.approx(model_b.bias, abs=1e-9)

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(8)
        features = rng.normal(size=(50, 3))
        labels = (features @ np.array([1.0, -0.5, 0.2]) > 0.1).astype(int)
        model_a = fit_logistic(features, labels)
        model_b = fit_logistic(features.copy(), labels.copy())
        np.testing.assert_array_equal(model_a.weights, model_b.weights)
        assert model_a.bias == model_b.bias

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            fit_logistic(np.zeros((4, 2)), np.ones(4))

    def test_sigmoid_closed_form(self):
        model = FusionModel(mode="logistic", weights=np.array([1.0]), bias=0.0)
        grid = np.array([[0.0, np.log(3.0)]])
        fused = fuse_logistic([grid], model)
        assert fused[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert fused[0, 1] == pytest.approx(0.75, abs=1e-12)

    def test_monotone_in_layer_values(self):
        model = FusionModel(mode="logistic", weights=np.array([0.8, 1.2]), bias=-0.3)
        base = [np.full((2, 2), 0.5), np.full((2, 2), -0.2)]
        raised = [base[0].copy(), base[1].copy()]
        raised[1][0, 0] += 1.0
        assert fuse_logistic(raised, model)[0, 0] >= fuse_logistic(base, model)[0, 0]

    def test_outputs_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(9)
        model = FusionModel(mode="logistic", weights=rng.normal(size=2), bias=0.4)
        grids = [rng.normal(scale=50.0, size=(4, 4)) for _ in range(2)]
        fused = fuse_logistic(grids, model)
        assert (fused > 0.0).all() and (fused < 1.0).all()

    def test_scaling_weights_preserves_pairwise_order(self):
        rng = np.random.default_rng(10)
        weights = rng.normal(size=3)
        grids = [rng.normal(size=(1, 5)) for _ in range(3)]
        base = fuse_logistic(grids, FusionModel(mode="logistic", weights=weights, bias=0.2))
        scaled = fuse_logistic(
            grids, FusionModel(mode="logistic", weights=3.0 * weights, bias=0.6)
        )
        np.testing.assert_array_equal(np.argsort(base.ravel()), np.argsort(scaled.ravel()))

    def test_layer_count_mismatch(self):
        model = FusionModel(mode="logistic", weights=np.array([1.0, 2.0]), bias=0.0)
        with pytest.raises(ValidationError):
            fuse_logistic([np.zeros((2, 2))] * 3, model)


class TestArtifactFiles:
    def test_calibration_file_round_trip(self, tmp_path):
        calibrations = [
            LayerCalibration(layer_id=3, train_mean_nll=1.25, val_mean=-0.5, val_std=2.0),
            LayerCalibration(layer_id=4, train_mean_nll=-7.5, val_mean=0.125, val_std=0.25),
        ]
        path = tmp_path / "calib.txt"
        save_calibrations(calibrations, str(path))
        again = load_calibrations(str(path))
        assert again == calibrations
        first = path.read_text().splitlines()[0]
        assert first.startswith("3,")

    def test_fusion_file_round_trip_logistic(self, tmp_path):
        model = FusionModel(
            mode="logistic", weights=np.array([0.5, -1.5, 2.25, 0.125]), bias=-0.75
        )
        path = tmp_path / "fusion.txt"
        save_fusion(model, str(path))
        again = load_fusion(str(path))
        assert again.mode == "logistic"
        np.testing.assert_array_equal(again.weights, model.weights)
        assert again.bias == model.bias
        assert path.read_text().splitlines()[0] == "logistic"

    def test_fusion_file_min_mode_records_mode_only(self, tmp_path):
        path = tmp_path / "fusion.txt"
        save_fusion(FusionModel(mode="min"), str(path))
        assert path.read_text() == "min\n"
        assert load_fusion(str(path)).mode == "min"

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValidationError):
            FusionModel(mode="median")
