import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowseg.errors import ValidationError
from flowseg.feature_store import PixelMask
from flowseg.metrics import (
    ScoredPixels,
    auroc,
    average_precision,
    average_recall,
    compute_report,
    evaluate,
    fpr_at_tpr,
    pool_pixels,
    threshold_at_tpr,
)
from flowseg.segmentation import LikelihoodMap
from oracles import (
    pairwise_auroc,
    sweep_average_precision,
    sweep_average_recall,
    sweep_fpr_at_tpr,
)


def scored(scores, labels):
    return ScoredPixels(scores=np.asarray(scores, float), labels=np.asarray(labels, bool))


def random_instance(rng, n=None):
    n = n or int(rng.integers(4, 1000))
    # Ties are likely: scores are drawn from a small discrete set half the time.
    if rng.random() < 0.5:
        scores = rng.choice(np.linspace(0, 1, 7), size=n)
    else:
        scores = rng.normal(size=n)
    labels = rng.random(n) < rng.uniform(0.2, 0.8)
    if labels.all():
        labels[0] = False
    if not labels.any():
        labels[0] = True
    return scores, labels


class TestAuroc:
    def test_worked_example(self):
        data = scored([0.1, 0.4, 0.35, 0.8], [False, False, True, True])
        assert auroc(data) == 0.75
        assert pairwise_auroc(data.scores, data.labels) == 0.75

    def test_perfect_separation(self):
        data = scored([1.0, 2.0, 3.0, 4.0], [False, False, True, True])
        assert auroc(data) == 1.0

    def test_all_ties_is_half(self):
        data = scored([0.5] * 6, [True, False, True, False, True, False])
        assert auroc(data) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            auroc(scored([1.0, 2.0], [True, True]))

    def test_matches_pairwise_oracle_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            scores, labels = random_instance(rng, n=int(rng.integers(4, 200)))
            assert auroc(scored(scores, labels)) == pytest.approx(
                pairwise_auroc(scores, labels), abs=1e-12
            )

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), shift=st.floats(-5, 5), scale=st.floats(0.1, 10))
    def test_invariant_under_increasing_transform(self, seed, shift, scale):
        rng = np.random.default_rng(seed)
        scores, labels = random_instance(rng, n=60)
        base = auroc(scored(scores, labels))
        transformed = auroc(scored(scale * scores + shift, labels))
        assert transformed == pytest.approx(base, abs=1e-12)

    def test_negation_complements_for_tie_free_scores(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(np.linspace(0, 1, 80))
        labels = rng.random(80) < 0.5
        labels[0], labels[1] = True, False
        assert auroc(scored(scores, labels)) + auroc(scored(-scores, labels)) == pytest.approx(
            1.0, abs=1e-12
        )


class TestFprAtTpr:
    def test_perfect_separation_is_zero(self):
        data = scored([1.0, 2.0, 3.0, 4.0], [False, False, True, True])
        assert fpr_at_tpr(data) == 0.0

    def test_identical_scores_give_one(self):
        data = scored([0.7] * 10, [True] * 5 + [False] * 5)
        assert fpr_at_tpr(data) == 1.0

    def test_interleaved_example_matches_sweep_oracle(self):
        rng = np.random.default_rng(2)
        positives = np.arange(1, 21, dtype=float)
        negatives = np.sort(rng.uniform(0.5, 19.5, size=20))
        scores = np.concatenate([positives, negatives])
        labels = np.array([True] * 20 + [False] * 20)
        assert fpr_at_tpr(scored(scores, labels)) == pytest.approx(
            sweep_fpr_at_tpr(scores, labels), abs=1e-12
        )

    def test_matches_sweep_oracle_randomized(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            scores, labels = random_instance(rng, n=int(rng.integers(4, 300)))
            for target in (0.5, 0.9, 0.95):
                assert fpr_at_tpr(scored(scores, labels), target) == pytest.approx(
                    sweep_fpr_at_tpr(scores, labels, target), abs=1e-12
                )


class TestAveragePrecision:
    def test_worked_example(self):
        data = scored([3.0, 2.0, 1.0], [True, False, True])
        assert average_precision(data) == pytest.approx(0.5 + 0.5 * (2 / 3), abs=1e-12)

    def test_perfect_ranking(self):
        data = scored([4.0, 3.0, 2.0, 1.0], [True, True, False, False])
        assert average_precision(data) == 1.0

    def test_random_scores_approach_prevalence(self):
        rng = np.random.default_rng(4)
        scores = rng.random(10000)
        labels = rng.random(10000) < 0.3
        prevalence = labels.mean()
        assert average_precision(scored(scores, labels)) == pytest.approx(prevalence, abs=0.02)

    def test_matches_sweep_oracle_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores, labels = random_instance(rng, n=int(rng.integers(4, 300)))
            assert average_precision(scored(scores, labels)) == pytest.approx(
                sweep_average_precision(scores, labels), abs=1e-12
            )


class TestAverageRecall:
    def test_matches_sweep_oracle_on_separated_classes(self):
        scores = np.concatenate([np.linspace(0, 0.45, 50), np.linspace(0.55, 1.0, 50)])
        labels = np.array([False] * 50 + [True] * 50)
        assert average_recall(scored(scores, labels)) == pytest.approx(
            sweep_average_recall(scores, labels), abs=1e-12
        )

    def test_degenerate_range_returns_one(self):
        data = scored([2.0] * 8, [True] * 4 + [False] * 4)
        assert average_recall(data) == 1.0

    def test_negated_scores_roughly_complement(self):
        rng = np.random.default_rng(6)
        scores = rng.permutation(np.linspace(0.0, 1.0, 200))
        labels = rng.random(200) < 0.5
        labels[0], labels[1] = True, False
        forward = average_recall(scored(scores, labels))
        backward = average_recall(scored(-scores, labels))
        assert forward + backward == pytest.approx(1.0, abs=0.03)

    def test_matches_sweep_oracle_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            scores, labels = random_instance(rng, n=int(rng.integers(4, 200)))
            assert average_recall(scored(scores, labels)) == pytest.approx(
                sweep_average_recall(scores, labels), abs=1e-12
            )


class TestEvaluate:
    def make_pair(self, values, mask_values):
        return (
            LikelihoodMap(values=np.asarray(values, float)),
            PixelMask(values=np.asarray(mask_values, np.uint8)),
        )

    def test_perfect_map_scores_perfectly(self):
        lmap, mask = self.make_pair([[0.9, 0.1], [0.8, 0.2]], [[0, 1], [0, 1]])
        report = evaluate([lmap], [mask])
        assert report.auroc == 1.0
        assert report.fpr_at_95tpr == 0.0
        assert report.average_precision == 1.0
        assert report.n_pos == 2 and report.n_neg == 2

    def test_duplication_invariance(self):
        rng = np.random.default_rng(8)
        values = rng.random((6, 6))
        mask_values = (rng.random((6, 6)) > 0.4).astype(np.uint8)
        lmap, mask = self.make_pair(values, mask_values)
        single = evaluate([lmap], [mask])
        doubled = evaluate([lmap, lmap], [mask, mask])
        assert single.auroc == pytest.approx(doubled.auroc, abs=1e-12)
        assert single.average_precision == pytest.approx(doubled.average_precision, abs=1e-12)
        assert single.fpr_at_95tpr == pytest.approx(doubled.fpr_at_95tpr, abs=1e-12)
        assert single.average_recall == pytest.approx(doubled.average_recall, abs=1e-12)

    def test_random_scores_give_half_auroc(self):
        rng = np.random.default_rng(9)
        values = rng.random((100, 100))
        mask_values = (rng.random((100, 100)) > 0.5).astype(np.uint8)
        lmap, mask = self.make_pair(values, mask_values)
        assert evaluate([lmap], [mask]).auroc == pytest.approx(0.5, abs=0.02)

    def test_dimension_mismatch_rejected(self):
        lmap = LikelihoodMap(values=np.zeros((2, 2)))
        mask = PixelMask(values=np.ones((3, 3), np.uint8))
        with pytest.raises(ValidationError):
            evaluate([lmap], [mask])

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            evaluate([], [])

    def test_kv_report_format(self):
        lmap, mask = self.make_pair([[0.9, 0.1]], [[0, 1]])
        text = evaluate([lmap], [mask]).to_kv()
        assert text.startswith("auroc=")
        for key in ("fpr_at_95tpr=", "ap=", "ar=", "n_pos=", "n_neg="):
            assert key in text

    def test_per_image_option(self):
        rng = np.random.default_rng(10)
        pairs = [
            self.make_pair(rng.random((4, 4)), (rng.random((4, 4)) > 0.5).astype(np.uint8))
            for _ in range(3)
        ]
        maps, masks = zip(*pairs)
        pooled = evaluate(list(maps), list(masks))
        averaged = evaluate(list(maps), list(masks), per_image=True)
        per_image_aurocs = [evaluate([m], [g]).auroc for m, g in pairs]
        assert averaged.auroc == pytest.approx(np.mean(per_image_aurocs), abs=1e-12)
        assert averaged.n_pos == pooled.n_pos


class TestThresholdSelection:
    def test_reaches_requested_tpr(self):
        rng = np.random.default_rng(11)
        scores = rng.normal(size=500)
        labels = rng.random(500) < 0.4
        labels[0], labels[1] = True, False
        data = scored(scores, labels)
        tau = threshold_at_tpr(data, 0.95)
        achieved = (data.scores[data.labels] >= tau).mean()
        assert achieved >= 0.95
        # The next higher distinct threshold would drop below the target.
        positives = np.sort(data.scores[data.labels])[::-1]
        above = positives[positives > tau]
        if above.size:
            assert (data.scores[data.labels] >= above[-1]).mean() < 0.95

    def test_report_bundles_all_metrics(self):
        rng = np.random.default_rng(12)
        scores, labels = random_instance(rng, n=100)
        report = compute_report(scored(scores, labels))
        for value in (report.auroc, report.fpr_at_95tpr, report.average_precision,
                      report.average_recall):
            assert 0.0 <= value <= 1.0


class TestPooling:
    def test_pooled_sizes(self):
        maps = [LikelihoodMap(values=np.zeros((2, 3))), LikelihoodMap(values=np.ones((1, 4)))]
        masks = [
            PixelMask(values=np.array([[0, 1, 1], [1, 1, 0]], np.uint8)),
            PixelMask(values=np.array([[1, 0, 0, 1]], np.uint8)),
        ]
        pooled = pool_pixels(maps, masks)
        assert pooled.scores.size == 10
        assert pooled.n_pos == 4  # four foreground (0) pixels
