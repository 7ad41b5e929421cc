import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from connlatent.errors import EvaluationError, ShapeError
from connlatent.metrics import compute_metrics, rank_auc, roc_points, trapezoid_auc

from oracles import pairwise_auc


class TestComputeMetrics:
    def test_perfect(self):
        m = compute_metrics([0, 0, 1, 1], [0, 0, 1, 1], 0.5)
        assert (m.accuracy, m.sensitivity, m.specificity, m.auc) == (1.0, 1.0, 1.0, 1.0)
        assert m.confusion == (2, 0, 2, 0)

    def test_constant_scores_auc_half(self):
        assert compute_metrics([0.4] * 6, [0, 1, 0, 1, 1, 0], 0.5).auc == 0.5

    def test_four_pair_example(self):
        assert rank_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_identities(self, rng):
        scores = rng.random(37)
        y = rng.integers(0, 2, 37)
        y[:2] = (0, 1)
        m = compute_metrics(scores, y, 0.4)
        tp, fp, tn, fn = m.confusion
        assert m.accuracy == (tp + tn) / 37
        assert m.sensitivity == tp / (tp + fn) and m.specificity == tn / (tn + fp)

    def test_threshold_is_strict(self):
        m = compute_metrics([0.5, 0.5], [0, 1], 0.5)
        assert m.confusion == (0, 0, 1, 1)

    def test_single_class(self):
        with pytest.raises(EvaluationError):
            compute_metrics([0.1, 0.2], [1, 1], 0.5)

    def test_non_binary_labels(self):
        with pytest.raises(EvaluationError):
            rank_auc([0.1, 0.2], [0, 2])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rank_auc([0.1, 0.2, 0.3], [0, 1])

    def test_matches_pairwise_definition(self, rng):
        scores = rng.integers(0, 5, 60).astype(float)
        y = rng.integers(0, 2, 60)
        assert rank_auc(scores, y) == pytest.approx(pairwise_auc(scores, y), abs=1e-12)


class TestRoc:
    def test_separable_through_corner(self):
        pts = roc_points([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert any((p == [0.0, 1.0]).all() for p in pts)

    def test_constant_scores(self):
        pts = roc_points([0.3] * 4, [0, 1, 0, 1])
        np.testing.assert_array_equal(pts, [[0, 0], [1, 1]])
        assert trapezoid_auc(pts) == 0.5

    def test_endpoints_and_monotone(self, rng):
        pts = roc_points(rng.random(100), rng.integers(0, 2, 100))
        np.testing.assert_array_equal(pts[0], [0, 0])
        np.testing.assert_array_equal(pts[-1], [1, 1])
        assert np.all(np.diff(pts, axis=0) >= 0)

    def test_one_point_per_distinct_score(self):
        pts = roc_points([0.1, 0.1, 0.5, 0.9, 0.9], [0, 1, 0, 1, 1])
        assert len(pts) == 3 + 1

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=60))
    def test_trapezoid_equals_rank_auc(self, pairs):
        scores = np.array([p[0] for p in pairs], dtype=float)
        y = np.array([p[1] for p in pairs])
        if y.min() == y.max():
            y[0] = 1 - y[0]
        assert abs(trapezoid_auc(roc_points(scores, y)) - rank_auc(scores, y)) < 1e-12
