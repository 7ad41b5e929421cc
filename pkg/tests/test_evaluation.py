import numpy as np
import pytest

from connlatent.classifiers import ClassifierSpec
from connlatent.data import Dataset, synth_dataset
from connlatent.errors import ConfigError, EvaluationError
from connlatent.evaluation import (BootstrapCI, PermutationResult, bootstrap_ci, holdout_accuracy,
                                   iteration_rng, losocv_sites, permutation_p_value,
                                   permutation_test, qualifying_sites, read_permutation_csv,
                                   write_permutation_csv)

from conftest import dataset_from_counts, table1_counts

LINEAR = ClassifierSpec("svm", "linear", 1.0)
RBF = ClassifierSpec("svm", "rbf", 1.0, 0.1)


def planted(n, seed, effect=1.5, dim=6):
    d = synth_dataset(n, 1, dim, 3, effect_size=effect, seed=seed)
    return d.features, d.labels


class TestLosocvSites:
    def test_table1_sites(self):
        assert losocv_sites(dataset_from_counts(table1_counts())) == [5, 9, 20, 33]

    def test_table1_totals(self):
        rows = table1_counts()
        assert sum(r["subjects"] for r in rows) == 1029
        assert sum(r["control"] for r in rows) == 544 and sum(r["asd"] for r in rows) == 485
        assert sum(r["male"] for r in rows) == 813 and sum(r["female"] for r in rows) == 216

    def test_order_invariant(self, rng):
        d = dataset_from_counts(table1_counts())
        perm = rng.permutation(len(d))
        assert qualifying_sites(d.sites[perm], d.labels[perm]) == [5, 9, 20, 33]

    def test_boundary_is_strict(self):
        rows = [{"site": 1, "control": 20, "asd": 20}, {"site": 2, "control": 21, "asd": 21},
                {"site": 3, "control": 21, "asd": 20}]
        assert losocv_sites(dataset_from_counts(rows)) == [2]

    def test_empty(self):
        assert losocv_sites(Dataset((), np.zeros((0, 3)))) == []

    def test_threshold_parameter(self):
        rows = [{"site": 4, "control": 3, "asd": 3}]
        assert losocv_sites(dataset_from_counts(rows), min_per_class=2) == [4]
        assert losocv_sites(dataset_from_counts(rows), min_per_class=3) == []


class TestPermutationPValue:
    def test_floor(self):
        assert permutation_p_value(0.9, np.full(1000, 0.5)) == pytest.approx(1 / 1001)

    def test_ceiling(self):
        assert permutation_p_value(0.1, np.full(1000, 0.5)) == 1.0

    def test_ties_count_as_extreme(self):
        assert permutation_p_value(0.5, [0.5, 0.4, 0.6]) == 3 / 4

    def test_bounds(self, rng):
        for _ in range(50):
            perm = rng.random(rng.integers(1, 30))
            p = permutation_p_value(rng.random(), perm)
            assert 1 / (len(perm) + 1) <= p <= 1.0


class TestPermutationTest:
    def test_signal_is_significant(self):
        X, y = planted(200, seed=1, effect=2.0)
        res = permutation_test(X, y, LINEAR, N=19, seed=3, k=3)
        assert res.p_value == pytest.approx(1 / 20)
        assert res.n == 19 and res.observed > 0.8

    def test_observed_matches_protocol(self):
        X, y = planted(120, seed=2)
        res = permutation_test(X, y, LINEAR, N=3, seed=4, k=3)
        assert res.observed == holdout_accuracy(X, y, LINEAR, 0.2, 3, 4)

    def test_deterministic_and_thread_independent(self):
        X, y = planted(100, seed=5, effect=0.0)
        a = permutation_test(X, y, LINEAR, N=8, seed=6, k=3, threads=1)
        b = permutation_test(X, y, LINEAR, N=8, seed=6, k=3, threads=3)
        np.testing.assert_array_equal(a.permuted, b.permuted)
        assert a.p_value == b.p_value

    def test_invalid_n(self):
        with pytest.raises(ConfigError):
            permutation_test(np.zeros((4, 1)), np.array([0, 1, 0, 1]), LINEAR, N=0)

    def test_csv_round_trip(self, tmp_path):
        res = PermutationResult(0.75, np.array([0.5, 0.625, 0.8]), 0.5)
        write_permutation_csv(tmp_path / "p.csv", res)
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "iteration,metric_value"
        assert len(lines) == 1 + 3 + 1 and lines[-1] == "observed,0.75"
        back = read_permutation_csv(tmp_path / "p.csv")
        assert back.observed == 0.75 and back.p_value == 0.5
        np.testing.assert_array_equal(back.permuted, res.permuted)

    def test_csv_needs_observed(self, tmp_path):
        (tmp_path / "p.csv").write_text("iteration,metric_value\n0,0.5\n")
        with pytest.raises(EvaluationError):
            read_permutation_csv(tmp_path / "p.csv")


class TestBootstrap:
    def test_degenerate_classifier_collapses(self, rng):
        y_tr = np.array([0, 1] * 30)
        y_te = np.array([0] * 12 + [1] * 8)
        cis, values = bootstrap_ci(np.zeros((60, 2)), y_tr, np.zeros((20, 2)), y_te, LINEAR,
                                   B=100, seed=0)
        acc = cis["accuracy"]
        assert acc.lower == acc.upper
        assert np.unique(values[:, 0]).size == 1

    def test_planted_signal_width(self):
        X, y = planted(500, seed=8, effect=1.5)
        tr, te = np.arange(300), np.arange(300, 500)
        cis, values = bootstrap_ci(X[tr], y[tr], X[te], y[te], RBF, B=1000, seed=1)
        assert values.shape == (1000, 4)
        acc = cis["accuracy"]
        assert acc.upper - acc.lower < 0.15
        assert all(c.lower <= c.upper for c in cis.values())
        assert isinstance(acc, BootstrapCI) and acc.replicates == 1000

    def test_same_seed_same_bounds(self):
        X, y = planted(160, seed=9)
        args = (X[:100], y[:100], X[100:], y[100:], LINEAR)
        a, va = bootstrap_ci(*args, B=100, seed=3)
        b, vb = bootstrap_ci(*args, B=100, seed=3, threads=2)
        assert a == b
        np.testing.assert_array_equal(va, vb)

    def test_test_mode(self):
        X, y = planted(160, seed=9)
        cis, values = bootstrap_ci(X[:100], y[:100], X[100:], y[100:], LINEAR, B=100, seed=3,
                                   mode="test")
        assert values.shape == (100, 4)
        assert cis["auc"].lower <= cis["auc"].upper

    def test_too_few_replicates(self):
        with pytest.raises(ConfigError):
            bootstrap_ci(np.zeros((4, 1)), [0, 1, 0, 1], np.zeros((2, 1)), [0, 1], LINEAR, B=99)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            bootstrap_ci(np.zeros((4, 1)), [0, 1, 0, 1], np.zeros((2, 1)), [0, 1], LINEAR,
                         mode="jackknife")


class TestIterationRng:
    def test_streams_are_independent_of_order(self):
        a = [iteration_rng(5, i).random() for i in range(4)]
        b = [iteration_rng(5, i).random() for i in reversed(range(4))][::-1]
        assert a == b
        assert iteration_rng(5, 1, 0).random() != iteration_rng(5, 1, 1).random()
