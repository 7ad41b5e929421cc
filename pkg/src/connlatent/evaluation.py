"""Resampling-based evaluation: site selection for LOSOCV, bootstrap CIs, permutation tests.

Each bootstrap replicate and permutation iteration draws from its own
stream seeded by ``(seed, iteration)``, so results do not depend on the
order or threading of the work.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .classifiers.selection import fit_classifier, fit_tuned, predict, tune_threshold
from .data import split_labels
from .errors import ConfigError, ConnLatentError, EvaluationError
from .metrics import METRIC_NAMES, Metrics, compute_metrics, rank_auc, roc_points
from .parallel import pmap

__all__ = ["BootstrapCI", "Metrics", "PermutationResult", "bootstrap_ci", "compute_metrics",
           "holdout_accuracy", "losocv_sites", "permutation_p_value", "permutation_test",
           "qualifying_sites", "rank_auc", "roc_points"]

MAX_REDRAWS = 100


@dataclass(frozen=True)
class BootstrapCI:
    metric: str
    point: float
    lower: float
    upper: float
    replicates: int


@dataclass(frozen=True)
class PermutationResult:
    observed: float
    permuted: np.ndarray
    p_value: float

    @property
    def n(self):
        return len(self.permuted)


def iteration_rng(seed, index, attempt=0):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index), int(attempt))))


# ---------------------------------------------------------------------------
# leave-one-site-out

def qualifying_sites(sites, labels, min_per_class=20):
    """Sites with strictly more than ``min_per_class`` subjects in each class, ascending."""
    sites = np.asarray(sites)
    labels = np.asarray(labels)
    out = []
    for s in np.unique(sites):
        mask = sites == s
        if np.sum(labels[mask] == 0) > min_per_class and np.sum(labels[mask] == 1) > min_per_class:
            out.append(int(s))
    return out


def losocv_sites(d, min_per_class=20):
    if len(d) == 0:
        return []
    return qualifying_sites(d.sites, d.labels, min_per_class)


# ---------------------------------------------------------------------------
# bootstrap

def _stratified_resample(y, rng):
    idx = []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        idx.append(rng.choice(members, size=len(members), replace=True))
    return np.sort(np.concatenate(idx))


def _train_replicate(spec, X, y, X_test, y_test, seed, b):
    for attempt in range(MAX_REDRAWS):
        rng = iteration_rng(seed, b, attempt)
        idx = _stratified_resample(y, rng)
        oob = np.setdiff1d(np.arange(len(y)), idx)
        if len(np.unique(y[oob])) < 2:
            continue
        model = fit_classifier(spec, X[idx], y[idx], int(rng.integers(2**32)))
        model.threshold = tune_threshold(predict(model, X[oob])[0], y[oob])
        scores = predict(model, X_test)[0]
        return compute_metrics(scores, y_test, model.threshold)
    raise EvaluationError(f"bootstrap replicate {b}: out-of-bag set kept a single class "
                          f"after {MAX_REDRAWS} redraws")


def _test_replicate(scores, y_test, threshold, seed, b):
    rng = iteration_rng(seed, b)
    idx = _stratified_resample(y_test, rng)
    return compute_metrics(scores[idx], y_test[idx], threshold)


def bootstrap_ci(train_X, train_y, test_X, test_y, spec, B=1000, seed=0, mode="train",
                 k=5, point=None, threads=None):
    """Percentile 95% intervals for each metric over ``B`` replicates.

    In ``train`` mode each replicate refits ``spec`` on a class-stratified
    resample of the training set, tunes its threshold on the out-of-bag
    rows and scores the fixed test set. In ``test`` mode one model (fit
    with an out-of-fold threshold) is kept and the test set is resampled.

    Returns ``({metric: BootstrapCI}, replicate metric matrix B x 4)``.
    ``point`` supplies the point estimates; when omitted they come from
    the model fit on the full training set.
    """
    if B < 100:
        raise ConfigError(f"bootstrap needs B >= 100 replicates, got {B}")
    if mode not in ("train", "test"):
        raise ConfigError(f"unknown bootstrap mode {mode!r}")
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    train_y = np.asarray(train_y).astype(np.int64)
    test_y = np.asarray(test_y).astype(np.int64)
    if point is None or mode == "test":
        full = fit_tuned(spec, train_X, train_y, k, seed)
        full_scores = predict(full, test_X)[0]
        if point is None:
            point = compute_metrics(full_scores, test_y, full.threshold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if mode == "train":
            reps = pmap(lambda b: _train_replicate(spec, train_X, train_y, test_X, test_y, seed, b),
                        range(B), threads)
        else:
            reps = pmap(lambda b: _test_replicate(full_scores, test_y, full.threshold, seed, b),
                        range(B), threads)
    values = np.array([[getattr(m, name) for name in METRIC_NAMES] for m in reps])
    lower, upper = np.percentile(values, [2.5, 97.5], axis=0)
    cis = {name: BootstrapCI(name, float(getattr(point, name)), float(lower[j]), float(upper[j]), B)
           for j, name in enumerate(METRIC_NAMES)}
    return cis, values


# ---------------------------------------------------------------------------
# permutation test

def holdout_accuracy(X, y, spec, test_fraction=0.2, k=5, seed=0):
    """Test accuracy of the fixed train/test protocol.

    The split is a deterministic function of ``(y, seed)``, the model is
    fit on the training part and its threshold tuned on out-of-fold
    scores, exactly as for the observed labels.
    """
    plan = split_labels(y, test_fraction, k, seed)
    tr, te = plan.train_indices, plan.test_indices
    model = fit_tuned(spec, X[tr], y[tr], seed=seed, folds=plan.fold_assignments)
    _, labels = predict(model, X[te])
    return float(np.mean(labels == y[te]))


def permutation_p_value(observed, permuted):
    permuted = np.asarray(permuted, dtype=np.float64)
    # accuracies share a denominator; the slack absorbs rounding only
    return float((1 + np.sum(permuted >= observed - 1e-12)) / (len(permuted) + 1))


def permutation_test(X, y, spec, N=1000, seed=0, test_fraction=0.2, k=5, threads=None):
    """Label-permutation test of the tuned-threshold test accuracy.

    Each iteration permutes all labels jointly and reruns the whole
    protocol; an iteration whose fit fails is redrawn.
    """
    if N < 1:
        raise ConfigError(f"permutation test needs N >= 1, got {N}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)

    def run(labels):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return holdout_accuracy(X, labels, spec, test_fraction, k, seed)

    def iteration(i):
        for attempt in range(MAX_REDRAWS):
            perm = iteration_rng(seed, i, attempt).permutation(y)
            try:
                return run(perm)
            except ConnLatentError:
                continue
        raise EvaluationError(f"permutation iteration {i} failed {MAX_REDRAWS} times")

    observed = run(y)
    permuted = np.array(pmap(iteration, range(N), threads))
    return PermutationResult(observed, permuted, permutation_p_value(observed, permuted))


def write_permutation_csv(path, result):
    """``iteration,metric_value`` rows, then an ``observed`` marker row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "metric_value"])
        for i, v in enumerate(result.permuted):
            w.writerow([i, repr(float(v))])
        w.writerow(["observed", repr(float(result.observed))])


def read_permutation_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    permuted = np.array([float(v) for i, v in rows if i != "observed"])
    observed = [float(v) for i, v in rows if i == "observed"]
    if len(observed) != 1:
        raise EvaluationError(f"{path}: expected exactly one observed row")
    return PermutationResult(observed[0], permuted, permutation_p_value(observed[0], permuted))
