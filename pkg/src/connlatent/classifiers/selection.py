"""Hyperparameter grids, cross-validated grid search and threshold tuning."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..data import stratified_folds
from ..errors import ConfigError, ConnLatentError, EvaluationError, ShapeError
from ..metrics import rank_auc
from ..parallel import pmap
from .forest import ForestModel, rf_fit
from .svm import SvmModel, svm_fit

PAPER_C = (0.01, 0.1, 1.0, 10.0, 100.0)
PAPER_GAMMA = (1.0, 0.1, 0.01, 0.001, 0.0001)
PAPER_N_TREES = (10, 50, 100, 500, 1000)
PAPER_MAX_DEPTH = (1, 3, 5, 10, 20)


@dataclass
class GridSpec:
    svm_C: tuple = PAPER_C
    svm_gamma: tuple = PAPER_GAMMA
    svm_kernels: tuple = ("linear", "rbf")
    rf_n_trees: tuple = PAPER_N_TREES
    rf_max_depth: tuple = PAPER_MAX_DEPTH

    def __post_init__(self):
        for name in ("svm_C", "svm_gamma", "svm_kernels", "rf_n_trees", "rf_max_depth"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"grid list {name} is empty")
            setattr(self, name, values)
        bad = set(self.svm_kernels) - {"linear", "rbf"}
        if bad:
            raise ConfigError(f"unknown SVM kernel(s) {sorted(bad)}")


@dataclass(frozen=True)
class ClassifierSpec:
    """One grid cell: a model family and its hyperparameters."""

    model: str  # "svm" or "rf"
    kernel: str = ""
    C: float = math.nan
    gamma: float = math.nan
    n_trees: int = 0
    max_depth: int = 0

    def complexity_key(self):
        """Sort key where smaller means simpler; used to break score ties."""
        if self.model == "svm":
            gamma = 0.0 if self.kernel == "linear" else self.gamma
            return (self.C, self.kernel != "linear", gamma)
        return (self.n_trees, self.max_depth)

    def describe(self):
        if self.model == "svm":
            if self.kernel == "linear":
                return f"svm(linear, C={self.C:g})"
            return f"svm(rbf, C={self.C:g}, gamma={self.gamma:g})"
        return f"rf(n_trees={self.n_trees}, max_depth={self.max_depth})"


def grid_cells(grid, model):
    if model == "svm":
        cells = []
        for C in grid.svm_C:
            if "linear" in grid.svm_kernels:
                cells.append(ClassifierSpec("svm", "linear", float(C)))
            if "rbf" in grid.svm_kernels:
                cells.extend(ClassifierSpec("svm", "rbf", float(C), float(g)) for g in grid.svm_gamma)
        return cells
    if model == "rf":
        return [ClassifierSpec("rf", n_trees=int(t), max_depth=int(d))
                for t in grid.rf_n_trees for d in grid.rf_max_depth]
    raise ConfigError(f"unknown model family {model!r}")


def fit_classifier(spec, X, y, seed=0):
    """Fit the model a spec describes. SVM inputs are z-scored with training statistics."""
    if spec.model == "svm":
        return svm_fit(X, y, spec.kernel, spec.C, spec.gamma if spec.kernel == "rbf" else 1.0,
                       standardize=True)
    if spec.model == "rf":
        return rf_fit(X, y, spec.n_trees, spec.max_depth, seed)
    raise ConfigError(f"unknown model family {spec.model!r}")


def predict(model, X):
    """Return ``(scores, labels)``; label is 1 iff score > model.threshold."""
    if isinstance(model, SvmModel):
        scores = model.decision_function(X)
    elif isinstance(model, ForestModel):
        scores = model.predict_score(X)
    else:
        raise TypeError(f"cannot predict with {type(model).__name__}")
    return scores, (scores > model.threshold).astype(np.int64)


def tune_threshold(scores, y):
    """Cut maximizing sqrt(sensitivity * specificity).

    Candidates are the midpoints between consecutive distinct scores plus
    -inf and +inf. Ties go to the candidate nearest the median score, then
    to the smaller candidate.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if scores.shape != y.shape:
        raise ShapeError("scores and labels differ in length")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("threshold tuning needs both classes present")
    uniq = np.unique(scores)
    cands = np.r_[-np.inf, 0.5 * (uniq[:-1] + uniq[1:]), np.inf]
    # predicted positive iff score > cut; count via sorted positions
    pos_sorted = np.sort(scores[pos])
    neg_sorted = np.sort(scores[~pos])
    tp = n_pos - np.searchsorted(pos_sorted, cands, side="right")
    fp = n_neg - np.searchsorted(neg_sorted, cands, side="right")
    gmean = np.sqrt((tp / n_pos) * ((n_neg - fp) / n_neg))
    best = gmean.max()
    tied = np.flatnonzero(gmean >= best)
    med = np.median(scores)
    dist = np.abs(cands[tied] - med)
    nearest = tied[dist == dist.min()]
    return float(cands[nearest[0]])


def gmean_at(scores, y, threshold):
    pred = np.asarray(scores) > threshold
    y = np.asarray(y) == 1
    sens = np.sum(pred & y) / np.sum(y)
    spec = np.sum(~pred & ~y) / np.sum(~y)
    return float(np.sqrt(sens * spec))


@dataclass
class CellResult:
    spec: ClassifierSpec
    fold_auc: np.ndarray
    oof_scores: np.ndarray

    @property
    def mean_auc(self):
        return float(np.mean(self.fold_auc)) if np.isfinite(self.fold_auc).all() else math.nan


@dataclass
class GridResult:
    cells: list
    folds: np.ndarray
    best: dict = field(default_factory=dict)  # model family -> CellResult

    def table_rows(self):
        """Rows for the ``model,kernel,C,gamma,n_trees,max_depth,fold,auc`` CSV."""
        rows = []
        for cell in self.cells:
            s = cell.spec
            for fold, auc in enumerate(cell.fold_auc):
                rows.append([s.model, s.kernel, _fmt(s.C), _fmt(s.gamma),
                             s.n_trees if s.model == "rf" else "",
                             s.max_depth if s.model == "rf" else "", fold, _fmt(auc)])
        return rows


def _fmt(v):
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v))


def _evaluate_cell(spec, X, y, folds, k, seed):
    fold_auc = np.full(k, np.nan)
    oof = np.full(len(y), np.nan)
    for f in range(k):
        tr, va = folds != f, folds == f
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_classifier(spec, X[tr], y[tr], seed)
            scores, _ = predict(model, X[va])
            fold_auc[f] = rank_auc(scores, y[va])
            oof[va] = scores
        except (ConnLatentError, np.linalg.LinAlgError):
            fold_auc[:] = np.nan
            break
    return CellResult(spec, fold_auc, oof)


def _evaluate_forests(specs, X, y, folds, k, seed):
    """All forest cells at once: one full-size forest per fold, then subforests."""
    n_trees = max(s.n_trees for s in specs)
    depth = max(s.max_depth for s in specs)
    fold_auc = np.full((len(specs), k), np.nan)
    oof = np.full((len(specs), len(y)), np.nan)
    try:
        for f in range(k):
            tr, va = folds != f, folds == f
            full = rf_fit(X[tr], y[tr], n_trees, depth, seed)
            for c, spec in enumerate(specs):
                scores = full.subforest(spec.n_trees, spec.max_depth).predict_score(X[va])
                fold_auc[c, f] = rank_auc(scores, y[va])
                oof[c, va] = scores
    except ConnLatentError:
        fold_auc[:] = np.nan
    return [CellResult(s, fold_auc[c], oof[c]) for c, s in enumerate(specs)]


def select_best(cells):
    scored = [c for c in cells if not math.isnan(c.mean_auc)]
    if not scored:
        return None
    top = max(c.mean_auc for c in scored)
    tied = [c for c in scored if c.mean_auc >= top - 1e-12]
    return min(tied, key=lambda c: c.spec.complexity_key())


def grid_search(X, y, grid, k=5, seed=0, models=("svm", "rf"), threads=None, folds=None):
    """Stratified k-fold CV over every grid cell, selecting by mean fold AUC.

    Cells whose fit fails in any fold score NaN and are never selected.
    Ties go to the simpler cell (smaller C, linear before rbf, smaller
    gamma; fewer trees, then shallower). ``folds`` overrides the fold
    assignment drawn from ``seed``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    folds = _resolve_folds(y, k, seed, folds)
    k = int(folds.max()) + 1
    result = GridResult(cells=[], folds=folds)
    for family in models:
        if family == "rf":
            cells = _evaluate_forests(grid_cells(grid, family), X, y, folds, k, seed)
        else:
            cells = pmap(lambda spec: _evaluate_cell(spec, X, y, folds, k, seed),
                         grid_cells(grid, family), threads)
        result.cells.extend(cells)
        best = select_best(cells)
        if best is None:
            raise EvaluationError(f"every {family} grid cell failed")
        result.best[family] = best
    return result


def _resolve_folds(y, k, seed, folds):
    if folds is None:
        if k < 2:
            raise ConfigError("cross-validation needs k >= 2 folds")
        return stratified_folds(y, k, np.random.default_rng(seed))
    folds = np.asarray(folds, dtype=np.int64)
    if folds.shape != y.shape:
        raise ShapeError("fold assignment and labels differ in length")
    if folds.max() < 1:
        raise ConfigError("cross-validation needs k >= 2 folds")
    return folds


def oof_scores(spec, X, y, k=5, seed=0, folds=None):
    """Out-of-fold decision scores for one spec."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    folds = _resolve_folds(y, k, seed, folds)
    scores = np.empty(len(y))
    for f in range(int(folds.max()) + 1):
        tr, va = folds != f, folds == f
        model = fit_classifier(spec, X[tr], y[tr], seed)
        scores[va] = predict(model, X[va])[0]
    return scores


def fit_tuned(spec, X, y, k=5, seed=0, folds=None, scores=None):
    """Fit on all of X with the threshold tuned on out-of-fold scores.

    Pass precomputed out-of-fold ``scores`` (e.g. from a grid search) to
    skip the cross-validation.
    """
    if scores is None:
        scores = oof_scores(spec, X, y, k, seed, folds)
    model = fit_classifier(spec, X, y, seed)
    model.threshold = tune_threshold(scores, y)
    return model


GRID_HEADER = ("model", "kernel", "C", "gamma", "n_trees", "max_depth", "fold", "auc")


def write_grid_table(path, results):
    """Write one or more grid results (``{label: GridResult}`` or a single result)."""
    if isinstance(results, GridResult):
        results = {"": results}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for res in results.values():
            w.writerows(res.table_rows())
