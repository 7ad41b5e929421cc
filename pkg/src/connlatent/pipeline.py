"""End-to-end experiment: load, harmonize, reduce, classify, evaluate, report.

Every artefact is first written with a ``.partial`` suffix; the suffixes
are dropped only when the whole run succeeds, so a failed run leaves its
completed stage outputs behind, clearly marked.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import dvae as dvae_mod
from . import harmonize as hz
from .classifiers.selection import (fit_classifier, grid_search, predict, tune_threshold,
                                    write_grid_table)
from .connectome import connectivity_features
from .data import Dataset, load_dataset, make_split, qc_filter, read_matrix, read_metadata, stratified_folds
from .errors import ConfigError, ConnLatentError, DataError
from .evaluation import (bootstrap_ci, losocv_sites, permutation_test, write_permutation_csv)
from .metrics import METRIC_NAMES, compute_metrics, roc_points

log = logging.getLogger("connlatent")

METRICS_HEADER = ("protocol", "model", "metric", "value", "ci_lower", "ci_upper", "p_value")


# ---------------------------------------------------------------------------
# output bookkeeping

class OutputSet:
    """Files written as ``name.partial`` and renamed together by :meth:`commit`."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.names = []

    def path(self, name):
        if name not in self.names:
            self.names.append(name)
        return self.directory / f"{name}.partial"

    def final(self, name):
        return self.directory / name

    def commit(self):
        for name in self.names:
            src = self.directory / f"{name}.partial"
            if src.exists():
                os.replace(src, self.directory / name)


class StageTimer:
    def __init__(self):
        self.seconds = {}

    @contextmanager
    def stage(self, name):
        """Time a stage and tag any pipeline error with the stage name."""
        start = time.perf_counter()
        try:
            yield
        except ConnLatentError as exc:
            if getattr(exc, "stage", None) is None:
                exc.stage = name
            raise
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start


def _fmt(v):
    if v is None:
        return ""
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def write_metrics_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for protocol, model, metric, value, lo, hi, p in rows:
            w.writerow([protocol, model, metric, _fmt(value), _fmt(lo), _fmt(hi), _fmt(p)])


def read_metrics_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_roc_csv(path, curves):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "fpr", "tpr"])
        for model, pts in curves.items():
            for fpr, tpr in pts:
                w.writerow([model, repr(float(fpr)), repr(float(tpr))])


# ---------------------------------------------------------------------------
# stages

def load_input(cfg):
    """Dataset from the configured paths, vectorizing time series if given."""
    if not cfg.metadata_path:
        raise ConfigError("paths.metadata is not set")
    if cfg.timeseries_dir:
        records = read_metadata(cfg.metadata_path)
        root = Path(cfg.timeseries_dir)
        series = []
        for r in records:
            hits = [root / f"{r.subject_id}{ext}" for ext in (".bin", ".csv")]
            hits = [h for h in hits if h.exists()]
            if not hits:
                raise DataError(f"no time series file for subject {r.subject_id} in {root}")
            series.append(read_matrix(hits[0]))
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return Dataset(tuple(records), connectivity_features(series))
    if not cfg.features_path:
        raise ConfigError("set paths.features or paths.timeseries")
    return load_dataset(cfg.metadata_path, cfg.features_path)


def _covariates(d, names, age_center=None):
    ages = d.ages if "age" in names else None
    sexes = d.sexes if "sex" in names else None
    return hz.covariate_matrix(ages, sexes, age_center)


@dataclass
class FeatureStage:
    train_X: np.ndarray
    test_X: np.ndarray
    combat: object = None
    dvae: object = None
    loss_curve: list = None


def harmonize_split(train, test, cfg):
    """Fit ComBat (on train, or on train+test) and apply it to both parts.

    Sites present only in ``test`` get their location/scale effects
    estimated from their own data, with the fitted grand mean, covariate
    effects and pooled variances kept fixed.
    """
    names = cfg.harmonize_covariates
    x_tr, center = _covariates(train, names)
    x_te, _ = _covariates(test, names, center)
    if cfg.harmonize_fit_on == "all":
        feats = np.vstack([train.features, test.features])
        sites = np.concatenate([train.sites, test.sites])
        model = hz.combat_fit(feats, sites, np.vstack([x_tr, x_te]), center)
    else:
        model = hz.combat_fit(train.features, train.sites, x_tr, center)
        model = hz.combat_extend(model, test.features, test.sites, x_te)
    return (hz.combat_apply(model, train.features, train.sites, x_tr),
            hz.combat_apply(model, test.features, test.sites, x_te), model)


def augment(train_X, test_X, train, test, names):
    """Append covariates: age as a z-score on training statistics, sex as 0/1."""
    extra_tr, extra_te = [], []
    if "age" in names:
        mu, sd = train.ages.mean(), train.ages.std()
        sd = sd if sd > 0 else 1.0
        extra_tr.append((train.ages - mu) / sd)
        extra_te.append((test.ages - mu) / sd)
    if "sex" in names:
        extra_tr.append(train.sexes.astype(np.float64))
        extra_te.append(test.sexes.astype(np.float64))
    if not extra_tr:
        return train_X, test_X
    return (np.column_stack([train_X, *extra_tr]), np.column_stack([test_X, *extra_te]))


def build_features(train, test, cfg, timer):
    out = FeatureStage(train.features, test.features)
    if cfg.harmonize:
        with timer.stage("harmonize"):
            out.train_X, out.test_X, out.combat = harmonize_split(train, test, cfg)
    if cfg.use_dvae:
        with timer.stage("dvae"):
            out.dvae, out.loss_curve = dvae_mod.train(out.train_X, cfg.train_config())
            out.train_X = dvae_mod.extract(out.dvae, out.train_X).matrix
            out.test_X = dvae_mod.extract(out.dvae, out.test_X).matrix
    with timer.stage("augment"):
        out.train_X, out.test_X = augment(out.train_X, out.test_X, train, test,
                                          cfg.augment_covariates)
    return out


@dataclass
class ModelOutcome:
    spec: object
    cv_auc: float
    threshold: float
    metrics: object
    test_scores: np.ndarray
    roc: np.ndarray
    ci: dict = None
    ci_replicates: np.ndarray = None
    permutation: object = None


def classify(train_X, train_y, test_X, test_y, cfg, folds, timer):
    """Grid search, out-of-fold threshold, final fit and test metrics per model."""
    outcomes = {}
    with timer.stage("classify"):
        grid = grid_search(train_X, train_y, cfg.grid(), cfg.k, cfg.seed, cfg.models,
                           folds=folds)
        for name in cfg.models:
            best = grid.best[name]
            threshold = tune_threshold(best.oof_scores, train_y)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_classifier(best.spec, train_X, train_y, cfg.seed)
            model.threshold = threshold
            scores, _ = predict(model, test_X)
            outcomes[name] = ModelOutcome(best.spec, best.mean_auc, threshold,
                                          compute_metrics(scores, test_y, threshold), scores,
                                          roc_points(scores, test_y))
    return outcomes, grid


@dataclass
class RunResult:
    outcomes: dict
    grid: object
    features: FeatureStage
    train_y: np.ndarray
    test_y: np.ndarray
    losocv: object = None
    timings: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    @property
    def feature_width(self):
        return self.features.train_X.shape[1]

    @property
    def classifier_seconds(self):
        return self.timings.get("classify", 0.0)


def holdout_rows(outcomes, protocol="holdout"):
    rows = []
    for name, oc in outcomes.items():
        for metric in METRIC_NAMES:
            lo = hi = p = None
            if oc.ci is not None:
                lo, hi = oc.ci[metric].lower, oc.ci[metric].upper
            if oc.permutation is not None and metric == "accuracy":
                p = oc.permutation.p_value
            rows.append((protocol, name, metric, getattr(oc.metrics, metric), lo, hi, p))
    return rows


# ---------------------------------------------------------------------------
# leave-one-site-out

@dataclass
class LosocvResult:
    sites: list
    per_site: dict  # site -> {model: Metrics}
    averages: dict  # model -> {metric: mean}

    def rows(self):
        out = []
        for s in self.sites:
            for model, m in self.per_site[s].items():
                out.extend((f"losocv:site={s}", model, k, getattr(m, k), None, None, None)
                           for k in METRIC_NAMES)
        for model, avg in self.averages.items():
            out.extend(("losocv:average", model, k, avg[k], None, None, None) for k in METRIC_NAMES)
        return out


def losocv_run(d, cfg, timer=None):
    """Hold out each qualifying site in turn and train the full pipeline on the rest.

    Averages are unweighted means over the held-out sites.
    """
    timer = timer or StageTimer()
    sites = losocv_sites(d, cfg.min_per_class)
    if not sites:
        raise ConfigError(f"no site has more than {cfg.min_per_class} subjects of each class")
    per_site = {}
    for s in sites:
        log.info("losocv: holding out site %s", s)
        held = d.sites == s
        train, test = d.subset(np.flatnonzero(~held)), d.subset(np.flatnonzero(held))
        folds = stratified_folds(train.labels, cfg.k, np.random.default_rng(cfg.seed))
        feats = build_features(train, test, cfg, timer)
        outcomes, _ = classify(feats.train_X, train.labels, feats.test_X, test.labels, cfg,
                               folds, timer)
        per_site[s] = {name: oc.metrics for name, oc in outcomes.items()}
    averages = {name: {k: float(np.mean([getattr(per_site[s][name], k) for s in sites]))
                       for k in METRIC_NAMES} for name in cfg.models}
    return LosocvResult(sites, per_site, averages)


# ---------------------------------------------------------------------------
# full run

def _versions():
    import numba
    import scipy
    return {"connlatent": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def run_pipeline(cfg, dataset=None):
    """Run the configured experiment and write all artefacts to ``cfg.output_dir``.

    ``dataset`` bypasses the file loading stage. Returns a RunResult.
    """
    out = OutputSet(cfg.output_dir)
    timer = StageTimer()
    with timer.stage("load"):
        d = load_input(cfg) if dataset is None else dataset
    with timer.stage("qc"):
        d = qc_filter(d)
        if len(d) == 0:
            raise DataError("no subjects pass quality control")
    log.info("%d subjects, %d features, %d sites", len(d), d.feature_dim, len(np.unique(d.sites)))
    with timer.stage("split"):
        plan = make_split(d, cfg.test_fraction, cfg.k, cfg.seed)
        train, test = d.subset(plan.train_indices), d.subset(plan.test_indices)

    feats = build_features(train, test, cfg, timer)
    if feats.combat is not None:
        hz.save_model(feats.combat, out.path("combat.bin"))
    if feats.dvae is not None:
        dvae_mod.save_model(feats.dvae, out.path("dvae.bin"))
        dvae_mod.write_loss_curve(out.path("loss_curve.csv"), feats.loss_curve)
    log.info("classifier input width %d", feats.train_X.shape[1])

    ytr, yte = train.labels, test.labels
    outcomes, grid = classify(feats.train_X, ytr, feats.test_X, yte, cfg,
                              plan.fold_assignments, timer)
    write_grid_table(out.path("grid_scores.csv"), grid)
    write_roc_csv(out.path("roc_points.csv"), {n: oc.roc for n, oc in outcomes.items()})
    _write_selected(out.path("selected.csv"), outcomes)
    _write_scores(out.path("test_scores.csv"), outcomes, test)

    if cfg.bootstrap > 0:
        with timer.stage("bootstrap"):
            for name in cfg.bootstrap_models:
                if name not in outcomes:
                    continue
                oc = outcomes[name]
                oc.ci, oc.ci_replicates = bootstrap_ci(
                    feats.train_X, ytr, feats.test_X, yte, oc.spec, cfg.bootstrap, cfg.seed,
                    cfg.bootstrap_mode, cfg.k, point=oc.metrics)
        _write_bootstrap(out.path("bootstrap_replicates.csv"), outcomes)

    if cfg.permutations > 0:
        with timer.stage("permutation"):
            all_X = np.empty((len(d), feats.train_X.shape[1]))
            all_X[plan.train_indices] = feats.train_X
            all_X[plan.test_indices] = feats.test_X
            for name in cfg.permutation_models:
                if name not in outcomes:
                    continue
                res = permutation_test(all_X, d.labels, outcomes[name].spec, cfg.permutations,
                                       cfg.seed, cfg.test_fraction, cfg.k)
                outcomes[name].permutation = res
                write_permutation_csv(out.path(f"permutation_{name}.csv"), res)

    result = RunResult(outcomes, grid, feats, ytr, yte)
    result.rows = holdout_rows(outcomes)
    if cfg.losocv:
        with timer.stage("losocv"):
            result.losocv = losocv_run(d, cfg, StageTimer())
        result.rows += result.losocv.rows()

    write_metrics_csv(out.path("metrics.csv"), result.rows)
    result.timings = dict(timer.seconds)
    if cfg.plots:
        from .plots import render_all
        with timer.stage("plots"):
            render_all(out, outcomes, feats.loss_curve)
    manifest = {"config": dict(cfg.as_items()), "seed": cfg.seed, "versions": _versions(),
                "n_subjects": len(d), "n_train": len(ytr), "n_test": len(yte),
                "classifier_input_width": result.feature_width,
                "timings_seconds": dict(timer.seconds),
                "classifier_stage_seconds": result.classifier_seconds}
    with open(out.path("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    out.commit()
    return result


def _write_selected(path, outcomes):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "kernel", "C", "gamma", "n_trees", "max_depth", "cv_auc", "threshold"])
        for name, oc in outcomes.items():
            s = oc.spec
            rf = s.model == "rf"
            w.writerow([name, s.kernel, _fmt(s.C), _fmt(s.gamma), s.n_trees if rf else "",
                        s.max_depth if rf else "", _fmt(oc.cv_auc), _fmt(oc.threshold)])


def _write_scores(path, outcomes, test):
    ids = [r.subject_id for r in test.records]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "subject_id", "score", "label", "predicted"])
        for name, oc in outcomes.items():
            for sid, score, label in zip(ids, oc.test_scores, test.labels):
                w.writerow([name, sid, repr(float(score)), int(label), int(score > oc.threshold)])


def _write_bootstrap(path, outcomes):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "replicate", *METRIC_NAMES])
        for name, oc in outcomes.items():
            if oc.ci_replicates is None:
                continue
            for b, row in enumerate(oc.ci_replicates):
                w.writerow([name, b, *(repr(float(v)) for v in row)])
