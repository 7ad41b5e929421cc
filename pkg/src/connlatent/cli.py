"""Command-line entry point: ``connlatent <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
failure, 5 evaluation failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings

import numpy as np

from . import __version__
from . import dvae as dvae_mod
from . import harmonize as hz
from .config import PRESETS, build_config, parse_overrides
from .connectome import connectivity_features
from .data import load_dataset, qc_filter, read_matrix, save_dataset, synth_dataset, write_matrix
from .errors import ConfigError, ConnLatentError, DataError
from .metrics import METRIC_NAMES, compute_metrics, roc_points
from .parallel import set_threads

log = logging.getLogger("connlatent")


# ---------------------------------------------------------------------------
# helpers

def _config(args, **forced):
    overrides = parse_overrides(args.set)
    for flag, key in (("metadata", "paths.metadata"), ("features", "paths.features"),
                      ("timeseries", "paths.timeseries"), ("out", "paths.output"),
                      ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    overrides.update(forced)
    return build_config(args.preset, args.config, overrides)


def _add_config_args(p, out_default=True):
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override one config key (repeatable)")
    p.add_argument("--metadata", help="subject metadata CSV")
    p.add_argument("--features", help="feature matrix (CSV or binary)")
    p.add_argument("--seed", type=int)
    if out_default:
        p.add_argument("--out", help="output directory")


def _report(result):
    for protocol, model, metric, value, lo, hi, p in result.rows:
        extra = ""
        if lo is not None:
            extra += f"  CI [{lo:.3f}, {hi:.3f}]"
        if p is not None:
            extra += f"  p = {p:.4g}"
        print(f"{protocol:<18} {model:<4} {metric:<12} {value:.4f}{extra}")


def _pipeline(cfg):
    from .pipeline import run_pipeline
    result = run_pipeline(cfg)
    _report(result)
    print(f"outputs written to {cfg.output_dir}")
    return 0


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    d = synth_dataset(args.subjects, args.sites, args.features_dim, args.signal_dim,
                      args.site_shift, args.effect_size, args.seed)
    save_dataset(d, args.out_metadata, args.out_features, args.format)
    print(f"wrote {len(d)} subjects x {d.feature_dim} features")
    return 0


def cmd_vectorize(args):
    series = [read_matrix(p) for p in args.timeseries]
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        feats = connectivity_features(series)
    write_matrix(args.out, feats, args.format)
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} features to {args.out}")
    return 0


def cmd_harmonize(args):
    d = load_dataset(args.metadata, args.features)
    names = tuple(c for c in args.covariates.split(",") if c)
    bad = set(names) - {"age", "sex"}
    if bad:
        raise ConfigError(f"unknown covariate(s) {sorted(bad)}")
    if args.model:
        model = hz.load_model(args.model)
        x, _ = hz.covariate_matrix(d.ages if "age" in names else None,
                                   d.sexes if "sex" in names else None, model.age_center)
    else:
        x, center = hz.covariate_matrix(d.ages if "age" in names else None,
                                        d.sexes if "sex" in names else None)
        model = hz.combat_fit(d.features, d.sites, x, center)
        if args.model_out:
            hz.save_model(model, args.model_out)
    write_matrix(args.out, hz.combat_apply(model, d.features, d.sites, x), args.format)
    print(f"harmonized {len(d)} subjects across {len(model.sites)} sites")
    return 0


def cmd_train_dvae(args):
    cfg = _config(args)
    x = read_matrix(args.features)

    def progress(epoch, loss, recon, kl):
        if epoch == 1 or epoch % 10 == 0 or epoch == cfg.epochs:
            log.info("epoch %d  loss %.5f  recon %.5f  kl %.5f", epoch, loss, recon, kl)

    model, curve = dvae_mod.train(x, cfg.train_config(), log=progress)
    dvae_mod.save_model(model, args.model_out)
    if args.loss_curve:
        dvae_mod.write_loss_curve(args.loss_curve, curve)
    print(f"final loss {curve[-1][1]:.5f}; model saved to {args.model_out}")
    return 0


def cmd_extract(args):
    model = dvae_mod.load_model(args.model)
    latents = dvae_mod.extract(model, read_matrix(args.features))
    write_matrix(args.out, latents.matrix, args.format)
    print(f"wrote {latents.matrix.shape[0]} x {latents.matrix.shape[1]} latent features")
    return 0


def cmd_classify(args):
    return _pipeline(_config(args, **{"harmonize.enabled": False, "features.use_dvae": False,
                                      "eval.bootstrap": 0, "eval.permutations": 0}))


def cmd_bootstrap(args):
    forced = {"harmonize.enabled": False, "features.use_dvae": False, "eval.permutations": 0}
    if args.replicates is not None:
        forced["eval.bootstrap"] = args.replicates
    cfg = _config(args, **forced)
    if cfg.bootstrap == 0:
        raise ConfigError("eval.bootstrap is 0; pass -B")
    return _pipeline(cfg)


def cmd_permtest(args):
    forced = {"harmonize.enabled": False, "features.use_dvae": False, "eval.bootstrap": 0}
    if args.iterations is not None:
        forced["eval.permutations"] = args.iterations
    cfg = _config(args, **forced)
    if cfg.permutations == 0:
        raise ConfigError("eval.permutations is 0; pass -N")
    return _pipeline(cfg)


def cmd_losocv(args):
    from .pipeline import OutputSet, load_input, losocv_run, write_metrics_csv
    cfg = _config(args)
    d = qc_filter(load_input(cfg))
    res = losocv_run(d, cfg)
    out = OutputSet(cfg.output_dir)
    write_metrics_csv(out.path("metrics.csv"), res.rows())
    out.commit()
    for row in res.rows():
        print(f"{row[0]:<18} {row[1]:<4} {row[2]:<12} {row[3]:.4f}")
    return 0


def cmd_run(args):
    return _pipeline(_config(args))


def cmd_evaluate(args):
    """Metrics from a ``score,label`` CSV (extra columns ignored)."""
    with open(args.scores, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        scores = np.array([float(r["score"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.scores}: expected numeric score,label columns ({exc})") from None
    m = compute_metrics(scores, labels, args.threshold)
    for name in METRIC_NAMES:
        print(f"{name:<12} {getattr(m, name):.4f}")
    if args.roc:
        from .pipeline import write_roc_csv
        write_roc_csv(args.roc, {args.model: roc_points(scores, labels)})
    return 0


def cmd_plots(args):
    from .plots import emit_plots
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        written = emit_plots(args.directory)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(prog="connlatent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"connlatent {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker threads cap (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-site dataset")
    p.add_argument("--subjects", type=int, default=400)
    p.add_argument("--sites", type=int, default=4)
    p.add_argument("--features-dim", type=int, default=100)
    p.add_argument("--signal-dim", type=int, default=5)
    p.add_argument("--site-shift", type=float, default=0.0)
    p.add_argument("--effect-size", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-metadata", required=True)
    p.add_argument("--out-features", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("vectorize", help="ROI time series files to connectivity features")
    p.add_argument("timeseries", nargs="+", help="one T x R matrix file per subject")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("harmonize", help="ComBat-adjust a feature matrix")
    p.add_argument("--metadata", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--covariates", default="age,sex")
    p.add_argument("--model", help="apply a saved model instead of fitting")
    p.add_argument("--model-out", help="save the fitted model here")
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("train-dvae", help="train the denoising VAE on a feature matrix")
    _add_config_args(p, out_default=False)
    p.add_argument("--model-out", required=True)
    p.add_argument("--loss-curve")
    p.set_defaults(func=cmd_train_dvae)

    p = sub.add_parser("extract", help="latent [mu | logvar] features from a trained DVAE")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("classify", help="grid search, threshold tuning and test metrics")
    _add_config_args(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="metrics from a score,label CSV")
    p.add_argument("scores")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--roc", help="write ROC points CSV here")
    p.add_argument("--model", default="model", help="model name for the ROC CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("losocv", help="leave-one-site-out evaluation of the full pipeline")
    _add_config_args(p)
    p.add_argument("--timeseries")
    p.set_defaults(func=cmd_losocv)

    p = sub.add_parser("permtest", help="label-permutation test on precomputed features")
    _add_config_args(p)
    p.add_argument("-N", "--iterations", type=int)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("bootstrap", help="bootstrap confidence intervals on precomputed features")
    _add_config_args(p)
    p.add_argument("-B", "--replicates", type=int)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("run", help="full pipeline")
    _add_config_args(p)
    p.add_argument("--timeseries", help="directory of per-subject time series files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plots", help="render SVG figures from a run directory")
    p.add_argument("directory")
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
        return args.func(args)
    except ConnLatentError as exc:
        stage = getattr(exc, "stage", None)
        where = f" in stage '{stage}'" if stage else ""
        print(f"connlatent: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"connlatent: cannot access {exc.filename}: {exc.strerror}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
