"""SVG figures for loss curves, ROC curves and permutation histograms.

Each figure is rendered from the CSV written next to it, so ``plots`` can
redraw a finished run without recomputing anything. Output is
deterministic: fixed hash salt and no creation date in the SVG.
"""
from __future__ import annotations

import csv
import logging
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dvae import read_loss_curve  # noqa: E402
from .evaluation import read_permutation_csv  # noqa: E402

log = logging.getLogger("connlatent")

RC = {"svg.hashsalt": "connlatent", "font.size": 10, "axes.spines.top": False,
      "axes.spines.right": False, "figure.figsize": (5.0, 4.0)}


class MissingOutputWarning(UserWarning):
    pass


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_loss_curve(curve, path):
    epochs = [c[0] for c in curve]
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(epochs, [c[1] for c in curve], label="loss")
        ax.plot(epochs, [c[2] for c in curve], label="reconstruction", lw=0.8)
        ax.plot(epochs, [c[3] for c in curve], label="KL", lw=0.8)
        ax.set_xlabel("epoch")
        ax.set_ylabel("negative ELBO")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_roc(curves, path):
    """``curves`` maps model name to an (m, 2) array of (FPR, TPR) points."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], ls=":", color="0.6", lw=0.8)
        for name, pts in curves.items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=name.upper())
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.legend(frameon=False, loc="lower right")
        _save(fig, path)


def plot_permutation(result, path, model=""):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.hist(result.permuted, bins=30, color="0.7", edgecolor="0.4")
        ax.axvline(result.observed, color="C3", lw=1.5,
                   label=f"observed {result.observed:.3f} (p = {result.p_value:.4g})")
        ax.set_xlabel(f"{model.upper()} accuracy under permuted labels".strip())
        ax.set_ylabel("count")
        ax.legend(frameon=False)
        _save(fig, path)


def read_roc_csv(path):
    curves = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["model"], []).append((float(row["fpr"]), float(row["tpr"])))
    return curves


def _skip(what, path):
    warnings.warn(f"{what}: {path} not found, skipping", MissingOutputWarning, stacklevel=3)


def emit_plots(directory):
    """Render every figure whose source CSV exists in ``directory``.

    Returns the list of SVG paths written.
    """
    directory = Path(directory)
    written = []
    src = directory / "loss_curve.csv"
    if src.exists():
        plot_loss_curve(read_loss_curve(src), directory / "loss_curve.svg")
        written.append(directory / "loss_curve.svg")
    else:
        _skip("loss curve", src)
    src = directory / "roc_points.csv"
    if src.exists():
        plot_roc(read_roc_csv(src), directory / "roc.svg")
        written.append(directory / "roc.svg")
    else:
        _skip("ROC", src)
    perms = sorted(directory.glob("permutation_*.csv"))
    if not perms:
        _skip("permutation histogram", directory / "permutation_<model>.csv")
    for src in perms:
        model = src.stem.split("_", 1)[1]
        dst = src.with_suffix(".svg")
        plot_permutation(read_permutation_csv(src), dst, model)
        written.append(dst)
    return written


def render_all(out, outcomes, loss_curve):
    """Pipeline hook: draw figures into an OutputSet from in-memory results."""
    if loss_curve:
        plot_loss_curve(loss_curve, out.path("loss_curve.svg"))
    plot_roc({n: oc.roc for n, oc in outcomes.items()}, out.path("roc.svg"))
    for name, oc in outcomes.items():
        if oc.permutation is not None:
            plot_permutation(oc.permutation, out.path(f"permutation_{name}.svg"), name)
