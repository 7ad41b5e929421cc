"""Pearson connectivity matrices and their lower-triangle vectorization."""
from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import DataError, ShapeError


class ZeroVarianceWarning(UserWarning):
    pass


def feature_length(roi_count):
    return roi_count * (roi_count + 1) // 2


def roi_count_for_length(length):
    """Inverse of :func:`feature_length`; raises if ``length`` is not triangular."""
    r = int((math.isqrt(8 * length + 1) - 1) // 2)
    if feature_length(r) != length:
        raise ShapeError(f"length {length} is not R(R+1)/2 for any integer R")
    return r


def pearson_matrix(ts):
    """Correlation matrix of the columns of a (T, R) time-series array.

    The lower triangle is computed and mirrored so the result is exactly
    symmetric, and the diagonal is exactly 1. A column with zero variance
    gets correlation 0 with every other column, and a warning.
    """
    x = np.asarray(ts, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"time series must be 2-D (T, R), got shape {x.shape}")
    if x.shape[0] < 3:
        raise DataError(f"need at least 3 time points, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise DataError("time series contains non-finite values")
    dev = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", dev, dev)
    flat = ss <= 0.0
    for j in np.flatnonzero(flat):
        warnings.warn(f"ROI {j} has zero variance; its correlations are set to 0",
                      ZeroVarianceWarning, stacklevel=2)
    norm = np.sqrt(np.where(flat, 1.0, ss))
    r = (dev.T @ dev) / np.outer(norm, norm)
    r[flat, :] = 0.0
    r[:, flat] = 0.0
    np.clip(r, -1.0, 1.0, out=r)
    lower = np.tril(r, -1)
    out = lower + lower.T
    np.fill_diagonal(out, 1.0)
    return out


def vectorize(c):
    """Lower triangle (diagonal included), row by row: (0,0), (1,0), (1,1), (2,0), ..."""
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {c.shape}")
    rows, cols = np.tril_indices(c.shape[0])
    return c[rows, cols]


def devectorize(v, roi_count):
    v = np.asarray(v)
    if v.ndim != 1 or len(v) != feature_length(roi_count):
        raise ShapeError(f"vector of length {v.size} does not match roi_count {roi_count} "
                         f"(needs {feature_length(roi_count)})")
    out = np.zeros((roi_count, roi_count), dtype=v.dtype)
    rows, cols = np.tril_indices(roi_count)
    out[rows, cols] = v
    out[cols, rows] = v
    return out


def connectivity_features(series):
    """Stack ``vectorize(pearson_matrix(ts))`` for a sequence of subjects."""
    vecs = [vectorize(pearson_matrix(ts)) for ts in series]
    if not vecs:
        return np.zeros((0, 0))
    lengths = {len(v) for v in vecs}
    if len(lengths) != 1:
        raise ShapeError(f"subjects have differing ROI counts (feature lengths {sorted(lengths)})")
    return np.vstack(vecs)
