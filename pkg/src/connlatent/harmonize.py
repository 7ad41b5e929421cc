"""Parametric empirical-Bayes ComBat for flat feature matrices.

Site effects are modelled as an additive location shift and a
multiplicative scale per (site, feature), shrunk toward per-site priors
estimated across features. Covariate effects (age, sex) are estimated
jointly and preserved in the adjusted data.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, ShapeError

MODEL_MAGIC = b"CMBT0001"
VAR_FLOOR = 1e-12
TOL = 1e-4
MAX_ITER = 100


class CombatWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CombatModel:
    """Fitted ComBat parameters.

    Arrays are indexed ``[site, feature]`` where a site dimension exists;
    ``sites`` lists the site ids in row order. ``skip`` marks features
    with (numerically) zero pooled variance, which pass through unchanged.
    ``hyper`` holds per-site ``(gamma_bar, tau2_bar, lambda, theta)``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    gamma_star: np.ndarray
    delta2_star: np.ndarray
    sites: tuple
    hyper: np.ndarray
    age_center: float
    skip: np.ndarray

    @property
    def site_table(self):
        return {s: i for i, s in enumerate(self.sites)}

    @property
    def n_features(self):
        return len(self.alpha)

    @property
    def n_covariates(self):
        return self.beta.shape[0]


def covariate_matrix(ages=None, sexes=None, age_center=None):
    """Columns (age - center, sex); either may be omitted."""
    cols = []
    center = 0.0
    if ages is not None:
        ages = np.asarray(ages, dtype=np.float64)
        center = float(ages.mean()) if age_center is None else float(age_center)
        cols.append(ages - center)
    if sexes is not None:
        cols.append(np.asarray(sexes, dtype=np.float64))
    n = len(ages) if ages is not None else (len(sexes) if sexes is not None else 0)
    if not cols:
        return np.zeros((n, 0)), center
    return np.column_stack(cols), center


def _site_rows(site, sites):
    index = {s: i for i, s in enumerate(sites)}
    try:
        return np.array([index[s] for s in site], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"site {exc.args[0]} not present in the ComBat model") from None


def _site_priors(gamma_hat, delta2_hat):
    """Method-of-moments hyperparameters for one site across features."""
    g_bar = gamma_hat.mean()
    t2_bar = gamma_hat.var(ddof=1) if len(gamma_hat) > 1 else 0.0
    m = delta2_hat.mean()
    s2 = delta2_hat.var(ddof=1) if len(delta2_hat) > 1 else 0.0
    if s2 < VAR_FLOOR:
        return g_bar, t2_bar, np.nan, np.nan
    lam = (m * m + 2.0 * s2) / s2
    theta = (m ** 3 + m * s2) / s2
    return g_bar, t2_bar, lam, theta


def _shrink(z, gamma_hat, delta2_hat, g_bar, t2_bar, lam, theta, site_label):
    """Fixed-point iteration for one site's posterior location/scale."""
    n = z.shape[0]
    if np.isnan(lam):
        return gamma_hat.copy(), delta2_hat.copy()
    g_old, d_old = gamma_hat, delta2_hat
    for _ in range(MAX_ITER):
        g_new = (n * t2_bar * gamma_hat + d_old * g_bar) / (n * t2_bar + d_old)
        d_new = (theta + 0.5 * ((z - g_new) ** 2).sum(axis=0)) / (n / 2.0 + lam - 1.0)
        change = max(
            np.max(np.abs(g_new - g_old) / np.maximum(np.abs(g_old), 1e-8)),
            np.max(np.abs(d_new - d_old) / np.maximum(np.abs(d_old), 1e-8)))
        g_old, d_old = g_new, d_new
        if change < TOL:
            break
    else:
        warnings.warn(f"ComBat shrinkage for site {site_label} did not converge in "
                      f"{MAX_ITER} iterations; using last iterate", CombatWarning, stacklevel=3)
    return g_old, d_old


def _estimate_site(z, site_label):
    """Per-site location/scale estimates, priors and posterior values."""
    n = z.shape[0]
    gamma_hat = z.mean(axis=0)
    delta2_hat = ((z - gamma_hat) ** 2).mean(axis=0)
    if n < 2:
        raise ConfigError(f"site {site_label} has a single subject; ComBat needs at least 2")
    g_bar, t2_bar, lam, theta = _site_priors(gamma_hat, delta2_hat)
    g_star, d_star = _shrink(z, gamma_hat, delta2_hat, g_bar, t2_bar, lam, theta, site_label)
    return g_star, np.maximum(d_star, VAR_FLOOR), (g_bar, t2_bar, lam, theta)


def combat_fit(features, site, covariates=None, age_center=0.0):
    """Fit ComBat on an (n, V) feature matrix.

    ``covariates`` is an (n, p) matrix of preserved effects (typically
    centred age and sex, see :func:`covariate_matrix`); ``age_center`` is
    only stored so the model can rebuild the same covariates later.
    """
    y = np.asarray(features, dtype=np.float64)
    site = np.asarray(site)
    n, v = y.shape
    x = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n or len(site) != n:
        raise ShapeError("features, site and covariates must agree on the number of rows")
    sites = tuple(sorted(set(site.tolist())))
    rows = _site_rows(site, sites)
    counts = np.bincount(rows, minlength=len(sites))
    for s, c in zip(sites, counts):
        if c < 2:
            raise ConfigError(f"site {s} has a single subject; ComBat needs at least 2")
    n_sites, p = len(sites), x.shape[1]
    if n <= p + n_sites:
        raise ConfigError(f"{n} subjects cannot identify {n_sites} sites and {p} covariates")
    for j in range(p):
        if np.ptp(x[:, j]) == 0.0:
            raise ConfigError(f"covariate column {j} is constant")

    onehot = np.zeros((n, n_sites))
    onehot[np.arange(n), rows] = 1.0
    design = np.hstack([onehot, x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    site_coef, beta = coef[:n_sites], coef[n_sites:]
    alpha = (counts / n) @ site_coef
    resid = y - design @ coef
    var = (resid ** 2).mean(axis=0)
    skip = var <= VAR_FLOOR
    if skip.any():
        warnings.warn(f"{int(skip.sum())} zero-variance feature(s) left unadjusted",
                      CombatWarning, stacklevel=2)
    sigma = np.sqrt(np.where(skip, 1.0, var))
    z = (y - alpha - x @ beta) / sigma

    live = ~skip
    gamma_star = np.zeros((n_sites, v))
    delta2_star = np.ones((n_sites, v))
    hyper = np.zeros((n_sites, 4))
    for i, s in enumerate(sites):
        zi = z[rows == i][:, live]
        if zi.shape[1] == 0:
            hyper[i] = (0.0, 0.0, np.nan, np.nan)
            continue
        g, d, h = _estimate_site(zi, s)
        gamma_star[i, live] = g
        delta2_star[i, live] = d
        hyper[i] = h
    return CombatModel(alpha=alpha, beta=beta, sigma=sigma, gamma_star=gamma_star,
                       delta2_star=delta2_star, sites=sites, hyper=hyper,
                       age_center=float(age_center), skip=skip)


def _standardize(model, y, x):
    if y.shape[1] != model.n_features:
        raise ShapeError(f"model has {model.n_features} features, data has {y.shape[1]}")
    if x.shape != (y.shape[0], model.n_covariates):
        raise ShapeError(f"expected covariates of shape {(y.shape[0], model.n_covariates)}, "
                         f"got {x.shape}")
    return (y - model.alpha - x @ model.beta) / model.sigma


def combat_apply(model, features, site, covariates=None):
    y = np.asarray(features, dtype=np.float64)
    x = np.zeros((y.shape[0], 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    rows = _site_rows(np.asarray(site), model.sites)
    z = _standardize(model, y, x)
    adj = z - model.gamma_star[rows]
    adj /= np.sqrt(model.delta2_star[rows])
    out = model.sigma * adj + model.alpha + x @ model.beta
    out[:, model.skip] = y[:, model.skip]
    return out


def combat_extend(model, features, site, covariates=None):
    """Add sites unseen at fit time, keeping the fitted alpha/beta/sigma.

    The new sites' location/scale effects and priors come from their own
    standardized data only, so labels and other sites are never touched.
    Sites already in the model are ignored.
    """
    y = np.asarray(features, dtype=np.float64)
    x = np.zeros((y.shape[0], 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    site = np.asarray(site)
    new = sorted(set(site.tolist()) - set(model.sites))
    if not new:
        return model
    live = ~model.skip
    gammas, deltas, hypers = [model.gamma_star], [model.delta2_star], [model.hyper]
    for s in new:
        mask = site == s
        z = _standardize(model, y[mask], x[mask])
        g_row = np.zeros((1, model.n_features))
        d_row = np.ones((1, model.n_features))
        g, d, h = _estimate_site(z[:, live], s)
        g_row[0, live] = g
        d_row[0, live] = d
        gammas.append(g_row)
        deltas.append(d_row)
        hypers.append(np.array([h]))
    return replace(model, gamma_star=np.vstack(gammas), delta2_star=np.vstack(deltas),
                   hyper=np.vstack(hypers), sites=model.sites + tuple(new))


# ---------------------------------------------------------------------------
# serialization

def save_model(model, path):
    n_sites, v = model.gamma_star.shape
    p = model.n_covariates
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<QQQ", n_sites, v, p))
        fh.write(struct.pack("<d", model.age_center))
        for arr in (model.alpha, model.beta, model.sigma, model.gamma_star,
                    model.delta2_star, np.asarray(model.sites, dtype=np.float64),
                    model.hyper, model.skip.astype(np.float64)):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ParseError("not a ComBat model file (bad magic)", path=path)
    n_sites, v, p = struct.unpack_from("<QQQ", raw, 8)
    (age_center,) = struct.unpack_from("<d", raw, 32)
    off = 40
    shapes = [(v,), (p, v), (v,), (n_sites, v), (n_sites, v), (n_sites,), (n_sites, 4), (v,)]
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        if off + 8 * count > len(raw):
            raise ParseError("truncated ComBat model file", path=path)
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy())
        off += 8 * count
    if off != len(raw):
        raise ParseError("trailing bytes in ComBat model file", path=path)
    alpha, beta, sigma, g, d, sites, hyper, skip = arrays
    return CombatModel(alpha=alpha, beta=beta, sigma=sigma, gamma_star=g, delta2_star=d,
                       sites=tuple(int(s) for s in sites), hyper=hyper,
                       age_center=age_center, skip=skip.astype(bool))
