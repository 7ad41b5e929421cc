"""Denoising variational autoencoder over connectivity feature vectors.

The encoder sees a noise-corrupted input and outputs a diagonal Gaussian
posterior (mean, log-variance); one reparameterized sample is decoded and
compared against the *clean* input under a unit-variance Gaussian
likelihood. Classifier features are the posterior parameters of clean
inputs, concatenated as ``[mu, logvar]``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neuralcore as nc
from .errors import ConfigError, ParseError, ShapeError, TrainingError

MODEL_MAGIC = b"DVAE0001"


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    hidden_dims: tuple = (512, 128)
    latent_dim: int = 5
    noise_variance: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be nonnegative")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)


@dataclass
class DvaeModel:
    encoder_trunk: list
    mu_head: nc.DenseLayer
    logvar_head: nc.DenseLayer
    decoder: list
    latent_dim: int
    noise_variance: float
    input_dim: int

    @classmethod
    def init(cls, input_dim, hidden_dims=(512, 128), latent_dim=5, noise_variance=0.1,
             rng=None):
        rng = np.random.default_rng(rng)
        dims = [input_dim, *hidden_dims]
        trunk = [nc.DenseLayer.init(a, b, "relu", rng) for a, b in zip(dims[:-1], dims[1:])]
        top = dims[-1]
        mu_head = nc.DenseLayer.init(top, latent_dim, "identity", rng)
        logvar_head = nc.DenseLayer.init(top, latent_dim, "identity", rng)
        back = [latent_dim, *reversed(hidden_dims)]
        decoder = [nc.DenseLayer.init(a, b, "relu", rng) for a, b in zip(back[:-1], back[1:])]
        decoder.append(nc.DenseLayer.init(back[-1], input_dim, "identity", rng))
        return cls(trunk, mu_head, logvar_head, decoder, latent_dim, noise_variance, input_dim)

    def parameters(self):
        return (nc.parameters(self.encoder_trunk)
                + nc.parameters([self.mu_head, self.logvar_head])
                + nc.parameters(self.decoder))

    def copy(self):
        return DvaeModel([l.copy() for l in self.encoder_trunk], self.mu_head.copy(),
                         self.logvar_head.copy(), [l.copy() for l in self.decoder],
                         self.latent_dim, self.noise_variance, self.input_dim)

    def encode(self, x):
        h, trunk_tape = nc.forward(self.encoder_trunk, x)
        mu, mu_tape = nc.forward([self.mu_head], h)
        logvar, lv_tape = nc.forward([self.logvar_head], h)
        return mu, logvar, (trunk_tape, mu_tape, lv_tape)

    def decode(self, z):
        return nc.forward(self.decoder, z)


@dataclass
class LatentFeatures:
    mu: np.ndarray
    logvar: np.ndarray

    @property
    def matrix(self):
        return np.hstack([self.mu, self.logvar])


@dataclass
class ElboTape:
    trunk: nc.GradientTape
    mu_head: nc.GradientTape
    logvar_head: nc.GradientTape
    decoder: nc.GradientTape
    x_clean: np.ndarray
    recon: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    eps: np.ndarray


def kl_divergence(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) per row."""
    return 0.5 * np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar, axis=1)


def elbo_loss(x_clean, x_noisy, model, eps=None, rng=None):
    """Negative ELBO for one minibatch.

    ``eps`` fixes the reparameterization noise (for gradient checks);
    otherwise it is drawn from ``rng``. Returns ``(loss, terms, tape)``
    with ``terms = {"recon": ..., "kl": ...}``.
    """
    x_clean = np.asarray(x_clean, dtype=np.float64)
    x_noisy = np.asarray(x_noisy, dtype=np.float64)
    if x_clean.shape != x_noisy.shape:
        raise ShapeError(f"clean {x_clean.shape} and noisy {x_noisy.shape} batches differ")
    if x_clean.ndim != 2 or x_clean.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} inputs, got shape {x_clean.shape}")
    b = x_clean.shape[0]
    mu, logvar, (trunk_t, mu_t, lv_t) = model.encode(x_noisy)
    if eps is None:
        eps = np.random.default_rng(rng).standard_normal(mu.shape)
    z = mu + np.exp(0.5 * logvar) * eps
    recon, dec_t = model.decode(z)
    diff = recon - x_clean
    recon_term = 0.5 * np.sum(diff * diff) / b
    kl_term = kl_divergence(mu, logvar).sum() / b
    loss = recon_term + kl_term
    tape = ElboTape(trunk_t, mu_t, lv_t, dec_t, x_clean, recon, mu, logvar, eps)
    return loss, {"recon": recon_term, "kl": kl_term}, tape


def elbo_backward(model, tape):
    """Gradients of :func:`elbo_loss`, aligned with ``model.parameters()``."""
    b = tape.x_clean.shape[0]
    dec_grads, dz = nc.backward(tape.decoder, (tape.recon - tape.x_clean) / b)
    std = np.exp(0.5 * tape.logvar)
    dmu = dz + tape.mu / b
    dlogvar = dz * tape.eps * 0.5 * std + 0.5 * (np.exp(tape.logvar) - 1.0) / b
    mu_grads, dh_mu = nc.backward(tape.mu_head, dmu)
    lv_grads, dh_lv = nc.backward(tape.logvar_head, dlogvar)
    trunk_grads, _ = nc.backward(tape.trunk, dh_mu + dh_lv)
    return nc.flatten_grads(trunk_grads + mu_grads + lv_grads + dec_grads)


def train(features, cfg, log=None):
    """Fit a DVAE; returns ``(model, loss_curve)``.

    ``loss_curve`` is a list of ``(epoch, loss, recon, kl)`` tuples holding
    per-epoch means over minibatches. Fresh input noise is drawn for every
    minibatch.
    """
    x = np.asarray(features, dtype=np.float64)
    n, v = x.shape
    if n < cfg.batch_size:
        raise TrainingError(f"{n} samples is fewer than batch_size {cfg.batch_size}")
    init_seq, loop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = DvaeModel.init(v, cfg.hidden_dims, cfg.latent_dim, cfg.noise_variance,
                           np.random.default_rng(init_seq))
    rng = np.random.default_rng(loop_seq)
    params = model.parameters()
    state = nc.AdamState.for_params(params, learning_rate=cfg.learning_rate)
    noise_sd = np.sqrt(cfg.noise_variance)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        totals = np.zeros(3)
        n_batches = 0
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            xb = x[order[start:start + cfg.batch_size]]
            noisy = xb + noise_sd * rng.standard_normal(xb.shape) if noise_sd > 0 else xb
            loss, terms, tape = elbo_loss(xb, noisy, model, rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_no}")
            try:
                nc.adam_step(state, params, elbo_backward(model, tape))
            except TrainingError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {batch_no}") from None
            totals += (loss, terms["recon"], terms["kl"])
            n_batches += 1
        means = totals / n_batches
        curve.append((epoch, float(means[0]), float(means[1]), float(means[2])))
        if log is not None:
            log(epoch, *curve[-1][1:])
    return model, curve


def extract(model, features):
    """Posterior parameters of clean inputs; no noise, no sampling."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} inputs, got shape {x.shape}")
    mu, logvar, _ = model.encode(x)
    return LatentFeatures(mu, logvar)


# ---------------------------------------------------------------------------
# files

def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<QdQ", model.latent_dim, model.noise_variance, model.input_dim))
        nc.write_layers(fh, model.encoder_trunk)
        nc.write_layers(fh, [model.mu_head])
        nc.write_layers(fh, [model.logvar_head])
        nc.write_layers(fh, model.decoder)


def load_model(path):
    buf = Path(path).read_bytes()
    if buf[:8] != MODEL_MAGIC:
        raise ParseError("not a DVAE model file (bad magic)", path=path)
    latent_dim, noise_variance, input_dim = struct.unpack_from("<QdQ", buf, 8)
    off = 8 + 24
    trunk, off = nc.read_layers(buf, off)
    (mu_head,), off = nc.read_layers(buf, off)
    (logvar_head,), off = nc.read_layers(buf, off)
    decoder, off = nc.read_layers(buf, off)
    if off != len(buf):
        raise ParseError("trailing bytes in DVAE model file", path=path)
    return DvaeModel(trunk, mu_head, logvar_head, decoder, latent_dim, noise_variance, input_dim)


def write_loss_curve(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "recon", "kl"])
        for epoch, loss, recon, kl in curve:
            w.writerow([epoch, repr(loss), repr(recon), repr(kl)])


def read_loss_curve(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["loss"]), float(r["recon"]), float(r["kl"])) for r in rows]
