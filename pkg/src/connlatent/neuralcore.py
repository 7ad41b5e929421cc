"""Dense layers with exact reverse-mode gradients and an Adam optimizer.

Only what the autoencoder needs: affine layers with ReLU or identity
activations, a tape of forward intermediates, backprop to parameters and
inputs, and bias-corrected adaptive-moment updates. All arithmetic is
float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ShapeError, TrainingError

NET_MAGIC = b"NNET0001"
ACTIVATIONS = {"identity": 0, "relu": 1}
_ACTIVATION_NAMES = {v: k for k, v in ACTIVATIONS.items()}


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"inconsistent layer shapes: W {self.weights.shape}, "
                             f"b {self.bias.shape}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim, out_dim, activation, rng):
        # He-uniform for ReLU layers, Glorot-uniform otherwise
        if activation == "relu":
            limit = np.sqrt(6.0 / in_dim)
        else:
            limit = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim), activation)

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class GradientTape:
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation of each layer
    layers: list = field(default_factory=list)
    output_shape: tuple = ()


def forward(layers, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {x.shape}")
    tape = GradientTape(layers=list(layers))
    h = x
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.in_dim:
            raise ShapeError(f"layer {i} expects {layer.in_dim} inputs, got {h.shape[1]}")
        tape.inputs.append(h)
        a = h @ layer.weights.T + layer.bias
        tape.pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
    tape.output_shape = h.shape
    return h, tape


def backward(tape, loss_grad):
    """Backpropagate ``dL/d(output)`` through a recorded forward pass.

    Returns ``(grads, input_grad)`` where ``grads`` is a list of
    ``(dW, db)`` pairs aligned with the layers. ReLU uses subgradient 0 at
    exactly 0.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != tape.output_shape:
        raise ShapeError(f"loss gradient shape {g.shape} does not match output "
                         f"{tape.output_shape}")
    grads = [None] * len(tape.layers)
    for i in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[i]
        if layer.activation == "relu":
            g = g * (tape.pre[i] > 0.0)
        grads[i] = (g.T @ tape.inputs[i], g.sum(axis=0))
        g = g @ layer.weights
    return grads, g


def parameters(layers):
    """Flat list of parameter arrays: W0, b0, W1, b1, ..."""
    out = []
    for layer in layers:
        out.extend((layer.weights, layer.bias))
    return out


def flatten_grads(grads):
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, learning_rate, beta1, beta2, eps)


def adam_step(state, params, grads):
    """Update ``params`` in place and advance ``state``.

    Raises :class:`TrainingError` before touching anything if a gradient
    is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# serialization

def write_layers(fh, layers):
    fh.write(NET_MAGIC)
    fh.write(struct.pack("<Q", len(layers)))
    for layer in layers:
        fh.write(struct.pack("<QQB", layer.in_dim, layer.out_dim, ACTIVATIONS[layer.activation]))
        fh.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def read_layers(buf, offset=0):
    """Parse a network from ``buf`` starting at ``offset``; returns (layers, new_offset)."""
    if buf[offset:offset + 8] != NET_MAGIC:
        raise ParseError("not a network block (bad magic)")
    offset += 8
    (count,) = struct.unpack_from("<Q", buf, offset)
    offset += 8
    layers = []
    for _ in range(count):
        in_dim, out_dim, code = struct.unpack_from("<QQB", buf, offset)
        offset += 17
        if code not in _ACTIVATION_NAMES:
            raise ParseError(f"unknown activation code {code}")
        nw = in_dim * out_dim
        if offset + 8 * (nw + out_dim) > len(buf):
            raise ParseError("truncated network block")
        w = np.frombuffer(buf, dtype="<f8", count=nw, offset=offset).reshape(out_dim, in_dim)
        offset += 8 * nw
        b = np.frombuffer(buf, dtype="<f8", count=out_dim, offset=offset)
        offset += 8 * out_dim
        layers.append(DenseLayer(w.copy(), b.copy(), _ACTIVATION_NAMES[code]))
    return layers, offset


def save_layers(layers, path):
    with open(path, "wb") as fh:
        write_layers(fh, layers)


def load_layers(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    layers, end = read_layers(buf)
    if end != len(buf):
        raise ParseError("trailing bytes after network block", path=path)
    return layers
