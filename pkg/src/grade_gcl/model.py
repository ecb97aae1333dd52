"""Encoder and projector with hand-rolled exact gradients.

The encoder is one or two mean-aggregation GCN layers
(ReLU(propagate(X) @ W)); the projector is a two-layer MLP whose output is
L2-normalized so the contrastive critic reduces to a dot product. Because
the architecture is fixed, reverse-mode gradients are written out explicitly
instead of pulling in an autodiff framework.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import UsageError, ValidationError
from .augment import AugmentedView
from .graph import Graph

_CKPT_MAGIC = b"GCKP"
_CKPT_VERSION = 1


@dataclass
class ModelParams:
    """Weights and matching gradient buffers.

    Single-layer encoders use W1 of shape (num_features, embed_dim) and leave
    W2 as None; two-layer encoders use W1 (num_features, hidden) and
    W2 (hidden, embed_dim).
    """

    layers: int
    W1: np.ndarray
    W2: np.ndarray | None
    P1: np.ndarray
    b1: np.ndarray
    P2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        self.grads = {name: np.zeros_like(t) for name, t in self.named_tensors()}

    def named_tensors(self):
        items = [("W1", self.W1)]
        if self.layers == 2:
            items.append(("W2", self.W2))
        items += [("P1", self.P1), ("b1", self.b1), ("P2", self.P2), ("b2", self.b2)]
        return items

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.layers,
            self.W1.copy(),
            None if self.W2 is None else self.W2.copy(),
            self.P1.copy(),
            self.b1.copy(),
            self.P2.copy(),
            self.b2.copy(),
        )

    @property
    def embed_dim(self) -> int:
        return self.W1.shape[1] if self.layers == 1 else self.W2.shape[1]

    @property
    def proj_dim(self) -> int:
        return self.P2.shape[1]


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(num_features, hidden_dim, embed_dim, proj_dim, layers, rng) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    if layers not in (1, 2):
        raise UsageError("layers must be 1 or 2")
    if layers == 1:
        W1, W2 = _glorot(rng, num_features, embed_dim), None
    else:
        W1 = _glorot(rng, num_features, hidden_dim)
        W2 = _glorot(rng, hidden_dim, embed_dim)
    return ModelParams(
        layers,
        W1,
        W2,
        _glorot(rng, embed_dim, proj_dim),
        np.zeros(proj_dim),
        _glorot(rng, proj_dim, proj_dim),
        np.zeros(proj_dim),
    )


class ForwardTape:
    """Cached activations of one forward pass; consumed once by backward()."""

    def __init__(self, transition, inputs):
        self.transition = transition  # sparse row-stochastic aggregation matrix
        self.inputs = inputs          # masked features fed to layer 1
        self.agg = []                 # propagated inputs per encoder layer
        self.pre = []                 # pre-activations per encoder layer
        self.H = None                 # encoder output
        self.proj_pre1 = None
        self.proj_hidden = None
        self.proj_pre2 = None
        self.norms = None
        self.Z = None
        self.zero_norm_rows = None
        self.consumed = False


def encode(view: AugmentedView, graph: Graph, params: ModelParams):
    """Run the encoder on one view; returns (H, tape)."""
    P = view.transition()
    tape = ForwardTape(P, view.masked_features)
    x = view.masked_features
    weights = [params.W1] if params.layers == 1 else [params.W1, params.W2]
    for W in weights:
        a = P @ x
        z = a @ W
        tape.agg.append(a)
        tape.pre.append(z)
        x = np.maximum(z, 0.0)
    tape.H = x
    return x, tape


def project_normalize(H: np.ndarray, params: ModelParams, tape: ForwardTape) -> np.ndarray:
    """Two-layer MLP head followed by row L2-normalization.

    Rows whose projector output has norm < 1e-12 are left as zero rows and
    recorded on the tape (surfaced as a training diagnostic).
    """
    g1 = H @ params.P1 + params.b1
    r = np.maximum(g1, 0.0)
    g2 = r @ params.P2 + params.b2
    norms = np.linalg.norm(g2, axis=1)
    zero_rows = norms < 1e-12
    safe = np.where(zero_rows, 1.0, norms)
    Z = g2 / safe[:, None]
    Z[zero_rows] = 0.0
    tape.proj_pre1 = g1
    tape.proj_hidden = r
    tape.proj_pre2 = g2
    tape.norms = safe
    tape.zero_norm_rows = np.flatnonzero(zero_rows)
    tape.Z = Z
    return Z


def backward(tape: ForwardTape, upstream: np.ndarray, params: ModelParams):
    """Accumulate d(loss)/d(params) given d(loss)/dZ, consuming the tape.

    ReLU subgradient at 0 is taken as 0; the normalization Jacobian
    (I - z z^T)/||g|| is applied row-wise, with zero-norm rows passing no
    gradient.
    """
    if tape.consumed:
        raise UsageError("forward tape already consumed")
    if tape.Z is None:
        raise UsageError("project_normalize must run before backward")
    tape.consumed = True

    Z, norms = tape.Z, tape.norms
    inner = np.sum(Z * upstream, axis=1, keepdims=True)
    d_g2 = (upstream - Z * inner) / norms[:, None]
    if tape.zero_norm_rows.size:
        d_g2[tape.zero_norm_rows] = 0.0

    grads = params.grads
    grads["P2"] += tape.proj_hidden.T @ d_g2
    grads["b2"] += d_g2.sum(axis=0)
    d_r = d_g2 @ params.P2.T
    d_g1 = d_r * (tape.proj_pre1 > 0.0)
    grads["P1"] += tape.H.T @ d_g1
    grads["b1"] += d_g1.sum(axis=0)
    d_h = d_g1 @ params.P1.T

    P = tape.transition
    weights = [params.W1] if params.layers == 1 else [params.W1, params.W2]
    names = ["W1"] if params.layers == 1 else ["W1", "W2"]
    for layer in reversed(range(len(weights))):
        d_z = d_h * (tape.pre[layer] > 0.0)
        grads[names[layer]] += tape.agg[layer].T @ d_z
        if layer > 0:
            d_agg = d_z @ weights[layer].T
            d_h = P.T @ d_agg


def save_checkpoint(params: ModelParams, path):
    """Versioned binary checkpoint: header + row-major little-endian f64 tensors."""
    hidden = 0 if params.layers == 1 else params.W1.shape[1]
    header = struct.pack(
        "<4sIIIIII",
        _CKPT_MAGIC,
        _CKPT_VERSION,
        params.layers,
        params.W1.shape[0],
        hidden,
        params.embed_dim,
        params.proj_dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for _, tensor in params.named_tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIIIIII")
    if len(blob) < head_size:
        raise ValidationError(f"{path}: truncated checkpoint")
    magic, version, layers, num_features, hidden, embed_dim, proj_dim = struct.unpack(
        "<4sIIIIII", blob[:head_size]
    )
    if magic != _CKPT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    if version != _CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    if layers == 1:
        shapes = [("W1", (num_features, embed_dim)), ]
    else:
        shapes = [("W1", (num_features, hidden)), ("W2", (hidden, embed_dim))]
    shapes += [
        ("P1", (embed_dim, proj_dim)),
        ("b1", (proj_dim,)),
        ("P2", (proj_dim, proj_dim)),
        ("b2", (proj_dim,)),
    ]
    offset = head_size
    tensors = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        end = offset + count * 8
        if end > len(blob):
            raise ValidationError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise ValidationError(f"{path}: trailing bytes after tensors")
    return ModelParams(
        layers,
        tensors["W1"],
        tensors.get("W2"),
        tensors["P1"],
        tensors["b1"],
        tensors["P2"],
        tensors["b2"],
    )
