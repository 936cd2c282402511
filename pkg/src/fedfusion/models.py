"""Fully connected model prototypes and flat parameter vectors.

A Prototype is an immutable architecture description: layer widths from input
to logits, hidden activation, and weight precision. Parameters always travel
as flat float64 vectors (ParamVector) so that averaging, serialization, and
optimizer state stay trivially shaped. Flattening order is, per layer, the
row-major weight matrix followed by the bias vector.

Precision "binary_ste" means the forward pass sees per-layer binarized
weights, sign(w) scaled by the layer's mean absolute weight, while the flat
vector keeps full-precision master values that gradients are applied to
(straight-through estimator). Biases are never binarized.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._errors import PrototypeMismatchError, ShapeError

ACTIVATIONS = ("relu", "tanh")
PRECISIONS = ("full", "binary_ste")


@dataclass(frozen=True)
class Prototype:
    """Architecture description shared by every client of one model family."""

    id: str
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    precision: str = "full"

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.id:
            raise ValueError("prototype id must be a non-empty string")
        if len(self.layer_widths) < 2:
            raise ValueError("layer_widths needs at least input and output widths")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_widths, self.layer_widths[1:]))


@dataclass
class ParamVector:
    """Flat float64 parameter vector bound to its prototype."""

    prototype: Prototype
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ShapeError(f"parameter values must be 1-D, got shape {vals.shape}")
        if vals.shape[0] != self.prototype.n_params:
            raise ShapeError(
                f"prototype {self.prototype.id!r} expects {self.prototype.n_params} "
                f"parameters, got {vals.shape[0]}"
            )
        self.values = vals

    @property
    def prototype_id(self) -> str:
        return self.prototype.id

    def copy(self) -> "ParamVector":
        return ParamVector(self.prototype, self.values.copy())


def layer_slices(proto: Prototype) -> list[tuple[slice, slice, tuple[int, int]]]:
    """Per-layer (weight_slice, bias_slice, (fan_in, fan_out)) into the flat vector."""
    out = []
    pos = 0
    for fan_in, fan_out in zip(proto.layer_widths, proto.layer_widths[1:]):
        w_sl = slice(pos, pos + fan_in * fan_out)
        pos += fan_in * fan_out
        b_sl = slice(pos, pos + fan_out)
        pos += fan_out
        out.append((w_sl, b_sl, (fan_in, fan_out)))
    return out


def unflatten(proto: Prototype, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (W, b) arrays. No copies."""
    if values.shape != (proto.n_params,):
        raise ShapeError(f"expected {proto.n_params} values for {proto.id!r}, got {values.shape}")
    layers = []
    for w_sl, b_sl, (fan_in, fan_out) in layer_slices(proto):
        layers.append((values[w_sl].reshape(fan_in, fan_out), values[b_sl]))
    return layers


def init_params(proto: Prototype, seed: int) -> ParamVector:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(seed)
    values = np.zeros(proto.n_params, dtype=np.float64)
    for w_sl, _b_sl, (fan_in, fan_out) in layer_slices(proto):
        bound = np.sqrt(6.0 / fan_in)
        values[w_sl] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return ParamVector(proto, values)


def binarize_layer(w: np.ndarray) -> np.ndarray:
    # zero weights count as positive so every binarized entry is +-scale
    return np.where(w >= 0.0, 1.0, -1.0) * np.mean(np.abs(w))


def binarize_values(proto: Prototype, values: np.ndarray) -> np.ndarray:
    """Flat copy with every weight matrix binarized; biases pass through.

    Idempotent, and forward passes of a binary_ste prototype are identical
    on the original and the binarized copy.
    """
    out = values.copy()
    for w_sl, _b_sl, (fan_in, fan_out) in layer_slices(proto):
        out[w_sl] = binarize_layer(values[w_sl].reshape(fan_in, fan_out)).reshape(fan_in * fan_out)
    return out


def forward_cached(
    proto: Prototype, values: np.ndarray, inputs: np.ndarray, binarize: bool
) -> tuple[np.ndarray, tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]]:
    """Forward pass returning (logits, (layer_inputs, preactivations, effective_weights)).

    layer_inputs[l] is the input to layer l (layer_inputs[0] is the batch),
    preactivations[l] is the affine output of layer l before activation, and
    effective_weights[l] is the weight matrix the pass actually multiplied by
    (binarized when requested). The caches are what a backward pass needs.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != proto.n_inputs:
        raise ShapeError(
            f"inputs must have shape (batch, {proto.n_inputs}), got {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValueError("inputs contain non-finite values")
    layer_inputs = [x]
    preacts: list[np.ndarray] = []
    eff_weights: list[np.ndarray] = []
    a = x
    last = proto.n_layers - 1
    for l, (w, b) in enumerate(unflatten(proto, values)):
        if binarize:
            w = binarize_layer(w)
        z = a @ w + b
        preacts.append(z)
        eff_weights.append(w)
        if l < last:
            a = np.maximum(z, 0.0) if proto.activation == "relu" else np.tanh(z)
            layer_inputs.append(a)
    return preacts[-1], (layer_inputs, preacts, eff_weights)


def predict_logits(params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Logits for a batch, honoring the prototype's precision."""
    binarize = params.prototype.precision == "binary_ste"
    logits, _ = forward_cached(params.prototype, params.values, inputs, binarize)
    return logits


def _activation_deriv(activation: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def backprop_from_dlogits(
    proto: Prototype,
    caches: tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]],
    dlogits: np.ndarray,
) -> np.ndarray:
    """Backward recurrence given d(loss)/d(logits); returns a flat gradient."""
    layer_inputs, preacts, eff_weights = caches
    grad = np.zeros(proto.n_params, dtype=np.float64)
    slices = layer_slices(proto)
    delta = dlogits
    for l in range(proto.n_layers - 1, -1, -1):
        w_sl, b_sl, (fan_in, fan_out) = slices[l]
        grad[w_sl] = (layer_inputs[l].T @ delta).reshape(fan_in * fan_out)
        grad[b_sl] = delta.sum(axis=0)
        if l > 0:
            da = delta @ eff_weights[l].T
            delta = da * _activation_deriv(proto.activation, preacts[l - 1], layer_inputs[l])
    return grad


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def binarize_ste_grad(params: ParamVector, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy gradient through the binarized forward pass.

    The forward uses binarized weights; the backward treats binarization as
    identity, so the returned flat gradient applies directly to the
    full-precision master values.
    """
    proto = params.prototype
    y = np.asarray(labels)
    logits, caches = forward_cached(proto, params.values, inputs, binarize=True)
    batch = logits.shape[0]
    if y.shape != (batch,):
        raise ShapeError(f"labels must have shape ({batch},), got {y.shape}")
    if y.min() < 0 or y.max() >= proto.n_classes:
        raise IndexError(f"labels must lie in [0, {proto.n_classes})")
    probs = _softmax_rows(logits)
    probs[np.arange(batch), y] -= 1.0
    return backprop_from_dlogits(proto, caches, probs / batch)


def average_params(models: list[ParamVector], weights) -> ParamVector:
    """Weighted average of same-prototype parameter vectors.

    Computed anchored on the first vector, base + sum_i w_i * (x_i - base),
    so averaging identical inputs reproduces them bit for bit.
    """
    if len(models) == 0:
        raise ValueError("average_params needs at least one model")
    proto = models[0].prototype
    for m in models[1:]:
        if m.prototype != proto:
            raise PrototypeMismatchError(
                f"cannot average prototypes {proto.id!r} and {m.prototype.id!r}"
            )
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(models),):
        raise ShapeError(f"need {len(models)} weights, got shape {w.shape}")
    if (w < 0).any():
        raise ValueError("averaging weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("averaging weights must not sum to zero")
    wn = w / total
    base = models[0].values
    acc = np.zeros_like(base)
    for wi, m in zip(wn[1:], models[1:]):
        if wi != 0.0:
            acc += wi * (m.values - base)
    return ParamVector(proto, base + acc)


_MAGIC = b"FFPV"


def save_params(params: ParamVector, path) -> None:
    """Write a parameter vector: magic, length-prefixed prototype id (utf-8),
    u64 count, then count little-endian float64 values."""
    ident = params.prototype.id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<Q", params.values.shape[0]))
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path, prototypes) -> ParamVector:
    """Read a parameter vector; prototypes maps id -> Prototype (or is an iterable)."""
    if not isinstance(prototypes, dict):
        prototypes = {p.id: p for p in prototypes}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a parameter file: bad magic {magic!r}")
        (id_len,) = struct.unpack("<I", fh.read(4))
        ident = fh.read(id_len).decode("utf-8")
        (count,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError("parameter file truncated")
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if ident not in prototypes:
        raise KeyError(f"unknown prototype id {ident!r} in {path}")
    proto = prototypes[ident]
    if count != proto.n_params:
        raise ShapeError(
            f"file holds {count} values but prototype {ident!r} expects {proto.n_params}"
        )
    return ParamVector(proto, values)
