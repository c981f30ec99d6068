"""Flat-parameter model core.

All model state is a flat float64 vector paired with per-layer shape
metadata, so pruning, aggregation, and transport can treat weights as plain
arrays. A binary mask of the same length marks which coordinates a client is
allowed to touch. The only architecture implemented is a dense ReLU MLP with
a softmax cross-entropy head, which is enough for the synthetic tasks the
simulator runs at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError


def _shape_size(shape: tuple[int, ...]) -> int:
    out = 1
    for d in shape:
        out *= d
    return out


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus layer shape metadata."""

    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        expected = sum(_shape_size(s) for s in self.shapes)
        if self.values.ndim != 1:
            raise ValueError("parameter vector must be one dimensional")
        if self.values.size != expected:
            raise ValueError(
                f"flat length {self.values.size} does not match shapes "
                f"(expected {expected})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains NaN or Inf")

    def __len__(self) -> int:
        return int(self.values.size)

    def like(self, values: np.ndarray) -> "ParamVector":
        """New vector with the same shape metadata."""
        return ParamVector(values, self.shapes)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shapes)

    def layers(self) -> list[np.ndarray]:
        """Split the flat vector into per-layer reshaped views."""
        out = []
        off = 0
        for s in self.shapes:
            n = _shape_size(s)
            out.append(self.values[off:off + n].reshape(s))
            off += n
        return out


@dataclass
class Mask:
    """Binary keep/prune indicator aligned with a ParamVector."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise ValueError("mask must be one dimensional")
        if not np.all(self.bits <= 1):
            raise ValueError("mask bits must be 0 or 1")

    def __len__(self) -> int:
        return int(self.bits.size)

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def density(self) -> float:
        if self.bits.size == 0:
            return 0.0
        return self.popcount / self.bits.size

    def subset_of(self, other: "Mask") -> bool:
        if len(self) != len(other):
            raise ValueError("mask length mismatch")
        return bool(np.all(self.bits <= other.bits))

    @classmethod
    def ones(cls, n: int) -> "Mask":
        return cls(np.ones(n, dtype=np.uint8))

    @classmethod
    def zeros(cls, n: int) -> "Mask":
        return cls(np.zeros(n, dtype=np.uint8))


@dataclass
class Dataset:
    """In-memory classification dataset."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a (samples, dims) array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    def __len__(self) -> int:
        return int(self.labels.size)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class TrainSpec:
    """Local training hyperparameters.

    learning_rate_schedule maps the global round index to a step size.
    local_iterations may be zero, which turns local training into a no-op
    (useful for plumbing tests).
    """

    learning_rate_schedule: Callable[[int], float]
    batch_size: int
    local_iterations: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.local_iterations < 0:
            raise ValueError("local_iterations must be non-negative")


def mlp_shapes(layer_sizes: Sequence[int]) -> tuple[tuple[int, ...], ...]:
    """Weight/bias shapes for a dense MLP with the given layer widths."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least input and output widths")
    if any(s <= 0 for s in sizes):
        raise ConfigError("layer widths must be positive")
    shapes: list[tuple[int, ...]] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    return tuple(shapes)


def init_model(shapes: Sequence[tuple[int, ...]], seed: int) -> ParamVector:
    """Deterministic init: weight matrices get U(-l, l) with
    l = sqrt(6 / (fan_in + fan_out)); bias vectors start at zero."""
    shapes = tuple(tuple(int(d) for d in s) for s in shapes)
    if not shapes:
        raise ConfigError("no parameter shapes given")
    for s in shapes:
        if not s or any(d <= 0 for d in s):
            raise ConfigError(f"non-positive dimension in shape {s}")
    rng = np.random.default_rng(seed)
    parts = []
    for s in shapes:
        n = _shape_size(s)
        if len(s) >= 2:
            fan_in = _shape_size(s[:-1])
            fan_out = s[-1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-limit, limit, size=n))
        else:
            parts.append(np.zeros(n))
    return ParamVector(np.concatenate(parts), shapes)


def apply_mask(w: ParamVector, m: Mask) -> ParamVector:
    """Keep masked-in values, zero the rest.

    Uses a select rather than a multiply so pruned negatives become +0.0,
    not -0.0; reconstruction from sparse packets must be bit-identical.
    """
    if len(w) != len(m):
        raise ValueError(f"mask length {len(m)} does not match model length {len(w)}")
    return w.like(np.where(m.bits == 1, w.values, 0.0))


def mask_of(w: ParamVector) -> Mask:
    """Support indicator: 1 wherever the coordinate is nonzero."""
    return Mask((w.values != 0.0).astype(np.uint8))


def _layer_pairs(pv: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    # shapes must alternate (fan_in, fan_out) weight then (fan_out,) bias
    layers = pv.layers()
    if len(layers) < 2 or len(layers) % 2 != 0:
        raise ValueError("parameter shapes do not describe an MLP")
    pairs = []
    for W, b in zip(layers[0::2], layers[1::2]):
        if W.ndim != 2 or b.ndim != 1 or W.shape[1] != b.shape[0]:
            raise ValueError("parameter shapes do not describe an MLP")
        pairs.append((W, b))
    return pairs


def predict_logits(w: ParamVector, features: np.ndarray) -> np.ndarray:
    """Forward pass: ReLU between layers, raw logits at the output."""
    pairs = _layer_pairs(w)
    a = np.asarray(features, dtype=np.float64)
    for i, (W, b) in enumerate(pairs):
        z = a @ W + b
        a = np.maximum(z, 0.0) if i < len(pairs) - 1 else z
    return a


def loss_and_gradient(w: ParamVector, features: np.ndarray,
                      labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its flat gradient.

    Returns (loss, grad) where grad has the same layout as w.values.
    """
    pairs = _layer_pairs(w)
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    batch = X.shape[0]
    if batch == 0:
        raise ValueError("empty batch")

    acts = [X]
    zs = []
    a = X
    for i, (W, b) in enumerate(pairs):
        z = a @ W + b
        zs.append(z)
        a = np.maximum(z, 0.0) if i < len(pairs) - 1 else z
        acts.append(a)

    logits = zs[-1]
    zmax = logits.max(axis=1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        ez = np.exp(logits - zmax)
        denom = ez.sum(axis=1, keepdims=True)
        logp = (logits - zmax) - np.log(denom)
        loss = float(-logp[np.arange(batch), y].mean())
        probs = ez / denom

    delta = probs
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(pairs)  # type: ignore[list-item]
    for i in reversed(range(len(pairs))):
        W, _ = pairs[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * (zs[i - 1] > 0.0)

    flat = np.concatenate([g.ravel() for pair in grads for g in pair])
    return loss, flat


def local_train(w: ParamVector, m: Mask, data: Dataset, spec: TrainSpec,
                round_index: int, seed: int) -> ParamVector:
    """Masked minibatch SGD.

    The mask is applied before the first step and again after every step, so
    pruned coordinates stay exactly zero throughout. Batches are drawn
    without replacement from a generator seeded with `seed`, which makes the
    result a pure function of its arguments.
    """
    if len(w) != len(m):
        raise ValueError("mask length does not match model length")
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    eta = float(spec.learning_rate_schedule(round_index))
    if eta < 0.0 or not math.isfinite(eta):
        raise ValueError(f"bad learning rate {eta}")
    rng = np.random.default_rng(seed)
    keep = m.bits == 1
    vals = np.where(keep, w.values, 0.0)
    n = len(data)
    bs = min(spec.batch_size, n)
    for _ in range(spec.local_iterations):
        idx = rng.choice(n, size=bs, replace=False)
        loss, grad = loss_and_gradient(w.like(vals), data.features[idx], data.labels[idx])
        if not math.isfinite(loss):
            raise FloatingPointError(
                "training loss is NaN/Inf; the learning rate has diverged")
        vals = vals - eta * grad
        vals = np.where(keep, vals, 0.0)
    return w.like(vals)


def test_acc(w: ParamVector, data: Dataset) -> float:
    """Share of samples whose argmax logit hits the label.

    Argmax ties resolve to the lowest class index.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = predict_logits(w, data.features).argmax(axis=1)
    return float((pred == data.labels).mean())
