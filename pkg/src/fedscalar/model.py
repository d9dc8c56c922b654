"""From-scratch multilayer perceptron: ReLU hidden layers, linear output
logits, softmax cross-entropy loss, exact reverse-mode gradients.

All parameters live in one flat float64 vector so a whole model moves
through the protocol as a single ParamVector.  Layout is layer by layer:
weight matrix (fan_in x fan_out, row-major), then bias (fan_out).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .linalg import ParamVector, norm_sq
from .randomness import RngStream, sample_batch


@dataclass(frozen=True)
class LabeledSample:
    """One training example: feature vector plus integer class label."""

    features: np.ndarray
    label: int


# A batch in array form: (features matrix (B, in_dim), labels vector (B,)).
Batch = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: sizes of input, hidden, and output layers."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def param_count(self) -> int:
        """Total number of scalar parameters across all weights and biases."""
        return sum(
            fan_in * fan_out + fan_out
            for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:])
        )

    @cached_property
    def layout(self) -> tuple[tuple[slice, slice, int, int], ...]:
        """(weight_slice, bias_slice, fan_in, fan_out) per layer, in order."""
        slices = []
        offset = 0
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            slices.append((w, b, fan_in, fan_out))
        return tuple(slices)


def init_params(spec: MlpSpec, stream: RngStream) -> ParamVector:
    """Fresh parameters: weights ~ N(0, 2/fan_in), biases zero.

    Draw order is fixed (layer by layer, weights row-major), so the same
    stream state always yields the same vector bitwise.
    """
    params = np.zeros(spec.param_count)
    for w, _b, fan_in, fan_out in spec.layout:
        scale = np.sqrt(2.0 / fan_in)
        params[w] = stream.gen.standard_normal(fan_in * fan_out) * scale
    return params


def _check_params(spec: MlpSpec, params: ParamVector) -> None:
    if params.shape != (spec.param_count,):
        raise ValueError(
            f"expected {spec.param_count} parameters, got shape {params.shape}"
        )


def _as_xy(spec: MlpSpec, batch: Batch | Sequence[LabeledSample]) -> Batch:
    """Normalize a batch to (features, labels) float64/int arrays."""
    if isinstance(batch, tuple) and len(batch) == 2:
        features = np.asarray(batch[0], dtype=np.float64)
        labels = np.asarray(batch[1], dtype=np.int64)
    else:
        features = np.stack([np.asarray(s.features, dtype=np.float64) for s in batch])
        labels = np.array([s.label for s in batch], dtype=np.int64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError(f"batch features must be a nonempty matrix, got {features.shape}")
    if features.shape[1] != spec.in_dim:
        raise ValueError(
            f"feature dimension {features.shape[1]} does not match input size {spec.in_dim}"
        )
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must align with batch rows")
    if labels.min() < 0 or labels.max() >= spec.out_dim:
        raise ValueError(f"labels must lie in [0, {spec.out_dim})")
    return features, labels


def _forward(
    spec: MlpSpec, params: ParamVector, features: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Run the network; returns (logits, per-layer inputs, pre-activations)."""
    last = len(spec.layout) - 1
    act = features
    inputs = []
    pre = []
    for i, (w, b, fan_in, fan_out) in enumerate(spec.layout):
        weight = params[w].reshape(fan_in, fan_out)
        inputs.append(act)
        z = act @ weight + params[b]
        pre.append(z)
        act = z if i == last else np.maximum(z, 0.0)
    return pre[-1], inputs, pre


def forward_logits(spec: MlpSpec, params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Class logits for a feature matrix (no softmax applied)."""
    _check_params(spec, params)
    logits, _, _ = _forward(spec, params, np.asarray(features, dtype=np.float64))
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    # Max-logit subtraction keeps exp() finite for any logit magnitude.
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(spec: MlpSpec, params: ParamVector, batch: Batch | Sequence[LabeledSample]) -> float:
    """Mean softmax cross-entropy of the batch; finite for any finite inputs."""
    _check_params(spec, params)
    features, labels = _as_xy(spec, batch)
    log_probs = _log_softmax(_forward(spec, params, features)[0])
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def grad(spec: MlpSpec, params: ParamVector, batch: Batch | Sequence[LabeledSample]) -> ParamVector:
    """Exact gradient of `loss` with respect to every parameter.

    Reverse-mode accumulation; ReLU uses subgradient 0 at exactly 0.
    """
    _check_params(spec, params)
    features, labels = _as_xy(spec, batch)
    logits, inputs, pre = _forward(spec, params, features)
    batch_size = features.shape[0]

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    d_z = probs
    d_z[np.arange(batch_size), labels] -= 1.0
    d_z /= batch_size

    out = np.zeros(spec.param_count)
    for i in reversed(range(len(spec.layout))):
        w, b, fan_in, fan_out = spec.layout[i]
        out[w] = (inputs[i].T @ d_z).reshape(-1)
        out[b] = d_z.sum(axis=0)
        if i > 0:
            weight = params[w].reshape(fan_in, fan_out)
            d_z = (d_z @ weight.T) * (pre[i - 1] > 0.0)
    return out


def local_sgd(
    spec: MlpSpec,
    start: ParamVector,
    data: Batch | Sequence[LabeledSample],
    steps: int,
    alpha: float,
    batch_size: int,
    stream: RngStream,
    grad_sq_out: list[float] | None = None,
) -> tuple[ParamVector, ParamVector]:
    """Run `steps` minibatch SGD steps from `start`; returns (end, end - start).

    Each step draws a fresh batch without replacement from `data` using
    `stream`.  With alpha = 0 the drift is exactly zero.  When grad_sq_out is
    supplied, the squared norm of every stochastic gradient is appended to it.
    """
    _check_params(spec, start)
    features, labels = _as_xy(spec, data)
    psi = start.copy()
    for _ in range(steps):
        idx = sample_batch(stream, len(labels), batch_size)
        h = grad(spec, psi, (features[idx], labels[idx]))
        if grad_sq_out is not None:
            grad_sq_out.append(norm_sq(h))
        psi -= alpha * h
    return psi, psi - start
