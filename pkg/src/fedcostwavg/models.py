"""Small deterministic trainable models with closed-form gradients.

Three kinds are supported:

- ``linreg``  linear regression, squared-error loss
- ``logreg``  multinomial logistic regression, softmax cross-entropy
- ``mlp``     one hidden layer, tanh activation, softmax cross-entropy

Parameters are flattened into one float64 vector in a fixed order:

- linreg/logreg: ``[W (input_dim x output_dim, row-major), bias (output_dim)]``
- mlp: ``[W1 (input_dim x hidden), b1 (hidden), W2 (hidden x output), b2 (output)]``

Reported losses are floored at ``LOSS_FLOOR`` so downstream cost ratios stay
well defined.  The hot numeric paths live in ``fedcostwavg._kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, DimensionError, NumericError
from .params import ParamVector

LOSS_FLOOR = 1e-12

MODEL_KINDS = ("linreg", "logreg", "mlp")


@dataclass
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ConfigError("mlp requires hidden_dim >= 1")

    @property
    def param_count(self) -> int:
        if self.kind == "mlp":
            return (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.output_dim
        return (self.input_dim + 1) * self.output_dim

    @property
    def is_classifier(self) -> bool:
        return self.kind in ("logreg", "mlp")


@dataclass
class Batch:
    """Inputs plus targets: int64 class labels for classifiers, a float64
    (n, output_dim) matrix for regression."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise DimensionError(f"inputs must be a non-empty matrix, got shape {self.inputs.shape}")
        if not np.isfinite(self.inputs).all():
            raise NumericError("batch inputs contain non-finite entries")
        t = np.asarray(self.targets)
        if np.issubdtype(t.dtype, np.integer):
            self.targets = np.ascontiguousarray(t, dtype=np.int64)
        else:
            if t.ndim == 1:
                t = t.reshape(-1, 1)
            self.targets = np.ascontiguousarray(t, dtype=np.float64)
            if not np.isfinite(self.targets).all():
                raise NumericError("batch targets contain non-finite entries")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise DimensionError("inputs and targets disagree on example count")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.targets[idx])


def _check(spec: ModelSpec, params: ParamVector, batch: Batch) -> np.ndarray:
    w = np.ascontiguousarray(params, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.param_count:
        raise DimensionError(
            f"expected {spec.param_count} parameters for {spec.kind}, got shape {w.shape}"
        )
    if batch.inputs.shape[1] != spec.input_dim:
        raise DimensionError(
            f"batch input_dim {batch.inputs.shape[1]} != spec input_dim {spec.input_dim}"
        )
    if spec.is_classifier:
        if batch.targets.dtype != np.int64:
            raise DimensionError(f"{spec.kind} expects integer class labels")
        if batch.targets.size and (batch.targets.min() < 0 or batch.targets.max() >= spec.output_dim):
            raise DimensionError("class label outside [0, output_dim)")
    else:
        if batch.targets.dtype != np.float64 or batch.targets.shape[1] != spec.output_dim:
            raise DimensionError("regression targets must be a float (n, output_dim) matrix")
    return w


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Deterministic initial parameters, entries uniform in [-0.1, 0.1]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.1, 0.1, spec.param_count)


def loss(spec: ModelSpec, params: ParamVector, batch: Batch) -> float:
    """Mean loss over the batch, floored at LOSS_FLOOR."""
    w = _check(spec, params, batch)
    if spec.kind == "linreg":
        raw = _kernels.impl.linreg_loss(w, batch.inputs, batch.targets)
    elif spec.kind == "logreg":
        raw = _kernels.impl.logreg_loss(w, batch.inputs, batch.targets)
    else:
        raw = _kernels.impl.mlp_loss(w, batch.inputs, batch.targets, spec.hidden_dim)
    if not np.isfinite(raw):
        raise NumericError(f"loss is not finite ({raw!r})")
    return max(float(raw), LOSS_FLOOR)


def gradient(spec: ModelSpec, params: ParamVector, batch: Batch) -> ParamVector:
    """Analytic gradient of the mean loss, same layout as params."""
    w = _check(spec, params, batch)
    if spec.kind == "linreg":
        g = _kernels.impl.linreg_grad(w, batch.inputs, batch.targets)
    elif spec.kind == "logreg":
        g = _kernels.impl.logreg_grad(w, batch.inputs, batch.targets)
    else:
        g = _kernels.impl.mlp_grad(w, batch.inputs, batch.targets, spec.hidden_dim)
    if not np.isfinite(g).all():
        raise NumericError("gradient contains non-finite entries")
    return g


def local_train(
    spec: ModelSpec,
    start: ParamVector,
    data: Batch,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> tuple[ParamVector, float]:
    """Plain minibatch SGD with per-epoch shuffling.

    Returns the trained parameters and the mean loss over the full *data*
    batch at those parameters.  Deterministic for fixed arguments.

    Raises:
        NumericError: if the parameters diverge to non-finite values.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if not lr >= 0.0:
        raise ConfigError("lr must be non-negative")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    w = np.array(_check(spec, start, data), copy=True)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        perm = np.ascontiguousarray(rng.permutation(data.n), dtype=np.int64)
        if spec.kind == "linreg":
            _kernels.impl.linreg_sgd_epoch(w, data.inputs, data.targets, perm, lr, batch_size)
        elif spec.kind == "logreg":
            _kernels.impl.logreg_sgd_epoch(w, data.inputs, data.targets, perm, lr, batch_size)
        else:
            _kernels.impl.mlp_sgd_epoch(
                w, data.inputs, data.targets, perm, lr, batch_size, spec.hidden_dim
            )
        if not np.isfinite(w).all():
            raise NumericError(
                f"{spec.kind} training diverged to non-finite parameters (lr={lr})"
            )
    return w, loss(spec, w, data)


def evaluate(spec: ModelSpec, params: ParamVector, batch: Batch) -> tuple[float, float | None]:
    """Loss plus accuracy (classifiers only; None for regression)."""
    val_loss = loss(spec, params, batch)
    if not spec.is_classifier:
        return val_loss, None
    w = _check(spec, params, batch)
    d, c = spec.input_dim, spec.output_dim
    if spec.kind == "logreg":
        logits = batch.inputs @ w[: d * c].reshape(d, c) + w[d * c :]
    else:
        h = spec.hidden_dim
        o1, o2, o3 = d * h, d * h + h, d * h + h + h * c
        hid = np.tanh(batch.inputs @ w[:o1].reshape(d, h) + w[o1:o2])
        logits = hid @ w[o2:o3].reshape(h, c) + w[o3:]
    acc = float(np.mean(np.argmax(logits, axis=1) == batch.targets))
    return val_loss, acc
