"""Minimal dense-network engine: parameter storage, forward/backward, SGD,
evaluation, and cost accounting (parameter and FLOP counts).

All math is 64-bit. Every function is pure: models go in, new models come
out. The training cost model is fixed at 2 FLOPs per weight for the forward
pass and 4 per weight for the backward pass (6 per weight per example).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("relu", "tanh")

# FLOPs per weight per training example: 2 forward + 4 backward.
TRAIN_FLOPS_PER_WEIGHT = 6


class NumericError(RuntimeError):
    """Raised when a forward/backward pass produces non-finite values."""


@dataclass(frozen=True)
class Arch:
    """Layer widths of a dense network: (input dim, hidden..., class count).

    A width list of length 2 describes a plain softmax regression with no
    hidden layer; masks only ever apply to hidden widths.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError(f"arch needs at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return self.layer_widths[1:-1]

    @property
    def num_layers(self) -> int:
        """Number of weight layers."""
        return len(self.layer_widths) - 1


@dataclass
class Batch:
    """A minibatch: inputs (B x input_dim) and integer labels in [0, K)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-d (batch x features), got shape {self.inputs.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError("labels must be a vector with one entry per input row")
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one example")
        if np.any(self.labels < 0):
            raise ValueError("labels must be nonnegative class indices")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Model:
    """Per-layer weight matrices (out x in) and bias vectors, float64."""

    arch: Arch
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        widths = self.arch.layer_widths
        if len(self.weights) != self.arch.num_layers or len(self.biases) != self.arch.num_layers:
            raise ValueError("model must have one weight matrix and bias vector per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (widths[l + 1], widths[l])
            if w.shape != expect:
                raise ValueError(f"layer {l} weight shape {w.shape} != expected {expect}")
            if b.shape != (widths[l + 1],):
                raise ValueError(f"layer {l} bias shape {b.shape} != expected ({widths[l + 1]},)")

    def copy(self) -> Model:
        return Model(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def allclose(self, other: Model, tol: float = 0.0) -> bool:
        if self.arch.layer_widths != other.arch.layer_widths:
            return False
        for wa, wb in zip(self.weights + self.biases, other.weights + other.biases):
            if not np.allclose(wa, wb, rtol=0.0, atol=tol):
                return False
        return True


@dataclass
class Gradients:
    """Loss gradients, shape-congruent with their model, plus the mean loss."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss: float


def init_model(arch: Arch, seed: int) -> Model:
    """Zero-mean scaled-uniform init: weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
    biases zero. Deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    widths = arch.layer_widths
    for l in range(arch.num_layers):
        fan_in = widths[l]
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(widths[l + 1], widths[l])))
        biases.append(np.zeros(widths[l + 1]))
    return Model(arch, weights, biases)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward_states(model: Model, inputs: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Run the forward pass keeping intermediates.

    Returns (activations, preactivations): activations[l] is the input to
    weight layer l (activations[0] is the raw input), preactivations[l] is
    z_l = a_l @ W_l.T + b_l. The logits are preactivations[-1].
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"inputs shape {inputs.shape} incompatible with input dim {model.arch.input_dim}"
        )
    acts = [inputs]
    pres = []
    a = inputs
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        pres.append(z)
        if l < model.arch.num_layers - 1:
            a = _activate(z, model.arch.activation)
            acts.append(a)
    return acts, pres


def forward(model: Model, batch: Batch) -> np.ndarray:
    """Logits (B x K) for a batch. Pure function of (model, batch)."""
    _, pres = forward_states(model, batch.inputs)
    return pres[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example softmax cross-entropy, computed via log-sum-exp."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return log_z - shifted[np.arange(len(labels)), labels]


def loss_and_grad(model: Model, batch: Batch) -> Gradients:
    """Mean softmax cross-entropy over the batch and its exact backprop gradients.

    Raises NumericError if any intermediate value is non-finite.
    """
    if np.any(batch.labels >= model.arch.output_dim):
        raise ValueError("labels exceed the model's class count")
    acts, pres = forward_states(model, batch.inputs)
    logits = pres[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    batch_size = batch.size
    losses = _cross_entropy(logits, batch.labels)
    loss = float(losses.mean())

    # Backprop of the mean loss: delta is dLoss/dz for the current layer.
    delta = softmax(logits)
    delta[np.arange(batch_size), batch.labels] -= 1.0
    delta /= batch_size

    grad_w: list[np.ndarray] = [None] * model.arch.num_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * model.arch.num_layers  # type: ignore[list-item]
    for l in range(model.arch.num_layers - 1, -1, -1):
        grad_w[l] = delta.T @ acts[l]
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * _activate_grad(pres[l - 1], model.arch.activation)

    if not np.isfinite(loss) or any(
        not np.all(np.isfinite(g)) for g in grad_w + grad_b
    ):
        raise NumericError("non-finite loss or gradients in backward pass")
    return Gradients(grad_w, grad_b, loss)


def sgd_step(model: Model, grads: Gradients, lr: float) -> Model:
    """W <- W - lr * grad. Returns an updated copy; the input is untouched."""
    if lr < 0.0:
        raise ValueError("learning rate must be nonnegative")
    weights = [w - lr * g for w, g in zip(model.weights, grads.weights)]
    biases = [b - lr * g for b, g in zip(model.biases, grads.biases)]
    return Model(model.arch, weights, biases)


def evaluate(model: Model, dataset) -> tuple[float, float]:
    """(accuracy, mean loss) over a dataset with .inputs and .labels.

    Argmax ties break toward the lowest class index.
    """
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if inputs.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _, pres = forward_states(model, inputs)
    logits = pres[-1]
    predictions = np.argmax(logits, axis=1)  # np.argmax picks the lowest index on ties
    accuracy = float(np.mean(predictions == labels))
    loss = float(_cross_entropy(logits, labels).mean())
    return accuracy, loss


def _widths_of(arch_or_mask) -> tuple[int, ...]:
    """Effective layer widths of an Arch, a Mask, or a raw width sequence."""
    if isinstance(arch_or_mask, Arch):
        return arch_or_mask.layer_widths
    eff = getattr(arch_or_mask, "effective_widths", None)
    if callable(eff):
        return tuple(eff())
    return tuple(int(w) for w in arch_or_mask)


def count_params(arch_or_mask) -> int:
    """Total parameter count: sum over layers of in*out + out."""
    widths = _widths_of(arch_or_mask)
    return sum(widths[l] * widths[l + 1] + widths[l + 1] for l in range(len(widths) - 1))


def flops_per_example(arch_or_mask) -> int:
    """Training FLOPs per example under the fixed 6-FLOPs-per-weight cost model."""
    widths = _widths_of(arch_or_mask)
    weight_count = sum(widths[l] * widths[l + 1] for l in range(len(widths) - 1))
    return TRAIN_FLOPS_PER_WEIGHT * weight_count
