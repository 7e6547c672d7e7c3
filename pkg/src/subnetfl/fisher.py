"""Per-batch diagonal Fisher traces, per-client sliding-window history, and
the training-efficiency utility.

The trace of the Fisher information matrix for one batch is the mean over
examples of the squared L2 norm of the per-example loss gradient, with the
label either sampled from the model's predictive distribution ("sampled"),
summed exactly over all classes ("exact"), or taken from the data
("empirical").
"""

from __future__ import annotations

from collections import deque
from enum import Enum

import numpy as np

from .nn import Batch, Model, _activate_grad, forward_states, softmax


class FisherMode(str, Enum):
    SAMPLED = "sampled"
    EXACT = "exact"
    EMPIRICAL = "empirical"


def _per_example_sq_grad_norms(
    model: Model,
    acts: list[np.ndarray],
    pres: list[np.ndarray],
    labels: np.ndarray,
) -> np.ndarray:
    """Squared L2 norm of each example's loss gradient over all parameters.

    Uses the rank-one structure of dense-layer gradients: for example i the
    layer-l weight gradient is the outer product delta_l[i] (x) a_{l-1}[i],
    so its squared Frobenius norm is |delta_l[i]|^2 * |a_{l-1}[i]|^2 and the
    bias term adds |delta_l[i]|^2. No per-example gradient is materialized.
    """
    batch_size = labels.shape[0]
    delta = softmax(pres[-1])
    delta[np.arange(batch_size), labels] -= 1.0
    totals = np.zeros(batch_size)
    for l in range(model.arch.num_layers - 1, -1, -1):
        delta_sq = np.einsum("ij,ij->i", delta, delta)
        act_sq = np.einsum("ij,ij->i", acts[l], acts[l])
        totals += delta_sq * (1.0 + act_sq)
        if l > 0:
            delta = (delta @ model.weights[l]) * _activate_grad(pres[l - 1], model.arch.activation)
    return totals


def batch_fisher_trace(
    model: Model,
    batch: Batch,
    mode: FisherMode = FisherMode.SAMPLED,
    rng: np.random.Generator | None = None,
) -> float:
    """Fisher trace of one batch on the given (sub)model; nonnegative.

    sampled: one label draw per example from softmax(logits) (requires rng).
    exact:   full expectation over labels, sum_c p_c * |grad(x, c)|^2.
    empirical: the true labels.
    """
    mode = FisherMode(mode)
    acts, pres = forward_states(model, batch.inputs)
    probs = softmax(pres[-1])
    if mode is FisherMode.EMPIRICAL:
        labels = batch.labels
        if np.any(labels >= model.arch.output_dim):
            raise ValueError("labels exceed the model's class count")
        norms = _per_example_sq_grad_norms(model, acts, pres, labels)
        return float(norms.mean())
    if mode is FisherMode.SAMPLED:
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        cdf = np.cumsum(probs, axis=1)
        draws = rng.random(batch.size)
        labels = np.minimum(
            (draws[:, None] >= cdf).sum(axis=1), model.arch.output_dim - 1
        )
        norms = _per_example_sq_grad_norms(model, acts, pres, labels)
        return float(norms.mean())
    # exact: enumerate every class, weight by its predictive probability
    expected = np.zeros(batch.size)
    for c in range(model.arch.output_dim):
        labels = np.full(batch.size, c, dtype=np.int64)
        norms = _per_example_sq_grad_norms(model, acts, pres, labels)
        expected += probs[:, c] * norms
    return float(expected.mean())


class FisherHistory:
    """Ring buffer of per-round Fisher trace vectors for one client.

    Holds at most `max_rounds` entries (default: the window size). Each entry
    is the vector of per-batch traces for one round; all vectors must share
    the client's fixed batch count so the per-batch index stays stable.
    """

    def __init__(self, window: int, max_rounds: int | None = None):
        if window < 1:
            raise ValueError("window size must be >= 1")
        self.window = window
        self._entries: deque[tuple[int, np.ndarray]] = deque(maxlen=max_rounds or window)
        self._batch_count: int | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def batch_count(self) -> int | None:
        return self._batch_count

    def record_round(self, round_idx: int, per_batch_traces) -> None:
        traces = np.asarray(per_batch_traces, dtype=np.float64)
        if traces.ndim != 1 or traces.size == 0:
            raise ValueError("per-batch traces must be a nonempty vector")
        if np.any(traces < 0.0):
            raise ValueError("Fisher traces must be nonnegative")
        if self._batch_count is None:
            self._batch_count = traces.size
        elif traces.size != self._batch_count:
            raise ValueError(
                f"trace vector length {traces.size} != client batch count {self._batch_count}"
            )
        self._entries.append((round_idx, traces.copy()))

    def traces_at(self, round_idx: int) -> np.ndarray | None:
        for r, traces in self._entries:
            if r == round_idx:
                return traces.copy()
        return None

    def window_traces(self, round_idx: int) -> np.ndarray:
        """Rows of traces for the rounds round_idx-1 .. round_idx-window that
        exist in the buffer; shape (available, batch_count)."""
        rows = [
            traces
            for r, traces in self._entries
            if round_idx - self.window <= r <= round_idx - 1
        ]
        if not rows:
            return np.empty((0, self._batch_count or 0))
        return np.stack(rows)


def training_efficiency(history: FisherHistory, round_idx: int) -> float:
    """Windowed training-efficiency utility.

    TE = B * sqrt( (1/B) * sum_k sum_d FI_{r-d}(k)^2 / n_d ) where B is the
    client's batch count and n_d the number of window rounds actually
    recorded (early rounds average over what exists). TE is 0 with no
    history.
    """
    window = history.window_traces(round_idx)
    if window.size == 0:
        return 0.0
    batch_count = window.shape[1]
    mean_sq = float(np.mean(window**2))
    return batch_count * float(np.sqrt(mean_sq))
