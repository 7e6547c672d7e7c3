"""Subnetwork construction and aggregation.

Masks select hidden neurons per layer; three kinds are supported: nested
prefix masks ("width"), per-round random subsets ("dropout"), and circular
windows that advance one slot per round ("rolling"). Extraction slices the
global model down to a mask; aggregation merges trained subnetworks back by
averaging each parameter over the clients whose mask covers it, leaving
uncovered parameters at their previous global values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import Arch, Model

MASK_KINDS = ("width", "dropout", "rolling")


@dataclass(frozen=True)
class LevelSpec:
    """Size-level grid: `levels` levels, hidden widths shrunk by `shrink`
    per level. Level 1 is the full model, level `levels` the smallest."""

    levels: int = 5
    shrink: float = 0.5

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not (0.0 < self.shrink <= 1.0):
            raise ValueError("shrink ratio must be in (0, 1]")

    def kept_width(self, full_width: int, level: int) -> int:
        """ceil(h * shrink^(level-1)); always >= 1 for full_width >= 1."""
        if not 1 <= level <= self.levels:
            raise ValueError(f"level {level} out of range [1, {self.levels}]")
        return math.ceil(full_width * self.shrink ** (level - 1))


@dataclass(frozen=True)
class Mask:
    """Kept hidden-neuron indices per hidden layer, sorted ascending.

    Input and output dimensions are never masked. `layer_widths` records the
    full architecture the mask was built against.
    """

    layer_widths: tuple[int, ...]
    kept: tuple[tuple[int, ...], ...]
    level: int
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        hidden = self.layer_widths[1:-1]
        if len(self.kept) != len(hidden):
            raise ValueError("mask needs one kept-index set per hidden layer")
        for layer, (indices, width) in enumerate(zip(self.kept, hidden)):
            if len(indices) == 0:
                raise ValueError(f"hidden layer {layer} keeps no neurons")
            if list(indices) != sorted(set(indices)):
                raise ValueError(f"kept indices for hidden layer {layer} must be sorted and unique")
            if indices[0] < 0 or indices[-1] >= width:
                raise ValueError(f"kept indices for hidden layer {layer} out of range [0, {width})")

    def effective_widths(self) -> tuple[int, ...]:
        """Widths of the subnetwork this mask induces."""
        return (
            self.layer_widths[0],
            *(len(k) for k in self.kept),
            self.layer_widths[-1],
        )

    def row_indices(self, layer: int) -> np.ndarray:
        """Kept output-side indices of weight layer `layer` (all, for the last)."""
        if layer == len(self.layer_widths) - 2:
            return np.arange(self.layer_widths[-1])
        return np.asarray(self.kept[layer], dtype=np.intp)

    def col_indices(self, layer: int) -> np.ndarray:
        """Kept input-side indices of weight layer `layer` (all, for the first)."""
        if layer == 0:
            return np.arange(self.layer_widths[0])
        return np.asarray(self.kept[layer - 1], dtype=np.intp)


def _kept_sizes(arch: Arch, level: int, spec: LevelSpec) -> list[int]:
    return [spec.kept_width(h, level) for h in arch.hidden_widths]


def width_mask(arch: Arch, level: int, spec: LevelSpec) -> Mask:
    """Nested prefix mask: hidden layer l keeps neurons {0..k-1} with
    k = ceil(h_l * s^(level-1)), so mask(level+1) is a subset of mask(level)."""
    kept = tuple(tuple(range(k)) for k in _kept_sizes(arch, level, spec))
    return Mask(arch.layer_widths, kept, level, "width")


def dropout_mask(arch: Arch, level: int, spec: LevelSpec, rng: np.random.Generator) -> Mask:
    """Uniformly random kept subset of the same per-layer sizes as width_mask.

    Draw a fresh mask per round per client; deterministic given the rng state.
    """
    kept = []
    for h, k in zip(arch.hidden_widths, _kept_sizes(arch, level, spec)):
        chosen = rng.choice(h, size=k, replace=False)
        kept.append(tuple(int(i) for i in np.sort(chosen)))
    return Mask(arch.layer_widths, tuple(kept), level, "dropout")


def rolling_mask(arch: Arch, level: int, spec: LevelSpec, round_idx: int) -> Mask:
    """Circular window of the same per-layer sizes, starting at offset
    (round_idx mod h) and wrapping around."""
    if round_idx < 0:
        raise ValueError("round index must be nonnegative")
    kept = []
    for h, k in zip(arch.hidden_widths, _kept_sizes(arch, level, spec)):
        start = round_idx % h
        window = [(start + j) % h for j in range(k)]
        kept.append(tuple(sorted(window)))
    return Mask(arch.layer_widths, tuple(kept), level, "rolling")


def _check_congruent(model: Model, mask: Mask) -> None:
    if model.arch.layer_widths != mask.layer_widths:
        raise ValueError(
            f"mask built for widths {mask.layer_widths} does not match model widths "
            f"{model.arch.layer_widths}"
        )


def extract(global_model: Model, mask: Mask) -> Model:
    """Slice the global model down to the mask's subnetwork.

    Weight layer l keeps rows at the kept output-side indices and columns at
    the kept input-side indices; biases follow the output side.
    """
    _check_congruent(global_model, mask)
    sub_arch = Arch(mask.effective_widths(), global_model.arch.activation)
    weights, biases = [], []
    for l in range(global_model.arch.num_layers):
        rows = mask.row_indices(l)
        cols = mask.col_indices(l)
        weights.append(global_model.weights[l][np.ix_(rows, cols)].copy())
        biases.append(global_model.biases[l][rows].copy())
    return Model(sub_arch, weights, biases)


def embed(sub: Model, mask: Mask) -> Model:
    """Scatter a subnetwork back into a zero model of the mask's full widths."""
    if sub.arch.layer_widths != mask.effective_widths():
        raise ValueError("submodel widths do not match the mask")
    widths = mask.layer_widths
    arch = Arch(widths, sub.arch.activation)
    weights = [np.zeros((widths[l + 1], widths[l])) for l in range(len(widths) - 1)]
    biases = [np.zeros(widths[l + 1]) for l in range(len(widths) - 1)]
    for l in range(len(widths) - 1):
        rows = mask.row_indices(l)
        cols = mask.col_indices(l)
        weights[l][np.ix_(rows, cols)] = sub.weights[l]
        biases[l][rows] = sub.biases[l]
    return Model(arch, weights, biases)


def aggregate(global_model: Model, updates: Sequence[tuple[Mask, Model]]) -> Model:
    """Coverage-averaged aggregation of trained subnetworks.

    Every scalar parameter covered by at least one update becomes the
    arithmetic mean of the covering updates' values, accumulated in the given
    (ascending client id) order; uncovered parameters keep their previous
    global values. A weight is covered when both its endpoints are kept, a
    bias when its output-side neuron is kept.
    """
    arch = global_model.arch
    n = arch.num_layers
    w_sum = [np.zeros_like(w) for w in global_model.weights]
    w_cnt = [np.zeros(w.shape, dtype=np.int64) for w in global_model.weights]
    b_sum = [np.zeros_like(b) for b in global_model.biases]
    b_cnt = [np.zeros(b.shape, dtype=np.int64) for b in global_model.biases]

    for mask, sub in updates:
        _check_congruent(global_model, mask)
        if sub.arch.layer_widths != mask.effective_widths():
            raise ValueError("update submodel widths do not match its mask")
        for l in range(n):
            rows = mask.row_indices(l)
            cols = mask.col_indices(l)
            grid = np.ix_(rows, cols)
            w_sum[l][grid] += sub.weights[l]
            w_cnt[l][grid] += 1
            b_sum[l][rows] += sub.biases[l]
            b_cnt[l][rows] += 1

    weights, biases = [], []
    for l in range(n):
        w = global_model.weights[l].copy()
        covered = w_cnt[l] > 0
        w[covered] = w_sum[l][covered] / w_cnt[l][covered]
        weights.append(w)
        b = global_model.biases[l].copy()
        covered = b_cnt[l] > 0
        b[covered] = b_sum[l][covered] / b_cnt[l][covered]
        biases.append(b)
    return Model(arch, weights, biases)
