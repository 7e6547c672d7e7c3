"""Adaptive subnetwork selection: system efficiency, combined utility,
normalization, level quantization, and capability capping.

The pipeline per client per round is
    util = TE * SE^beta
    u_n  = min(util / threshold, 1)
    level = quantize(u_n) capped at the client's capability level,
where SE compares the developer-preferred round duration against the
transmission-plus-compute delay of the unit (smallest) subnetwork.
"""

from __future__ import annotations

from dataclasses import dataclass

from .fisher import FisherHistory, training_efficiency
from .subnet import LevelSpec


@dataclass(frozen=True)
class SchedulerParams:
    """beta: efficiency trade-off exponent; round_budget_s: preferred round
    duration T; utility_threshold: utility mapped to u_n = 1."""

    beta: float = 2.0
    round_budget_s: float = 60.0
    utility_threshold: float = 30.0
    spec: LevelSpec = LevelSpec(5, 0.5)

    def __post_init__(self) -> None:
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.round_budget_s <= 0.0:
            raise ValueError("round budget must be positive")
        if self.utility_threshold <= 0.0:
            raise ValueError("utility threshold must be positive")


@dataclass(frozen=True)
class Selection:
    """One client's choice for one round, with the pipeline values logged."""

    client_id: int
    level: int
    util: float
    u_n: float
    se: float
    te: float


def system_efficiency(unit_tx_seconds: float, unit_compute_seconds: float, round_budget_s: float) -> float:
    """SE = T / (T_tx + T_compute) for the unit subnetwork."""
    if unit_tx_seconds <= 0.0 or unit_compute_seconds <= 0.0:
        raise ValueError("unit delays must be positive")
    if round_budget_s <= 0.0:
        raise ValueError("round budget must be positive")
    return round_budget_s / (unit_tx_seconds + unit_compute_seconds)


def selection_utility(te: float, se: float, beta: float) -> float:
    """Util = TE * SE^beta."""
    return te * se**beta


def normalize(util: float, threshold: float) -> float:
    """Piecewise-linear squash of the utility into [0, 1]."""
    if threshold <= 0.0:
        raise ValueError("utility threshold must be positive")
    return min(util / threshold, 1.0)


def quantize(u_n: float, levels: int) -> int:
    """Map a normalized utility to a size level in [1, levels].

    Level 1 for u_n >= (P-1)/P, level p for u_n in [(P-p)/P, (P-p+1)/P),
    level P for u_n < 1/P.
    """
    if not 0.0 <= u_n <= 1.0:
        raise ValueError(f"normalized utility {u_n} outside [0, 1]")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if u_n >= (levels - 1) / levels:
        return 1
    for p in range(2, levels):
        if (levels - p) / levels <= u_n < (levels - p + 1) / levels:
            return p
    return levels


def cap(level: int, max_level: int, levels: int) -> int:
    """Clamp a proposed level to the client's capability cap.

    Higher index means smaller subnetwork, so the cap is a lower bound on the
    index: the result is the smaller of the two subnetworks.
    """
    for value, name in ((level, "level"), (max_level, "max_level")):
        if not 1 <= value <= levels:
            raise ValueError(f"{name} {value} out of range [1, {levels}]")
    return max(level, max_level)


def select(
    client_id: int,
    history: FisherHistory,
    round_idx: int,
    unit_tx_seconds: float,
    unit_compute_seconds: float,
    max_level: int,
    params: SchedulerParams,
    bootstrap_level: int | None = None,
    te_override: float | None = None,
    se_override: float | None = None,
) -> Selection:
    """Full selection pipeline for one client at one round.

    With no recorded Fisher history (the bootstrap round) the configured
    bootstrap level is used, defaulting to the client's capability level; the
    logged u_n is 1 and the utility 0 in that case. te_override / se_override
    pin one side of the utility for the single-criterion policy variants.
    """
    levels = params.spec.levels
    if len(history) == 0 and te_override is None:
        level = bootstrap_level if bootstrap_level is not None else max_level
        level = cap(level, max_level, levels)
        if se_override is None:
            se = system_efficiency(unit_tx_seconds, unit_compute_seconds, params.round_budget_s)
        else:
            se = se_override
        return Selection(client_id, level, util=0.0, u_n=1.0, se=se, te=0.0)

    te = training_efficiency(history, round_idx) if te_override is None else te_override
    if se_override is None:
        se = system_efficiency(unit_tx_seconds, unit_compute_seconds, params.round_budget_s)
    else:
        se = se_override
    util = selection_utility(te, se, params.beta)
    u_n = normalize(util, params.utility_threshold)
    level = cap(quantize(u_n, levels), max_level, levels)
    return Selection(client_id, level, util=util, u_n=u_n, se=se, te=te)
