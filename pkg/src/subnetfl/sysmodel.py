"""Simulated device fleet, per-round system dynamics, and delay accounting.

The fleet has five capability tiers (A fastest .. E slowest). Each client's
link rate follows a first-order Markov chain over the configured rate set,
scaled by a per-round fading factor; the available compute fraction follows
an independent Markov chain. Delays use a 32-bit wire encoding for payload
sizing and the 6-FLOPs-per-weight training cost model from the network
engine. Round latency is the synchronous maximum over participating clients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import count_params, flops_per_example

TIERS = ("A", "B", "C", "D", "E")

WIRE_BITS_PER_PARAM = 32


@dataclass(frozen=True)
class DeviceProfile:
    client_id: int
    tier: str
    compute_flops: float
    max_level: int

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")
        if self.compute_flops <= 0.0:
            raise ValueError("compute speed must be positive")
        if self.max_level < 1:
            raise ValueError("capability level must be >= 1")


@dataclass(frozen=True)
class FleetConfig:
    """Per-tier device counts, speeds, and capability caps.

    Speeds are `unit_speed_flops * speed_ratios[tier]`; ratios must be
    nonincreasing from tier A to E and caps nondecreasing.
    """

    per_tier: int = 4
    unit_speed_flops: float = 3e8
    speed_ratios: tuple[float, ...] = (16.0, 8.0, 4.0, 2.0, 1.0)
    max_levels: tuple[int, ...] = (1, 2, 3, 4, 5)

    def __post_init__(self) -> None:
        if self.per_tier < 1:
            raise ValueError("per_tier must be >= 1")
        if self.unit_speed_flops <= 0.0:
            raise ValueError("unit speed must be positive")
        if len(self.speed_ratios) != len(TIERS) or len(self.max_levels) != len(TIERS):
            raise ValueError(f"speed_ratios and max_levels need one entry per tier ({len(TIERS)})")
        if list(self.speed_ratios) != sorted(self.speed_ratios, reverse=True):
            raise ValueError("tier speeds must be nonincreasing from A to E")
        if list(self.max_levels) != sorted(self.max_levels):
            raise ValueError("tier capability levels must be nondecreasing from A to E")


def make_fleet(config: FleetConfig = FleetConfig()) -> list[DeviceProfile]:
    """Build the device list: `per_tier` devices per tier, ids ascending A..E."""
    fleet = []
    client_id = 0
    for tier, ratio, max_level in zip(TIERS, config.speed_ratios, config.max_levels):
        for _ in range(config.per_tier):
            fleet.append(
                DeviceProfile(client_id, tier, config.unit_speed_flops * ratio, max_level)
            )
            client_id += 1
    if not fleet:
        raise ValueError("fleet is empty")
    return fleet


@dataclass(frozen=True)
class DynamicsConfig:
    """Markov-chain parameters for per-round link and compute conditions."""

    link_rates_bps: tuple[float, ...] = (80e6, 20e6, 10e6)
    link_stay_prob: float = 0.8
    compute_multipliers: tuple[float, ...] = (1.0, 0.6, 0.3)
    compute_stay_prob: float = 0.8
    fading_low: float = 0.7
    fading_high: float = 1.0
    initial_link: int | None = None
    initial_compute: int | None = None

    def __post_init__(self) -> None:
        if not self.link_rates_bps or any(r <= 0 for r in self.link_rates_bps):
            raise ValueError("link rates must be positive")
        if not self.compute_multipliers or any(not 0 < m <= 1 for m in self.compute_multipliers):
            raise ValueError("compute multipliers must be in (0, 1]")
        for p, name in ((self.link_stay_prob, "link"), (self.compute_stay_prob, "compute")):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} stay probability must be in [0, 1]")
        if not 0.0 < self.fading_low <= self.fading_high:
            raise ValueError("fading band must satisfy 0 < low <= high")


@dataclass
class DynamicsTrace:
    """Effective link rate (bits/s, fading included) and compute multiplier
    per (round, client)."""

    link_bps: np.ndarray
    compute_multiplier: np.ndarray
    source: str = "markov"

    def __post_init__(self) -> None:
        if self.link_bps.shape != self.compute_multiplier.shape or self.link_bps.ndim != 2:
            raise ValueError("trace arrays must share a (rounds x clients) shape")
        if np.any(self.link_bps <= 0) or np.any(self.compute_multiplier <= 0):
            raise ValueError("trace values must be positive")

    @property
    def rounds(self) -> int:
        return self.link_bps.shape[0]

    @property
    def clients(self) -> int:
        return self.link_bps.shape[1]


def _markov_states(
    rng: np.random.Generator, rounds: int, n_states: int, stay_prob: float, initial: int | None
) -> np.ndarray:
    states = np.empty(rounds, dtype=np.intp)
    state = int(rng.integers(n_states)) if initial is None else initial
    for r in range(rounds):
        states[r] = state
        if n_states > 1 and rng.random() >= stay_prob:
            # jump uniformly to one of the other states
            jump = int(rng.integers(n_states - 1))
            state = jump if jump < state else jump + 1
    return states


def gen_trace(
    fleet: list[DeviceProfile],
    rounds: int,
    seed: int,
    config: DynamicsConfig = DynamicsConfig(),
) -> DynamicsTrace:
    """Generate Markov system dynamics; pure function of (fleet size, config, seed)."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    n = len(fleet)
    link = np.empty((rounds, n))
    mult = np.empty((rounds, n))
    rates = np.asarray(config.link_rates_bps)
    mults = np.asarray(config.compute_multipliers)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        link_states = _markov_states(rng, rounds, len(rates), config.link_stay_prob, config.initial_link)
        comp_states = _markov_states(
            rng, rounds, len(mults), config.compute_stay_prob, config.initial_compute
        )
        fading = rng.uniform(config.fading_low, config.fading_high, size=rounds)
        link[:, i] = rates[link_states] * fading
        mult[:, i] = mults[comp_states]
    return DynamicsTrace(link, mult, source="markov")


def write_trace_csv(trace: DynamicsTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "client", "link_bps", "compute_multiplier"])
        for r in range(trace.rounds):
            for i in range(trace.clients):
                writer.writerow(
                    [r, i, repr(float(trace.link_bps[r, i])), repr(float(trace.compute_multiplier[r, i]))]
                )


def read_trace_csv(path: str | Path) -> DynamicsTrace:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        expected = ["round", "client", "link_bps", "compute_multiplier"]
        if reader.fieldnames != expected:
            raise ValueError(f"trace file {path}: header {reader.fieldnames} != {expected}")
        for row in reader:
            rows.append(
                (int(row["round"]), int(row["client"]), float(row["link_bps"]), float(row["compute_multiplier"]))
            )
    if not rows:
        raise ValueError(f"trace file {path} has no data rows")
    rounds = max(r for r, _, _, _ in rows) + 1
    clients = max(c for _, c, _, _ in rows) + 1
    link = np.full((rounds, clients), np.nan)
    mult = np.full((rounds, clients), np.nan)
    for r, c, rate, m in rows:
        link[r, c] = rate
        mult[r, c] = m
    if np.any(np.isnan(link)) or np.any(np.isnan(mult)):
        raise ValueError(f"trace file {path} is missing (round, client) entries")
    return DynamicsTrace(link, mult, source="file")


def tx_delay(mask_or_arch, rate_bits_per_s: float, bits_per_param: int = WIRE_BITS_PER_PARAM) -> float:
    """Upload delay of a (sub)model's parameters at the given rate."""
    if rate_bits_per_s <= 0.0:
        raise ValueError("link rate must be positive")
    return bits_per_param * count_params(mask_or_arch) / rate_bits_per_s


def compute_delay(
    mask_or_arch,
    local_steps: int,
    batch_size: int,
    profile: DeviceProfile,
    multiplier: float,
) -> float:
    """Local training delay: steps * batch * FLOPs/example over effective speed."""
    if local_steps < 1 or batch_size < 1:
        raise ValueError("local steps and batch size must be >= 1")
    if multiplier <= 0.0:
        raise ValueError("compute multiplier must be positive")
    speed = profile.compute_flops * multiplier
    return local_steps * batch_size * flops_per_example(mask_or_arch) / speed


def round_latency(client_latencies) -> float:
    """Synchronous round latency: the slowest participating client."""
    latencies = list(client_latencies)
    if not latencies:
        raise ValueError("round latency needs at least one participating client")
    return max(latencies)
