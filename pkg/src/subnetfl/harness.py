"""Experiment orchestration: the synchronous federated round loop, the fixed
and adaptive subnetwork strategies, metrics logging, strategy comparison, and
config file round-tripping.

Every stochastic choice flows from a named seed (model init, trace,
partition, batching, masks, Fisher sampling, data synthesis, participation),
so a run is bitwise reproducible and its metrics CSV byte-identical across
repeats.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import data as datasets
from .fisher import FisherHistory, FisherMode, batch_fisher_trace, training_efficiency
from .nn import Arch, Batch, Model, NumericError, evaluate, init_model, loss_and_grad, sgd_step
from .scheduler import SchedulerParams, Selection, normalize, select, selection_utility, system_efficiency
from .subnet import LevelSpec, Mask, aggregate, dropout_mask, extract, rolling_mask, width_mask
from .sysmodel import (
    DeviceProfile,
    DynamicsConfig,
    DynamicsTrace,
    FleetConfig,
    compute_delay,
    gen_trace,
    make_fleet,
    read_trace_csv,
    round_latency,
    tx_delay,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message lists every problem."""


class Strategy(str, Enum):
    FEDAVG = "fedavg"
    HETEROFL = "heterofl"
    FEDDROPOUT = "feddropout"
    FEDROLEX = "fedrolex"
    WHALE = "whale"
    WHALE_DROPOUT = "whale_dropout"
    WHALE_ROLEX = "whale_rolex"
    WHALE_SE_ONLY = "whale_se_only"
    WHALE_TE_ONLY = "whale_te_only"


ADAPTIVE_STRATEGIES = frozenset(
    {
        Strategy.WHALE,
        Strategy.WHALE_DROPOUT,
        Strategy.WHALE_ROLEX,
        Strategy.WHALE_SE_ONLY,
        Strategy.WHALE_TE_ONLY,
    }
)

_DROPOUT_STRATEGIES = frozenset({Strategy.FEDDROPOUT, Strategy.WHALE_DROPOUT})
_ROLLING_STRATEGIES = frozenset({Strategy.FEDROLEX, Strategy.WHALE_ROLEX})


@dataclass(frozen=True)
class Seeds:
    model: int = 1
    trace: int = 2
    partition: int = 3
    batching: int = 4
    masks: int = 5
    fisher: int = 6
    data: int = 7
    participation: int = 8


@dataclass(frozen=True)
class DataConfig:
    """What to train on: 'digits' (rendered digit images), 'blobs'
    (Gaussian clusters), or 'mnist' (IDX files under mnist_dir)."""

    kind: str = "digits"
    classes: int = 10
    per_class_train: int = 500
    per_class_test: int = 100
    dim: int = 32
    spread: float = 0.35
    mnist_dir: str = ""
    train_limit: int = 0
    test_limit: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: Strategy = Strategy.WHALE
    rounds: int = 300
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    target_accuracy: float | None = None
    eval_split: str = "test"
    arch_widths: tuple[int, ...] = (784, 128, 10)
    activation: str = "relu"
    levels: int = 5
    shrink: float = 0.5
    beta: float = 2.0
    round_budget_s: float = 60.0
    utility_threshold: float = 30.0
    calibrate_threshold: bool = False
    fisher_window: int = 10
    fisher_mode: FisherMode = FisherMode.SAMPLED
    bootstrap_level: int | None = None
    classes_per_client: int = 2
    include_downlink: bool = False
    reshuffle_per_epoch: bool = False
    participation: float = 1.0
    data: DataConfig = DataConfig()
    fleet: FleetConfig = FleetConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    trace_file: str = ""
    seeds: Seeds = Seeds()

    @property
    def clients(self) -> int:
        return self.fleet.per_tier * 5

    def level_spec(self) -> LevelSpec:
        return LevelSpec(self.levels, self.shrink)

    def arch(self) -> Arch:
        return Arch(self.arch_widths, self.activation)


def validate_config(config: ExperimentConfig) -> list[str]:
    """Collect every configuration problem; an empty list means valid."""
    errors: list[str] = []

    def check(cond: bool, message: str) -> None:
        if not cond:
            errors.append(message)

    check(isinstance(config.strategy, Strategy), f"unknown strategy {config.strategy!r}")
    check(config.rounds >= 1, f"rounds must be >= 1, got {config.rounds}")
    check(config.local_epochs >= 0, "local_epochs must be >= 0")
    if config.strategy in ADAPTIVE_STRATEGIES:
        check(config.local_epochs >= 1, "adaptive strategies need local_epochs >= 1")
    check(config.batch_size >= 1, "batch_size must be >= 1")
    check(config.learning_rate > 0.0, "learning_rate must be positive")
    if config.target_accuracy is not None:
        check(0.0 < config.target_accuracy <= 1.0, "target_accuracy must be in (0, 1]")
    check(config.eval_split in ("train", "test"), f"eval_split must be train or test, got {config.eval_split!r}")
    try:
        arch = config.arch()
        check(
            arch.output_dim == config.data.classes,
            f"arch output width {arch.output_dim} != class count {config.data.classes}",
        )
        if config.data.kind in ("digits", "mnist"):
            check(arch.input_dim == 784, f"{config.data.kind} data has 784 features, arch expects {arch.input_dim}")
        elif config.data.kind == "blobs":
            check(arch.input_dim == config.data.dim, "arch input width != blob dimension")
    except ValueError as exc:
        errors.append(str(exc))
    try:
        config.level_spec()
    except ValueError as exc:
        errors.append(str(exc))
    check(config.beta >= 0.0, "beta must be >= 0")
    check(config.round_budget_s > 0.0, "round_budget_s must be positive")
    check(config.utility_threshold > 0.0, "utility_threshold must be positive")
    check(config.fisher_window >= 1, "fisher_window must be >= 1")
    if config.bootstrap_level is not None:
        check(1 <= config.bootstrap_level <= config.levels, "bootstrap_level out of range")
    check(config.data.kind in ("digits", "blobs", "mnist"), f"unknown data kind {config.data.kind!r}")
    if config.data.kind == "mnist":
        check(bool(config.data.mnist_dir), "mnist data needs mnist_dir")
    check(0.0 < config.participation <= 1.0, "participation must be in (0, 1]")
    try:
        fleet = make_fleet(config.fleet)
        check(
            max(p.max_level for p in fleet) <= config.levels,
            "fleet capability levels exceed the configured level count",
        )
        clients = len(fleet)
        k = config.data.classes
        check(
            1 <= config.classes_per_client <= k,
            f"classes_per_client must be in [1, {k}]",
        )
        if (clients * config.classes_per_client) % k != 0:
            errors.append(
                f"infeasible partition: clients*classes_per_client = {clients * config.classes_per_client} "
                f"must be divisible by class count {k}"
            )
    except ValueError as exc:
        errors.append(str(exc))
    return errors


def build_datasets(config: ExperimentConfig) -> tuple[datasets.Dataset, datasets.Dataset]:
    """(train, eval) datasets per the data config and eval_split."""
    d = config.data
    if d.kind == "blobs":
        train = datasets.synth_blobs(d.classes, d.per_class_train, d.dim, d.spread, [config.seeds.data, 0])
        test = datasets.synth_blobs(d.classes, d.per_class_test, d.dim, d.spread, [config.seeds.data, 1])
    elif d.kind == "digits":
        train = datasets.synth_digits(d.per_class_train, [config.seeds.data, 0])
        test = datasets.synth_digits(d.per_class_test, [config.seeds.data, 1])
    else:
        train = datasets.load_mnist(d.mnist_dir, "train")
        test = datasets.load_mnist(d.mnist_dir, "test")
        if d.train_limit:
            train = datasets.Dataset(train.inputs[: d.train_limit], train.labels[: d.train_limit], 10)
        if d.test_limit:
            test = datasets.Dataset(test.inputs[: d.test_limit], test.labels[: d.test_limit], 10)
    return train, (train if config.eval_split == "train" else test)


@dataclass
class MetricsRow:
    round_idx: int
    cum_time_s: float
    round_latency_s: float
    test_acc: float
    test_loss: float
    mean_fi: float
    mean_level: float
    client_levels: list[int]
    client_latencies: list[float]
    client_utils: list[float]
    client_uns: list[float]
    client_ses: list[float]
    client_tes: list[float]


class MetricsLog:
    """Per-round metrics with a fixed, documented CSV column order."""

    def __init__(self, clients: int):
        self.clients = clients
        self.rows: list[MetricsRow] = []

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.cum_time_s < self.rows[-1].cum_time_s:
            raise ValueError("cumulative time must be nondecreasing")
        self.rows.append(row)

    def columns(self) -> list[str]:
        head = ["round", "cum_time_s", "round_latency_s", "test_acc", "test_loss", "mean_fi", "mean_level"]
        for i in range(self.clients):
            head += [
                f"client{i}_level",
                f"client{i}_latency_s",
                f"client{i}_util",
                f"client{i}_un",
                f"client{i}_se",
                f"client{i}_te",
            ]
        return head

    def to_csv(self) -> str:
        lines = [",".join(self.columns())]
        for row in self.rows:
            cells: list[str] = [
                str(row.round_idx),
                repr(float(row.cum_time_s)),
                repr(float(row.round_latency_s)),
                repr(float(row.test_acc)),
                repr(float(row.test_loss)),
                repr(float(row.mean_fi)),
                repr(float(row.mean_level)),
            ]
            for i in range(self.clients):
                cells.append(str(int(row.client_levels[i])))
                cells.append(repr(float(row.client_latencies[i])))
                cells.append(repr(float(row.client_utils[i])))
                cells.append(repr(float(row.client_uns[i])))
                cells.append(repr(float(row.client_ses[i])))
                cells.append(repr(float(row.client_tes[i])))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    # Column lookup for analysis and tests.
    def series(self, name: str) -> np.ndarray:
        header = self.columns()
        if name not in header:
            raise KeyError(name)
        idx = header.index(name)
        values = []
        for row in self.rows:
            flat: list[float] = [
                row.round_idx,
                row.cum_time_s,
                row.round_latency_s,
                row.test_acc,
                row.test_loss,
                row.mean_fi,
                row.mean_level,
            ]
            for i in range(self.clients):
                flat += [
                    row.client_levels[i],
                    row.client_latencies[i],
                    row.client_utils[i],
                    row.client_uns[i],
                    row.client_ses[i],
                    row.client_tes[i],
                ]
            values.append(flat[idx])
        return np.asarray(values)


def write_csv(log: MetricsLog, path: str | Path) -> None:
    Path(path).write_text(log.to_csv())


@dataclass
class RunState:
    """Mutable state of one experiment between rounds."""

    config: ExperimentConfig
    model: Model
    fleet: list[DeviceProfile]
    trace: DynamicsTrace
    train: datasets.Dataset
    eval_data: datasets.Dataset
    partition: datasets.Partition
    histories: list[FisherHistory]
    fisher_rngs: list[np.random.Generator]
    unit_mask: Mask
    log: MetricsLog
    round_idx: int = 1
    cum_time_s: float = 0.0
    calibrated_threshold: float | None = None


def init_state(config: ExperimentConfig) -> RunState:
    errors = validate_config(config)
    if errors:
        raise ConfigError("invalid config:\n" + "\n".join(f"- {e}" for e in errors))
    train, eval_data = build_datasets(config)
    fleet = make_fleet(config.fleet)
    clients = len(fleet)
    if config.trace_file:
        trace = read_trace_csv(config.trace_file)
        if trace.rounds < config.rounds or trace.clients != clients:
            raise ConfigError(
                f"trace file covers {trace.rounds} rounds x {trace.clients} clients, "
                f"need {config.rounds} x {clients}"
            )
    else:
        trace = gen_trace(fleet, config.rounds, config.seeds.trace, config.dynamics)
    partition = datasets.partition_noniid(
        train, clients, config.classes_per_client, config.seeds.partition
    )
    arch = config.arch()
    model = init_model(arch, config.seeds.model)
    histories = [FisherHistory(config.fisher_window) for _ in range(clients)]
    fisher_rngs = [np.random.default_rng([config.seeds.fisher, i]) for i in range(clients)]
    unit_mask = width_mask(arch, config.levels, config.level_spec())
    return RunState(
        config=config,
        model=model,
        fleet=fleet,
        trace=trace,
        train=train,
        eval_data=eval_data,
        partition=partition,
        histories=histories,
        fisher_rngs=fisher_rngs,
        unit_mask=unit_mask,
        log=MetricsLog(clients),
    )


def _client_batches(state: RunState, client: int, epoch_key: int) -> list[np.ndarray]:
    config = state.config
    seed = config.seeds.batching * 1_000_003 + client
    return datasets.batch(
        state.partition.client_indices[client],
        config.batch_size,
        seed,
        reshuffle_per_epoch=config.reshuffle_per_epoch,
        epoch=epoch_key,
    )


def _nominal_steps(state: RunState, client: int) -> int:
    shard = state.partition.client_indices[client].size
    per_epoch = -(-shard // state.config.batch_size)  # ceil division
    return max(1, state.config.local_epochs) * per_epoch


def _build_mask(state: RunState, client: int, level: int) -> Mask:
    config = state.config
    arch = config.arch()
    spec = config.level_spec()
    if config.strategy in _DROPOUT_STRATEGIES:
        rng = np.random.default_rng([config.seeds.masks, state.round_idx, client])
        return dropout_mask(arch, level, spec, rng)
    if config.strategy in _ROLLING_STRATEGIES:
        return rolling_mask(arch, level, spec, state.round_idx - 1)
    return width_mask(arch, level, spec)


def _select_level(
    state: RunState,
    client: int,
    unit_tx: float,
    unit_co: float,
    params: SchedulerParams,
) -> Selection:
    """Pick this round's level; fixed strategies still log the pipeline values."""
    config = state.config
    profile = state.fleet[client]
    history = state.histories[client]
    if config.strategy in ADAPTIVE_STRATEGIES:
        return select(
            client,
            history,
            state.round_idx,
            unit_tx,
            unit_co,
            profile.max_level,
            params,
            bootstrap_level=config.bootstrap_level,
            te_override=1.0 if config.strategy is Strategy.WHALE_SE_ONLY else None,
            se_override=1.0 if config.strategy is Strategy.WHALE_TE_ONLY else None,
        )
    level = 1 if config.strategy is Strategy.FEDAVG else profile.max_level
    te = training_efficiency(history, state.round_idx)
    se = system_efficiency(unit_tx, unit_co, params.round_budget_s)
    util = selection_utility(te, se, params.beta)
    return Selection(client, level, util=util, u_n=normalize(util, params.utility_threshold), se=se, te=te)


def _train_client(
    state: RunState, client: int, sub: Model
) -> tuple[Model, np.ndarray]:
    """Run the local epochs; returns the trained submodel and the per-batch
    Fisher traces measured at each batch's first visit, before its step."""
    config = state.config
    traces: np.ndarray | None = None
    for epoch in range(config.local_epochs):
        epoch_key = (state.round_idx - 1) * config.local_epochs + epoch
        batches = _client_batches(state, client, epoch_key)
        if traces is None:
            traces = np.zeros(len(batches))
        for k, idx in enumerate(batches):
            minibatch = Batch(state.train.inputs[idx], state.train.labels[idx])
            try:
                if epoch == 0:
                    traces[k] = batch_fisher_trace(
                        sub, minibatch, config.fisher_mode, state.fisher_rngs[client]
                    )
                grads = loss_and_grad(sub, minibatch)
            except NumericError as exc:
                raise NumericError(
                    f"client {client} failed in round {state.round_idx}: {exc}"
                ) from exc
            sub = sgd_step(sub, grads, config.learning_rate)
    if traces is None:
        traces = np.zeros(0)
    return sub, traces


def _participants(state: RunState) -> list[int]:
    clients = len(state.fleet)
    if state.config.participation >= 1.0:
        return list(range(clients))
    count = max(1, round(state.config.participation * clients))
    rng = np.random.default_rng([state.config.seeds.participation, state.round_idx])
    return sorted(int(i) for i in rng.choice(clients, size=count, replace=False))


def run_round(state: RunState) -> RunState:
    """Advance the experiment by one synchronous round (mutates the state).

    Per client: pick a level, build the mask, extract and locally train the
    subnetwork, record Fisher traces and delay costs; then aggregate in
    ascending client order, advance simulated time by the slowest client,
    evaluate the global model, and append the metrics row.
    """
    config = state.config
    r = state.round_idx
    if r > config.rounds:
        raise ValueError(f"experiment already ran its {config.rounds} rounds")
    participants = _participants(state)
    trace_row = r - 1

    unit_costs: dict[int, tuple[float, float]] = {}
    for i in participants:
        link = float(state.trace.link_bps[trace_row, i])
        mult = float(state.trace.compute_multiplier[trace_row, i])
        unit_tx = tx_delay(state.unit_mask, link)
        unit_co = compute_delay(
            state.unit_mask, _nominal_steps(state, i), config.batch_size, state.fleet[i], mult
        )
        unit_costs[i] = (unit_tx, unit_co)

    threshold = state.calibrated_threshold or config.utility_threshold
    if (
        config.strategy in ADAPTIVE_STRATEGIES
        and config.calibrate_threshold
        and state.calibrated_threshold is None
        and any(len(state.histories[i]) > 0 for i in participants)
    ):
        # Dry-run calibration: pin the threshold to the largest utility seen
        # in the first round that has Fisher history, so u_n spans (0, 1].
        utils = []
        for i in participants:
            te = (
                1.0
                if config.strategy is Strategy.WHALE_SE_ONLY
                else training_efficiency(state.histories[i], r)
            )
            se = (
                1.0
                if config.strategy is Strategy.WHALE_TE_ONLY
                else system_efficiency(*unit_costs[i], config.round_budget_s)
            )
            utils.append(selection_utility(te, se, config.beta))
        best = max(utils)
        if best > 0.0:
            state.calibrated_threshold = best
            threshold = best

    params = SchedulerParams(
        beta=config.beta,
        round_budget_s=config.round_budget_s,
        utility_threshold=threshold,
        spec=config.level_spec(),
    )

    clients = len(state.fleet)
    levels = [0] * clients
    latencies = [float("nan")] * clients
    utils = [float("nan")] * clients
    uns = [float("nan")] * clients
    ses = [float("nan")] * clients
    tes = [float("nan")] * clients
    updates: list[tuple[Mask, Model]] = []
    fi_means: list[float] = []

    for i in participants:
        unit_tx, unit_co = unit_costs[i]
        selection = _select_level(state, i, unit_tx, unit_co, params)
        mask = _build_mask(state, i, selection.level)
        sub = extract(state.model, mask)
        sub, traces = _train_client(state, i, sub)
        if traces.size:
            state.histories[i].record_round(r, traces)
            fi_means.append(float(traces.mean()))

        link = float(state.trace.link_bps[trace_row, i])
        mult = float(state.trace.compute_multiplier[trace_row, i])
        uplink = tx_delay(mask, link)
        tx = uplink * 2.0 if config.include_downlink else uplink
        if config.local_epochs > 0:
            co = compute_delay(mask, _nominal_steps(state, i), config.batch_size, state.fleet[i], mult)
        else:
            co = 0.0
        latencies[i] = tx + co
        levels[i] = selection.level
        utils[i] = selection.util
        uns[i] = selection.u_n
        ses[i] = selection.se
        tes[i] = selection.te
        updates.append((mask, sub))

    state.model = aggregate(state.model, updates)
    latency = round_latency([latencies[i] for i in participants])
    state.cum_time_s += latency
    accuracy, loss = evaluate(state.model, state.eval_data)

    state.log.append(
        MetricsRow(
            round_idx=r,
            cum_time_s=state.cum_time_s,
            round_latency_s=latency,
            test_acc=accuracy,
            test_loss=loss,
            mean_fi=float(np.mean(fi_means)) if fi_means else 0.0,
            mean_level=float(np.mean([levels[i] for i in participants])),
            client_levels=levels,
            client_latencies=latencies,
            client_utils=utils,
            client_uns=uns,
            client_ses=ses,
            client_tes=tes,
        )
    )
    state.round_idx += 1
    return state


def run_experiment(config: ExperimentConfig) -> MetricsLog:
    """Run the configured rounds, stopping early once the target accuracy is
    reached (checked after aggregation each round)."""
    state = init_state(config)
    for _ in range(config.rounds):
        run_round(state)
        if (
            config.target_accuracy is not None
            and state.log.rows[-1].test_acc >= config.target_accuracy
        ):
            break
    return state.log


def time_to_target(log: MetricsLog, target: float) -> tuple[int, float] | None:
    """(round, cumulative seconds) of the first round at or above target."""
    for row in log.rows:
        if row.test_acc >= target:
            return row.round_idx, row.cum_time_s
    return None


def compare(configs: list[ExperimentConfig], reference: Strategy) -> list[dict]:
    """Run several strategy configs on identical data/fleet/trace seeds and
    report simulated time-to-target plus speedups against the reference."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    reference = Strategy(reference)
    base = configs[0]
    for config in configs[1:]:
        if (
            config.seeds != base.seeds
            or config.data != base.data
            or config.fleet != base.fleet
            or config.dynamics != base.dynamics
        ):
            raise ConfigError("compare configs must share data, fleet, dynamics, and seeds")
    if any(config.target_accuracy is None for config in configs):
        raise ConfigError("compare configs need target_accuracy set")
    strategies = [config.strategy for config in configs]
    if reference not in strategies:
        raise ConfigError(f"reference strategy {reference.value} is not among the configs")
    if len(set(strategies)) != len(strategies):
        raise ConfigError("compare configs must use distinct strategies")

    results = {}
    for config in configs:
        log = run_experiment(config)
        reached = time_to_target(log, config.target_accuracy)
        results[config.strategy] = {
            "strategy": config.strategy.value,
            "target_accuracy": config.target_accuracy,
            "reached": reached is not None,
            "rounds_to_target": reached[0] if reached else None,
            "time_to_target_s": reached[1] if reached else None,
            "final_accuracy": log.rows[-1].test_acc,
        }
    ref_time = results[reference]["time_to_target_s"]
    report = []
    for config in configs:
        entry = dict(results[config.strategy])
        if entry["time_to_target_s"] is not None and ref_time is not None:
            entry["speedup"] = ref_time / entry["time_to_target_s"]
        else:
            entry["speedup"] = None
        report.append(entry)
    return report


def comparison_csv(report: list[dict], reference: Strategy) -> str:
    header = (
        "strategy,target_accuracy,reached,rounds_to_target,time_to_target_s,"
        f"final_accuracy,speedup_vs_{Strategy(reference).value}"
    )
    lines = [header]
    for entry in report:
        cells = [
            entry["strategy"],
            repr(entry["target_accuracy"]),
            "yes" if entry["reached"] else "no",
            str(entry["rounds_to_target"]) if entry["reached"] else "not reached",
            repr(entry["time_to_target_s"]) if entry["reached"] else "not reached",
            repr(entry["final_accuracy"]),
            repr(entry["speedup"]) if entry["speedup"] is not None else "not reached",
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# --- config file round-tripping -------------------------------------------

def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, Enum):
        return value.value
    return str(value)


def write_config(config: ExperimentConfig, path: str | Path) -> None:
    """Echo a config as a sectioned key-value file (one section per module)."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "strategy": config.strategy.value,
        "rounds": str(config.rounds),
        "local_epochs": str(config.local_epochs),
        "batch_size": str(config.batch_size),
        "learning_rate": repr(config.learning_rate),
        "target_accuracy": _format_value(config.target_accuracy),
        "eval_split": config.eval_split,
        "classes_per_client": str(config.classes_per_client),
        "include_downlink": _format_value(config.include_downlink),
        "reshuffle_per_epoch": _format_value(config.reshuffle_per_epoch),
        "participation": repr(config.participation),
    }
    parser["model"] = {
        "layer_widths": _format_value(config.arch_widths),
        "activation": config.activation,
    }
    parser["scheduler"] = {
        "levels": str(config.levels),
        "shrink": repr(config.shrink),
        "beta": repr(config.beta),
        "round_budget_s": repr(config.round_budget_s),
        "utility_threshold": "auto" if config.calibrate_threshold else repr(config.utility_threshold),
        "fisher_window": str(config.fisher_window),
        "fisher_mode": config.fisher_mode.value,
        "bootstrap_level": "cap" if config.bootstrap_level is None else str(config.bootstrap_level),
    }
    parser["data"] = {
        "kind": config.data.kind,
        "classes": str(config.data.classes),
        "per_class_train": str(config.data.per_class_train),
        "per_class_test": str(config.data.per_class_test),
        "dim": str(config.data.dim),
        "spread": repr(config.data.spread),
        "mnist_dir": config.data.mnist_dir,
        "train_limit": str(config.data.train_limit),
        "test_limit": str(config.data.test_limit),
    }
    parser["fleet"] = {
        "per_tier": str(config.fleet.per_tier),
        "unit_speed_flops": repr(config.fleet.unit_speed_flops),
        "speed_ratios": _format_value(config.fleet.speed_ratios),
        "max_levels": _format_value(config.fleet.max_levels),
    }
    parser["dynamics"] = {
        "link_rates_bps": _format_value(config.dynamics.link_rates_bps),
        "link_stay_prob": repr(config.dynamics.link_stay_prob),
        "compute_multipliers": _format_value(config.dynamics.compute_multipliers),
        "compute_stay_prob": repr(config.dynamics.compute_stay_prob),
        "fading_low": repr(config.dynamics.fading_low),
        "fading_high": repr(config.dynamics.fading_high),
        "initial_link": _format_value(config.dynamics.initial_link),
        "initial_compute": _format_value(config.dynamics.initial_compute),
        "trace_file": config.trace_file,
    }
    parser["seeds"] = {
        "model": str(config.seeds.model),
        "trace": str(config.seeds.trace),
        "partition": str(config.seeds.partition),
        "batching": str(config.seeds.batching),
        "masks": str(config.seeds.masks),
        "fisher": str(config.seeds.fisher),
        "data": str(config.seeds.data),
        "participation": str(config.seeds.participation),
    }
    with open(path, "w") as f:
        parser.write(f)


def read_config(path: str | Path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    found = parser.read(path)
    if not found:
        raise ConfigError(f"config file {path} not found")

    def get(section: str, key: str, fallback=None) -> str:
        if parser.has_option(section, key):
            return parser.get(section, key)
        if fallback is not None:
            return fallback
        raise ConfigError(f"config {path} missing [{section}] {key}")

    def get_tuple(section: str, key: str, cast, fallback=None):
        raw = get(section, key, fallback)
        return tuple(cast(part.strip()) for part in raw.split(",") if part.strip())

    def get_bool(section: str, key: str, fallback: str) -> bool:
        return get(section, key, fallback).strip().lower() in ("true", "1", "yes", "on")

    threshold_raw = get("scheduler", "utility_threshold", "30.0").strip().lower()
    calibrate = threshold_raw == "auto"
    bootstrap_raw = get("scheduler", "bootstrap_level", "cap").strip().lower()
    target_raw = get("experiment", "target_accuracy", " ").strip()
    initial_link_raw = get("dynamics", "initial_link", " ").strip()
    initial_compute_raw = get("dynamics", "initial_compute", " ").strip()

    return ExperimentConfig(
        strategy=Strategy(get("experiment", "strategy")),
        rounds=int(get("experiment", "rounds")),
        local_epochs=int(get("experiment", "local_epochs", "1")),
        batch_size=int(get("experiment", "batch_size", "32")),
        learning_rate=float(get("experiment", "learning_rate", "0.05")),
        target_accuracy=float(target_raw) if target_raw else None,
        eval_split=get("experiment", "eval_split", "test"),
        arch_widths=get_tuple("model", "layer_widths", int),
        activation=get("model", "activation", "relu"),
        levels=int(get("scheduler", "levels", "5")),
        shrink=float(get("scheduler", "shrink", "0.5")),
        beta=float(get("scheduler", "beta", "2.0")),
        round_budget_s=float(get("scheduler", "round_budget_s", "60.0")),
        utility_threshold=30.0 if calibrate else float(threshold_raw),
        calibrate_threshold=calibrate,
        fisher_window=int(get("scheduler", "fisher_window", "10")),
        fisher_mode=FisherMode(get("scheduler", "fisher_mode", "sampled")),
        bootstrap_level=None if bootstrap_raw == "cap" else int(bootstrap_raw),
        classes_per_client=int(get("experiment", "classes_per_client", "2")),
        include_downlink=get_bool("experiment", "include_downlink", "false"),
        reshuffle_per_epoch=get_bool("experiment", "reshuffle_per_epoch", "false"),
        participation=float(get("experiment", "participation", "1.0")),
        data=DataConfig(
            kind=get("data", "kind", "digits"),
            classes=int(get("data", "classes", "10")),
            per_class_train=int(get("data", "per_class_train", "500")),
            per_class_test=int(get("data", "per_class_test", "100")),
            dim=int(get("data", "dim", "32")),
            spread=float(get("data", "spread", "0.35")),
            mnist_dir=get("data", "mnist_dir", " ").strip(),
            train_limit=int(get("data", "train_limit", "0")),
            test_limit=int(get("data", "test_limit", "0")),
        ),
        fleet=FleetConfig(
            per_tier=int(get("fleet", "per_tier", "4")),
            unit_speed_flops=float(get("fleet", "unit_speed_flops", "3e8")),
            speed_ratios=get_tuple("fleet", "speed_ratios", float, "16,8,4,2,1"),
            max_levels=get_tuple("fleet", "max_levels", int, "1,2,3,4,5"),
        ),
        dynamics=DynamicsConfig(
            link_rates_bps=get_tuple("dynamics", "link_rates_bps", float, "80e6,20e6,10e6"),
            link_stay_prob=float(get("dynamics", "link_stay_prob", "0.8")),
            compute_multipliers=get_tuple("dynamics", "compute_multipliers", float, "1.0,0.6,0.3"),
            compute_stay_prob=float(get("dynamics", "compute_stay_prob", "0.8")),
            fading_low=float(get("dynamics", "fading_low", "0.7")),
            fading_high=float(get("dynamics", "fading_high", "1.0")),
            initial_link=int(initial_link_raw) if initial_link_raw else None,
            initial_compute=int(initial_compute_raw) if initial_compute_raw else None,
        ),
        trace_file=get("dynamics", "trace_file", " ").strip(),
        seeds=Seeds(
            model=int(get("seeds", "model", "1")),
            trace=int(get("seeds", "trace", "2")),
            partition=int(get("seeds", "partition", "3")),
            batching=int(get("seeds", "batching", "4")),
            masks=int(get("seeds", "masks", "5")),
            fisher=int(get("seeds", "fisher", "6")),
            data=int(get("seeds", "data", "7")),
            participation=int(get("seeds", "participation", "8")),
        ),
    )
