import numpy as np
import numpy.testing as npt
import pytest

from subnetfl.nn import Arch, count_params
from subnetfl.subnet import LevelSpec, width_mask
from subnetfl.sysmodel import (
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
    write_trace_csv,
)


def test_default_fleet_is_twenty_devices_four_per_tier():
    fleet = make_fleet()
    assert len(fleet) == 20
    tiers = [p.tier for p in fleet]
    assert tiers == ["A"] * 4 + ["B"] * 4 + ["C"] * 4 + ["D"] * 4 + ["E"] * 4
    assert [p.client_id for p in fleet] == list(range(20))


def test_fleet_speed_ratios_and_caps():
    fleet = make_fleet(FleetConfig(unit_speed_flops=1e6))
    speeds = sorted({p.compute_flops for p in fleet}, reverse=True)
    assert speeds == [16e6, 8e6, 4e6, 2e6, 1e6]
    assert fleet[0].max_level == 1  # tier A may train the full model
    assert fleet[-1].max_level == 5


def test_tier_e_cap_reaches_smallest_shrinkage_ratio():
    spec = LevelSpec(5, 0.5)
    arch = Arch((16, 256, 256, 8))
    fleet = make_fleet()
    mask = width_mask(arch, fleet[-1].max_level, spec)
    block_ratio = (len(mask.kept[0]) * len(mask.kept[1])) / (256 * 256)
    assert block_ratio == 1 / 256


def test_fleet_config_validation():
    with pytest.raises(ValueError):
        FleetConfig(per_tier=0)
    with pytest.raises(ValueError):
        FleetConfig(speed_ratios=(1.0, 2.0, 4.0, 8.0, 16.0))  # increasing
    with pytest.raises(ValueError):
        FleetConfig(max_levels=(5, 4, 3, 2, 1))  # decreasing


def test_trace_constant_chain_stays_on_initial_state():
    fleet = make_fleet(FleetConfig(per_tier=1))
    config = DynamicsConfig(link_stay_prob=1.0, compute_stay_prob=1.0, initial_link=0, initial_compute=0)
    trace = gen_trace(fleet, 50, seed=4, config=config)
    # always WiFi: effective rate is 80 Mbps times the fading factor
    assert np.all(trace.link_bps >= 0.7 * 80e6)
    assert np.all(trace.link_bps <= 80e6)
    npt.assert_array_equal(trace.compute_multiplier, 1.0)


def test_trace_deterministic_per_seed():
    fleet = make_fleet()
    a = gen_trace(fleet, 30, seed=9)
    b = gen_trace(fleet, 30, seed=9)
    npt.assert_array_equal(a.link_bps, b.link_bps)
    npt.assert_array_equal(a.compute_multiplier, b.compute_multiplier)
    c = gen_trace(fleet, 30, seed=10)
    assert not np.array_equal(a.link_bps, c.link_bps)


def test_trace_long_run_occupancy_matches_stationary_distribution():
    # symmetric stay/jump chain: stationary distribution is uniform
    fleet = make_fleet(FleetConfig(per_tier=1))[:1]
    trace = gen_trace(fleet, 100_000, seed=3)
    rates = np.asarray(DynamicsConfig().link_rates_bps)
    # recover the underlying state from the faded rate by nearest band
    edges = np.sqrt(rates[:-1] * rates[1:])  # geometric midpoints between rate bands
    states = np.digitize(-trace.link_bps[:, 0], -edges)
    occupancy = np.bincount(states, minlength=3) / trace.rounds
    npt.assert_allclose(occupancy, 1 / 3, atol=0.03)
    mult_occupancy = [
        np.mean(trace.compute_multiplier[:, 0] == m) for m in (1.0, 0.6, 0.3)
    ]
    npt.assert_allclose(mult_occupancy, 1 / 3, atol=0.03)


def test_trace_csv_round_trip(tmp_path):
    fleet = make_fleet(FleetConfig(per_tier=1))
    trace = gen_trace(fleet, 7, seed=21)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    loaded = read_trace_csv(path)
    npt.assert_array_equal(loaded.link_bps, trace.link_bps)
    npt.assert_array_equal(loaded.compute_multiplier, trace.compute_multiplier)
    assert loaded.source == "file"
    header = path.read_text().splitlines()[0]
    assert header == "round,client,link_bps,compute_multiplier"


def test_trace_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("round,client,rate\n0,0,1.0\n")
    with pytest.raises(ValueError):
        read_trace_csv(path)


def test_tx_delay_reference_rates():
    # walk the documented formula at exactly one million parameters
    class Payload:
        def effective_widths(self):
            # one layer: in*out + out = 999000 + 1000 = 1e6 params
            return (999, 1000)

    payload = Payload()
    assert count_params(payload) == 1_000_000
    assert tx_delay(payload, 80e6) == pytest.approx(0.4)
    assert tx_delay(payload, 10e6) == pytest.approx(3.2)
    with pytest.raises(ValueError):
        tx_delay(payload, 0.0)


def test_tx_delay_scales_with_param_count():
    arch = Arch((16, 256, 256, 8))
    mask = width_mask(arch, 5, LevelSpec(5, 0.5))
    ratio = count_params(mask) / count_params(arch)
    assert tx_delay(mask, 20e6) == pytest.approx(ratio * tx_delay(arch, 20e6))


def test_compute_delay_examples():
    profile = DeviceProfile(0, "A", 1e6, 1)
    arch = Arch((4, 8, 3))  # 336 flops per example
    delay = compute_delay(arch, local_steps=100, batch_size=32, profile=profile, multiplier=1.0)
    assert delay == pytest.approx(1.0752)
    half = compute_delay(arch, 100, 32, profile, 0.5)
    assert half == pytest.approx(2 * delay)


def test_compute_delay_tier_ratio():
    arch = Arch((4, 8, 3))
    fast = DeviceProfile(0, "A", 16e6, 1)
    slow = DeviceProfile(1, "E", 1e6, 5)
    a = compute_delay(arch, 10, 8, fast, 1.0)
    e = compute_delay(arch, 10, 8, slow, 1.0)
    assert e == pytest.approx(16 * a)


def test_delay_unit_scalings():
    rng = np.random.default_rng(14)
    arch = Arch((6, 12, 4))
    for _ in range(20):
        rate = float(rng.uniform(1e6, 1e8))
        scale = float(rng.uniform(1.5, 10.0))
        assert tx_delay(arch, rate * scale) == pytest.approx(tx_delay(arch, rate) / scale)
        profile = DeviceProfile(0, "B", float(rng.uniform(1e5, 1e7)), 2)
        faster = DeviceProfile(0, "B", profile.compute_flops * scale, 2)
        assert compute_delay(arch, 5, 4, faster, 1.0) == pytest.approx(
            compute_delay(arch, 5, 4, profile, 1.0) / scale
        )


def test_monotone_cost_in_mask_size():
    arch = Arch((10, 32, 32, 5))
    spec = LevelSpec(5, 0.5)
    profile = DeviceProfile(0, "C", 1e6, 3)
    tx, co = [], []
    for level in range(1, 6):
        mask = width_mask(arch, level, spec)
        tx.append(tx_delay(mask, 20e6))
        co.append(compute_delay(mask, 10, 16, profile, 0.8))
    assert tx == sorted(tx, reverse=True)
    assert co == sorted(co, reverse=True)


def test_round_latency_is_max():
    assert round_latency([3.0]) == 3.0
    assert round_latency([1.0, 5.0]) == 5.0
    with pytest.raises(ValueError):
        round_latency([])


def test_trace_shape_validation():
    with pytest.raises(ValueError):
        DynamicsTrace(np.ones((3, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        DynamicsTrace(np.ones((3, 2)), np.zeros((3, 2)))
