import numpy as np
import numpy.testing as npt
import pytest

from subnetfl.nn import Arch, init_model
from subnetfl.subnet import (
    LevelSpec,
    Mask,
    aggregate,
    dropout_mask,
    embed,
    extract,
    rolling_mask,
    width_mask,
)

SPEC = LevelSpec(5, 0.5)


def oracle_aggregate(global_model, updates):
    """Per-position brute force: loop every scalar, average the updates whose
    mask covers it, keep the old value when none does."""
    out = global_model.copy()
    for l in range(global_model.arch.num_layers):
        rows_cols = [
            (list(mask.row_indices(l)), list(mask.col_indices(l))) for mask, _ in updates
        ]
        w = out.weights[l]
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                values = []
                for (rows, cols), (_, sub) in zip(rows_cols, updates):
                    if r in rows and c in cols:
                        values.append(sub.weights[l][rows.index(r), cols.index(c)])
                if values:
                    w[r, c] = sum(values) / len(values)
        b = out.biases[l]
        for r in range(b.shape[0]):
            values = []
            for (rows, _), (_, sub) in zip(rows_cols, updates):
                if r in rows:
                    values.append(sub.biases[l][rows.index(r)])
            if values:
                b[r] = sum(values) / len(values)
    return out


def regionwise_aggregate(global_model, updates, spec):
    """Direct region-wise evaluation for nested width masks: the smallest
    region averages every client; each ring between consecutive levels
    averages exactly the clients whose level is at least that large."""
    arch = global_model.arch
    out = global_model.copy()
    levels = sorted({mask.level for mask, _ in updates})
    coverage = {}
    for p in range(1, spec.levels + 1):
        mask = width_mask(arch, p, spec)
        cov_w, cov_b = [], []
        for l in range(arch.num_layers):
            w = np.zeros_like(global_model.weights[l], dtype=bool)
            w[np.ix_(mask.row_indices(l), mask.col_indices(l))] = True
            cov_w.append(w)
            b = np.zeros_like(global_model.biases[l], dtype=bool)
            b[mask.row_indices(l)] = True
            cov_b.append(b)
        coverage[p] = (cov_w, cov_b)

    embedded = [(mask.level, embed(sub, mask)) for mask, sub in updates]
    for p in range(1, spec.levels + 1):
        cov_w, cov_b = coverage[p]
        if p < spec.levels:
            inner_w, inner_b = coverage[p + 1]
            region_w = [a & ~b for a, b in zip(cov_w, inner_w)]
            region_b = [a & ~b for a, b in zip(cov_b, inner_b)]
        else:
            region_w, region_b = cov_w, cov_b
        members = [model for level, model in embedded if level <= p]
        if not members:
            continue
        for l in range(arch.num_layers):
            stack_w = np.mean([m.weights[l] for m in members], axis=0)
            stack_b = np.mean([m.biases[l] for m in members], axis=0)
            out.weights[l][region_w[l]] = stack_w[region_w[l]]
            out.biases[l][region_b[l]] = stack_b[region_b[l]]
    return out


def test_width_mask_kept_widths_follow_shrink_powers():
    arch = Arch((32, 256, 256, 10))
    kept = [len(width_mask(arch, p, SPEC).kept[0]) for p in range(1, 6)]
    assert kept == [256, 128, 64, 32, 16]
    blocks = [
        len(width_mask(arch, p, SPEC).kept[0]) * len(width_mask(arch, p, SPEC).kept[1])
        for p in range(1, 6)
    ]
    ratios = [b / blocks[0] for b in blocks]
    assert ratios == [1.0, 1 / 4, 1 / 16, 1 / 64, 1 / 256]


def test_width_mask_level_one_is_identity():
    arch = Arch((4, 8, 3))
    mask = width_mask(arch, 1, SPEC)
    assert mask.kept == (tuple(range(8)),)
    assert mask.effective_widths() == (4, 8, 3)


def test_width_mask_ceiling_rule():
    arch = Arch((4, 5, 3))
    mask = width_mask(arch, 2, SPEC)
    assert mask.kept == ((0, 1, 2),)


def test_width_masks_are_nested():
    arch = Arch((7, 13, 21, 4))
    for p in range(1, 5):
        outer = width_mask(arch, p, SPEC)
        inner = width_mask(arch, p + 1, SPEC)
        for k_outer, k_inner in zip(outer.kept, inner.kept):
            assert set(k_inner) <= set(k_outer)


def test_level_out_of_range_rejected():
    arch = Arch((4, 8, 3))
    with pytest.raises(ValueError):
        width_mask(arch, 0, SPEC)
    with pytest.raises(ValueError):
        width_mask(arch, 6, SPEC)


def test_dropout_level_one_is_full():
    arch = Arch((4, 8, 3))
    mask = dropout_mask(arch, 1, SPEC, np.random.default_rng(0))
    assert mask.kept == (tuple(range(8)),)


def test_dropout_keep_frequency_is_uniform():
    arch = Arch((4, 4, 3))
    counts = np.zeros(4)
    rng = np.random.default_rng(123)
    draws = 10_000
    for _ in range(draws):
        mask = dropout_mask(arch, 2, SPEC, rng)
        counts[list(mask.kept[0])] += 1
    npt.assert_allclose(counts / draws, 0.5, atol=0.02)


def test_dropout_deterministic_per_seed():
    arch = Arch((6, 32, 3))
    a = dropout_mask(arch, 3, SPEC, np.random.default_rng(77))
    b = dropout_mask(arch, 3, SPEC, np.random.default_rng(77))
    assert a == b


def test_rolling_round_zero_equals_width_mask():
    arch = Arch((4, 8, 3))
    assert rolling_mask(arch, 2, SPEC, 0).kept == width_mask(arch, 2, SPEC).kept


def test_rolling_wraparound():
    arch = Arch((4, 4, 3))
    mask = rolling_mask(arch, 2, SPEC, 3)
    assert mask.kept == ((0, 3),)


def test_rolling_window_union_covers_all_neurons():
    arch = Arch((4, 8, 3))
    union = set()
    for round_idx in range(8):
        union |= set(rolling_mask(arch, 3, SPEC, round_idx).kept[0])
    assert union == set(range(8))


def test_extract_full_mask_is_identity():
    arch = Arch((4, 8, 3))
    model = init_model(arch, 5)
    sub = extract(model, width_mask(arch, 1, SPEC))
    assert sub.allclose(model)


def test_extract_shapes_follow_slicing_rule():
    arch = Arch((2, 4, 3))
    model = init_model(arch, 1)
    sub = extract(model, width_mask(arch, 2, SPEC))
    assert sub.weights[0].shape == (2, 2)
    assert sub.weights[1].shape == (3, 2)
    npt.assert_array_equal(sub.weights[0], model.weights[0][:2, :])
    npt.assert_array_equal(sub.weights[1], model.weights[1][:, :2])
    npt.assert_array_equal(sub.biases[0], model.biases[0][:2])
    npt.assert_array_equal(sub.biases[1], model.biases[1])


def test_extract_embed_round_trip():
    rng = np.random.default_rng(31)
    arch = Arch((5, 9, 7, 4))
    model = init_model(arch, 9)
    for level in range(1, 6):
        for builder in (
            lambda: width_mask(arch, level, SPEC),
            lambda: dropout_mask(arch, level, SPEC, rng),
            lambda: rolling_mask(arch, level, SPEC, int(rng.integers(20))),
        ):
            mask = builder()
            sub = extract(model, mask)
            again = extract(embed(sub, mask), mask)
            assert again.allclose(sub)


def test_extract_incongruent_mask_rejected():
    model = init_model(Arch((4, 8, 3)), 0)
    other = width_mask(Arch((4, 9, 3)), 1, SPEC)
    with pytest.raises(ValueError):
        extract(model, other)


def test_aggregate_single_full_update_replaces_global():
    arch = Arch((3, 6, 2))
    global_model = init_model(arch, 0)
    client = init_model(arch, 1)
    mask = width_mask(arch, 1, SPEC)
    merged = aggregate(global_model, [(mask, client)])
    assert merged.allclose(client)


def test_aggregate_partial_coverage_positionwise_means():
    # Hidden width 4: clients A and B cover hidden neurons {0,1}, client C is
    # full. Checked on the hidden bias vector: positions 0-1 average A, B, C;
    # positions 2-3 average C alone.
    arch = Arch((1, 4, 1))
    global_model = init_model(arch, 0)
    level2 = width_mask(arch, 2, SPEC)
    full = width_mask(arch, 1, SPEC)

    def with_hidden_bias(mask, values):
        sub = extract(init_model(arch, 0), mask)
        sub.biases[0][:] = values
        return sub

    a = with_hidden_bias(level2, [1.0, 3.0])
    b = with_hidden_bias(level2, [3.0, 5.0])
    c = with_hidden_bias(full, [2.0, 2.0, 10.0, 20.0])
    merged = aggregate(global_model, [(level2, a), (level2, b), (full, c)])
    npt.assert_allclose(merged.biases[0], [2.0, 10.0 / 3.0, 10.0, 20.0], rtol=0, atol=1e-15)


def test_aggregate_empty_update_list_keeps_global():
    model = init_model(Arch((3, 5, 2)), 4)
    merged = aggregate(model, [])
    assert merged.allclose(model)


def test_aggregate_uncovered_positions_keep_previous_values():
    arch = Arch((2, 4, 2))
    global_model = init_model(arch, 3)
    mask = width_mask(arch, 3, SPEC)  # keeps one hidden neuron
    sub = extract(init_model(arch, 9), mask)
    merged = aggregate(global_model, [(mask, sub)])
    npt.assert_array_equal(merged.weights[0][1:, :], global_model.weights[0][1:, :])
    npt.assert_array_equal(merged.biases[0][1:], global_model.biases[0][1:])


def _random_updates(rng, arch, spec, n_clients):
    updates = []
    for _ in range(n_clients):
        level = int(rng.integers(1, spec.levels + 1))
        kind = rng.choice(["width", "dropout", "rolling"])
        if kind == "width":
            mask = width_mask(arch, level, spec)
        elif kind == "dropout":
            mask = dropout_mask(arch, level, spec, rng)
        else:
            mask = rolling_mask(arch, level, spec, int(rng.integers(0, 12)))
        sub = extract(init_model(arch, int(rng.integers(1 << 30))), mask)
        for w in sub.weights:
            w += rng.standard_normal(w.shape)
        for b in sub.biases:
            b += rng.standard_normal(b.shape)
        updates.append((mask, sub))
    return updates


def test_aggregate_matches_bruteforce_oracle_mixed_masks():
    rng = np.random.default_rng(202)
    for _ in range(25):
        widths = (
            int(rng.integers(1, 5)),
            int(rng.integers(2, 9)),
            int(rng.integers(2, 9)),
            int(rng.integers(1, 4)),
        )
        arch = Arch(widths)
        spec = LevelSpec(int(rng.integers(2, 5)), float(rng.uniform(0.3, 0.8)))
        global_model = init_model(arch, int(rng.integers(1 << 30)))
        updates = _random_updates(rng, arch, spec, int(rng.integers(1, 6)))
        fast = aggregate(global_model, updates)
        slow = oracle_aggregate(global_model, updates)
        assert fast.allclose(slow, tol=1e-12)


def test_aggregate_matches_regionwise_form_for_width_masks():
    rng = np.random.default_rng(404)
    for _ in range(10):
        arch = Arch((3, int(rng.integers(4, 10)), int(rng.integers(4, 10)), 3))
        spec = LevelSpec(4, 0.5)
        global_model = init_model(arch, int(rng.integers(1 << 30)))
        updates = []
        for _ in range(int(rng.integers(2, 7))):
            level = int(rng.integers(1, 5))
            mask = width_mask(arch, level, spec)
            sub = extract(init_model(arch, int(rng.integers(1 << 30))), mask)
            updates.append((mask, sub))
        fast = aggregate(global_model, updates)
        direct = regionwise_aggregate(global_model, updates, spec)
        assert fast.allclose(direct, tol=1e-12)


def test_aggregate_identical_copies_is_idempotent():
    rng = np.random.default_rng(55)
    arch = Arch((4, 8, 8, 3))
    model = init_model(arch, 77)
    updates = []
    for _ in range(5):
        level = int(rng.integers(1, 6))
        mask = width_mask(arch, level, SPEC)
        updates.append((mask, extract(model, mask)))
    merged = aggregate(model, updates)
    assert merged.allclose(model, tol=1e-12)


def test_size_law_exact_for_divisible_widths():
    arch = Arch((32, 256, 256, 10))
    full_block = 256 * 256
    for p in range(1, 6):
        mask = width_mask(arch, p, SPEC)
        block = len(mask.kept[0]) * len(mask.kept[1])
        assert block / full_block == 0.5 ** (2 * (p - 1))


def test_mask_validation():
    with pytest.raises(ValueError):
        Mask((4, 8, 3), ((3, 1),), 2, "width")  # unsorted
    with pytest.raises(ValueError):
        Mask((4, 8, 3), ((0, 8),), 2, "width")  # out of range
    with pytest.raises(ValueError):
        Mask((4, 8, 3), ((0, 1),), 2, "bogus")  # unknown kind
