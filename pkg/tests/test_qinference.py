from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macprune.pam import ActivationMask
from macprune.qinference import (
    ALL_WEIGHTS,
    InputVector,
    QuantizedFirstLayer,
    ShapeError,
    aliasing_census,
    cumulative_hypothesis,
    hamming_weight,
    load_inputs_csv,
    load_layer_csv,
    product_signatures,
    run_macs,
    run_macs_batch,
    wrap32,
    write_int_grid,
)

weights_st = st.lists(st.integers(-128, 127), min_size=1, max_size=12)


def _layer(ws):
    return QuantizedFirstLayer.from_weights(ws)


def test_all_active_hand_sum():
    ex = run_macs(_layer([1, 1]), InputVector([3, 4]), np.ones(2, bool))
    assert ex.executed.tolist() == [0, 1]
    assert ex.accumulators.tolist() == [3, 7]


def test_all_inactive_is_empty():
    ex = run_macs(_layer([5, -3]), InputVector([3, 4]), np.zeros(2, bool))
    assert ex.executed.tolist() == [] and ex.accumulators.tolist() == []


def test_four_masks_of_two_macs():
    layer, x = _layer([2, -1]), InputVector([10, 10])
    expected = {
        (0, 0): ([], []),
        (1, 0): ([0], [20]),
        (0, 1): ([1], [-10]),
        (1, 1): ([0, 1], [20, 10]),
    }
    for m, (ex_idx, acc) in expected.items():
        ex = run_macs(layer, x, np.array(m, bool))
        assert ex.executed.tolist() == ex_idx
        assert ex.accumulators.tolist() == acc


def test_activation_mask_dims_checked():
    layer = QuantizedFirstLayer.from_weights([1, 2, 3, 4], dims=(2, 2))
    with pytest.raises(ShapeError):
        run_macs(layer, InputVector([1, 2, 3, 4]), ActivationMask(np.ones(4, bool), (1, 4)))
    ex = run_macs(layer, InputVector([1, 2, 3, 4]), ActivationMask(np.ones(4, bool), (2, 2)))
    assert ex.accumulators.tolist() == [1, 5, 14, 30]


def test_length_mismatch_rejected():
    with pytest.raises(ShapeError):
        run_macs(_layer([1, 2]), InputVector([1, 2, 3]), np.ones(3, bool))
    with pytest.raises(ShapeError):
        QuantizedFirstLayer([1, 2], [0], (1, 2))
    with pytest.raises(ShapeError):
        QuantizedFirstLayer([1, 2], [0, 5], (1, 2))
    with pytest.raises(ValueError):
        QuantizedFirstLayer.from_weights([200])
    with pytest.raises(ValueError):
        InputVector([256])


@given(weights_st, st.data())
def test_masked_run_equals_subset_sums(ws, data):
    n = len(ws)
    px = data.draw(st.lists(st.integers(0, 255), min_size=n, max_size=n))
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    ex = run_macs(_layer(ws), InputVector(px), mask)
    kept = [k for k in range(n) if mask[k]]
    assert ex.executed.tolist() == kept
    running, expect = 0, []
    for k in kept:
        running += px[k] * ws[k]
        expect.append(running)
    assert ex.accumulators.tolist() == expect
    assert np.all(np.diff(ex.executed) > 0)


def test_subset_sums_exhaustive_small():
    ws, px = [-128, 127, -1, 64], [255, 255, 7, 3]
    layer = _layer(ws)
    for bits in itertools.product((0, 1), repeat=4):
        ex = run_macs(layer, InputVector(px), np.array(bits, bool))
        sums = np.cumsum([px[k] * ws[k] for k in range(4) if bits[k]]).tolist()
        assert ex.accumulators.tolist() == sums


def test_batch_matches_single():
    layer = QuantizedFirstLayer.random(7, seed=3)
    r = np.random.default_rng(0)
    px = r.integers(0, 256, (50, 7))
    keep = r.random((50, 7)) < 0.6
    acc, counts = run_macs_batch(layer, px, keep)
    for n in range(50):
        ex = run_macs(layer, InputVector(px[n]), keep[n])
        assert counts[n] == len(ex)
        assert acc[n, : len(ex)].tolist() == ex.accumulators.tolist()
        assert not acc[n, len(ex) :].any()


def test_cumulative_hypothesis_is_unpruned_run():
    layer = QuantizedFirstLayer.random(5, seed=1)
    px = np.random.default_rng(1).integers(0, 256, (10, 5))
    full, _ = run_macs_batch(layer, px)
    assert np.array_equal(cumulative_hypothesis(px, layer.weights), full)


def test_hamming_weight_examples():
    assert hamming_weight(0) == 0
    assert hamming_weight(255) == 8
    assert hamming_weight(-1) == 32
    assert hamming_weight(np.array([1, 3, -2])).tolist() == [1, 2, 31]


@given(st.integers(-(2**31), 2**31 - 1))
def test_hw_complement(a):
    assert hamming_weight(a) + hamming_weight(~a) == 32
    assert hamming_weight(a) == bin(a & 0xFFFFFFFF).count("1")


@given(st.integers(-(2**40), 2**40))
def test_wrap32_is_modular(x):
    w = int(wrap32(x))
    assert -(2**31) <= w < 2**31 and (w - x) % 2**32 == 0


def test_wrapping_accumulator():
    layer = QuantizedFirstLayer.from_weights([127] * 4)
    big = wrap32(np.int64(2**31) + 5)
    assert int(big) == -(2**31) + 5
    ex = run_macs(layer, InputVector([255] * 4), np.ones(4, bool))
    assert ex.accumulators.dtype == np.int32


def test_census_shift_alias_and_zero():
    census = aliasing_census()
    assert 2 in census.class_of(1)
    assert census.class_of(0) == (0,)


@pytest.mark.parametrize("convention", ["signed", "unsigned"])
def test_census_is_a_partition(convention):
    census = aliasing_census(convention)
    members = sorted(w for c in census.classes for w in c)
    assert members == ALL_WEIGHTS.tolist()
    sig = product_signatures(convention)
    row = {w: sig[w + 128] for w in ALL_WEIGHTS.tolist()}
    rng = np.random.default_rng(0)
    for c in census.classes:
        for a, b in zip(c, c[1:]):
            assert np.array_equal(row[a], row[b])
    # distinct classes really differ (so "same class" is exactly "equal signature")
    reps = [c[0] for c in census.classes]
    for a, b in rng.choice(reps, (200, 2)):
        if a != b:
            assert not np.array_equal(row[a], row[b])
    assert census.aliased_count == sum(len(c) for c in census.classes if len(c) > 1)


def test_census_counts():
    # the two product conventions give different counts; see the README
    assert aliasing_census("signed").aliased_count == 95
    assert aliasing_census("unsigned").aliased_count == 191


def test_census_transitivity_sample():
    sig = product_signatures()
    census = aliasing_census()
    for c in census.classes:
        if len(c) >= 3:
            a, b, d = c[:3]
            assert np.array_equal(sig[a + 128], sig[b + 128]) and np.array_equal(sig[b + 128], sig[d + 128])


def test_csv_roundtrip(tmp_path):
    layer = QuantizedFirstLayer.random(6, seed=2, dims=(2, 3))
    write_int_grid(tmp_path / "w.csv", layer.weights.reshape(2, 3), "weight_int8")
    back = load_layer_csv(tmp_path / "w.csv")
    assert back.dims == (2, 3) and np.array_equal(back.weights, layer.weights)
    px = np.arange(12).reshape(2, 6)
    write_int_grid(tmp_path / "x.csv", px, "pixel_value_uint8")
    assert np.array_equal(load_inputs_csv(tmp_path / "x.csv"), px)


def test_digest_stable_and_sensitive():
    a = QuantizedFirstLayer.from_weights([1, 2, 3])
    assert a.digest() == QuantizedFirstLayer.from_weights([1, 2, 3]).digest()
    assert a.digest() != QuantizedFirstLayer.from_weights([1, 2, 4]).digest()
