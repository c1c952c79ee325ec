import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from defcode.errors import ConfigurationError, InputError
from defcode.modulation import (
    MAPPING_TABLES,
    alphabet,
    constellation_energy,
    hard_decision,
    inverse_lookup,
    modulate,
    validate_mapping,
)

TABLE_I = [((0, 0), (1, 1)), ((0, 1), (1, -1)), ((1, 0), (-1, 1)), ((1, 1), (-1, -1))]
TABLE_II = [
    ("0000", (3, 3)), ("0001", (3, 1)), ("0010", (3, -3)), ("0011", (3, -1)),
    ("0100", (1, 3)), ("0101", (1, 1)), ("0110", (-1, -3)), ("0111", (-1, -1)),
    ("1000", (-3, 3)), ("1001", (-3, 1)), ("1010", (-3, -3)), ("1011", (-3, -1)),
    ("1100", (-1, 3)), ("1101", (-1, 1)), ("1110", (-1, -3)), ("1111", (-1, -1)),
]


@pytest.mark.parametrize("bits,pair", TABLE_I)
def test_qpsk_rows(bits, pair):
    np.testing.assert_array_equal(modulate(bits, 2), pair)


@pytest.mark.parametrize("bits,pair", TABLE_II)
def test_16qam_rows(bits, pair):
    np.testing.assert_array_equal(modulate([int(b) for b in bits], 4), pair)


def test_spec_examples():
    np.testing.assert_array_equal(modulate([0, 1], 2), [1, -1])
    np.testing.assert_array_equal(modulate([0, 0, 1, 0], 4), [3, -3])
    np.testing.assert_array_equal(modulate([0, 0, 0, 0], 2), [1, 1, 1, 1])


def test_batched_matches_rowwise(rng):
    bits = rng.integers(0, 2, (6, 12))
    out = modulate(bits, 4)
    assert out.shape == (6, 6)
    for row, o in zip(bits, out):
        np.testing.assert_array_equal(modulate(row, 4), o)


def test_output_length():
    assert modulate(np.zeros(50, int), 2).shape == (50,)
    assert modulate(np.zeros(100, int), 4).shape == (50,)


def test_odd_length_qpsk_trailing_symbol():
    # separable per bit, so a lone bit is one real symbol
    np.testing.assert_array_equal(modulate([0, 1, 1], 2), [1, -1, -1])
    np.testing.assert_array_equal(modulate([1, 0, 0, 1, 0], 2), [-1, 1, 1, -1, 1])


def test_indivisible_length_rejected():
    with pytest.raises(InputError):
        modulate([0, 1, 1], 4)


def test_non_binary_rejected():
    with pytest.raises(InputError):
        modulate([0, 2], 2)


def test_unsupported_order():
    with pytest.raises(ConfigurationError):
        modulate([0, 1, 0, 1, 0, 1], 6)


def test_alphabets():
    assert alphabet(2) == [-1, 1]
    assert alphabet(4) == [-3, -1, 1, 3]
    assert constellation_energy(2) == 1.0
    assert constellation_energy(4) == 5.0


def test_qpsk_table_round_trips():
    report = validate_mapping(2)
    assert report.bijective
    for bits, pair in MAPPING_TABLES[2].items():
        assert inverse_lookup(pair, 2) == [bits]


def test_16qam_table_collisions_reported():
    # the printed table reuses two symbol pairs; surfaced, not corrected
    report = validate_mapping(4)
    assert not report.bijective
    got = {pair: sorted(rows) for pair, rows in report.collisions}
    assert got == {
        (-1, -3): [(0, 1, 1, 0), (1, 1, 1, 0)],
        (-1, -1): [(0, 1, 1, 1), (1, 1, 1, 1)],
    }
    assert "NOT bijective" in str(report)
    for bits, pair in MAPPING_TABLES[4].items():
        assert bits in inverse_lookup(pair, 4)


@given(st.lists(st.integers(0, 1), min_size=2, max_size=40).filter(lambda b: len(b) % 2 == 0))
def test_qpsk_injective(bits):
    x = modulate(bits, 2)
    np.testing.assert_array_equal((x < 0).astype(int), bits)


def test_hard_decision_examples():
    np.testing.assert_array_equal(hard_decision([0.9, 0.1]), [1, 0])
    np.testing.assert_array_equal(hard_decision([0.5]), [0])


def test_hard_decision_matches_loop(rng):
    p = rng.random(200)
    np.testing.assert_array_equal(hard_decision(p), [1 if v > 0.5 else 0 for v in p])


@pytest.mark.parametrize("bad", [[-0.1], [1.1], [np.nan]])
def test_hard_decision_out_of_range(bad):
    with pytest.raises(ValueError):
        hard_decision(bad)


def test_all_16qam_tuples_in_table():
    assert set(MAPPING_TABLES[4]) == set(itertools.product((0, 1), repeat=4))
