import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from csifeedback import codec
from csifeedback.codec import (
    MAX_SUPPORT,
    TAIL_MASS,
    TOTAL_FREQ,
    Bitstream,
    build_symbol_table,
    measure_rate,
    model_cross_entropy,
    range_decode,
    range_encode,
)
from csifeedback.errors import DecodeError
from csifeedback.feedback import EntropyModel, estimate_overhead
from csifeedback.layers import ParameterSet


def oracle_support(sigma):
    """Smallest S with two-sided mass beyond S + 1/2 below the tail threshold."""
    s = 0
    while 2 * norm.sf((s + 0.5) / sigma) >= TAIL_MASS:
        s += 1
    return s


def model_samples(rng, scales, n):
    return np.rint(rng.normal(0.0, scales, size=(n, len(scales)))).astype(np.int64)


# -------------------------------------------------------------- tables

@pytest.mark.parametrize("sigma", [0.05, 0.3, 1.0, 2.5, 17.0, 100.0])
def test_support_matches_tail_oracle(sigma):
    table = build_symbol_table(np.array([sigma]))
    assert table.supports[0] == oracle_support(sigma)


def test_support_small_and_proportional():
    s1 = build_symbol_table(np.array([1.0])).supports[0]
    s100 = build_symbol_table(np.array([100.0])).supports[0]
    assert s1 <= 6
    assert 80 * s1 < s100 < 120 * (s1 + 1)


def test_support_is_capped():
    assert build_symbol_table(np.array([1e5])).supports[0] == MAX_SUPPORT


def test_table_frequencies_consistent():
    table = build_symbol_table(np.array([0.01, 0.7, 3.0, 40.0]))
    for f, c in zip(table.freqs, table.cumfreqs):
        assert np.all(f >= 1)
        assert c[0] == 0 and c[-1] == TOTAL_FREQ
        np.testing.assert_array_equal(np.diff(c), f)


def test_table_deterministic_from_model():
    params = ParameterSet()
    model = EntropyModel(params, 8)
    model.rho.data[:] = np.linspace(-3, 4, 8)
    a, b = build_symbol_table(model), build_symbol_table(model)
    assert a.to_bytes() == b.to_bytes()
    assert a == b and hash(a) == hash(b)
    x = np.arange(-4, 4)
    assert range_encode(x, a).to_bytes() == range_encode(x, b).to_bytes()


# ---------------------------------------------------------- round trips

def test_all_zero_vector():
    table = build_symbol_table(np.ones(16))
    stream = range_encode(np.zeros(16, dtype=np.int64), table)
    np.testing.assert_array_equal(range_decode(stream.to_bytes(), table), np.zeros(16))
    estimate = estimate_overhead(np.zeros((1, 16)), np.ones(16))
    assert estimate <= stream.bit_length <= estimate * 1.02 + 2
    assert stream.header_bits == 8 * (1 + 2 + 32 + 4 + 4)


def test_escape_values_round_trip():
    table = build_symbol_table(np.ones(4))
    x = np.array([100_000, -2**31, 2**31 - 1, 5])
    np.testing.assert_array_equal(range_decode(range_encode(x, table).to_bytes(), table), x)


def test_empty_like_degenerate_model_is_near_header_only():
    table = build_symbol_table(np.full(16, 1e-3))
    stream = range_encode(np.zeros(16, dtype=np.int64), table)
    assert stream.bit_length <= 1
    assert measure_rate(np.zeros((10, 16), dtype=np.int64), table) <= 1


def test_fuzz_round_trip_1e5_vectors():
    rng = np.random.default_rng(0)
    n_b = 8
    scales = np.array([0.05, 0.4, 1.0, 1.0, 3.0, 8.0, 30.0, 200.0])
    table = build_symbol_table(scales)
    n = 100_000
    x = model_samples(rng, scales * rng.uniform(0.5, 3.0, size=n_b), n)
    # sprinkle escapes: out-of-support values, including the 32-bit extremes
    mask = rng.random(x.shape) < 0.02
    wild = rng.integers(-2**31, 2**31, size=x.shape)
    x = np.where(mask, wild, x)
    x[0] = [-2**31, 2**31 - 1, 0, 0, 0, 0, 0, 0]
    supports = np.array(table.supports)
    assert np.any(np.abs(x) > supports)
    for row in x:
        assert np.array_equal(range_decode(range_encode(row, table).to_bytes(), table), row)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-2**31, 2**31 - 1), min_size=5, max_size=5),
       st.lists(st.floats(1e-3, 500.0), min_size=5, max_size=5))
def test_round_trip_property(values, scales):
    table = build_symbol_table(np.array(scales))
    x = np.array(values, dtype=np.int64)
    stream = range_encode(x, table)
    again = Bitstream.from_bytes(stream.to_bytes())
    assert again == stream
    np.testing.assert_array_equal(range_decode(again, table), x)


def test_streams_are_prefix_free():
    # bits beyond the stated length must not influence decoding
    rng = np.random.default_rng(1)
    scales = np.array([0.5, 1.0, 2.0, 4.0])
    table = build_symbol_table(scales)
    for row in model_samples(rng, scales, 2000):
        stream = range_encode(row, table)
        padded = bytearray(stream.payload) + bytes(rng.integers(0, 256, size=6).tolist())
        n_full, rem = divmod(stream.bit_length, 8)
        if rem:
            keep = 0xFF << (8 - rem) & 0xFF
            padded[n_full] = (padded[n_full] & keep) | (int(rng.integers(0, 256)) & ~keep & 0xFF)
        dec = codec._RangeDecoder(bytes(padded))
        got = [dec.decode(table.cumfreqs[i]) - table.supports[i] for i in range(4)]
        np.testing.assert_array_equal(got, row)


# ------------------------------------------------------------ integrity

def test_every_flipped_bit_is_detected():
    table = build_symbol_table(np.array([1.0, 2.0, 3.0, 0.5]))
    data = range_encode(np.array([1, -3, 7, 0]), table).to_bytes()
    for bit in range(8 * len(data)):
        bad = bytearray(data)
        bad[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(DecodeError):
            range_decode(bytes(bad), table)


def test_truncated_and_mismatched_streams():
    table = build_symbol_table(np.ones(4))
    data = range_encode(np.array([1, 2, 3, 4]), table).to_bytes()
    for cut in (0, 5, len(data) - 1):
        with pytest.raises(DecodeError):
            range_decode(data[:cut], table)
    with pytest.raises(DecodeError):
        range_decode(data, build_symbol_table(np.full(4, 9.0)))
    bad_version = bytes([2]) + data[1:]
    with pytest.raises(DecodeError):
        Bitstream.from_bytes(bad_version)


def test_header_layout():
    table = build_symbol_table(np.array([1.0, 100.0]))
    stream = range_encode(np.array([0, 3]), table)
    data = stream.to_bytes()
    version, n_b, s0, s1, bits = struct.unpack_from("<BHHHI", data, 0)
    assert (version, n_b, (s0, s1), bits) == (1, 2, table.supports, stream.bit_length)
    assert len(data) == 11 + 2 * 2 + (bits + 7) // 8


# ----------------------------------------------------------------- rate

@pytest.mark.parametrize("scales", [
    np.ones(8),
    np.array([0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0]),
    np.full(16, 0.3),
])
def test_rate_bound_on_model_distributed_vectors(scales):
    rng = np.random.default_rng(2)
    x = model_samples(rng, scales, 10_000)
    realized = measure_rate(x, build_symbol_table(scales))
    cross_entropy = model_cross_entropy(x, scales)
    assert cross_entropy <= realized <= cross_entropy * 1.02 + 2.0


def test_measure_rate_quantizes_real_input():
    scales = np.ones(4)
    x = np.array([[0.2, -0.4, 1.6, 2.49]])
    assert measure_rate(x, scales) == range_encode(np.array([0, 0, 2, 2]),
                                                   build_symbol_table(scales)).bit_length
