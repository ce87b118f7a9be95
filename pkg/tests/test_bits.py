import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from f0track.bits import (
    BitReader,
    Bits,
    BitWriter,
    SeedBits,
    gamma_length,
    unzigzag,
    zigzag,
)
from f0track.errors import DecodeError, SeedLengthError


def test_gamma_lengths():
    assert [gamma_length(v) for v in (1, 2, 3, 4, 7, 8, 61)] == [1, 3, 3, 5, 5, 7, 11]
    with pytest.raises(ValueError):
        gamma_length(0)


def test_zigzag_order():
    assert [zigzag(v) for v in (0, -1, 1, -2, 2)] == [0, 1, 2, 3, 4]


@given(st.integers(-(10**6), 10**6))
def test_zigzag_roundtrip(v):
    assert unzigzag(zigzag(v)) == v


@given(st.lists(st.integers(1, 2**40), max_size=40))
def test_gamma_stream_roundtrip(values):
    w = BitWriter()
    for v in values:
        w.write_gamma(v)
    bits = w.getbits()
    assert len(bits) == sum(gamma_length(v) for v in values)
    r = BitReader(Bits.from_bytes(bits.to_bytes(), len(bits)))
    assert [r.read_gamma() for _ in values] == values
    assert r.remaining == 0


def test_reader_exhaustion():
    r = BitReader(Bits(0b101, 3))
    assert r.read(2) == 0b10
    with pytest.raises(DecodeError):
        r.read(2)
    with pytest.raises(DecodeError):
        BitReader(Bits(0, 4)).read_gamma()


def test_bits_validation():
    with pytest.raises(ValueError):
        Bits(8, 3)
    with pytest.raises(DecodeError):
        Bits.from_bytes(b"\x00", 9)


def test_seed_reader_is_little_endian_and_checked():
    s = SeedBits(0b1101, 4)
    r = s.reader()
    assert r.take(1) == 1
    assert r.take(2) == 0b10
    assert r.consumed == 3
    with pytest.raises(SeedLengthError):
        r.take(2)


def test_random_seed_length():
    s = SeedBits.random(np.random.default_rng(0), 13)
    assert s.length == 13 and s.value < 2**13
