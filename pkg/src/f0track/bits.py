"""Bit strings, seed bits and the small integer codes used by the sketches.

Bit strings are plain Python integers written most-significant-bit first
so that their byte form is easy to eyeball.  Long runs of gamma codes go
through numpy instead of a per-bit loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _jit
from .errors import DecodeError, SeedLengthError


def gamma_length(value: int) -> int:
    """Length in bits of the Elias-gamma code of ``value`` (``value >= 1``)."""
    if value < 1:
        raise ValueError(f"gamma code needs a positive integer, got {value}")
    return 2 * (value.bit_length() - 1) + 1


def _array_to_text(arr: np.ndarray) -> str:
    return (np.asarray(arr, np.uint8) + 48).tobytes().decode("ascii")


def _text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("ascii"), np.uint8) - 48


def zigzag(value: int) -> int:
    # 0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ...
    return 2 * value if value >= 0 else -2 * value - 1


def unzigzag(code: int) -> int:
    return code // 2 if code % 2 == 0 else -(code + 1) // 2


@dataclass(frozen=True)
class Bits:
    """An immutable bit string of explicit length (MSB-first in ``value``)."""

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0 or self.value < 0 or self.value.bit_length() > self.length:
            raise ValueError("bit string value does not fit its length")

    def __len__(self) -> int:
        return self.length

    def __str__(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    def to_bytes(self) -> bytes:
        pad = (-self.length) % 8
        return (self.value << pad).to_bytes((self.length + pad) // 8, "big")

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> "Bits":
        total = len(data) * 8
        if length > total:
            raise DecodeError("not enough bytes for requested bit length")
        return cls(int.from_bytes(data, "big") >> (total - length), length)


class BitWriter:
    # pieces are kept as '0'/'1' text so appending never copies earlier output
    def __init__(self):
        self._parts: list[str] = []
        self._length = 0

    def __len__(self) -> int:
        return self._length

    def write(self, value: int, width: int) -> None:
        if width < 0 or value < 0 or value.bit_length() > width:
            raise ValueError(f"{value} does not fit in {width} bits")
        if width:
            self._parts.append(format(value, f"0{width}b"))
            self._length += width

    def write_bits(self, bits: Bits) -> None:
        self.write(bits.value, bits.length)

    def write_gamma(self, value: int) -> None:
        n = value.bit_length() - 1
        if value < 1:
            raise ValueError("gamma code needs a positive integer")
        self.write(0, n)
        self.write(value, n + 1)

    def write_flags(self, flags: np.ndarray) -> None:
        """One bit per entry of a boolean array."""
        self._parts.append(_array_to_text(flags))
        self._length += len(flags)

    def write_gamma_many(self, values: np.ndarray) -> None:
        v = np.asarray(values, np.int64)
        if v.size == 0:
            return
        if v.min() < 1:
            raise ValueError("gamma code needs a positive integer")
        out = _jit.gamma_encode(v)
        self._parts.append(_array_to_text(out))
        self._length += out.size

    def getbits(self) -> Bits:
        text = "".join(self._parts)
        return Bits(int(text, 2) if text else 0, self._length)


class BitReader:
    def __init__(self, bits: Bits):
        self._text = str(bits)
        self._length = bits.length
        self._pos = 0

    @property
    def remaining(self) -> int:
        return self._length - self._pos

    def read(self, width: int) -> int:
        if width > self.remaining:
            raise DecodeError("bit string exhausted")
        if width == 0:
            return 0
        chunk = self._text[self._pos : self._pos + width]
        self._pos += width
        return int(chunk, 2)

    def read_gamma(self) -> int:
        one = self._text.find("1", self._pos)
        if one < 0:
            raise DecodeError("truncated gamma code")
        zeros = one - self._pos
        self._pos = one + 1
        return (1 << zeros) | self.read(zeros)

    def read_flags(self, count: int) -> np.ndarray:
        if count > self.remaining:
            raise DecodeError("bit string exhausted")
        out = _text_to_array(self._text[self._pos : self._pos + count]).astype(bool)
        self._pos += count
        return out

    def read_gamma_many(self, count: int) -> np.ndarray:
        out = np.zeros(count, np.int64)
        if count == 0:
            return out
        window = self._text[self._pos : self._pos + 127 * count]
        used = _jit.gamma_decode(_text_to_array(window), count, out)
        if used < 0:
            raise DecodeError("truncated or oversized gamma code")
        self._pos += used
        return out


@dataclass(frozen=True)
class SeedBits:
    """A random seed of exactly ``length`` bits, consumed from the low end.

    Reading order is little-endian on purpose: the first ``k`` bits of a
    seed are ``value & (2**k - 1)`` which keeps prefixes cheap to take.
    """

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0 or self.value < 0 or self.value.bit_length() > self.length:
            raise ValueError("seed value does not fit its length")

    def __len__(self) -> int:
        return self.length

    @classmethod
    def random(cls, rng: np.random.Generator, length: int) -> "SeedBits":
        nbytes = (length + 7) // 8
        value = int.from_bytes(rng.bytes(nbytes), "little") & ((1 << length) - 1)
        return cls(value, length)

    def reader(self) -> "SeedReader":
        return SeedReader(self)


class SeedReader:
    def __init__(self, seed: SeedBits):
        self._seed = seed
        self._pos = 0

    @property
    def consumed(self) -> int:
        return self._pos

    def take(self, width: int) -> int:
        if self._pos + width > self._seed.length:
            raise SeedLengthError(
                f"seed of {self._seed.length} bits exhausted (need {self._pos + width})"
            )
        out = (self._seed.value >> self._pos) & ((1 << width) - 1)
        self._pos += width
        return out
