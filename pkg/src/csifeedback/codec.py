"""Lossless coding of quantized feedback with the learned Gaussian model.

The coder is a carry-propagating range coder (32-bit range, 33-bit low with
a cached output byte, i.e. the LZMA design) over 16-bit frequency tables.
Streams terminate on the shortest dyadic interval inside the final coding
interval, so payloads are prefix-free and measured to the bit.

Stream layout, little-endian::

    u8   version
    u16  N_b
    u16  support bound S_i, N_b times
    u32  payload length in bits
    ...  payload, ceil(bits / 8) bytes, zero padded
    u32  CRC-32 of everything above
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DecodeError
from .feedback import bin_probability, quantize

VERSION = 1
FREQ_BITS = 16
TOTAL_FREQ = 1 << FREQ_BITS
TAIL_MASS = 2.0 ** -16
MAX_SUPPORT = 4095
RAW_BITS = 32

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_TAIL_Z = -float(ndtri(TAIL_MASS / 2.0))


def _support_bound(sigma: float) -> int:
    """Smallest S with Gaussian mass outside [-S-0.5, S+0.5] below TAIL_MASS."""
    def tail(s):
        return 2.0 * ndtr(-(s + 0.5) / sigma)

    s = max(0, math.ceil(_TAIL_Z * sigma - 0.5))
    while s > 0 and tail(s - 1) < TAIL_MASS:
        s -= 1
    while s < MAX_SUPPORT and tail(s) >= TAIL_MASS:
        s += 1
    return min(s, MAX_SUPPORT)


def _quantize_pmf(probs: np.ndarray) -> np.ndarray:
    """Integer frequencies >= 1 summing to TOTAL_FREQ, roughly proportional to probs."""
    n = probs.size
    spare = TOTAL_FREQ - n
    if spare < 0:
        raise ConfigError(f"alphabet of {n} symbols exceeds frequency resolution")
    probs = probs / probs.sum()
    freqs = 1 + np.floor(probs * spare).astype(np.int64)
    freqs[int(np.argmax(probs))] += TOTAL_FREQ - int(freqs.sum())
    return freqs


class SymbolTable:
    """Per-dimension cumulative frequency tables; immutable once built.

    Dimension i codes integers in [-S_i, S_i] directly; anything else is
    sent as an escape symbol followed by a raw 32-bit two's-complement value.
    """

    def __init__(self, supports, freqs):
        self.supports = tuple(int(s) for s in supports)
        self.freqs = tuple(np.asarray(f, dtype=np.int64) for f in freqs)
        self.cumfreqs = tuple(np.concatenate([[0], np.cumsum(f)]) for f in self.freqs)
        for s, f, c in zip(self.supports, self.freqs, self.cumfreqs):
            if f.size != 2 * s + 2 or np.any(f <= 0) or c[-1] != TOTAL_FREQ:
                raise ConfigError("inconsistent frequency table")

    @property
    def n_b(self) -> int:
        return len(self.supports)

    def escape_index(self, dim: int) -> int:
        return 2 * self.supports[dim] + 1

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<H", self.n_b)]
        for s, f in zip(self.supports, self.freqs):
            parts.append(struct.pack("<H", s))
            parts.append(f.astype("<u4").tobytes())
        return b"".join(parts)

    def __eq__(self, other):
        return isinstance(other, SymbolTable) and self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())


def build_symbol_table(model) -> SymbolTable:
    """Discretize the Gaussian scales (an ``EntropyModel`` or an array) into a table."""
    scales = model.scale_values() if hasattr(model, "scale_values") else model
    scales = np.asarray(scales, dtype=np.float64).ravel()
    if np.any(scales <= 0):
        raise ConfigError("entropy model scales must be positive")
    supports, freqs = [], []
    for sigma in scales:
        s = _support_bound(float(sigma))
        values = np.arange(-s, s + 1, dtype=np.float64)
        p = bin_probability(values, np.full_like(values, sigma))
        escape = max(1.0 - float(p.sum()), 0.0)
        supports.append(s)
        freqs.append(_quantize_pmf(np.append(p, escape)))
    return SymbolTable(supports, freqs)


@dataclass
class Bitstream:
    n_b: int
    supports: tuple
    payload: bytes
    bit_length: int
    version: int = VERSION
    checksum: int | None = None

    def __post_init__(self):
        if self.checksum is None:
            self.checksum = zlib.crc32(self._body())

    def _body(self) -> bytes:
        head = struct.pack("<BH", self.version, self.n_b)
        head += struct.pack(f"<{self.n_b}H", *self.supports)
        head += struct.pack("<I", self.bit_length)
        return head + self.payload

    @property
    def header_bits(self) -> int:
        return 8 * (1 + 2 + 2 * self.n_b + 4 + 4)

    def to_bytes(self) -> bytes:
        return self._body() + struct.pack("<I", self.checksum)

    def verify(self):
        if zlib.crc32(self._body()) != self.checksum:
            raise DecodeError("bitstream checksum mismatch")
        if len(self.payload) != (self.bit_length + 7) // 8:
            raise DecodeError("payload length disagrees with bit length")

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        data = bytes(data)
        if len(data) < 11:
            raise DecodeError("bitstream too short")
        version, n_b = struct.unpack_from("<BH", data, 0)
        if version != VERSION:
            raise DecodeError(f"unsupported bitstream version {version}")
        offset = 3 + 2 * n_b
        if len(data) < offset + 8:
            raise DecodeError("truncated bitstream header")
        supports = struct.unpack_from(f"<{n_b}H", data, 3)
        (bit_length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        n_bytes = (bit_length + 7) // 8
        if len(data) != offset + n_bytes + 4:
            raise DecodeError("bitstream length disagrees with header")
        payload = data[offset:offset + n_bytes]
        (checksum,) = struct.unpack_from("<I", data, offset + n_bytes)
        stream = cls(n_b, tuple(supports), payload, bit_length, version, checksum)
        stream.verify()
        return stream


class _RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start: int, size: int, total_bits: int = FREQ_BITS):
        r = self.range >> total_bits
        self.low += r * start
        self.range = r * size
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> tuple[bytes, int]:
        # pick the point of the final interval with the most trailing zeros
        for j in range(32, -1, -1):
            step = 1 << j
            v = -(-self.low // step) * step
            if v + step <= self.low + self.range:
                break
        self.low = v
        for _ in range(5):
            self._shift_low()
        # the first byte is the coder's initial cache and always zero
        assert self.out[0] == 0
        body = bytes(self.out[1:])
        bit_length = 8 * len(body) - j
        return body[:(bit_length + 7) // 8], bit_length


class _RangeDecoder:
    def __init__(self, payload: bytes):
        self.data = payload
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
        else:
            b = 0
        self.pos += 1
        return b

    def decode(self, cumfreq: np.ndarray, total_bits: int = FREQ_BITS) -> int:
        r = self.range >> total_bits
        value = self.code // r
        if value >= (1 << total_bits):
            raise DecodeError("code value outside the coding interval")
        if cumfreq is None:
            index, start, size = value, value, 1
        else:
            index = int(np.searchsorted(cumfreq, value, side="right")) - 1
            start = int(cumfreq[index])
            size = int(cumfreq[index + 1]) - start
        self.code -= r * start
        self.range = r * size
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        return index


def range_encode(symbols, table: SymbolTable) -> Bitstream:
    symbols = np.asarray(symbols)
    if symbols.shape != (table.n_b,):
        raise ConfigError(f"expected {table.n_b} symbols, got shape {symbols.shape}")
    enc = _RangeEncoder()
    for dim, value in enumerate(symbols.tolist()):
        s = table.supports[dim]
        cum = table.cumfreqs[dim]
        if -s <= value <= s:
            idx = value + s
            enc.encode(int(cum[idx]), int(cum[idx + 1] - cum[idx]))
        else:
            if not -(1 << 31) <= value < (1 << 31):
                raise ConfigError(f"symbol {value} does not fit the 32-bit escape")
            idx = table.escape_index(dim)
            enc.encode(int(cum[idx]), int(cum[idx + 1] - cum[idx]))
            raw = value & _MASK32
            enc.encode(raw >> 16, 1)
            enc.encode(raw & 0xFFFF, 1)
    payload, bit_length = enc.finish()
    return Bitstream(table.n_b, table.supports, payload, bit_length)


def range_decode(stream, table: SymbolTable) -> np.ndarray:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = Bitstream.from_bytes(stream)
    else:
        stream.verify()
    if stream.n_b != table.n_b or tuple(stream.supports) != table.supports:
        raise DecodeError("bitstream header does not match the symbol table")
    dec = _RangeDecoder(stream.payload)
    out = np.empty(table.n_b, dtype=np.int64)
    for dim in range(table.n_b):
        idx = dec.decode(table.cumfreqs[dim])
        s = table.supports[dim]
        if idx == table.escape_index(dim):
            raw = (dec.decode(None) << 16) | dec.decode(None)
            out[dim] = raw - (1 << 32) if raw >= (1 << 31) else raw
        else:
            out[dim] = idx - s
    return out


def model_cross_entropy(symbols, scales) -> float:
    """Mean over rows of sum_i -log2 p(symbol_i) under the continuous model."""
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.float64))
    p = bin_probability(symbols, np.broadcast_to(np.asarray(scales, dtype=np.float64), symbols.shape))
    return float((-np.log2(p)).sum(axis=1).mean())


def measure_rate(symbols, model) -> float:
    """Mean realized payload bits per vector when coding each row of ``symbols``."""
    table = model if isinstance(model, SymbolTable) else build_symbol_table(model)
    symbols = np.atleast_2d(np.asarray(symbols))
    if not np.issubdtype(symbols.dtype, np.integer):
        symbols = quantize(symbols)
    total = 0
    for row in symbols:
        total += range_encode(row, table).bit_length
    return total / len(symbols)
