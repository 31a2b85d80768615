"""
Bit-exact file formats: binary PGM images, the NTX1 array container and the
seeded weight stream that makes every network reproducible across platforms.

NTX1 layout (all integers little-endian):

    array record   "NTX1" | u16 version=1 | u16 rank | rank × u32 dims | f32 payload
    named file     "NTX1" | u16 version=1 | u16 section count |
                   count × (u16 name length | UTF-8 name | array record)

Sections are written sorted by name, so re-serialising an unmodified read
reproduces the original bytes.
"""

import logging
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Sequence

import numpy as np

from ntg.errors import (
    BadMagicError,
    BadVersionError,
    DimsOverflowError,
    FormatError,
    NumericError,
    PgmFormatError,
    ShapeMismatchError,
    TrailingBytesError,
    TruncatedError,
)
from ntg.grid import as_grid

logger = logging.getLogger(__name__)

MAGIC = b"NTX1"
VERSION = 1
MAX_ELEMENTS = 2 ** 31 - 1

_MASK64 = (1 << 64) - 1


# ============================================================
# Seeded weights
# ============================================================

class SeededWeightStream:
    """xorshift64* stream; identical seed gives identical samples everywhere."""

    MULTIPLIER = 0x2545F4914F6CDD1D
    SEED_MIX = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        state = (int(seed) & _MASK64) ^ self.SEED_MIX
        self._state = state or 1

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * self.MULTIPLIER) & _MASK64

    def uniform(self) -> float:
        """Top 24 output bits mapped to [-1, 1)."""
        return (self.next_u64() >> 40) / float(1 << 23) - 1.0

    def samples(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def he_tensor(self, shape: Sequence[int], fan_in: int) -> np.ndarray:
        count = int(np.prod(shape))
        return self.samples(count).reshape(shape) * math.sqrt(2.0 / fan_in)


# ============================================================
# Atomic writes
# ============================================================

def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ============================================================
# PGM
# ============================================================

def encode_pgm(image: np.ndarray) -> bytes:
    arr = as_grid(image, "pgm image")
    if arr.shape[0] != 1:
        raise ShapeMismatchError("PGM export needs a single channel", arr.shape, (1,) + arr.shape[1:])
    pixels = np.rint(np.clip(arr[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(image: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_pgm(image))


def decode_pgm(data: bytes) -> np.ndarray:
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise TruncatedError("PGM header ends early")
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] != b"P5":
            kind = tokens[0].decode("ascii", "replace")
            if kind in ("P2", "P3", "P6"):
                raise PgmFormatError(f"unsupported PNM variant {kind}: only binary greyscale P5 is read")
            raise PgmFormatError(f"not a PGM file (magic {kind!r})")

    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PgmFormatError(f"malformed PGM header fields {tokens[1:]!r}")
    if maxval != 255:
        raise PgmFormatError(f"unsupported maxval {maxval}: only 8-bit (255) PGM is read")
    if width < 1 or height < 1:
        raise PgmFormatError(f"invalid PGM dims {width}x{height}")

    pos += 1  # single whitespace after maxval
    payload = data[pos:]
    if len(payload) < width * height:
        raise TruncatedError(f"PGM payload has {len(payload)} bytes, expected {width * height}")
    if len(payload) > width * height:
        raise TrailingBytesError(f"PGM payload has {len(payload) - width * height} trailing bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (pixels.astype(np.float64) / 255.0)[np.newaxis]


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


# ============================================================
# NTX1
# ============================================================

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining:
            raise TruncatedError(f"needed {n} bytes at offset {self.pos}, {self.remaining} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _read_header(reader: _Reader) -> None:
    magic = reader.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u16()
    if version != VERSION:
        raise BadVersionError(f"unsupported NTX1 version {version}")


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim > 0xFFFF or any(d > 0xFFFFFFFF for d in arr.shape):
        raise DimsOverflowError(f"array shape {arr.shape} does not fit NTX1")
    payload = arr.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NumericError("NTX1 payload", "values overflow float32")
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return MAGIC + struct.pack("<HH", VERSION, arr.ndim) + dims + payload.tobytes()


def _decode_array(reader: _Reader) -> np.ndarray:
    _read_header(reader)
    rank = reader.u16()
    dims = tuple(reader.u32() for _ in range(rank))
    count = math.prod(dims)
    if count > MAX_ELEMENTS:
        raise DimsOverflowError(f"dims {dims} describe {count} elements")
    raw = reader.take(4 * count)
    arr = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"non-finite values in an array ending at offset {reader.pos}")
    return arr


def encode_ntx1(sections: Mapping[str, np.ndarray]) -> bytes:
    if len(sections) > 0xFFFF:
        raise DimsOverflowError(f"{len(sections)} sections exceed the u16 count")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(sections))]
    for name in sorted(sections):
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"section name too long: {name[:40]}…")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(_encode_array(sections[name]))
    return b"".join(parts)


def decode_ntx1(data: bytes) -> Dict[str, np.ndarray]:
    reader = _Reader(data)
    _read_header(reader)
    count = reader.u16()
    sections: Dict[str, np.ndarray] = {}
    for _ in range(count):
        raw_name = reader.take(reader.u16())
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"section name is not UTF-8 at offset {reader.pos}")
        if name in sections:
            raise FormatError(f"duplicate section {name!r}")
        sections[name] = _decode_array(reader)
    if reader.remaining:
        raise TrailingBytesError(f"{reader.remaining} bytes after the last section")
    return sections


def write_ntx1(sections: Mapping[str, np.ndarray], path) -> None:
    atomic_write_bytes(path, encode_ntx1(sections))
    logger.debug("Wrote %d NTX1 sections to %s", len(sections), path)


def read_ntx1(path) -> Dict[str, np.ndarray]:
    return decode_ntx1(Path(path).read_bytes())
