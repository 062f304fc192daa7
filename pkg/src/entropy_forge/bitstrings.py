"""Bitstring helpers and a canonical byte encoding for structured values.

Bitstrings are Python ``str`` objects over ``"01"``, most significant bit
first, so ``"1011"`` is the integer 11.  The empty string is the unique
0-bit string.
"""

from __future__ import annotations

import struct
from typing import Any

from .errors import ParameterError


def to_bits(value: int, width: int) -> str:
    if width < 0 or value < 0 or value >> width:
        raise ParameterError(f"value {value} does not fit in {width} bits")
    return format(value, f"0{width}b") if width else ""


def from_bits(s: str) -> int:
    check_bits(s)
    return int(s, 2) if s else 0


def check_bits(s: str, width: int | None = None) -> str:
    if not isinstance(s, str) or s.strip("01"):
        raise ParameterError(f"not a bitstring: {s!r}")
    if width is not None and len(s) != width:
        raise ParameterError(f"expected {width} bits, got {len(s)}")
    return s


def parity(x: int) -> int:
    return x.bit_count() & 1


def bits_to_bytes(s: str) -> bytes:
    """Pack a bitstring as a 2-byte bit length followed by the big-endian value."""
    check_bits(s)
    n = len(s)
    if n >= 1 << 16:
        raise ParameterError("bitstring too long to frame")
    return struct.pack(">H", n) + (from_bits(s).to_bytes((n + 7) // 8, "big") if n else b"")


def bytes_to_bits(data: bytes, offset: int = 0) -> tuple[str, int]:
    if offset + 2 > len(data):
        raise ParameterError("truncated bitstring header")
    (n,) = struct.unpack_from(">H", data, offset)
    offset += 2
    nbytes = (n + 7) // 8
    if offset + nbytes > len(data):
        raise ParameterError("truncated bitstring body")
    value = int.from_bytes(data[offset : offset + nbytes], "big")
    if value >> n:
        raise ParameterError("non-canonical bitstring padding")
    return to_bits(value, n), offset + nbytes


# Canonical tagged encoding: b=bytes, s=str, i=int, t=tuple, n=None.


def encode_value(v: Any) -> bytes:
    if v is None:
        return b"n"
    if isinstance(v, bool):
        v = int(v)
    if isinstance(v, bytes):
        return b"b" + struct.pack(">I", len(v)) + v
    if isinstance(v, str):
        raw = v.encode()
        return b"s" + struct.pack(">I", len(raw)) + raw
    if isinstance(v, int):
        raw = v.to_bytes((v.bit_length() + 8) // 8, "big", signed=True)
        return b"i" + struct.pack(">I", len(raw)) + raw
    if isinstance(v, tuple):
        return b"t" + struct.pack(">I", len(v)) + b"".join(encode_value(e) for e in v)
    raise ParameterError(f"cannot encode value of type {type(v).__name__}")


def _decode(data: bytes, pos: int) -> tuple[Any, int]:
    tag = data[pos : pos + 1]
    pos += 1
    if tag == b"n":
        return None, pos
    if tag not in (b"b", b"s", b"i", b"t") or pos + 4 > len(data):
        raise ParameterError("malformed encoded value")
    (n,) = struct.unpack_from(">I", data, pos)
    pos += 4
    if tag == b"t":
        items = []
        for _ in range(n):
            item, pos = _decode(data, pos)
            items.append(item)
        return tuple(items), pos
    raw = data[pos : pos + n]
    if len(raw) != n:
        raise ParameterError("truncated encoded value")
    pos += n
    if tag == b"b":
        return bytes(raw), pos
    if tag == b"s":
        return raw.decode(), pos
    return int.from_bytes(raw, "big", signed=True), pos


def decode_value(data: bytes) -> Any:
    value, pos = _decode(data, 0)
    if pos != len(data):
        raise ParameterError("trailing bytes after encoded value")
    return value
