"""GF(2^s) arithmetic and the keyed hash families used by the protocols.

Field elements are integers whose bit ``k`` is the coefficient of ``x**k``.
Bitstring inputs are read most-significant-bit first (``"011"`` is the
element ``x + 1``), and truncation to ``t`` bits keeps the ``t`` low-order
coefficients.
"""

from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .bitstrings import check_bits, from_bits, parity, to_bits
from .errors import ParameterError, RegimeError
from .rng import SeedStream

# Low s coefficients of a low-weight irreducible polynomial of degree s.
IRREDUCIBLE_LOW_BITS: dict[int, int] = {
    1: 1, 2: 3, 3: 3, 4: 3, 5: 5, 6: 3, 7: 3, 8: 27, 9: 3, 10: 9, 11: 5, 12: 9,
    13: 27, 14: 33, 15: 3, 16: 43, 17: 9, 18: 9, 19: 39, 20: 9, 21: 5, 22: 3,
    23: 33, 24: 27, 25: 9, 26: 27, 27: 39, 28: 3, 29: 5, 30: 3, 31: 9, 32: 141,
    33: 1025, 34: 129, 35: 5, 36: 513, 37: 83, 38: 99, 39: 17, 40: 57, 41: 9,
    42: 129, 43: 89, 44: 33, 45: 27, 46: 3, 47: 33, 48: 45, 49: 513, 50: 29,
    51: 75, 52: 9, 53: 71, 54: 513, 55: 129, 56: 149, 57: 17, 58: 524289,
    59: 149, 60: 3, 61: 39, 62: 536870913, 63: 3, 64: 27,
}

EXHAUSTIVE_KEY_CAP = 1 << 24


def _polymod(a: int, m: int) -> int:
    dm = m.bit_length() - 1
    while a and a.bit_length() - 1 >= dm:
        a ^= m << (a.bit_length() - 1 - dm)
    return a


@lru_cache(maxsize=None)
def _irreducible_by_division(full: int) -> bool:
    degree = full.bit_length() - 1
    for d in range(2, 1 << (degree // 2 + 1)):
        if d.bit_length() - 1 > degree // 2:
            break
        if _polymod(full, d) == 0:
            return False
    return True


@dataclass(frozen=True)
class FieldSpec:
    s: int
    modulus: int

    def __post_init__(self) -> None:
        if not 1 <= self.s <= 64:
            raise ParameterError("field degree must be in 1..64")
        if not 0 <= self.modulus < (1 << self.s):
            raise ParameterError("modulus must be given by its low s coefficients")
        if self.s <= 16 and not _irreducible_by_division(self.full_modulus):
            raise ParameterError(f"modulus {self.full_modulus:#x} is reducible")

    @property
    def full_modulus(self) -> int:
        return (1 << self.s) | self.modulus

    @property
    def order(self) -> int:
        return 1 << self.s


@lru_cache(maxsize=None)
def gf_field(s: int) -> FieldSpec:
    """The field GF(2^s) with the built-in modulus."""
    if s not in IRREDUCIBLE_LOW_BITS:
        raise ParameterError("field degree must be in 1..64")
    return FieldSpec(s, IRREDUCIBLE_LOW_BITS[s])


@dataclass(frozen=True)
class FieldElement:
    bits: int
    field: FieldSpec

    def __post_init__(self) -> None:
        if not 0 <= self.bits < self.field.order:
            raise ParameterError("element out of range for field")

    def _check(self, other: FieldElement) -> None:
        if other.field != self.field:
            raise ParameterError("elements belong to different fields")

    def __add__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.bits ^ other.bits, self.field)

    def __mul__(self, other: FieldElement) -> FieldElement:
        return gf_mul(self, other, self.field)

    def inverse(self) -> FieldElement:
        return FieldElement(gf_inv(self.bits, self.field), self.field)


def gf_mul(a, b, f: FieldSpec):
    """Product in GF(2^s).  Accepts ints or FieldElements (returns the same kind)."""
    if isinstance(a, FieldElement) or isinstance(b, FieldElement):
        if not (isinstance(a, FieldElement) and isinstance(b, FieldElement)):
            raise ParameterError("cannot mix FieldElement and int operands")
        if a.field.s != f.s or b.field.s != f.s:
            raise ParameterError("mismatched field degree")
        return FieldElement(_gf_mul_int(a.bits, b.bits, f), f)
    if not (0 <= a < f.order and 0 <= b < f.order):
        raise ParameterError("operand out of range for field")
    return _gf_mul_int(a, b, f)


def _gf_mul_int(a: int, b: int, f: FieldSpec) -> int:
    top = 1 << f.s
    red = f.full_modulus
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= red
    return r


def gf_pow(a: int, e: int, f: FieldSpec) -> int:
    r = 1
    while e:
        if e & 1:
            r = _gf_mul_int(r, a, f)
        a = _gf_mul_int(a, a, f)
        e >>= 1
    return r


def gf_inv(a: int, f: FieldSpec) -> int:
    if a == 0:
        raise ParameterError("zero has no inverse")
    return gf_pow(a, f.order - 2, f)


def gf_mul_array(a: np.ndarray, b: np.ndarray, f: FieldSpec) -> np.ndarray:
    """Elementwise GF(2^s) product of two broadcastable uint64 arrays (s <= 63)."""
    if f.s > 63:
        raise ParameterError("vectorised multiply supports s <= 63")
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a, b = np.broadcast_arrays(a, b)
    a = a.copy()
    r = np.zeros_like(a)
    top = np.uint64(1 << f.s)
    red = np.uint64(f.full_modulus)
    one = np.uint64(1)
    for k in range(f.s):
        bit = (b >> np.uint64(k)) & one
        r ^= a * bit
        a <<= one
        a ^= np.where(a & top, red, np.uint64(0))
    return r


# ---------------------------------------------------------------------------
# Hash families

KINDS = ("boolean-matrix", "field-multiply-truncate", "poly-ell-wise", "inner-product-bit", "tcr-standin")
TCR_MODES = ("oracle", "mix")


@dataclass(frozen=True)
class HashFamilySpec:
    kind: str
    domain_bits: int
    range_bits: int
    ell: int = 1
    tcr_key_bits: int = 16
    tcr_mode: str = "oracle"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown hash family kind {self.kind!r}")
        if self.domain_bits < 1 or self.range_bits < 0:
            raise ParameterError("domain must be positive and range non-negative")
        if self.ell < 1:
            raise ParameterError("independence order must be >= 1")
        if self.kind in ("field-multiply-truncate", "poly-ell-wise"):
            if self.domain_bits > 64:
                raise ParameterError("field families support domains up to 64 bits")
            if self.range_bits > self.domain_bits:
                raise ParameterError("range exceeds domain for a compressing family")
        if self.kind == "inner-product-bit" and self.range_bits != 1:
            raise ParameterError("inner-product-bit has a 1-bit range")
        if self.kind == "tcr-standin":
            if self.range_bits >= self.domain_bits:
                raise ParameterError("tcr stand-in must compress")
            if self.tcr_mode not in TCR_MODES:
                raise ParameterError(f"unknown tcr mode {self.tcr_mode!r}")
            if self.tcr_key_bits < 0:
                raise ParameterError("tcr key length must be non-negative")

    @property
    def key_bits(self) -> int:
        d, r = self.domain_bits, self.range_bits
        if self.kind == "boolean-matrix":
            return r * d
        if self.kind in ("field-multiply-truncate", "inner-product-bit"):
            return d
        if self.kind == "poly-ell-wise":
            return self.ell * d
        return self.tcr_key_bits

    @property
    def key_count(self) -> int:
        return 1 << self.key_bits

    def to_json(self) -> dict:
        out = {"kind": self.kind, "domain_bits": self.domain_bits, "range_bits": self.range_bits, "ell": self.ell}
        if self.kind == "tcr-standin":
            out["tcr_key_bits"] = self.tcr_key_bits
            out["tcr_mode"] = self.tcr_mode
        return out


def tcr_family(domain_bits: int, range_bits: int, key_bits: int = 16, mode: str = "oracle") -> HashFamilySpec:
    return HashFamilySpec("tcr-standin", domain_bits, range_bits, tcr_key_bits=key_bits, tcr_mode=mode)


TcrSpec = HashFamilySpec

_ORACLE_TABLE: dict[tuple[int, int, int, int, int], int] = {}
_ORACLE_LOCK = threading.Lock()


def _oracle_value(fam: HashFamilySpec, key: int, x: int) -> int:
    memo_key = (fam.domain_bits, fam.range_bits, fam.tcr_key_bits, key, x)
    hit = _ORACLE_TABLE.get(memo_key)
    if hit is not None:
        return hit
    msg = f"tcr|{fam.domain_bits}|{fam.range_bits}|{fam.tcr_key_bits}|{key}|{x}".encode()
    value = int.from_bytes(hashlib.sha256(msg).digest(), "big") >> (256 - fam.range_bits) if fam.range_bits else 0
    with _ORACLE_LOCK:
        return _ORACLE_TABLE.setdefault(memo_key, value)


def _rotl(x: int, r: int, width: int) -> int:
    r %= width
    mask = (1 << width) - 1
    return ((x << r) | (x >> (width - r))) & mask


def _mix_value(fam: HashFamilySpec, key: int, x: int) -> int:
    d = fam.domain_bits
    mask = (1 << d) - 1
    kb = max(fam.tcr_key_bits, 1)
    k = key | (key << kb) | (key << 2 * kb)
    v = x
    for rnd in range(3):
        v ^= (k >> (rnd * 7)) & mask
        v = _rotl(v, 5 + rnd, d)
        v = (v * (2 * ((k >> rnd) & mask) + 1)) & mask
    return v >> (d - fam.range_bits)


@dataclass(frozen=True)
class HashFunction:
    family: HashFamilySpec
    key: int
    _field: FieldSpec | None = dc_field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.key < self.family.key_count:
            raise ParameterError("key length does not match the family")
        if self.family.kind in ("field-multiply-truncate", "poly-ell-wise"):
            object.__setattr__(self, "_field", gf_field(self.family.domain_bits))

    @property
    def key_bitstring(self) -> str:
        return to_bits(self.key, self.family.key_bits)

    @property
    def key_hex(self) -> str:
        width = (self.family.key_bits + 3) // 4
        return format(self.key, f"0{width}x") if width else ""

    def eval_int(self, x: int) -> int:
        fam = self.family
        d, r = fam.domain_bits, fam.range_bits
        if not 0 <= x < (1 << d):
            raise ParameterError("input length mismatch")
        kind = fam.kind
        if kind == "boolean-matrix":
            row_mask = (1 << d) - 1
            out = 0
            for row in range(r):
                coeffs = (self.key >> ((r - 1 - row) * d)) & row_mask
                out = (out << 1) | parity(coeffs & x)
            return out
        if kind == "field-multiply-truncate":
            return _gf_mul_int(self.key, x, self._field) & ((1 << r) - 1)
        if kind == "poly-ell-wise":
            mask = (1 << d) - 1
            ell = fam.ell
            acc = 0
            for i in range(ell - 1, -1, -1):
                coeff = (self.key >> ((ell - 1 - i) * d)) & mask
                acc = _gf_mul_int(acc, x, self._field) ^ coeff
            return acc & ((1 << r) - 1)
        if kind == "inner-product-bit":
            return parity(self.key & x)
        if fam.tcr_mode == "oracle":
            return _oracle_value(fam, self.key, x)
        return _mix_value(fam, self.key, x)

    def __call__(self, x: str) -> str:
        check_bits(x, self.family.domain_bits)
        return to_bits(self.eval_int(from_bits(x)), self.family.range_bits)

    def to_json(self) -> dict:
        out = self.family.to_json()
        out["key_hex"] = self.key_hex
        return out

    @classmethod
    def from_json(cls, obj: dict) -> HashFunction:
        fam = HashFamilySpec(
            obj["kind"],
            int(obj["domain_bits"]),
            int(obj["range_bits"]),
            int(obj.get("ell", 1)),
            int(obj.get("tcr_key_bits", 16)),
            obj.get("tcr_mode", "oracle"),
        )
        key = int(obj["key_hex"], 16) if obj["key_hex"] else 0
        return cls(fam, key)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def eval_hash(h: HashFunction, x: str) -> str:
    return h(x)


def sample_hash(family: HashFamilySpec, rng: SeedStream) -> HashFunction:
    return HashFunction(family, rng.bits(family.key_bits))


tcr_sample = sample_hash
tcr_eval = eval_hash


def _as_int(x: str | int, width: int) -> int:
    if isinstance(x, str):
        check_bits(x, width)
        return from_bits(x)
    if not 0 <= x < (1 << width):
        raise ParameterError("input length mismatch")
    return x


def all_functions(family: HashFamilySpec) -> Iterable[HashFunction]:
    if family.key_count > EXHAUSTIVE_KEY_CAP:
        raise RegimeError(f"{family.key_count} keys exceed the exhaustive cap; estimate by sampling")
    return (HashFunction(family, k) for k in range(family.key_count))


def exact_collision_probability(family: HashFamilySpec, x: str | int, x2: str | int) -> Fraction:
    """Exact fraction of keys under which x and x2 collide."""
    a = _as_int(x, family.domain_bits)
    b = _as_int(x2, family.domain_bits)
    if a == b:
        raise ParameterError("collision probability needs distinct inputs")
    if family.kind in VECTOR_KINDS and family.key_count <= EXHAUSTIVE_KEY_CAP:
        out = eval_all_keys(family, [a, b])
        hits = int(np.count_nonzero(out[:, 0] == out[:, 1]))
        return Fraction(hits, family.key_count)
    hits = sum(1 for h in all_functions(family) if h.eval_int(a) == h.eval_int(b))
    return Fraction(hits, family.key_count)


def joint_output_counts(family: HashFamilySpec, xs: Sequence[str | int]) -> Counter:
    """Histogram over all keys of the output tuple (h(x_1), ..., h(x_q))."""
    ints = [_as_int(x, family.domain_bits) for x in xs]
    return Counter(tuple(h.eval_int(v) for v in ints) for h in all_functions(family))


def is_jointly_uniform(family: HashFamilySpec, xs: Sequence[str | int]) -> bool:
    counts = joint_output_counts(family, xs)
    cells = 1 << (family.range_bits * len(xs))
    return len(counts) == cells and len(set(counts.values())) == 1


# ---------------------------------------------------------------------------
# Leftover hash lemma machinery (vectorised over all keys of a field family)


VECTOR_KINDS = ("field-multiply-truncate", "poly-ell-wise", "boolean-matrix")


def _matrix_all_keys(family: HashFamilySpec, xs: Sequence[int]) -> np.ndarray:
    d, r = family.domain_bits, family.range_bits
    keys = np.arange(family.key_count, dtype=np.uint64)[:, None]
    xs_arr = np.asarray(list(xs), dtype=np.uint64)[None, :]
    mask = np.uint64((1 << d) - 1)
    out = np.zeros((family.key_count, len(xs)), dtype=np.uint64)
    for row in range(r):
        coeffs = (keys >> np.uint64((r - 1 - row) * d)) & mask
        bit = np.bitwise_count(coeffs & xs_arr).astype(np.uint64) & np.uint64(1)
        out = (out << np.uint64(1)) | bit
    return out


def eval_all_keys(family: HashFamilySpec, xs: Sequence[int]) -> np.ndarray:
    """Outputs for every key (rows) and every input (columns) of a field or matrix family."""
    if family.kind not in VECTOR_KINDS:
        raise ParameterError("vectorised evaluation covers the field and matrix families")
    if family.key_count > EXHAUSTIVE_KEY_CAP:
        raise RegimeError("key space too large for exhaustive evaluation")
    if family.kind == "boolean-matrix":
        return _matrix_all_keys(family, xs)
    f = gf_field(family.domain_bits)
    d = family.domain_bits
    xs_arr = np.asarray(list(xs), dtype=np.uint64)[None, :]
    keys = np.arange(family.key_count, dtype=np.uint64)[:, None]
    mask = np.uint64((1 << d) - 1)
    acc = np.zeros((family.key_count, len(xs)), dtype=np.uint64)
    ell = family.ell if family.kind == "poly-ell-wise" else 1
    if family.kind == "field-multiply-truncate":
        acc = gf_mul_array(keys, xs_arr, f)
    else:
        for i in range(ell - 1, -1, -1):
            coeff = (keys >> np.uint64((ell - 1 - i) * d)) & mask
            acc = gf_mul_array(acc, xs_arr, f) ^ coeff
    return acc & np.uint64((1 << family.range_bits) - 1)


def lhl_distance(family: HashFamilySpec, support: Sequence[int]) -> Fraction:
    """Exact SD of (H, H(X)) from (H, U) for X uniform on ``support``."""
    if len(set(support)) != len(support) or not support:
        raise ParameterError("support must be a non-empty set")
    outputs = eval_all_keys(family, support)
    cells = 1 << family.range_bits
    n_x = len(support)
    total = Fraction(0)
    for row in outputs:
        counts = np.bincount(row.astype(np.int64), minlength=cells)
        # sum_y |count/n - 1/cells| = sum_y |count*cells - n| / (n*cells)
        total += Fraction(int(np.abs(counts * cells - n_x).sum()), n_x * cells)
    return total / (2 * family.key_count)


def lhl_bound(range_bits: int, min_entropy: float) -> float:
    """The leftover-hash bound 1/2 * 2^((m - k)/2)."""
    return 0.5 * 2.0 ** ((range_bits - min_entropy) / 2)
