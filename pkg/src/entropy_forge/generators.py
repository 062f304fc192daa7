"""Block generators, online (adversarial) generators and entropy measurement.

A :class:`BlockGeneratorSpec` is a deterministic rule ``(z, x) -> (y_1..y_m)``.
An :class:`OnlineGenerator` is a procedure that draws coins round by round
through a :class:`RunContext` and emits one block per round.  Every coin is a
bounded uniform integer draw, so a run is replayable from its flat tape of
draw values and the whole coin tree can be enumerated exactly.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from math import log2
from typing import Any, Callable, Hashable, Iterator, Mapping, Sequence

from .bitstrings import check_bits, decode_value, encode_value, from_bits, to_bits
from .entropy_oracle import JointDistribution
from .errors import ConsistencyError, ParameterError, RegimeError
from .rng import SeedStream

EXACT_CAP = 1 << 20
Z_99 = 2.5758293035489004


# ---------------------------------------------------------------------------
# Functions to invert


@dataclass(frozen=True)
class FunctionTable:
    """A function on ``{0,1}^n`` given by its full value table."""

    name: str
    n: int
    out_bits: int
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.table) != 1 << self.n:
            raise ParameterError(f"table for n={self.n} needs {1 << self.n} entries")
        if any(not 0 <= v < 1 << self.out_bits for v in self.table):
            raise ParameterError("table value exceeds out_bits")

    def __call__(self, x: int) -> int:
        return self.table[x]

    def image(self) -> list[int]:
        return sorted(set(self.table))

    def preimages(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for x, y in enumerate(self.table):
            out.setdefault(y, []).append(x)
        return out

    def to_json(self) -> dict:
        return {"name": self.name, "n": self.n, "out_bits": self.out_bits, "table": list(self.table)}

    @classmethod
    def from_json(cls, obj: Mapping) -> FunctionTable:
        try:
            return cls(str(obj.get("name", "table")), int(obj["n"]), int(obj["out_bits"]), tuple(int(v) for v in obj["table"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed function table: {exc}") from exc


PRESENT_SBOX = (0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2)


def builtin_function(name: str, n: int = 4) -> FunctionTable:
    """Named desk-scale functions: identity, zero, perm4 and drop-last-bit."""
    if n < 1 or n > 20:
        raise ParameterError("builtin functions support 1 <= n <= 20")
    size = 1 << n
    if name == "identity":
        return FunctionTable(name, n, n, tuple(range(size)))
    if name == "zero":
        return FunctionTable(name, n, n, (0,) * size)
    if name == "perm4":
        if n != 4:
            raise ParameterError("perm4 is defined on 4 bits")
        return FunctionTable(name, 4, 4, PRESENT_SBOX)
    if name == "drop-last-bit":
        if n < 2:
            raise ParameterError("drop-last-bit needs n >= 2")
        return FunctionTable(name, n, n - 1, tuple(x >> 1 for x in range(size)))
    raise ParameterError(f"unknown builtin function {name!r}")


def resolve_function(ref: str | Mapping, n: int | None = None) -> FunctionTable:
    """Accept ``builtin:name[:n]``, a JSON table path, or an already-parsed table object."""
    if isinstance(ref, Mapping):
        return FunctionTable.from_json(ref)
    if ref.startswith("builtin:"):
        parts = ref.split(":")
        size = int(parts[2]) if len(parts) > 2 else (n or 4)
        return builtin_function(parts[1], size)
    try:
        with open(ref, encoding="utf-8") as fh:
            return FunctionTable.from_json(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{ref}: {exc}") from exc


# ---------------------------------------------------------------------------
# Block generators


@dataclass(eq=False)
class BlockGeneratorSpec:
    name: str
    n: int
    pp_bits: int
    seed_bits: int
    m: int
    block_bits: tuple[int, ...]
    eval_fn: Callable[[int, int], tuple]
    recipe: dict
    encoder: Callable[[int, Any], str] | None = None
    meta: dict = field(default_factory=dict)
    _tables: dict = field(default_factory=dict, repr=False)
    _prefix_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if len(self.block_bits) != self.m or self.m < 1:
            raise ParameterError("block_bits must list one length per block")
        if self.seed_bits < 0 or self.pp_bits < 0:
            raise ParameterError("seed and public-parameter lengths must be non-negative")

    @property
    def ell(self) -> int:
        return max(self.block_bits)

    def seeds(self) -> range:
        return range(1 << self.seed_bits)

    def table(self, z: int = 0) -> list[tuple]:
        """All outputs for public parameter ``z`` indexed by seed (cached)."""
        tab = self._tables.get(z)
        if tab is None:
            if self.seed_bits > 20:
                raise RegimeError("seed space too large to tabulate")
            tab = [self.eval_fn(z, x) for x in self.seeds()]
            self._tables[z] = tab
        return tab

    def evaluate(self, z: int, x: int) -> tuple:
        if not 0 <= x < 1 << self.seed_bits or not 0 <= z < 1 << self.pp_bits:
            raise ParameterError("seed or public parameter out of range")
        tab = self._tables.get(z)
        return tab[x] if tab is not None else self.eval_fn(z, x)

    def consistent_seeds(self, z: int, prefix: tuple) -> list[int]:
        """Seeds whose output starts with ``prefix``."""
        i = len(prefix)
        index = self._prefix_index.get((z, i))
        if index is None:
            index = {}
            for x, ys in enumerate(self.table(z)):
                index.setdefault(ys[:i], []).append(x)
            self._prefix_index[(z, i)] = index
        return index.get(tuple(prefix), [])

    def encode(self, i: int, value: Any) -> str:
        """Bitstring of exactly ``block_bits[i-1]`` bits for block ``i``."""
        raw = self.encoder(i, value) if self.encoder else check_bits(value)
        width = self.block_bits[i - 1]
        if len(raw) > width:
            raise ParameterError(f"block {i} encoding longer than {width} bits")
        return raw + "0" * (width - len(raw))

    def in_support(self, z: int, blocks: Sequence) -> bool:
        return bool(self.consistent_seeds(z, tuple(blocks))) if len(blocks) == self.m else False

    def to_json(self) -> dict:
        return {
            "recipe": self.recipe,
            "name": self.name,
            "n": self.n,
            "pp_bits": self.pp_bits,
            "seed_bits": self.seed_bits,
            "m": self.m,
            "block_bits": list(self.block_bits),
            "meta": {k: v for k, v in self.meta.items() if isinstance(v, (int, str, list))},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _chunk(value: int, total_bits: int, width: int) -> tuple[str, ...]:
    s = to_bits(value, total_bits)
    return tuple(s[k : k + width] for k in range(0, total_bits, width))


def _owf_layout(f: FunctionTable) -> tuple[int, int, int]:
    c = max(1, math.ceil(log2(f.n))) if f.n > 1 else 1
    pad = (-f.out_bits) % c
    return c, pad, (f.out_bits + pad) // c


def owf_generator(f: FunctionTable, n: int | None = None) -> BlockGeneratorSpec:
    """Generator whose blocks are the ceil(log n)-bit chunks of f(x), then x itself."""
    n = f.n if n is None else n
    if n != f.n:
        raise ParameterError("n must match the function's input length")
    c, pad, fb = _owf_layout(f)

    def ev(z: int, x: int, f=f) -> tuple:
        return _chunk(f(x) << pad, f.out_bits + pad, c) + (to_bits(x, n),)

    return BlockGeneratorSpec(
        name=f"owf[{f.name},n={n}]",
        n=n,
        pp_bits=0,
        seed_bits=n,
        m=fb + 1,
        block_bits=(c,) * fb + (n,),
        eval_fn=ev,
        recipe={"kind": "owf", "f": f.to_json()},
        meta={"chunk_bits": c, "pad_bits": pad, "f_blocks": fb, "function": f},
    )


def chunk_generator(f: FunctionTable) -> BlockGeneratorSpec:
    """Like :func:`owf_generator` without the final block: only f's chunks."""
    c, pad, fb = _owf_layout(f)

    def ev(z: int, x: int, f=f) -> tuple:
        return _chunk(f(x) << pad, f.out_bits + pad, c)

    return BlockGeneratorSpec(
        name=f"chunks[{f.name},n={f.n}]",
        n=f.n,
        pp_bits=0,
        seed_bits=f.n,
        m=fb,
        block_bits=(c,) * fb,
        eval_fn=ev,
        recipe={"kind": "chunks", "f": f.to_json()},
        meta={"chunk_bits": c, "pad_bits": pad, "f_blocks": fb, "function": f},
    )


def table_generator(name: str, seed_bits: int, outputs: Sequence[Sequence[str]], n: int | None = None) -> BlockGeneratorSpec:
    """Generator given by an explicit output tuple per seed (bitstring blocks)."""
    outs = [tuple(check_bits(b) for b in row) for row in outputs]
    if len(outs) != 1 << seed_bits:
        raise ParameterError("need one output row per seed")
    m = len(outs[0])
    if any(len(r) != m for r in outs):
        raise ParameterError("rows must have equal block counts")
    bb = tuple(len(outs[0][i]) for i in range(m))
    if any(tuple(len(b) for b in r) != bb for r in outs):
        raise ParameterError("block lengths must not depend on the seed")
    return BlockGeneratorSpec(
        name=name,
        n=seed_bits if n is None else n,
        pp_bits=0,
        seed_bits=seed_bits,
        m=m,
        block_bits=bb,
        eval_fn=lambda z, x, outs=outs: outs[x],
        recipe={"kind": "table", "name": name, "seed_bits": seed_bits, "n": seed_bits if n is None else n, "outputs": [list(r) for r in outs]},
    )


def pad_blocks(g: BlockGeneratorSpec, m_target: int) -> BlockGeneratorSpec:
    """Append constant empty blocks until there are ``m_target`` of them."""
    if m_target < g.m:
        raise ParameterError("cannot pad to fewer blocks")
    extra = m_target - g.m
    if extra == 0:
        return g

    def ev(z: int, x: int, g=g) -> tuple:
        return g.evaluate(z, x) + ("",) * extra

    return BlockGeneratorSpec(
        name=f"pad[{g.name},m={m_target}]",
        n=g.n,
        pp_bits=g.pp_bits,
        seed_bits=g.seed_bits,
        m=m_target,
        block_bits=g.block_bits + (0,) * extra,
        eval_fn=ev,
        recipe={"kind": "pad", "base": g.recipe, "m": m_target},
        encoder=(lambda i, y, g=g: g.encode(i, y) if i <= g.m else y),
        meta={**g.meta, "base": g, "padded_from": g.m},
    )


def pad_to_power_of_two(g: BlockGeneratorSpec) -> BlockGeneratorSpec:
    return pad_blocks(g, 1 << (g.m - 1).bit_length())


def equalize(g: BlockGeneratorSpec, w: int) -> BlockGeneratorSpec:
    """Run w copies, drop a random offset j-1 of leading blocks and keep (w-1)m blocks.

    The seed is ``(j, x_1..x_w)`` packed as ``j-1`` in the top log m bits.  The
    first output block is tagged ``(j, y)``.
    """
    m = g.m
    if m & (m - 1):
        raise ParameterError("equalize needs a power-of-two block count; pad first")
    if w < 2:
        raise ParameterError("equalize needs w >= 2")
    tag = m.bit_length() - 1
    s = g.seed_bits
    out_m = (w - 1) * m
    mask = (1 << s) - 1

    def ev(z: int, seed: int) -> tuple:
        j = (seed >> (w * s)) + 1
        xs = [(seed >> ((w - 1 - c) * s)) & mask for c in range(w)]
        cat: list = []
        for x in xs:
            cat.extend(g.evaluate(z, x))
        out = cat[j - 1 : j - 1 + out_m]
        out[0] = (j, out[0])
        return tuple(out)

    def inner(j: int, k: int) -> int:
        return (j + k - 2) % m + 1

    widths = tuple(max(g.block_bits[inner(j, k) - 1] for j in range(1, m + 1)) for k in range(1, out_m + 1))
    widths = (max(tag + g.block_bits[j - 1] for j in range(1, m + 1)),) + widths[1:]

    def enc(k: int, value: Any) -> str:
        if k == 1:
            j, y = value
            return to_bits(j - 1, tag) + g.encode(j, y)
        # the offset is fixed by block 1, so the position alone identifies the base block
        return check_bits(value)

    if g.seed_bits > 0 and g.seed_bits <= 20:
        g.table()
    return BlockGeneratorSpec(
        name=f"equalize[{g.name},w={w}]",
        n=g.n,
        pp_bits=g.pp_bits,
        seed_bits=tag + w * s,
        m=out_m,
        block_bits=widths,
        eval_fn=ev,
        recipe={"kind": "equalize", "base": g.recipe, "w": w},
        encoder=enc,
        meta={"base": g, "w": w, "tag_bits": tag},
    )


def direct_product(g: BlockGeneratorSpec, v: int) -> BlockGeneratorSpec:
    """v independent seeds; block i is the v-tuple of the copies' block i."""
    if v < 1:
        raise ParameterError("direct product needs v >= 1")
    s = g.seed_bits
    mask = (1 << s) - 1

    def split(seed: int) -> list[int]:
        return [(seed >> ((v - 1 - c) * s)) & mask for c in range(v)]

    def ev(z: int, seed: int) -> tuple:
        outs = [g.evaluate(z, x) for x in split(seed)]
        return tuple(tuple(o[i] for o in outs) for i in range(g.m))

    ell = g.ell

    def enc(i: int, value: tuple) -> str:
        return "".join(g.encode(i, y) + "0" * (ell - g.block_bits[i - 1]) for y in value)

    if 0 < s <= 20:
        g.table()
    return BlockGeneratorSpec(
        name=f"product[{g.name},v={v}]",
        n=g.n,
        pp_bits=g.pp_bits,
        seed_bits=v * s,
        m=g.m,
        block_bits=(v * ell,) * g.m,
        eval_fn=ev,
        recipe={"kind": "product", "base": g.recipe, "v": v},
        encoder=enc,
        meta={"base": g, "v": v, "split": split},
    )


def generator_from_json(obj: Mapping) -> BlockGeneratorSpec:
    """Rebuild a generator from its recipe (either the recipe itself or a spec record)."""
    recipe = obj.get("recipe", obj)
    try:
        kind = recipe["kind"]
        if kind == "owf":
            f = recipe["f"]
            return owf_generator(resolve_function(f))
        if kind == "chunks":
            return chunk_generator(resolve_function(recipe["f"]))
        if kind == "table":
            return table_generator(recipe["name"], int(recipe["seed_bits"]), recipe["outputs"], recipe.get("n"))
        if kind == "pad":
            return pad_blocks(generator_from_json(recipe["base"]), int(recipe["m"]))
        if kind == "equalize":
            return equalize(generator_from_json(recipe["base"]), int(recipe["w"]))
        if kind == "product":
            return direct_product(generator_from_json(recipe["base"]), int(recipe["v"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed generator recipe: {exc}") from exc
    raise ParameterError(f"unknown generator kind {kind!r}")


# ---------------------------------------------------------------------------
# Real entropy


def output_joint(g: BlockGeneratorSpec) -> JointDistribution:
    """Exact joint of (Z, Y_1, ..., Y_m) over uniform public parameter and seed."""
    if g.pp_bits + g.seed_bits > 20:
        raise RegimeError("output distribution too large for exact enumeration")
    counts: Counter = Counter()
    for z in range(1 << g.pp_bits):
        for ys in g.table(z):
            counts[(z,) + ys] += 1
    return JointDistribution(dict(counts), 1 << (g.pp_bits + g.seed_bits), arity=g.m + 1)


def real_sample_entropy(g: BlockGeneratorSpec, z: int, y_prefix: Sequence) -> float:
    """Sum of conditional sample-entropies of the prefix blocks given z and earlier blocks."""
    prefix = tuple(y_prefix)
    if len(prefix) > g.m:
        raise ParameterError("prefix longer than the generator")
    hits = len(g.consistent_seeds(z, prefix))
    if hits == 0:
        return math.inf
    return g.seed_bits - log2(hits)


def real_block_entropies(g: BlockGeneratorSpec) -> list[float]:
    """H(Y_i | Z, Y_<i) for every block."""
    j = output_joint(g)
    out = []
    lden = log2(j.denominator)

    def h(length: int) -> float:
        return sum(v * (lden - log2(v)) for v in j.prefix_counts(length).values()) / j.denominator

    prev = h(1)
    for i in range(1, g.m + 1):
        cur = h(i + 1)
        out.append(cur - prev)
        prev = cur
    return out


def real_shannon_entropy(g: BlockGeneratorSpec) -> float:
    """H(Y | Z), computed as the entropy of (Z, Y) minus the public-parameter bits."""
    j = output_joint(g)
    lden = log2(j.denominator)
    return sum(v * (lden - log2(v)) for _, v in j.raw_items()) / j.denominator - g.pp_bits


def real_min_entropy_per_block(g: BlockGeneratorSpec) -> list[float]:
    """min over reachable (z, y_<i) of H_inf(Y_i | Z=z, Y_<i = y_<i)."""
    j = output_joint(g)
    out = []
    for i in range(1, g.m + 1):
        parent = j.prefix_counts(i)
        child = j.prefix_counts(i + 1)
        best: dict[tuple, int] = {}
        for k, v in child.items():
            p = k[:-1]
            if v > best.get(p, 0):
                best[p] = v
        out.append(min(log2(parent[p]) - log2(v) for p, v in best.items()))
    return out


# ---------------------------------------------------------------------------
# Online generators


class _NeedDraw(Exception):
    def __init__(self, k: int) -> None:
        self.k = k


class _Stop(Exception):
    pass


class RunContext:
    """Coin source and block sink handed to an online generator's body."""

    def __init__(self, m: int, z: int, forced: Sequence[int], rng: SeedStream | None, stop_round: int | None) -> None:
        self.m = m
        self.z = z
        self._forced = forced
        self._rng = rng
        self._stop = stop_round
        self.values: list[int] = []
        self.bounds: list[int] = []
        self.r0_len = 0
        self.ends: list[int] = []
        self.blocks: list = []
        self._drew = False

    @property
    def round(self) -> int:
        """Index of the block about to be emitted (1-based)."""
        return len(self.blocks) + 1

    def _take(self, k: int) -> int:
        if k < 1:
            raise ParameterError("draw bound must be positive")
        if k == 1:
            return 0
        pos = len(self.values)
        if pos < len(self._forced):
            v = self._forced[pos]
            if not 0 <= v < k:
                raise ConsistencyError(f"forced draw {v} outside [0, {k})")
        elif self._rng is not None:
            v = self._rng.below(k)
        else:
            raise _NeedDraw(k)
        self.values.append(v)
        self.bounds.append(k)
        return v

    def pre(self, k: int) -> int:
        """Preprocessing coin: uniform in [0, k), must precede every round coin."""
        if self._drew or self.blocks:
            raise ConsistencyError("preprocessing coins must be drawn before any round coin")
        v = self._take(k)
        self.r0_len = len(self.values)
        return v

    def draw(self, k: int) -> int:
        """Round coin: uniform in [0, k), charged to the current round."""
        self._drew = True
        return self._take(k)

    below = draw

    def bits(self, b: int) -> int:
        return self.draw(1 << b)

    def emit(self, y: Any) -> None:
        if len(self.blocks) >= self.m:
            raise ConsistencyError("online generator emitted too many blocks")
        self.blocks.append(y)
        self.ends.append(len(self.values))
        if self._stop is not None and len(self.blocks) >= self._stop:
            raise _Stop


class SubContext:
    """Context for a nested generator run whose blocks go to a callback."""

    def __init__(self, outer: RunContext | SubContext, m: int, on_emit: Callable[[Any], None]) -> None:
        self._outer = outer
        self.m = m
        self.z = outer.z
        self._on_emit = on_emit
        self.blocks: list = []

    @property
    def round(self) -> int:
        return len(self.blocks) + 1

    def pre(self, k: int) -> int:
        return self._outer.pre(k)

    def draw(self, k: int) -> int:
        return self._outer.draw(k)

    below = draw

    def bits(self, b: int) -> int:
        return self.draw(1 << b)

    def emit(self, y: Any) -> None:
        if len(self.blocks) >= self.m:
            raise ConsistencyError("nested generator emitted too many blocks")
        self.blocks.append(y)
        self._on_emit(y)


class InnerStop(Exception):
    """Raised by a reduction to abandon the rest of a nested run."""


@dataclass(frozen=True)
class Transcript:
    """(z, r0, (r_1, y_1), ..., (r_m, y_m)); coins are tuples of draw values."""

    z: int
    r0: tuple[int, ...]
    coins: tuple[tuple[int, ...], ...]
    blocks: tuple
    bounds: tuple[int, ...] = ()

    @property
    def tape(self) -> tuple[int, ...]:
        out = list(self.r0)
        for c in self.coins:
            out.extend(c)
        return tuple(out)

    def prefix_tape(self, rounds: int) -> tuple[int, ...]:
        """r0 followed by the coins of the first ``rounds`` rounds."""
        out = list(self.r0)
        for c in self.coins[:rounds]:
            out.extend(c)
        return tuple(out)

    @property
    def probability(self) -> Fraction:
        den = 1
        for b in self.bounds:
            den *= b
        return Fraction(1, den)

    def to_json(self) -> dict:
        return {
            "z": self.z,
            "r0_hex": encode_value(self.r0).hex(),
            "rounds": [{"r_hex": encode_value(c).hex(), "y_hex": encode_value(y).hex()} for c, y in zip(self.coins, self.blocks)],
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> Transcript:
        try:
            rounds = obj["rounds"]
            return cls(
                int(obj["z"]),
                tuple(decode_value(bytes.fromhex(obj["r0_hex"]))),
                tuple(tuple(decode_value(bytes.fromhex(r["r_hex"]))) for r in rounds),
                tuple(decode_value(bytes.fromhex(r["y_hex"])) for r in rounds),
                tuple(int(b) for b in obj.get("bounds", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed transcript: {exc}") from exc


@dataclass(eq=False)
class OnlineGenerator:
    """An online generator for ``base``; ``body(ctx)`` emits ``base.m`` blocks."""

    base: BlockGeneratorSpec
    body: Callable[[RunContext], None]
    name: str
    preprocessing: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def pp_bits(self) -> int:
        return self.base.pp_bits

    def execute(
        self,
        z: int = 0,
        forced: Sequence[int] = (),
        rng: SeedStream | None = None,
        stop_round: int | None = None,
    ) -> RunContext:
        """Run the body; raises _NeedDraw when forced draws run out and no rng is given."""
        ctx = RunContext(self.m, z, forced, rng, stop_round)
        try:
            self.body(ctx)
        except _Stop:
            return ctx
        if len(ctx.blocks) != self.m:
            raise ConsistencyError(f"{self.name} emitted {len(ctx.blocks)} of {self.m} blocks")
        if len(ctx.values) != ctx.ends[-1]:
            raise ConsistencyError(f"{self.name} drew coins after its final block")
        return ctx


def _transcript_from(ctx: RunContext) -> Transcript:
    vals, r0 = ctx.values, ctx.r0_len
    starts = [r0] + ctx.ends[:-1]
    coins = tuple(tuple(vals[a:b]) for a, b in zip(starts, ctx.ends))
    return Transcript(ctx.z, tuple(vals[:r0]), coins, tuple(ctx.blocks), tuple(ctx.bounds))


def run_online(a: OnlineGenerator, rng: SeedStream, z: int | None = None) -> Transcript:
    """Draw z (if absent) and all coins from ``rng`` and return the full transcript."""
    if z is None:
        z = rng.bits(a.pp_bits)
    return _transcript_from(a.execute(z, (), rng))


def replay(a: OnlineGenerator, t: Transcript) -> Transcript:
    """Re-run ``a`` on the transcript's coins; raise if any block or bound differs."""
    try:
        ctx = a.execute(t.z, t.tape, None)
    except _NeedDraw as exc:
        raise ConsistencyError("transcript is missing coins") from exc
    again = _transcript_from(ctx)
    if again.r0 != t.r0 or again.coins != t.coins or again.blocks != t.blocks:
        raise ConsistencyError("transcript is not replayable under this generator")
    if t.bounds and again.bounds != t.bounds:
        raise ConsistencyError("transcript coin bounds differ on replay")
    return again


def iter_runs(a: OnlineGenerator, *, forced: Sequence[int] = (), z: int | None = None, stop_round: int | None = None, cap: int = EXACT_CAP) -> Iterator[RunContext]:
    """Depth-first enumeration of every coin sequence extending ``forced``.

    Runs are yielded in lexicographic tape order, so all runs sharing a tape
    prefix are contiguous.
    """
    zs = range(1 << a.pp_bits) if z is None else [z]
    leaves = 0
    for zz in zs:
        stack = [tuple(forced)]
        while stack:
            tape = stack.pop()
            try:
                ctx = a.execute(zz, tape, None, stop_round)
            except _NeedDraw as need:
                stack.extend(tape + (v,) for v in range(need.k - 1, -1, -1))
                continue
            leaves += 1
            if leaves > cap:
                raise RegimeError(f"more than {cap} coin sequences; supply a sampling budget")
            yield ctx


def _weight(ctx: RunContext, base_den: int) -> float:
    p = 1.0 / base_den
    for b in ctx.bounds:
        p /= b
    return p


def _round_key(ctx: RunContext, i: int, preprocessing: bool) -> tuple:
    """Conditioning key for round i: (z, r0, r_<i); round 1 omits r0 unless preprocessing."""
    if i == 1:
        return (ctx.z, tuple(ctx.values[: ctx.r0_len])) if preprocessing else (ctx.z,)
    return (ctx.z, tuple(ctx.values[: ctx.ends[i - 2]]))


@dataclass
class AccessibleSummary:
    expected: float
    per_round: list[float]
    preprocessing: bool
    runs: int


def expected_accessible_entropy(a: OnlineGenerator, *, preprocessing: bool = True, cap: int = EXACT_CAP) -> AccessibleSummary:
    """Exact sum over rounds of H(Y_i | Z, R_<i) by streaming over the coin tree.

    With ``preprocessing`` the round-1 condition includes r0; without it r0 is
    treated as part of the round-1 coins.
    """
    zden = 1 << a.pp_bits
    m = a.m
    cur_key: list[Any] = [None] * m
    groups: list[dict] = [{} for _ in range(m)]
    totals = [0.0] * m
    runs = 0

    def flush(i: int) -> None:
        g = groups[i]
        if g:
            mass = sum(g.values())
            totals[i] += sum(p * (log2(mass) - log2(p)) for p in g.values())
            groups[i] = {}

    for ctx in iter_runs(a, cap=cap):
        runs += 1
        p = _weight(ctx, zden)
        for i in range(m):
            key = _round_key(ctx, i + 1, preprocessing)
            if key != cur_key[i]:
                flush(i)
                cur_key[i] = key
            g = groups[i]
            y = ctx.blocks[i]
            g[y] = g.get(y, 0.0) + p
    for i in range(m):
        flush(i)
    return AccessibleSummary(sum(totals), totals, preprocessing, runs)


@dataclass
class RunRecord:
    transcript: Transcript
    weight: Fraction
    acc: tuple[float, ...]

    @property
    def total(self) -> float:
        return sum(self.acc)


def enumerate_runs(a: OnlineGenerator, *, preprocessing: bool = True, cap: int = 1 << 18) -> list[RunRecord]:
    """Every full run with its exact probability and per-round accessible sample-entropy."""
    ctxs = list(iter_runs(a, cap=cap))
    zden = 1 << a.pp_bits
    weights = []
    for ctx in ctxs:
        den = zden
        for b in ctx.bounds:
            den *= b
        weights.append(Fraction(1, den))
    out_acc: list[list[float]] = [[0.0] * a.m for _ in ctxs]
    for i in range(1, a.m + 1):
        key_mass: dict = {}
        pair_mass: dict = {}
        keys = []
        for ctx, w in zip(ctxs, weights):
            k = _round_key(ctx, i, preprocessing)
            keys.append(k)
            key_mass[k] = key_mass.get(k, 0) + w
            kp = (k, ctx.blocks[i - 1])
            pair_mass[kp] = pair_mass.get(kp, 0) + w
        for idx, (ctx, k) in enumerate(zip(ctxs, keys)):
            ratio = pair_mass[(k, ctx.blocks[i - 1])] / key_mass[k]
            out_acc[idx][i - 1] = -log2(ratio)
    return [RunRecord(_transcript_from(c), w, tuple(acc)) for c, w, acc in zip(ctxs, weights, out_acc)]


def round_block_distribution(a: OnlineGenerator, z: int, prefix_tape: Sequence[int], i: int) -> dict[Any, Fraction]:
    """Exact distribution of block i given z and the coins r0, r_1..r_{i-1} (flat tape)."""
    dist: dict[Any, Fraction] = {}
    base = len(prefix_tape)
    for ctx in iter_runs(a, forced=prefix_tape, z=z, stop_round=i):
        den = 1
        for b in ctx.bounds[base:]:
            den *= b
        y = ctx.blocks[i - 1]
        dist[y] = dist.get(y, 0) + Fraction(1, den)
    return dist


def accessible_sample_entropy(a: OnlineGenerator, t: Transcript, *, preprocessing: bool = True) -> float:
    """Sum over rounds of -log Pr[Y_i = y_i | Z = z, R_<i = r_<i] for one transcript."""
    replay(a, t)
    total = 0.0
    for i in range(1, a.m + 1):
        if i == 1 and not preprocessing:
            # r0 counts as round-1 coins: average over it
            dist = round_block_distribution(a, t.z, (), 1)
        else:
            dist = round_block_distribution(a, t.z, t.prefix_tape(i - 1), i)
        p = dist.get(t.blocks[i - 1], 0)
        if p == 0:
            raise ConsistencyError("transcript block has zero conditional probability")
        total -= log2(p)
    return total


def probe_causality(a: OnlineGenerator, rng: SeedStream, probes: int = 100) -> bool:
    """Rerun with later-round coins redrawn and check earlier blocks never move."""
    for k in range(probes):
        t = run_online(a, rng.spawn(f"probe{k}"))
        i = 1 + rng.below(a.m)
        ctx = a.execute(t.z, t.prefix_tape(i), rng.spawn(f"probe{k}/fresh"))
        if tuple(ctx.blocks[:i]) != t.blocks[:i]:
            return False
    return True


def check_consistency(a: OnlineGenerator, *, cap: int = EXACT_CAP) -> bool:
    """Every enumerated run emits a tuple in the support of the base generator."""
    return all(a.base.in_support(ctx.z, ctx.blocks) for ctx in iter_runs(a, cap=cap))


# ---------------------------------------------------------------------------
# Concrete online generators


def honest_wrapper(g: BlockGeneratorSpec) -> OnlineGenerator:
    """Draws the whole seed in round 1, then emits g's blocks."""

    def body(ctx: RunContext) -> None:
        x = ctx.draw(1 << g.seed_bits)
        for y in g.evaluate(ctx.z, x):
            ctx.emit(y)

    return OnlineGenerator(g, body, f"honest[{g.name}]")


def brute_force_resampler(g: BlockGeneratorSpec) -> OnlineGenerator:
    """Round i picks a uniform seed among those consistent with the emitted prefix."""
    if g.seed_bits > 20:
        raise RegimeError("the resampler enumerates the seed space")

    def body(ctx: RunContext) -> None:
        prefix: tuple = ()
        for i in range(g.m):
            cands = g.consistent_seeds(ctx.z, prefix)
            x = cands[ctx.draw(len(cands))]
            y = g.evaluate(ctx.z, x)[i]
            prefix += (y,)
            ctx.emit(y)

    return OnlineGenerator(g, body, f"resampler[{g.name}]")


def deterministic_generator(g: BlockGeneratorSpec, x: int = 0) -> OnlineGenerator:
    """Uses no coins: always emits G(z, x)."""

    def body(ctx: RunContext) -> None:
        for y in g.evaluate(ctx.z, x):
            ctx.emit(y)

    return OnlineGenerator(g, body, f"fixed[{g.name},x={x}]")


def equalize_lazy_wrapper(eq: BlockGeneratorSpec) -> OnlineGenerator:
    """Honest for equalize(g, w) but draws each copy's seed only when its first block is due."""
    g, w = eq.meta["base"], eq.meta["w"]
    m = g.m

    def body(ctx: RunContext) -> None:
        j = ctx.draw(m) + 1
        seeds: dict[int, int] = {}
        for k in range(1, eq.m + 1):
            pos = j + k - 2
            c, inner = divmod(pos, m)
            if c not in seeds:
                seeds[c] = ctx.draw(1 << g.seed_bits)
            y = g.evaluate(ctx.z, seeds[c])[inner]
            ctx.emit((j, y) if k == 1 else y)

    return OnlineGenerator(eq, body, f"lazy[{eq.name}]")


def _product_parts(pg: BlockGeneratorSpec) -> tuple[BlockGeneratorSpec, int]:
    if "v" not in pg.meta:
        raise ParameterError("expected a direct-product generator")
    return pg.meta["base"], pg.meta["v"]


def per_copy_resampler(pg: BlockGeneratorSpec, resampled: Sequence[int] | None = None) -> OnlineGenerator:
    """Each listed copy (0-based) is resampled independently per round; others are honest."""
    g, v = _product_parts(pg)
    which = set(range(v) if resampled is None else resampled)

    def body(ctx: RunContext) -> None:
        fixed = {c: ctx.draw(1 << g.seed_bits) for c in range(v) if c not in which}
        prefixes: list[tuple] = [()] * v
        for i in range(g.m):
            block = []
            for c in range(v):
                if c in which:
                    cands = g.consistent_seeds(ctx.z, prefixes[c])
                    x = cands[ctx.draw(len(cands))]
                else:
                    x = fixed[c]
                y = g.evaluate(ctx.z, x)[i]
                prefixes[c] += (y,)
                block.append(y)
            ctx.emit(tuple(block))

    label = "all" if resampled is None else ",".join(map(str, sorted(which)))
    return OnlineGenerator(pg, body, f"per-copy-resampler[{pg.name},{label}]")


def product_cheater_suite(pg: BlockGeneratorSpec) -> list[OnlineGenerator]:
    """Honest product wrapper, joint resampler, per-copy resampler and a mixed cheater."""
    return [honest_wrapper(pg), brute_force_resampler(pg), per_copy_resampler(pg), per_copy_resampler(pg, [0])]


# ---------------------------------------------------------------------------
# Reductions


def equalization_reduction(cheater: OnlineGenerator) -> OnlineGenerator:
    """Online generator for g built from a cheater against equalize(g, w).

    Preprocessing picks a copy v in {2..w-1}; the embedded cheater runs until
    it has emitted all m blocks of copy v, which are re-emitted.
    """
    eq = cheater.base
    if "w" not in eq.meta:
        raise ParameterError("cheater must target an equalized generator")
    g, w = eq.meta["base"], eq.meta["w"]
    m = g.m
    if w < 3:
        raise ParameterError("the reduction needs w >= 3 so that a full middle copy exists")

    def body(ctx: RunContext) -> None:
        v = 2 + ctx.pre(w - 2)
        state = {"first": None}

        def on_emit(y: Any) -> None:
            k = len(sub.blocks)
            if k == 1:
                state["first"] = (v - 1) * m + 2 - y[0]
            f = state["first"]
            if f <= k < f + m:
                ctx.emit(y)
                if k == f + m - 1:
                    raise InnerStop

        sub = SubContext(ctx, eq.m, on_emit)
        try:
            cheater.body(sub)
        except InnerStop:
            return
        raise ConsistencyError("cheater stopped before the selected copy was complete")

    return OnlineGenerator(g, body, f"eq-reduction[{cheater.name}]", preprocessing=True)


def product_reduction(cheater: OnlineGenerator) -> OnlineGenerator:
    """Online generator for g: preprocessing picks j in [v]; project coordinate j of each block."""
    g, v = _product_parts(cheater.base)

    def body(ctx: RunContext) -> None:
        j = ctx.pre(v)
        sub = SubContext(ctx, g.m, lambda y: ctx.emit(y[j]))
        cheater.body(sub)

    return OnlineGenerator(g, body, f"product-reduction[{cheater.name}]", preprocessing=v > 1)


# ---------------------------------------------------------------------------
# Measurement


MEASURE_KINDS = ("real-shannon", "real-min-per-block", "accessible-expected", "accessible-max-tail")


@dataclass
class EntropyMeasurement:
    kind: str
    value: float
    method: str
    budget: int | None = None
    tail_prob: float | None = None
    ci: tuple[float, float] | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "value": self.value, "method": self.method, "budget": self.budget}
        if self.tail_prob is not None:
            out["tail_prob"] = self.tail_prob
        if self.ci is not None:
            out["ci"] = list(self.ci)
        out["details"] = self.details
        return out


def _hoeffding(values: Sequence[float], spread: float) -> tuple[float, float]:
    mean = sum(values) / len(values)
    half = spread * math.sqrt(math.log(2 / 0.01) / (2 * len(values)))
    return mean - half, mean + half


def measure(
    target: BlockGeneratorSpec | OnlineGenerator,
    kind: str,
    *,
    budget: int | None = None,
    rng: SeedStream | None = None,
    threshold: float | None = None,
    preprocessing: bool = True,
) -> EntropyMeasurement:
    """Measure one entropy quantity, exactly unless a sampling budget is given."""
    if kind not in MEASURE_KINDS:
        raise ParameterError(f"unknown measurement kind {kind!r}")
    rng = rng or SeedStream(0, "measure")
    if kind.startswith("real"):
        g = target.base if isinstance(target, OnlineGenerator) else target
        if budget is None:
            if kind == "real-shannon":
                per = real_block_entropies(g)
                return EntropyMeasurement(kind, real_shannon_entropy(g), "exact", details={"per_block": per})
            per = real_min_entropy_per_block(g)
            return EntropyMeasurement(kind, min(per), "exact", details={"per_block": per})
        if kind != "real-shannon":
            raise RegimeError("per-block min-entropy has no sampled mode")
        counts: Counter = Counter()
        for _ in range(budget):
            z = rng.bits(g.pp_bits)
            counts[(z, g.evaluate(z, rng.bits(g.seed_bits)))] += 1
        vals = []
        for (z, ys), c in counts.items():
            vals.extend([log2(budget) - log2(c) - g.pp_bits] * c)
        lo, hi = _hoeffding(vals, max(vals) - min(vals) if len(set(vals)) > 1 else 0.0)
        return EntropyMeasurement(kind, sum(vals) / budget, "sampled", budget, ci=(lo, hi), details={"estimator": "plug-in"})

    if not isinstance(target, OnlineGenerator):
        raise ParameterError("accessible entropy needs an online generator")
    a = target
    if kind == "accessible-expected" and budget is None:
        summ = expected_accessible_entropy(a, preprocessing=preprocessing)
        return EntropyMeasurement(kind, summ.expected, "exact", details={"per_round": summ.per_round, "preprocessing": preprocessing, "runs": summ.runs})
    if budget is None:
        if threshold is None:
            raise ParameterError("accessible-max-tail needs a threshold")
        recs = enumerate_runs(a, preprocessing=preprocessing)
        tail = float(sum(r.weight for r in recs if r.total > threshold + 1e-12))
        top = max(r.total for r in recs)
        mean = float(sum(r.weight * Fraction(r.total) for r in recs))
        return EntropyMeasurement(
            kind,
            threshold,
            "exact",
            tail_prob=tail,
            details={"max_acch": top, "expected_acch": mean, "expected_bound_from_tail": threshold + tail * max(0.0, top - threshold)},
        )
    vals = [accessible_sample_entropy(a, run_online(a, rng.spawn(f"t{k}")), preprocessing=preprocessing) for k in range(budget)]
    spread = max(vals) - min(vals)
    if kind == "accessible-expected":
        lo, hi = _hoeffding(vals, spread)
        return EntropyMeasurement(kind, sum(vals) / budget, "sampled", budget, ci=(lo, hi), details={"preprocessing": preprocessing})
    if threshold is None:
        raise ParameterError("accessible-max-tail needs a threshold")
    hits = [1.0 if v > threshold + 1e-12 else 0.0 for v in vals]
    tail = sum(hits) / budget
    lo, hi = _hoeffding(hits, 1.0)
    return EntropyMeasurement(kind, threshold, "sampled", budget, tail_prob=tail, ci=(max(0.0, lo), min(1.0, hi)), details={"max_acch": max(vals)})
