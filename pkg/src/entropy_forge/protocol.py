"""Interactive hashing and the block-by-block commitment scheme.

Every party is a message-driven state machine: ``step(message)`` returns the
list of messages it sends in reply.  Messages travel as frames: a 4-byte
big-endian payload length, a 1-byte type tag, then the payload, which is a
sequence of bitstring fields (2-byte bit length plus big-endian bytes).  The
canonical commitment is the concatenation of all commit-stage frames.

The receiver is public-coin: each of its messages is exactly the coins it
drew, so a receiver can be rebuilt from any transcript prefix.
"""

from __future__ import annotations

import copy
import math
import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from math import log2
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .bitstrings import bits_to_bytes, bytes_to_bits, check_bits, from_bits, to_bits
from .entropy_oracle import Distribution, statistical_distance
from .errors import ConsistencyError, ParameterError, ProtocolError, RegimeError
from .generators import (
    BlockGeneratorSpec,
    OnlineGenerator,
    RunContext,
    _NeedDraw,
    chunk_generator,
    builtin_function,
    direct_product,
    generator_from_json,
    owf_generator,
    table_generator,
)
from .hashing import HashFamilySpec, HashFunction, all_functions, exact_collision_probability, lhl_bound
from .owf_attacks import AttackReport
from .rng import SeedStream


# ---------------------------------------------------------------------------
# Wire format


class MsgType(IntEnum):
    PARAM = 1
    H1 = 2
    Y1 = 3
    H2 = 4
    Y2 = 5
    F = 6
    W = 7
    COIN = 8
    BLOCK = 9
    MASK = 10


RECEIVER_TYPES = frozenset({MsgType.PARAM, MsgType.H1, MsgType.H2, MsgType.F, MsgType.COIN})


@dataclass(frozen=True)
class ProtocolMessage:
    type: MsgType
    fields: tuple[str, ...]

    def __post_init__(self) -> None:
        for f in self.fields:
            check_bits(f)

    @property
    def from_receiver(self) -> bool:
        return self.type in RECEIVER_TYPES

    def to_bytes(self) -> bytes:
        payload = b"".join(bits_to_bytes(f) for f in self.fields)
        return struct.pack(">IB", len(payload), int(self.type)) + payload

    @classmethod
    def parse(cls, data: bytes, offset: int = 0) -> tuple[ProtocolMessage, int]:
        if offset + 5 > len(data):
            raise ProtocolError("truncated frame header")
        length, tag = struct.unpack_from(">IB", data, offset)
        start = offset + 5
        end = start + length
        if end > len(data):
            raise ProtocolError("truncated frame payload")
        try:
            mtype = MsgType(tag)
        except ValueError as exc:
            raise ProtocolError(f"unknown message tag {tag}") from exc
        fields = []
        pos = start
        try:
            while pos < end:
                f, pos = bytes_to_bits(data[:end], pos)
                fields.append(f)
        except ParameterError as exc:
            raise ProtocolError(str(exc)) from exc
        return cls(mtype, tuple(fields)), end


def parse_frames(data: bytes) -> list[ProtocolMessage]:
    out = []
    pos = 0
    while pos < len(data):
        msg, pos = ProtocolMessage.parse(data, pos)
        out.append(msg)
    return out


@dataclass(frozen=True)
class Commitment:
    """The commit-stage transcript in order."""

    frames: tuple[ProtocolMessage, ...]

    def to_bytes(self) -> bytes:
        return b"".join(f.to_bytes() for f in self.frames)

    @classmethod
    def from_bytes(cls, data: bytes) -> Commitment:
        return cls(tuple(parse_frames(data)))

    def to_json(self) -> list[dict]:
        return [{"type": f.type.name, "fields": list(f.fields)} for f in self.frames]


@dataclass(frozen=True)
class Opening:
    b: int
    sigma: str

    def to_json(self) -> dict:
        return {"b": self.b, "sigma": self.sigma}

    @classmethod
    def from_json(cls, obj: Mapping) -> Opening:
        try:
            b = int(obj["b"])
            sigma = check_bits(str(obj["sigma"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed opening: {exc}") from exc
        return cls(b, sigma)


# ---------------------------------------------------------------------------
# Coins


class ForcedCoins:
    """Coin source that replays forced values first, then defers to ``source``.

    Every value handed out is logged with its width so a receiver's messages
    can be compared with its coin stream.
    """

    def __init__(self, source: Any = None, forced: Sequence[int] = ()) -> None:
        self.source = source
        self.forced = list(forced)
        self.log: list[str] = []

    def _next(self, bound: int, draw: Callable[[], int]) -> int:
        if self.forced:
            v = self.forced.pop(0)
            if not 0 <= v < bound:
                raise ConsistencyError("forced coin out of range")
            return v
        if self.source is None:
            raise ConsistencyError("coin source exhausted")
        return draw()

    def bits(self, k: int) -> int:
        if k == 0:
            return 0
        v = self._next(1 << k, lambda: self.source.bits(k))
        self.log.append(to_bits(v, k))
        return v

    def below(self, n: int) -> int:
        if n == 1:
            return 0
        v = self._next(n, lambda: self.source.below(n))
        self.log.append(to_bits(v, (n - 1).bit_length()))
        return v


class CtxBits:
    """Adapter exposing ``bits``/``below`` on an online-generator context."""

    def __init__(self, ctx: Any) -> None:
        self.ctx = ctx

    def bits(self, k: int) -> int:
        return self.ctx.draw(1 << k) if k else 0

    def below(self, n: int) -> int:
        return self.ctx.draw(n)


# ---------------------------------------------------------------------------
# Parameters


def _family(kind: str, domain: int, range_bits: int, ell: int = 1, **kw: Any) -> HashFamilySpec:
    if range_bits == 0:
        return HashFamilySpec("boolean-matrix", domain, 0)
    return HashFamilySpec(kind, domain, range_bits, ell=ell, **kw)


@dataclass(frozen=True)
class HashingSpec:
    """Families used by one run of the hashing protocol; ``tcr`` None means the weak protocol."""

    h1: HashFamilySpec
    h2: HashFamilySpec
    tcr: HashFamilySpec | None = None

    @property
    def strong(self) -> bool:
        return self.tcr is not None

    @property
    def domain_bits(self) -> int:
        return self.h1.domain_bits

    @classmethod
    def build(cls, ell_bits: int, h1_range: int, h1_order: int, h2_range: int, tcr_range: int | None = None, tcr_key_bits: int = 16, tcr_mode: str = "oracle") -> HashingSpec:
        h1 = _family("poly-ell-wise", ell_bits, h1_range, ell=h1_order)
        h2 = _family("poly-ell-wise", ell_bits, h2_range, ell=2)
        tcr = None
        if tcr_range is not None:
            tcr = _family("tcr-standin", ell_bits, tcr_range, tcr_key_bits=tcr_key_bits, tcr_mode=tcr_mode)
        return cls(h1, h2, tcr)


@dataclass(eq=False)
class ProtocolParams:
    generator: BlockGeneratorSpec
    delta: int
    h1_order: int = 2
    h2_range_bits: int = 1
    tcr_range_bits: int = 1
    tcr_key_bits: int = 16
    tcr_mode: str = "oracle"
    repetitions: int = 1
    name: str = "custom"

    def __post_init__(self) -> None:
        ell = self.ell
        if not 0 <= self.delta <= ell:
            raise ParameterError("need 0 <= delta <= block length")
        if not 0 <= self.h2_range_bits <= ell or not 0 <= self.tcr_range_bits <= ell:
            raise ParameterError("hash ranges must not exceed the block length")
        if self.tcr_range_bits and self.tcr_range_bits >= ell:
            raise ParameterError("the target-collision-resistant family must compress")
        if self.h1_order < 1 or self.repetitions < 1:
            raise ParameterError("independence order and repetition count must be positive")
        self.hashing = HashingSpec.build(ell, self.delta, self.h1_order, self.h2_range_bits, self.tcr_range_bits, self.tcr_key_bits, self.tcr_mode)

    @property
    def m(self) -> int:
        return self.generator.m

    @property
    def ell(self) -> int:
        return self.generator.ell

    @property
    def seed_bits(self) -> int:
        return self.generator.seed_bits

    @property
    def sigma_bits(self) -> int:
        return self.seed_bits + self.ell

    def code(self, i: int, y: Any) -> str:
        """ell-bit encoding of block i."""
        raw = self.generator.encode(i, y)
        return raw + "0" * (self.ell - len(raw))

    def decode(self, i: int, z: int, prefix: tuple, bits: str) -> Any:
        """Block value with code ``bits`` among those reachable after ``prefix``, else ConsistencyError."""
        g = self.generator
        for x in g.consistent_seeds(z, prefix):
            y = g.evaluate(z, x)[i - 1]
            if self.code(i, y) == bits:
                return y
        raise ConsistencyError(f"block {i} is not reachable from the revealed prefix")

    def with_delta(self, delta: int) -> ProtocolParams:
        return ProtocolParams(self.generator, delta, self.h1_order, self.h2_range_bits, self.tcr_range_bits, self.tcr_key_bits, self.tcr_mode, self.repetitions, self.name)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "generator": self.generator.recipe,
            "delta": self.delta,
            "h1_order": self.h1_order,
            "h2_range_bits": self.h2_range_bits,
            "tcr_range_bits": self.tcr_range_bits,
            "tcr_key_bits": self.tcr_key_bits,
            "tcr_mode": self.tcr_mode,
            "repetitions": self.repetitions,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> ProtocolParams:
        if "preset" in obj:
            return preset(obj["preset"])
        try:
            return cls(
                generator_from_json(obj["generator"]),
                int(obj["delta"]),
                int(obj.get("h1_order", 2)),
                int(obj.get("h2_range_bits", 1)),
                int(obj.get("tcr_range_bits", 1)),
                int(obj.get("tcr_key_bits", 16)),
                str(obj.get("tcr_mode", "oracle")),
                int(obj.get("repetitions", 1)),
                str(obj.get("name", "custom")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParameterError(f"malformed protocol parameters: {exc}") from exc


def support2_generator() -> BlockGeneratorSpec:
    """One seed bit, two blocks of four bits; the two first blocks differ."""
    return table_generator("support2", 1, [("0011", "1000"), ("0101", "0001")], n=4)


def delta_from_formula(k: int, n: int, variant: str = "protocol") -> int:
    """Hash output length k - 3n (protocol statement) or k - n (hiding argument)."""
    if variant not in ("protocol", "hiding"):
        raise ParameterError("variant is 'protocol' or 'hiding'")
    d = k - (3 * n if variant == "protocol" else n)
    if d < 0:
        raise ParameterError(f"formula gives negative output length {d} at k={k}, n={n}")
    return d


PRESETS = ("identity-n4", "permutation-n4", "hiding-n4-v2", "support2-m2")


def preset(name: str) -> ProtocolParams:
    if name == "identity-n4":
        return ProtocolParams(owf_generator(builtin_function("identity", 4)), 1, 4, 2, 2, name=name)
    if name == "permutation-n4":
        return ProtocolParams(owf_generator(builtin_function("perm4", 4)), 1, 4, 2, 2, name=name)
    if name == "hiding-n4-v2":
        g = direct_product(chunk_generator(builtin_function("identity", 4)), 2)
        return ProtocolParams(g, 0, 2, 0, 0, name=name)
    if name == "support2-m2":
        return ProtocolParams(support2_generator(), 1, 2, 1, 1, name=name)
    raise ParameterError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# Interactive hashing


class HashSender:
    """Honest sender of the hashing protocol on private input ``x`` (an ell-bit string)."""

    def __init__(self, spec: HashingSpec, x: str) -> None:
        self.spec = spec
        self.x = check_bits(x, spec.domain_bits)
        self.phase = "h1"

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        expect = {"h1": MsgType.H1, "h2": MsgType.H2, "f": MsgType.F}.get(self.phase)
        if expect is None or msg.type != expect or len(msg.fields) != 1:
            self.phase = "dead"
            raise ProtocolError(f"unexpected {msg.type.name} in phase {self.phase}")
        fam = {"h1": self.spec.h1, "h2": self.spec.h2, "f": self.spec.tcr}[self.phase]
        try:
            h = HashFunction(fam, from_bits(check_bits(msg.fields[0], fam.key_bits)))
        except ParameterError as exc:
            self.phase = "dead"
            raise ProtocolError(str(exc)) from exc
        reply = {"h1": MsgType.Y1, "h2": MsgType.Y2, "f": MsgType.W}[self.phase]
        self.phase = {"h1": "h2", "h2": "f" if self.spec.strong else "done", "f": "done"}[self.phase]
        return [ProtocolMessage(reply, (h(self.x),))]


class HashReceiver:
    """Public-coin receiver of the hashing protocol: sends random keys, records answers."""

    def __init__(self, spec: HashingSpec, coins: Any) -> None:
        self.spec = spec
        self.coins = coins
        self.keys: dict[str, HashFunction] = {}
        self.values: dict[str, str] = {}
        self.phase = "start"

    def _key(self, name: str, fam: HashFamilySpec, mtype: MsgType) -> ProtocolMessage:
        h = HashFunction(fam, self.coins.bits(fam.key_bits))
        self.keys[name] = h
        return ProtocolMessage(mtype, (h.key_bitstring,))

    def start(self) -> list[ProtocolMessage]:
        if self.phase != "start":
            raise ProtocolError("hashing receiver already started")
        self.phase = "y1"
        return [self._key("h1", self.spec.h1, MsgType.H1)]

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        expect = {"y1": (MsgType.Y1, self.spec.h1), "y2": (MsgType.Y2, self.spec.h2), "w": (MsgType.W, self.spec.tcr)}.get(self.phase)
        if expect is None or msg.type != expect[0] or len(msg.fields) != 1 or len(msg.fields[0]) != expect[1].range_bits:
            self.phase = "dead"
            raise ProtocolError(f"unexpected {msg.type.name}")
        self.values[self.phase] = msg.fields[0]
        if self.phase == "y1":
            self.phase = "y2"
            return [self._key("h2", self.spec.h2, MsgType.H2)]
        if self.phase == "y2" and self.spec.strong:
            self.phase = "w"
            return [self._key("f", self.spec.tcr, MsgType.F)]
        self.phase = "done"
        return []

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def consistent(self, x: str) -> bool:
        """Whether ``x`` matches every hash value the sender sent."""
        ok = self.keys["h1"](x) == self.values["y1"] and self.keys["h2"](x) == self.values["y2"]
        if self.spec.strong:
            ok = ok and self.keys["f"](x) == self.values["w"]
        return ok


def weak_hash_step(state: HashSender | HashReceiver, incoming: ProtocolMessage | None) -> tuple[Any, list[ProtocolMessage]]:
    """Advance one party of the weak protocol; a receiver with no incoming message starts the run."""
    if state.spec.strong:
        raise ParameterError("weak_hash_step drives the two-message-pair protocol")
    out = state.start() if incoming is None else state.step(incoming)
    return state, out


def strong_hash_step(state: HashSender | HashReceiver, incoming: ProtocolMessage | None) -> tuple[Any, list[ProtocolMessage]]:
    """Advance one party of the strong protocol (weak protocol followed by a TCR hash)."""
    if not state.spec.strong:
        raise ParameterError("strong_hash_step needs a spec with a TCR family")
    out = state.start() if incoming is None else state.step(incoming)
    return state, out


def run_hashing(sender: Any, receiver: HashReceiver) -> list[ProtocolMessage]:
    frames: list[ProtocolMessage] = []
    pending = receiver.start()
    while pending:
        msg = pending.pop(0)
        frames.append(msg)
        for reply in sender.step(msg):
            frames.append(reply)
            pending.extend(receiver.step(reply))
    return frames


# ---------------------------------------------------------------------------
# Commitment parties


class CommitSender:
    """Honest committer.  Coins: seed x then mask vector u, i.e. sigma = x || u.

    With ``sigma`` given the sender replays those coins (used by reveal
    verification); otherwise x is drawn at the first step and u at the mask.
    """

    def __init__(self, params: ProtocolParams, b: int, coins: Any = None, sigma: str | None = None) -> None:
        if b not in (0, 1):
            raise ParameterError("committed bit must be 0 or 1")
        self.params = params
        self.b = b
        self.coins = coins
        self.x: int | None = None
        self.u: str | None = None
        if sigma is not None:
            check_bits(sigma, params.sigma_bits)
            s = params.seed_bits
            self.x = from_bits(sigma[:s])
            self.u = sigma[s:]
        elif coins is None:
            raise ParameterError("sender needs coins or an explicit sigma")
        self.z = 0
        self.round = 1
        self.phase = "param" if params.generator.pp_bits else "h1"
        self._hash: HashSender | None = None
        self._blocks: tuple | None = None
        self.history: list[ProtocolMessage] = []

    def _seed(self) -> int:
        if self.x is None:
            self.x = self.coins.bits(self.params.seed_bits)
        return self.x

    def _block(self, i: int) -> Any:
        if self._blocks is None:
            self._blocks = self.params.generator.evaluate(self.z, self._seed())
        return self._blocks[i - 1]

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def opening(self) -> Opening:
        if not self.done or self.x is None or self.u is None:
            raise ProtocolError("opening requested before the commit stage finished")
        return Opening(self.b, to_bits(self.x, self.params.seed_bits) + self.u)

    def _fail(self, why: str) -> None:
        self.phase = "dead"
        raise ProtocolError(why)

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        self.history.append(msg)
        out = self._step(msg)
        self.history.extend(out)
        return out

    def _step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        p = self.params
        if self.phase == "dead" or self.phase == "done":
            self._fail(f"{msg.type.name} after the session ended")
        if self.phase == "param":
            if msg.type != MsgType.PARAM or len(msg.fields) != 1 or len(msg.fields[0]) != p.generator.pp_bits:
                self._fail(f"expected PARAM, got {msg.type.name}")
            self.z = from_bits(msg.fields[0])
            self.phase = "h1"
            return []
        if self.phase in ("h1", "h2", "f"):
            if self.phase == "h1":
                if msg.type != MsgType.H1:
                    self._fail(f"expected H1, got {msg.type.name}")
                self._hash = HashSender(p.hashing, p.code(self.round, self._block(self.round)))
            out = self._hash.step(msg)
            self.phase = {"h1": "h2", "h2": "f", "f": "coin"}[self.phase]
            return out
        # phase == "coin"
        width = (p.m - self.round).bit_length()
        if msg.type != MsgType.COIN or len(msg.fields) != 1 or len(msg.fields[0]) != width:
            self._fail(f"expected COIN, got {msg.type.name}")
        d = from_bits(msg.fields[0])
        if d > p.m - self.round:
            self._fail("coin value out of range")
        y = p.code(self.round, self._block(self.round))
        if d == 0:
            if self.u is None:
                self.u = to_bits(self.coins.bits(p.ell), p.ell)
            bit = (sum(int(a) & int(c) for a, c in zip(self.u, y)) & 1) ^ self.b
            self.phase = "done"
            return [ProtocolMessage(MsgType.MASK, (str(bit), self.u))]
        self.round += 1
        self.phase = "h1"
        return [ProtocolMessage(MsgType.BLOCK, (y,))]


class CommitReceiver:
    """Honest public-coin receiver.

    ``istar`` forces the masked round: earlier coins are drawn uniformly from
    [1, m - i] so the session continues, and the coin at ``istar`` is 0.
    """

    def __init__(self, params: ProtocolParams, coins: Any, istar: int | None = None) -> None:
        self.params = params
        self.coins = coins if isinstance(coins, ForcedCoins) else ForcedCoins(coins)
        self.istar = istar
        self.round = 1
        self.phase = "start"
        self.z = 0
        self._hash: HashReceiver | None = None
        self.blocks: list[str] = []
        self.mask: tuple[str, str] | None = None
        self.history: list[ProtocolMessage] = []
        self.sent: list[ProtocolMessage] = []

    @property
    def done(self) -> bool:
        return self.phase == "done"

    def _emit(self, msgs: list[ProtocolMessage]) -> list[ProtocolMessage]:
        self.history.extend(msgs)
        self.sent.extend(msgs)
        return msgs

    def _open_round(self) -> list[ProtocolMessage]:
        self._hash = HashReceiver(self.params.hashing, self.coins)
        self.phase = "hash"
        return self._hash.start()

    def start(self) -> list[ProtocolMessage]:
        if self.phase != "start":
            raise ProtocolError("receiver already started")
        out = []
        pp = self.params.generator.pp_bits
        if pp:
            self.z = self.coins.bits(pp)
            out.append(ProtocolMessage(MsgType.PARAM, (to_bits(self.z, pp),)))
        out.extend(self._open_round())
        return self._emit(out)

    def _coin(self) -> int:
        left = self.params.m - self.round
        if self.istar is None:
            return self.coins.below(left + 1)
        if self.round >= self.istar:
            return 0
        # d uniform on [1, left], encoded through the same coin slot
        return 1 + self.coins.below(left)

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        self.history.append(msg)
        try:
            out = self._step(msg)
        except ProtocolError:
            self.phase = "dead"
            raise
        return self._emit(out)

    def _step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        p = self.params
        if self.phase == "hash":
            out = self._hash.step(msg)
            if out:
                return out
            d = self._coin()
            width = (p.m - self.round).bit_length()
            self.phase = "mask" if d == 0 else "block"
            return [ProtocolMessage(MsgType.COIN, (to_bits(d, width),))]
        if self.phase == "block":
            if msg.type != MsgType.BLOCK or len(msg.fields) != 1 or len(msg.fields[0]) != p.ell:
                raise ProtocolError(f"expected BLOCK, got {msg.type.name}")
            self.blocks.append(msg.fields[0])
            self.round += 1
            return self._open_round()
        if self.phase == "mask":
            if msg.type != MsgType.MASK or len(msg.fields) != 2 or len(msg.fields[0]) != 1 or len(msg.fields[1]) != p.ell:
                raise ProtocolError(f"expected MASK, got {msg.type.name}")
            self.mask = (msg.fields[0], msg.fields[1])
            self.phase = "done"
            return []
        raise ProtocolError(f"{msg.type.name} in phase {self.phase}")

    def coin_stream(self) -> str:
        return "".join(self.coins.log)

    @classmethod
    def resume(cls, params: ProtocolParams, history: Sequence[ProtocolMessage], rng: Any, istar: int | None = None) -> CommitReceiver:
        """Receiver whose earlier coins are read off ``history`` and whose later coins come from ``rng``."""
        forced = [from_bits(f) for msg in history if msg.from_receiver for f in msg.fields if f]
        r = cls(params, ForcedCoins(rng, forced), istar)
        expected = [m for m in history if m.from_receiver]
        got = r.start()
        for msg in history:
            if not msg.from_receiver:
                got.extend(r.step(msg))
        if got[: len(expected)] != expected:
            raise ProtocolError("history is not a transcript of the honest receiver")
        r._pending = got[len(expected) :]
        return r


def run_commit(sender: Any, receiver: CommitReceiver, *, pending: list[ProtocolMessage] | None = None) -> Commitment:
    """Drive a commit stage to completion; ``pending`` resumes mid-session."""
    frames: list[ProtocolMessage] = []
    queue = receiver.start() if pending is None else list(pending)
    while queue:
        msg = queue.pop(0)
        frames.append(msg)
        for reply in sender.step(msg):
            frames.append(reply)
            queue.extend(receiver.step(reply))
    if not receiver.done:
        raise ProtocolError("commit stage ended without a mask message")
    return Commitment(tuple(frames))


def commit_sender_step(state: CommitSender, incoming: ProtocolMessage) -> tuple[CommitSender, list[ProtocolMessage]]:
    return state, state.step(incoming)


def commit_receiver_step(state: CommitReceiver, incoming: ProtocolMessage | None) -> tuple[CommitReceiver, list[ProtocolMessage]]:
    return state, (state.start() if incoming is None else state.step(incoming))


def reveal_verify(c: Commitment, o: Opening, params: ProtocolParams) -> int | None:
    """Re-run the honest sender on (b, sigma) against c's receiver messages; b if every sender message matches."""
    if o.b not in (0, 1) or not isinstance(o.sigma, str) or len(o.sigma) != params.sigma_bits or o.sigma.strip("01"):
        return None
    sender = CommitSender(params, o.b, sigma=o.sigma)
    expected: list[ProtocolMessage] = []
    try:
        for msg in c.frames:
            if msg.from_receiver:
                if expected:
                    return None
                expected.extend(sender.step(msg))
            else:
                if not expected or expected.pop(0) != msg:
                    return None
    except (ProtocolError, ParameterError):
        return None
    if expected or not sender.done:
        return None
    return o.b


@dataclass
class SessionResult:
    commitment: Commitment
    opening: Opening
    accepted: int | None
    receiver_public_coin: bool


def honest_session(params: ProtocolParams, b: int, rng: SeedStream) -> SessionResult:
    sender = CommitSender(params, b, rng.spawn("sender"))
    receiver = CommitReceiver(params, rng.spawn("receiver"))
    c = run_commit(sender, receiver)
    o = sender.opening()
    sent = "".join(f for msg in receiver.sent for f in msg.fields)
    return SessionResult(c, o, reveal_verify(c, o, params), sent == receiver.coin_stream())


# ---------------------------------------------------------------------------
# Parallel repetition


@dataclass(frozen=True)
class ParallelCommitment:
    parts: tuple[Commitment, ...]

    def to_bytes(self) -> bytes:
        out = struct.pack(">I", len(self.parts))
        for p in self.parts:
            raw = p.to_bytes()
            out += struct.pack(">I", len(raw)) + raw
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> ParallelCommitment:
        if len(data) < 4:
            raise ProtocolError("truncated parallel commitment")
        (count,) = struct.unpack_from(">I", data, 0)
        pos = 4
        parts = []
        for _ in range(count):
            if pos + 4 > len(data):
                raise ProtocolError("truncated parallel commitment")
            (length,) = struct.unpack_from(">I", data, pos)
            pos += 4
            parts.append(Commitment.from_bytes(data[pos : pos + length]))
            pos += length
        if pos != len(data):
            raise ProtocolError("trailing bytes in parallel commitment")
        return cls(tuple(parts))


@dataclass(frozen=True)
class ParallelScheme:
    """t independent copies advanced in lockstep, all committing to the same bit."""

    params: ProtocolParams
    t: int

    def commit(self, senders: Sequence[Any], receivers: Sequence[CommitReceiver]) -> ParallelCommitment:
        if len(senders) != self.t or len(receivers) != self.t:
            raise ParameterError("need one sender and one receiver per copy")
        frames: list[list[ProtocolMessage]] = [[] for _ in range(self.t)]
        queues = [r.start() for r in receivers]
        while any(queues):
            for k in range(self.t):
                if not queues[k]:
                    continue
                msg = queues[k].pop(0)
                frames[k].append(msg)
                for reply in senders[k].step(msg):
                    frames[k].append(reply)
                    queues[k].extend(receivers[k].step(reply))
        if not all(r.done for r in receivers):
            raise ProtocolError("a copy ended without a mask message")
        return ParallelCommitment(tuple(Commitment(tuple(f)) for f in frames))

    def reveal_verify(self, c: ParallelCommitment, openings: Sequence[Opening]) -> int | None:
        if len(c.parts) != self.t or len(openings) != self.t:
            return None
        bits = {reveal_verify(part, o, self.params) for part, o in zip(c.parts, openings)}
        if len(bits) != 1 or None in bits:
            return None
        return bits.pop()


def parallel_repeat(params: ProtocolParams, t: int) -> ParallelScheme:
    if t < 1:
        raise ParameterError("repetition count must be at least 1")
    return ParallelScheme(params, t)


def asymptotic_repetitions(n: int, p: int, m: int) -> int:
    """The repetition count log(n)^2 * p * m, rounded up."""
    return max(1, int(np.ceil(log2(max(n, 2)) ** 2 * p * m)))


# ---------------------------------------------------------------------------
# Cheating senders


class CheatingSender:
    """Sender interface for binding experiments: ``step`` plus two openings after the commit stage."""

    params: ProtocolParams
    history: list[ProtocolMessage]

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        raise NotImplementedError

    def openings(self) -> list[Opening]:
        """First entry is the sender's first decommitment string."""
        raise NotImplementedError

    def commitment(self) -> Commitment:
        return Commitment(tuple(self.history))


class HonestCheater(CheatingSender):
    """Honest sender that outputs its single opening twice."""

    def __init__(self, params: ProtocolParams, coins: Any, b: int = 0) -> None:
        self.params = params
        self.inner = CommitSender(params, b, coins)
        self.history = self.inner.history

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        return self.inner.step(msg)

    def openings(self) -> list[Opening]:
        o = self.inner.opening()
        return [o, o]


class ExhaustiveCheater(CheatingSender):
    """Plays honestly with bit b0, then searches every seed for an opening of the other bit."""

    def __init__(self, params: ProtocolParams, coins: Any, b0: int = 0) -> None:
        self.params = params
        self.inner = CommitSender(params, b0, coins)
        self.history = self.inner.history
        self.b0 = b0

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        return self.inner.step(msg)

    def alternate(self) -> Opening | None:
        first = self.inner.opening()
        c = self.commitment()
        u = first.sigma[self.params.seed_bits :]
        for x in self.params.generator.seeds():
            cand = Opening(1 - self.b0, to_bits(x, self.params.seed_bits) + u)
            if reveal_verify(c, cand, self.params) is not None:
                return cand
        return None

    def openings(self) -> list[Opening]:
        first = self.inner.opening()
        alt = self.alternate()
        return [first, alt if alt is not None else first]


class LazyCheater(CheatingSender):
    """Re-picks its seed every round among seeds matching the revealed blocks, and picks u to split parities."""

    def __init__(self, params: ProtocolParams, coins: Any, b0: int = 0) -> None:
        self.params = params
        self.coins = coins
        self.b0 = b0
        self.history: list[ProtocolMessage] = []
        self.round = 1
        self.prefix: tuple = ()
        self.x = 0
        self._hash: HashSender | None = None
        self._recv: dict[str, HashFunction] = {}
        self._vals: dict[str, str] = {}
        self._openings: list[Opening] | None = None

    def _cands(self) -> list[int]:
        return self.params.generator.consistent_seeds(0, self.prefix)

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        self.history.append(msg)
        out = self._step(msg)
        self.history.extend(out)
        return out

    def _step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        p = self.params
        g = p.generator
        if msg.type == MsgType.H1:
            cands = self._cands()
            self.x = cands[self.coins.below(len(cands))]
            self._hash = HashSender(p.hashing, p.code(self.round, g.evaluate(0, self.x)[self.round - 1]))
        if msg.type in (MsgType.H1, MsgType.H2, MsgType.F):
            fam = {MsgType.H1: p.hashing.h1, MsgType.H2: p.hashing.h2, MsgType.F: p.hashing.tcr}[msg.type]
            self._recv[msg.type.name] = HashFunction(fam, from_bits(msg.fields[0]))
            out = self._hash.step(msg)
            self._vals[msg.type.name] = out[0].fields[0]
            return out
        if msg.type != MsgType.COIN:
            raise ProtocolError(f"unexpected {msg.type.name}")
        i = self.round
        y = g.evaluate(0, self.x)[i - 1]
        if from_bits(msg.fields[0]) != 0:
            self.prefix += (y,)
            self.round += 1
            return [ProtocolMessage(MsgType.BLOCK, (p.code(i, y),))]
        # mask round: seeds agreeing with the prefix and with every hash value sent this round
        live = []
        for x in self._cands():
            code = p.code(i, g.evaluate(0, x)[i - 1])
            if all(self._recv[k](code) == self._vals[k] for k in self._recv):
                live.append((x, code))
        u = None
        codes = sorted({c for _, c in live})
        for uu in range(1 << p.ell):
            ub = to_bits(uu, p.ell)
            if len({_ip(ub, c) for c in codes}) == 2:
                u = ub
                break
        if u is None:
            u = to_bits(self.coins.bits(p.ell), p.ell)
        own = p.code(i, y)
        beta = _ip(u, own) ^ self.b0
        by_bit: dict[int, Opening] = {}
        for x, code in [(self.x, own)] + live:
            bit = beta ^ _ip(u, code)
            by_bit.setdefault(bit, Opening(bit, to_bits(x, p.seed_bits) + u))
        first = by_bit[self.b0]
        self._openings = [first, by_bit.get(1 - self.b0, first)]
        self._hash_keys = dict(self._recv)
        return [ProtocolMessage(MsgType.MASK, (str(beta), u))]

    def openings(self) -> list[Opening]:
        if self._openings is None:
            raise ProtocolError("openings requested before the mask round")
        return list(self._openings)


class GarbageSender(CheatingSender):
    """Answers every receiver message with random bits of the right length."""

    def __init__(self, params: ProtocolParams, coins: Any) -> None:
        self.params = params
        self.coins = coins
        self.history: list[ProtocolMessage] = []

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        p = self.params
        hs = p.hashing
        self.history.append(msg)
        rand = lambda k: to_bits(self.coins.bits(k), k)
        if msg.type == MsgType.H1:
            out = [ProtocolMessage(MsgType.Y1, (rand(hs.h1.range_bits),))]
        elif msg.type == MsgType.H2:
            out = [ProtocolMessage(MsgType.Y2, (rand(hs.h2.range_bits),))]
        elif msg.type == MsgType.F:
            out = [ProtocolMessage(MsgType.W, (rand(hs.tcr.range_bits),))]
        elif msg.type == MsgType.COIN:
            if from_bits(msg.fields[0]) == 0:
                out = [ProtocolMessage(MsgType.MASK, (rand(1), rand(p.ell)))]
            else:
                out = [ProtocolMessage(MsgType.BLOCK, (rand(p.ell),))]
        else:
            out = []
        self.history.extend(out)
        return out

    def openings(self) -> list[Opening]:
        o = Opening(0, to_bits(self.coins.bits(self.params.sigma_bits), self.params.sigma_bits))
        return [o, Opening(1, o.sigma)]


def _ip(u: str, y: str) -> int:
    return sum(int(a) & int(b) for a, b in zip(u, y)) & 1


CheaterFactory = Callable[[Any], CheatingSender]


class NonFailingSender(CheatingSender):
    """Wraps a cheater so that every forwarded message has a valid justification.

    Before forwarding a cheater message it plays up to ``retry_budget``
    random continuations against a rebuilt receiver; if none yields a valid
    first opening it switches to the honest sender on the last justification.
    """

    def __init__(self, cheater: CheatingSender, params: ProtocolParams, retry_budget: int, rng: SeedStream) -> None:
        if retry_budget < 0:
            raise ParameterError("retry budget must be non-negative")
        self.cheater = cheater
        self.params = params
        self.budget = retry_budget
        self.rng = rng
        self.history: list[ProtocolMessage] = []
        self.justification = Opening(0, "0" * params.sigma_bits)
        self.failed = False
        self.honest: CommitSender | None = None
        self.tries: list[int] = []

    def _justify(self, pending: list[ProtocolMessage]) -> Opening | None:
        hist = self.history + pending
        for k in range(self.budget):
            self.tries[-1] = k + 1
            twin = copy.deepcopy(self.cheater)
            recv = CommitReceiver.resume(self.params, hist, self.rng)
            try:
                rest = run_commit(twin, recv, pending=recv._pending) if recv._pending else Commitment(())
                full = Commitment(tuple(hist) + rest.frames)
                first = twin.openings()[0]
            except (ProtocolError, ConsistencyError, ParameterError):
                continue
            if reveal_verify(full, first, self.params) is not None:
                return first
        return None

    def _go_honest(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        self.failed = True
        j = self.justification
        self.honest = CommitSender(self.params, j.b, sigma=j.sigma)
        for past in self.history:
            if past.from_receiver:
                self.honest.step(past)
        return self.honest.step(msg)

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        if self.failed:
            out = self.honest.step(msg)
        else:
            try:
                out = self.cheater.step(msg)
            except (ProtocolError, ConsistencyError):
                out = None
            if out:
                self.tries.append(0)
                found = self._justify([msg] + out)
                if found is None:
                    out = self._go_honest(msg)
                else:
                    self.justification = found
            elif out is None:
                out = self._go_honest(msg)
        self.history.append(msg)
        self.history.extend(out)
        return out

    def openings(self) -> list[Opening]:
        if self.failed:
            return [self.honest.opening(), self.honest.opening()]
        ops = self.cheater.openings()
        return [self.justification, ops[1] if ops[1] != self.justification else ops[0]]


def nonfailing_wrapper(cheater: CheatingSender, params: ProtocolParams, retry_budget: int, rng: SeedStream) -> NonFailingSender:
    return NonFailingSender(cheater, params, retry_budget, rng)


# ---------------------------------------------------------------------------
# Binding experiments


def binding_attack_harness(factory: CheaterFactory, params: ProtocolParams, trials: int, rng: SeedStream) -> AttackReport:
    """Frequency with which the cheater's two openings are both accepted for different bits."""
    wins = aborts = 0
    for t in range(trials):
        trng = rng.spawn(f"trial{t}")
        cheater = factory(trng.spawn("cheater"))
        try:
            c = run_commit(cheater, CommitReceiver(params, trng.spawn("receiver")))
        except (ProtocolError, ConsistencyError):
            # the receiver rejected the cheater mid-session
            aborts += 1
            continue
        o0, o1 = cheater.openings()
        a0, a1 = reveal_verify(c, o0, params), reveal_verify(c, o1, params)
        if a0 is not None and a1 is not None and a0 != a1:
            wins += 1
    return AttackReport(trials, wins, aborts, label="binding")


def parallel_binding_harness(factory: CheaterFactory, scheme: ParallelScheme, trials: int, rng: SeedStream) -> AttackReport:
    """Double openings against the repeated scheme; every copy must open both ways."""
    wins = aborts = 0
    p = scheme.params
    for t in range(trials):
        trng = rng.spawn(f"trial{t}")
        cheaters = [factory(trng.spawn(f"cheater{k}")) for k in range(scheme.t)]
        receivers = [CommitReceiver(p, trng.spawn(f"receiver{k}")) for k in range(scheme.t)]
        try:
            c = scheme.commit(cheaters, receivers)
        except (ProtocolError, ConsistencyError):
            aborts += 1
            continue
        zero: list[Opening] = []
        one: list[Opening] = []
        for part, ch in zip(c.parts, cheaters):
            ops = {reveal_verify(part, o, p): o for o in ch.openings()}
            if 0 not in ops or 1 not in ops:
                break
            zero.append(ops[0])
            one.append(ops[1])
        else:
            if scheme.reveal_verify(c, zero) == 0 and scheme.reveal_verify(c, one) == 1:
                wins += 1
    return AttackReport(trials, wins, aborts, label=f"parallel-t{scheme.t}")


def exhaustive_cheater_rate(params: ProtocolParams) -> Fraction:
    """Exact double-opening rate of :class:`ExhaustiveCheater` for a one-seed-bit generator whose later blocks differ.

    The cheater wins only when round 1 is masked, the two first blocks
    collide under all three hashes, and the mask vector separates them.
    """
    g = params.generator
    if g.seed_bits != 1:
        raise ParameterError("exact rate is derived for one-seed-bit generators")
    y0, y1 = (params.code(1, g.evaluate(0, x)[0]) for x in (0, 1))
    if y0 == y1:
        raise ParameterError("first blocks must differ")
    hs = params.hashing
    p = Fraction(1, g.m)
    for fam in (hs.h1, hs.h2, hs.tcr):
        p *= exact_collision_probability(fam, y0, y1) if fam.range_bits else Fraction(1)
    return p * Fraction(1, 2)


# ---------------------------------------------------------------------------
# High-entropy generator from a cheating sender


def high_entropy_generator_from_sender(factory: CheaterFactory, params: ProtocolParams) -> OnlineGenerator:
    """Runs the cheater against a receiver that never masks before round m.

    Blocks 1..m-1 are the cheater's revealed blocks; block m comes from the
    seed in its first opening.  Receiver and cheater coins are the online
    generator's coins.
    """
    g = params.generator
    m = g.m
    if g.pp_bits:
        raise ParameterError("only generators without a public parameter are supported")

    def body(ctx: RunContext) -> None:
        coins = CtxBits(ctx)
        cheater = factory(coins)
        recv = CommitReceiver(params, coins, istar=m)
        prefix: tuple = ()
        queue = recv.start()
        frames: list[ProtocolMessage] = []
        while queue:
            msg = queue.pop(0)
            frames.append(msg)
            try:
                replies = cheater.step(msg)
            except ProtocolError as exc:
                raise ConsistencyError(f"cheater broke the protocol: {exc}") from exc
            for reply in replies:
                frames.append(reply)
                if reply.type == MsgType.BLOCK:
                    i = len(prefix) + 1
                    y = params.decode(i, 0, prefix, reply.fields[0])
                    prefix += (y,)
                    ctx.emit(y)
                try:
                    queue.extend(recv.step(reply))
                except ProtocolError as exc:
                    raise ConsistencyError(f"cheater broke the protocol: {exc}") from exc
        first = cheater.openings()[0]
        if reveal_verify(Commitment(tuple(frames)), first, params) is None:
            raise ConsistencyError("cheater's first opening is invalid")
        x = from_bits(first.sigma[: params.seed_bits])
        ctx.emit(g.evaluate(0, x)[m - 1])

    return OnlineGenerator(g, body, "hegen")


# ---------------------------------------------------------------------------
# From binding breaks to hashing breaks


@dataclass
class HashBreakOutput:
    v: tuple
    x0: str
    x1: str


class HashBreakAdversary:
    """Adversary for the strong hashing game built from a commitment cheater.

    ``prepare`` picks a round i, replays rounds before i against a simulated
    receiver that never masks there, and outputs v = (i, revealed prefix).
    ``respond`` forwards the live hashing receiver's messages to the cheater.
    ``finish`` rewinds across the round-i coin to produce (x0, x1).
    """

    def __init__(self, factory: CheaterFactory, params: ProtocolParams, rng: SeedStream) -> None:
        self.params = params
        self.rng = rng
        self.factory = factory

    def prepare(self) -> tuple:
        p = self.params
        self.i = 1 + self.rng.below(p.m)
        self.cheater = self.factory(self.rng.spawn("cheater"))
        recv = CommitReceiver(p, self.rng.spawn("prefix"), istar=p.m)
        queue = recv.start()
        prefix: tuple = ()
        while recv.round < self.i:
            msg = queue.pop(0)
            for reply in self.cheater.step(msg):
                if reply.type == MsgType.BLOCK:
                    prefix += (p.decode(len(prefix) + 1, 0, prefix, reply.fields[0]),)
                queue.extend(recv.step(reply))
        self.prefix = prefix
        return (self.i, prefix)

    def respond(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        return self.cheater.step(msg)

    step = respond

    def finish(self) -> HashBreakOutput:
        p = self.params
        i = self.i
        width = (p.m - i).bit_length()
        twin = copy.deepcopy(self.cheater)
        twin.step(ProtocolMessage(MsgType.COIN, (to_bits(0, width),)))
        ops = twin.openings()
        c = twin.commitment()
        g = p.generator
        seed = lambda o: from_bits(o.sigma[: p.seed_bits])
        y0 = p.code(i, g.evaluate(0, seed(ops[0]))[i - 1])
        y1 = y0
        if reveal_verify(c, ops[1], p) is not None and ops[1].b != ops[0].b:
            y1 = p.code(i, g.evaluate(0, seed(ops[1]))[i - 1])
        if i == p.m:
            x0 = y0
        else:
            d = 1 + self.rng.below(p.m - i)
            out = self.cheater.step(ProtocolMessage(MsgType.COIN, (to_bits(d, width),)))
            x0 = out[0].fields[0] if out and out[0].type == MsgType.BLOCK else y0
        x1 = (y0, y1)[self.rng.below(2)]
        return HashBreakOutput((i, self.prefix), x0, x1)


def binding_to_hash_break(factory: CheaterFactory, params: ProtocolParams) -> Callable[[SeedStream], HashBreakAdversary]:
    return lambda rng: HashBreakAdversary(factory, params, rng)


def small_set(params: ProtocolParams, v: tuple) -> set[str]:
    """Codes of block i reachable after the revealed prefix."""
    i, prefix = v
    g = params.generator
    return {params.code(i, g.evaluate(0, x)[i - 1]) for x in g.consistent_seeds(0, prefix)}


def strong_hash_game(make_adversary: Callable[[SeedStream], HashBreakAdversary], params: ProtocolParams, trials: int, rng: SeedStream) -> AttackReport:
    """Success: x0 != x1, both consistent with the live hashing transcript, and x0 in the committed small set."""
    wins = 0
    for t in range(trials):
        trng = rng.spawn(f"trial{t}")
        adv = make_adversary(trng.spawn("adversary"))
        v = adv.prepare()
        live = HashReceiver(params.hashing, trng.spawn("live"))
        run_hashing(adv, live)
        out = adv.finish()
        if out.x0 != out.x1 and out.x0 in small_set(params, v) and live.consistent(out.x0) and live.consistent(out.x1):
            wins += 1
    return AttackReport(trials, wins, label="strong-hash-break")


class SetRestrictedHashCheater:
    """Unbounded hashing cheater restricted to a fixed set L: keeps the largest consistent class alive."""

    def __init__(self, spec: HashingSpec, L: Sequence[str]) -> None:
        self.spec = spec
        self.alive = list(L)

    def step(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        fam = {MsgType.H1: self.spec.h1, MsgType.H2: self.spec.h2, MsgType.F: self.spec.tcr}[msg.type]
        h = HashFunction(fam, from_bits(msg.fields[0]))
        groups: dict[str, list[str]] = {}
        for x in self.alive:
            groups.setdefault(h(x), []).append(x)
        val = max(sorted(groups), key=lambda k: len(groups[k]))
        self.alive = groups[val]
        reply = {MsgType.H1: MsgType.Y1, MsgType.H2: MsgType.Y2, MsgType.F: MsgType.W}[msg.type]
        return [ProtocolMessage(reply, (val,))]

    def pair(self) -> tuple[str, str] | None:
        return (self.alive[0], self.alive[1]) if len(self.alive) >= 2 else None


def weak_binding_bound(k: int, t: int, n: int) -> float:
    """2^(k - floor(t/2)) + 2^(-n/2)."""
    return 2.0 ** (k - t // 2) + 2.0 ** (-n / 2)


def set_restricted_binding_rate(spec: HashingSpec, L: Sequence[str], trials: int, rng: SeedStream) -> AttackReport:
    wins = 0
    for t in range(trials):
        cheater = SetRestrictedHashCheater(spec, L)
        recv = HashReceiver(spec, rng.spawn(f"trial{t}"))
        run_hashing(cheater, recv)
        pair = cheater.pair()
        if pair and recv.consistent(pair[0]) and recv.consistent(pair[1]):
            wins += 1
    return AttackReport(trials, wins, label="set-restricted")


def poly_batch_eval(fam: HashFamilySpec, coeffs: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Outputs of poly-ell-wise keys given as coefficient rows (shape keys x ell) on inputs xs.

    Row ``c`` is the key whose i-th ``domain_bits`` chunk from the top is ``c[i]``.
    """
    from .hashing import gf_field, gf_mul_array

    fld = gf_field(fam.domain_bits)
    xb = np.broadcast_to(xs[None, :], (coeffs.shape[0], len(xs)))
    acc = np.zeros(xb.shape, dtype=np.uint64)
    for i in range(fam.ell - 1, -1, -1):
        acc = gf_mul_array(acc, xb, fld) ^ coeffs[:, i : i + 1]
    return acc & np.uint64((1 << fam.range_bits) - 1)


def coeffs_to_key(fam: HashFamilySpec, row: Sequence[int]) -> int:
    d = fam.domain_bits
    return sum(int(c) << ((fam.ell - 1 - i) * d) for i, c in enumerate(row))


def weak_hash_double_survival(spec: HashingSpec, L: Sequence[str], samples: int, rng: SeedStream, chunk: int = 20000) -> AttackReport:
    """Fraction of key pairs (h1, h2) under which two distinct members of L agree on both hashes.

    Exhaustive over pairs in L for every sampled key pair; vectorized over keys.
    """
    for fam in (spec.h1, spec.h2):
        if fam.kind != "poly-ell-wise":
            raise ParameterError("vectorized survival check expects polynomial families")
    s = spec.domain_bits
    xs = np.array([from_bits(x) for x in L], dtype=np.uint64)
    if len(set(xs.tolist())) != len(L):
        raise ParameterError("L must have distinct members")
    wins = 0
    done = 0
    k = 0
    while done < samples:
        size = min(chunk, samples - done)
        crng = rng.spawn(f"chunk{k}")
        k += 1
        codes = np.zeros((size, len(L)), dtype=np.uint64)
        shift = 0
        for fam in (spec.h1, spec.h2):
            coeffs = np.array([[crng.bits(s) for _ in range(fam.ell)] for _ in range(size)], dtype=np.uint64)
            codes |= poly_batch_eval(fam, coeffs, xs) << np.uint64(shift)
            shift += fam.range_bits
        srt = np.sort(codes, axis=1)
        wins += int(np.any(srt[:, 1:] == srt[:, :-1], axis=1).sum())
        done += size
    return AttackReport(samples, wins, label="weak-double-survival")


def support_survival_probability(spec: HashingSpec, L: Sequence[str]) -> Fraction:
    """Exact Pr over (h1, h2) keys that two distinct members of L agree on both hashes."""
    f1 = list(all_functions(spec.h1))
    f2 = list(all_functions(spec.h2))
    hits = 0
    for h1 in f1:
        for h2 in f2:
            seen = set()
            for x in L:
                key = (h1(x), h2(x))
                if key in seen:
                    hits += 1
                    break
                seen.add(key)
    return Fraction(hits, len(f1) * len(f2))


# ---------------------------------------------------------------------------
# Hiding


@dataclass
class HidingReport:
    sd: Fraction
    per_round: list[Fraction]
    lhl_budget: float
    lhl_single: float
    min_entropy_worst: float = math.inf
    method: str = "exact"

    @property
    def lhl_worst(self) -> float:
        """Leftover-hash term at the worst conditional min-entropy of the masked block."""
        return lhl_bound(1, self.min_entropy_worst)

    def to_json(self) -> dict:
        return {
            "sd": float(self.sd),
            "sd_exact": f"{self.sd.numerator}/{self.sd.denominator}",
            "per_round": [float(v) for v in self.per_round],
            "lhl_budget": self.lhl_budget,
            "lhl_single": self.lhl_single,
            "min_entropy_worst": self.min_entropy_worst,
            "lhl_worst": self.lhl_worst,
            "method": self.method,
        }


def _walsh_abs_sum(counts: np.ndarray) -> int:
    """Sum over u of |sum_y counts[y] (-1)^<u,y>| via the fast Walsh-Hadamard transform."""
    a = counts.astype(np.int64).copy()
    h = 1
    n = len(a)
    while h < n:
        a = a.reshape(-1, 2 * h)
        left, right = a[:, :h].copy(), a[:, h:].copy()
        a[:, :h] = left + right
        a[:, h:] = left - right
        a = a.reshape(n)
        h *= 2
    return int(np.abs(a).sum())


def _reverse_bits_code(code: str) -> int:
    # the inner product <u, y> pairs string positions; index codes so bit k of the int is position k
    return int(code[::-1], 2) if code else 0


def hiding_distance(params: ProtocolParams, receiver_strategy: str = "honest", mode: str = "exact") -> HidingReport:
    """Exact SD between the honest receiver's views for b = 0 and b = 1.

    Views differ only in the mask bit <u, y_i*> xor b, so the distance is the
    expected |bias| of <u, Y_i*> given everything else the receiver sees.
    """
    if receiver_strategy != "honest":
        raise ParameterError("only the honest receiver strategy is implemented")
    if mode != "exact":
        raise RegimeError("only exact hiding distance is implemented")
    g = params.generator
    hs = params.hashing
    fams = [hs.h1, hs.h2] + ([hs.tcr] if hs.tcr is not None else [])
    n_keys = 1
    for f in fams:
        n_keys *= f.key_count
    if n_keys * (1 << g.seed_bits) > 1 << 22:
        raise RegimeError("hiding enumeration above the exact cap")
    ell = params.ell
    m = g.m
    total_seeds = 1 << g.seed_bits
    per_round: list[Fraction] = []
    budget = 0.0
    single = 0.0
    hmin = math.inf
    for i in range(1, m + 1):
        acc = Fraction(0)
        key_lists = [list(all_functions(f)) for f in fams]

        def key_iter(idx: int, chosen: tuple) -> Iterable[tuple]:
            if idx == len(key_lists):
                yield chosen
                return
            for h in key_lists[idx]:
                yield from key_iter(idx + 1, chosen + (h,))

        for keys in key_iter(0, ()):
            groups: dict[tuple, np.ndarray] = {}
            for x in g.seeds():
                ys = g.evaluate(0, x)
                code = params.code(i, ys[i - 1])
                ctx_key = (ys[: i - 1],) + tuple(h(code) for h in keys)
                arr = groups.get(ctx_key)
                if arr is None:
                    arr = groups[ctx_key] = np.zeros(1 << ell, dtype=np.int64)
                arr[_reverse_bits_code(code)] += 1
            for arr in groups.values():
                tot = int(arr.sum())
                acc += Fraction(_walsh_abs_sum(arr), (1 << ell) * total_seeds)
                cp = float((arr.astype(np.float64) ** 2).sum()) / tot**2
                h2 = -log2(cp)
                hmin = min(hmin, log2(tot) - log2(int(arr.max())))
                weight = tot / total_seeds / n_keys
                single += weight * lhl_bound(1, h2) / m
                budget += weight * 2 * lhl_bound(1, h2) / m
        per_round.append(acc / n_keys)
    sd = sum(per_round, Fraction(0)) / m
    return HidingReport(sd, per_round, budget, single, hmin)


def brute_force_view_distance(params: ProtocolParams, cap: int = 1 << 16) -> Fraction:
    """SD between full receiver views (canonical commitment bytes) for b = 0 and b = 1, by enumerating every coin."""

    class _Tree:
        def __init__(self, forced: tuple) -> None:
            self.forced = forced
            self.pos = 0
            self.den = 1
            self.taken: list[int] = []

        def below(self, k: int) -> int:
            if k == 1:
                return 0
            if self.pos < len(self.forced):
                v = self.forced[self.pos]
            else:
                raise _NeedDraw(k)
            self.pos += 1
            self.den *= k
            return v

        def bits(self, k: int) -> int:
            return self.below(1 << k) if k else 0

    def views(b: int) -> Distribution:
        counts: dict[bytes, Fraction] = {}
        stack: list[tuple] = [()]
        leaves = 0
        while stack:
            tape = stack.pop()
            coins = _Tree(tape)
            try:
                c = run_commit(CommitSender(params, b, coins), CommitReceiver(params, coins))
            except _NeedDraw as need:
                stack.extend(tape + (v,) for v in range(need.k))
                continue
            leaves += 1
            if leaves > cap:
                raise RegimeError("view enumeration above the cap")
            key = c.to_bytes()
            counts[key] = counts.get(key, 0) + Fraction(1, coins.den)
        return Distribution(counts)

    return statistical_distance(views(0), views(1))


def imask_frequencies(params: ProtocolParams, sessions: int, rng: SeedStream) -> list[int]:
    """How often each round is the masked round over honest sessions."""
    counts = [0] * params.m
    for k in range(sessions):
        recv = CommitReceiver(params, rng.spawn(f"s{k}"))
        sender = CommitSender(params, 0, rng.spawn(f"s{k}/sender"))
        run_commit(sender, recv)
        counts[recv.round - 1] += 1
    return counts


def masked_round_sample(params: ProtocolParams, rng: SeedStream) -> int:
    """Masked round drawn by the receiver's coin rule alone (no hashing)."""
    for i in range(1, params.m + 1):
        if rng.below(params.m - i + 1) == 0:
            return i
    raise AssertionError("the final coin is always 0")


# ---------------------------------------------------------------------------
# TCP transport


def send_frame(sock: socket.socket, msg: ProtocolMessage) -> None:
    sock.sendall(msg.to_bytes())


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return buf


def recv_frame(sock: socket.socket) -> ProtocolMessage:
    head = _recv_exact(sock, 5)
    (length,) = struct.unpack(">I", head[:4])
    msg, _ = ProtocolMessage.parse(head + _recv_exact(sock, length))
    return msg


def serve_receiver(sock: socket.socket, params: ProtocolParams, rng: SeedStream) -> Commitment:
    """Play the honest receiver over a connected socket."""
    recv = CommitReceiver(params, rng)
    frames: list[ProtocolMessage] = []
    for msg in recv.start():
        send_frame(sock, msg)
        frames.append(msg)
    while not recv.done:
        msg = recv_frame(sock)
        frames.append(msg)
        for out in recv.step(msg):
            send_frame(sock, out)
            frames.append(out)
    return Commitment(tuple(frames))


def remote_commit(sock: socket.socket, sender: CommitSender) -> Commitment:
    """Play the sender over a connected socket until the mask message is sent."""
    frames: list[ProtocolMessage] = []
    while not sender.done:
        msg = recv_frame(sock)
        frames.append(msg)
        for out in sender.step(msg):
            send_frame(sock, out)
            frames.append(out)
    return Commitment(tuple(frames))
