"""Inverting functions with high-accessible-entropy generators, and back.

``invert_via_entropy`` rewinds an online generator for the one-way-function
generator block by block until its output matches a target image.
``consistent_generator_from_inverter`` goes the other way: it turns an
inverter for the prefix function into an online generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import log2
from typing import Any, Callable, Protocol, Sequence

from .entropy_oracle import Distribution, kl_divergence
from .errors import ConsistencyError, ParameterError
from .generators import (
    BlockGeneratorSpec,
    FunctionTable,
    OnlineGenerator,
    RunContext,
    _chunk,
    enumerate_runs,
    iter_runs,
    real_shannon_entropy,
)
from .rng import SeedStream

FAIL = None


class CoinSource(Protocol):
    def below(self, k: int) -> int: ...


@dataclass(eq=False)
class InverterOracle:
    """A randomized inverter ``y -> preimage or FAIL`` drawing coins via ``coins.below``."""

    name: str
    strategy: str
    invert: Callable[[Any, CoinSource], Any]
    xi: Fraction = Fraction(0)
    retry_limit: int | None = None
    meta: dict = field(default_factory=dict)

    def apply(self, y: Any, coins: CoinSource) -> Any:
        return self.invert(y, coins)


def brute_force_xi_inverter(fn: Callable[[Any], Any], domain: Sequence[Any], name: str = "f") -> InverterOracle:
    """Exact inverter: a uniform preimage of y, or FAIL when y has none."""
    if len(domain) > 1 << 20:
        raise ParameterError("domain too large for a brute-force inverter")
    pre: dict[Any, list] = {}
    for x in domain:
        pre.setdefault(fn(x), []).append(x)

    def invert(y: Any, coins: CoinSource) -> Any:
        xs = pre.get(y)
        if not xs:
            return FAIL
        return xs[coins.below(len(xs))]

    return InverterOracle(f"exact[{name}]", "brute-force-exact", invert, meta={"preimages": pre})


def noisy_inverter(inv: InverterOracle, xi: Fraction | float | str) -> InverterOracle:
    """With probability xi return the smallest preimage instead of a uniform one."""
    xi = Fraction(xi)
    if not 0 <= xi <= 1:
        raise ParameterError("xi must lie in [0, 1]")
    pre = inv.meta.get("preimages")
    if pre is None:
        raise ParameterError("noise wrapper needs an exact inverter")
    k, d = xi.numerator, xi.denominator

    def invert(y: Any, coins: CoinSource) -> Any:
        xs = pre.get(y)
        if not xs:
            return FAIL
        if k and coins.below(d) < k:
            return xs[0]
        return inv.invert(y, coins)

    return InverterOracle(f"noisy[{inv.name},xi={xi}]", "brute-force-noisy", invert, xi=xi, meta=inv.meta)


def always_fail_inverter() -> InverterOracle:
    return InverterOracle("always-fail", "fail", lambda y, coins: FAIL)


def prefix_inverter(g: BlockGeneratorSpec) -> InverterOracle:
    """Exact inverter for the prefix function (x, i) -> (i, G(x)_1..i) with z = 0."""
    domain = [(x, i) for i in range(g.m) for x in g.seeds()]

    def fn(point: tuple[int, int]) -> tuple:
        x, i = point
        return (i, g.evaluate(0, x)[:i])

    return brute_force_xi_inverter(fn, domain, name=f"prefix[{g.name}]")


def consistent_generator_from_inverter(g: BlockGeneratorSpec, inv: InverterOracle) -> OnlineGenerator:
    """Round i: invert the emitted prefix to get a seed; keep the old seed on failure; emit its block i."""
    if g.pp_bits:
        raise ParameterError("only generators without a public parameter are supported")

    def body(ctx: RunContext) -> None:
        x = 0
        failed = False
        prefix: tuple = ()
        for i in range(g.m):
            if not failed:
                got = inv.apply((i, prefix), ctx)
                if got is FAIL:
                    failed = True
                else:
                    x = got[0]
            y = g.evaluate(0, x)[i]
            prefix += (y,)
            ctx.emit(y)

    return OnlineGenerator(g, body, f"from-inverter[{inv.name}]")


# ---------------------------------------------------------------------------
# Inversion via accessible entropy


@dataclass
class InversionResult:
    preimage: int | None
    attempts: list[int]
    success: bool


def _target_chunks(g: BlockGeneratorSpec, y: int) -> tuple[str, ...]:
    f: FunctionTable = g.meta["function"]
    if not 0 <= y < 1 << f.out_bits:
        raise ParameterError("target outside the function's codomain")
    pad, c = g.meta["pad_bits"], g.meta["chunk_bits"]
    return _chunk(y << pad, f.out_bits + pad, c)


def invert_via_entropy(a: OnlineGenerator, y: int, retry_limit: int, rng: SeedStream) -> InversionResult:
    """Resample each round until the block equals the matching chunk of y, then read x from the final block."""
    g = a.base
    if "function" not in g.meta or g.m != g.meta["f_blocks"] + 1:
        raise ParameterError("adversary must target an owf generator")
    if retry_limit < 0:
        raise ParameterError("retry limit must be non-negative")
    f: FunctionTable = g.meta["function"]
    target = _target_chunks(g, y)
    z = rng.bits(g.pp_bits)
    # r0 is fixed once, before the block loop
    head = a.execute(z, (), rng, stop_round=1)
    tape = tuple(head.values[: head.r0_len])
    attempts: list[int] = []
    for i in range(1, g.m):
        hit = False
        tries = 0
        while tries < retry_limit:
            tries += 1
            ctx = a.execute(z, tape, rng, stop_round=i)
            if ctx.blocks[i - 1] == target[i - 1]:
                tape = tuple(ctx.values)
                hit = True
                break
        attempts.append(tries)
        if not hit:
            return InversionResult(None, attempts, False)
    final = a.execute(z, tape, rng)
    x = int(final.blocks[-1], 2)
    if f(x) != y:
        raise ConsistencyError("adversary's final block is not a preimage of its own output")
    return InversionResult(x, attempts, True)


def max_retry_limit(n: int, epsilon: Fraction | float | str) -> int:
    eps = Fraction(epsilon)
    if eps <= 0:
        raise ParameterError("epsilon must be positive")
    bound = Fraction(n**3) / eps
    if bound < 1:
        raise ParameterError("n^3/epsilon < 1 leaves no attempts")
    return math.ceil(bound)


def invert_via_entropy_max(a: OnlineGenerator, y: int, epsilon: Fraction | float | str, rng: SeedStream) -> InversionResult:
    """Same loop with retry limit ceil(n^3 / epsilon); r0 stays fixed across rewinds."""
    return invert_via_entropy(a, y, max_retry_limit(a.n, epsilon), rng)


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class AttackReport:
    trials: int
    successes: int
    aborts: int = 0
    mean_attempts_per_block: float | None = None
    label: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.trials:
            raise ParameterError("successes must lie in [0, trials]")

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    @property
    def stderr(self) -> float:
        p = self.success_rate
        return math.sqrt(p * (1 - p) / self.trials) if self.trials else 0.0

    @property
    def ci(self) -> tuple[float, float]:
        """99% Wilson score interval."""
        if not self.trials:
            return (0.0, 1.0)
        zc = 2.5758293035489004
        p, t = self.success_rate, self.trials
        den = 1 + zc * zc / t
        mid = (p + zc * zc / (2 * t)) / den
        half = zc * math.sqrt(p * (1 - p) / t + zc * zc / (4 * t * t)) / den
        lo = 0.0 if self.successes == 0 else max(0.0, mid - half)
        hi = 1.0 if self.successes == t else min(1.0, mid + half)
        return (lo, hi)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "trials": self.trials,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "ci": list(self.ci),
            "mean_attempts_per_block": self.mean_attempts_per_block,
            "aborts": self.aborts,
            "details": self.details,
        }


def owf_success_probability(
    f: FunctionTable,
    attack: InverterOracle | OnlineGenerator,
    trials: int,
    rng: SeedStream,
    *,
    retry_limit: int = 64,
    targets: Sequence[int] | None = None,
) -> AttackReport:
    """Pr over y = f(x) (or over the given targets) that the attack returns a verified preimage."""
    successes = aborts = 0
    attempts: list[int] = []
    if isinstance(attack, OnlineGenerator) and attack.base.meta.get("function") != f:
        raise ParameterError("adversary targets a different function")
    for t in range(trials):
        trng = rng.spawn(f"trial{t}")
        y = targets[t % len(targets)] if targets else f(trng.bits(f.n))
        if isinstance(attack, InverterOracle):
            x = attack.apply(y, trng)
        else:
            try:
                res = invert_via_entropy(attack, y, retry_limit, trng)
            except ConsistencyError:
                aborts += 1
                continue
            attempts.extend(res.attempts)
            x = res.preimage
        if x is not None and f(x) == y:
            successes += 1
    mean = sum(attempts) / len(attempts) if attempts else None
    return AttackReport(trials, successes, aborts, mean, label=getattr(attack, "name", ""))


def exact_inversion_probability(a: OnlineGenerator, retry_limit: int) -> Fraction:
    """Exact success probability of :func:`invert_via_entropy` over y = f(U).

    Round i succeeds with probability 1 - (1 - h)^L where h is the chance one
    fresh draw matches the target chunk; given success, the kept coins follow
    the round distribution conditioned on a match.
    """
    if a.preprocessing:
        raise ParameterError("exact inversion probability covers adversaries without preprocessing")
    g = a.base
    f: FunctionTable = g.meta["function"]
    fb = g.meta["f_blocks"]

    def walk(tape: tuple, i: int, target: tuple) -> Fraction:
        if i > fb:
            return Fraction(1)
        hits: list[tuple[tuple, Fraction]] = []
        for ctx in iter_runs(a, forced=tape, z=0, stop_round=i):
            if ctx.blocks[i - 1] == target[i - 1]:
                den = 1
                for b in ctx.bounds[len(tape) :]:
                    den *= b
                hits.append((tuple(ctx.values), Fraction(1, den)))
        h = sum((p for _, p in hits), Fraction(0))
        if h == 0:
            return Fraction(0)
        inner = sum((p * walk(ext, i + 1, target) for ext, p in hits), Fraction(0)) / h
        return (1 - (1 - h) ** retry_limit) * inner

    size = 1 << f.n
    return sum((walk((), 1, _target_chunks(g, f(x))) for x in range(size)), Fraction(0)) / size


# ---------------------------------------------------------------------------
# KL analysis of the rewinding inverter


@dataclass
class KLReport:
    kl_tables: float
    kl_formula: float
    neg_log_target: float
    acc_prefix: float
    acc_total: float
    real_entropy: float

    @property
    def bound(self) -> float:
        return self.real_entropy - self.acc_total

    def to_json(self) -> dict:
        return {
            "kl_tables": self.kl_tables,
            "kl_formula": self.kl_formula,
            "expected_neg_log_target": self.neg_log_target,
            "expected_acch_f_blocks": self.acc_prefix,
            "expected_acch_total": self.acc_total,
            "real_entropy": self.real_entropy,
            "bound": self.bound,
        }


def kl_analysis(a: OnlineGenerator) -> KLReport:
    """KL between the standalone transcript and the transcript embedded in the inverter.

    Two routes: explicit transcript tables compared with ``kl_divergence``,
    and the closed form E[-log Pr_f(y)] - E[sum of AccH over f's blocks].
    The embedded distribution is the inverter with unlimited retries, where
    each round is the generator conditioned on matching the target chunk.
    """
    g = a.base
    f: FunctionTable = g.meta["function"]
    fb = g.meta["f_blocks"]
    recs = enumerate_runs(a, preprocessing=True)
    target_mass: dict[tuple, Fraction] = {}
    for x in range(1 << f.n):
        key = _target_chunks(g, f(x))
        target_mass[key] = target_mass.get(key, 0) + Fraction(1, 1 << f.n)

    # standalone table over (r0, r_1..r_fb, y_1..y_fb)
    standalone: dict[tuple, Fraction] = {}
    cond: list[dict] = [{} for _ in range(fb)]
    key_mass: list[dict] = [{} for _ in range(fb)]
    pair_mass: list[dict] = [{} for _ in range(fb)]
    for r in recs:
        t = r.transcript
        k = (t.r0, t.coins[:fb], t.blocks[:fb])
        standalone[k] = standalone.get(k, 0) + r.weight
        for i in range(fb):
            ck = (t.r0, t.coins[:i])
            key_mass[i][ck] = key_mass[i].get(ck, 0) + r.weight
            pk = (ck, t.blocks[i])
            pair_mass[i][pk] = pair_mass[i].get(pk, 0) + r.weight
    embedded: dict[tuple, Fraction] = {}
    for k, p in standalone.items():
        r0, coins, blocks = k
        q = target_mass.get(blocks, Fraction(0)) * p
        for i in range(fb):
            ck = (r0, coins[:i])
            q /= pair_mass[i][(ck, blocks[i])] / key_mass[i][ck]
        if q:
            embedded[k] = q
    # targets the adversary cannot complete leave mass on an explicit failure outcome
    lost = 1 - sum(embedded.values(), Fraction(0))
    if lost:
        embedded[("fail",)] = lost
    kl_tab = kl_divergence(Distribution(standalone), Distribution(embedded))

    neg_log = 0.0
    acc_prefix = 0.0
    acc_total = 0.0
    for r in recs:
        w = float(r.weight)
        tm = target_mass.get(r.transcript.blocks[:fb], Fraction(0))
        neg_log += w * (-log2(tm) if tm else math.inf)
        acc_prefix += w * sum(r.acc[:fb])
        acc_total += w * r.total
    return KLReport(kl_tab, neg_log - acc_prefix, neg_log, acc_prefix, acc_total, real_shannon_entropy(g))
