"""Exact entropy measures over finite distributions and numeric lemma checks.

A :class:`Distribution` stores integer weights over a common denominator, so
probabilities are exact rationals and entropies are evaluated in float from
exact inputs.  Outcomes may be any hashable value with a canonical encoding
(bytes, bitstrings, ints, tuples of these).
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import accumulate, combinations
from math import gcd, log2
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

from .bitstrings import decode_value, encode_value
from .errors import ParameterError, RegimeError
from .rng import SeedStream

EXACT_SUPPORT_CAP = 1 << 20
TOL = 1e-9
INF = math.inf


class Distribution:
    """Exact finite distribution; every stored outcome has positive weight."""

    __slots__ = ("_num", "_den", "schema", "_cache")

    def __init__(self, weights: Mapping[Hashable, int | Fraction], denominator: int | None = None, *, schema: Any = None):
        if denominator is None:
            fracs = {k: Fraction(v) for k, v in weights.items()}
            den = 1
            for v in fracs.values():
                den = den * v.denominator // gcd(den, v.denominator)
            num = {k: int(v * den) for k, v in fracs.items()}
        else:
            den = int(denominator)
            num = {k: int(v) for k, v in weights.items()}
        if den <= 0:
            raise ParameterError("denominator must be positive")
        if not num:
            raise ParameterError("distribution must have non-empty support")
        if any(v <= 0 for v in num.values()):
            raise ParameterError("every stored weight must be positive")
        if sum(num.values()) != den:
            raise ParameterError("weights do not sum to one")
        self._num = num
        self._den = den
        self.schema = schema
        self._cache: dict = {}

    # construction helpers
    @classmethod
    def from_counts(cls, counts: Mapping[Hashable, int], *, schema: Any = None) -> Distribution:
        return cls({k: v for k, v in counts.items() if v}, sum(counts.values()), schema=schema)

    @classmethod
    def uniform(cls, outcomes: Iterable[Hashable], *, schema: Any = None) -> Distribution:
        items = list(dict.fromkeys(outcomes))
        return cls({o: 1 for o in items}, len(items), schema=schema)

    @classmethod
    def point(cls, outcome: Hashable) -> Distribution:
        return cls({outcome: 1}, 1)

    # accessors
    @property
    def denominator(self) -> int:
        return self._den

    def numerator(self, x: Hashable) -> int:
        return self._num.get(x, 0)

    def prob(self, x: Hashable) -> Fraction:
        return Fraction(self._num.get(x, 0), self._den)

    def pfloat(self, x: Hashable) -> float:
        return self._num.get(x, 0) / self._den

    @property
    def outcomes(self) -> list:
        return list(self._num)

    def items(self) -> Iterable[tuple[Hashable, Fraction]]:
        for k, v in self._num.items():
            yield k, Fraction(v, self._den)

    def raw_items(self) -> Iterable[tuple[Hashable, int]]:
        return self._num.items()

    def __len__(self) -> int:
        return len(self._num)

    def __contains__(self, x: Hashable) -> bool:
        return x in self._num

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Distribution):
            return NotImplemented
        return {k: Fraction(v, self._den) for k, v in self._num.items()} == {
            k: Fraction(v, other._den) for k, v in other._num.items()
        }

    def __hash__(self) -> int:  # pragma: no cover - distributions are not dict keys
        raise TypeError("Distribution is unhashable")

    @property
    def is_dyadic(self) -> bool:
        return self._den & (self._den - 1) == 0

    def map(self, fn: Callable[[Hashable], Hashable]) -> Distribution:
        out: dict[Hashable, int] = {}
        for k, v in self._num.items():
            key = fn(k)
            out[key] = out.get(key, 0) + v
        return Distribution(out, self._den)

    def sample(self, rng: SeedStream) -> Hashable:
        keys = self._cache.get("keys")
        if keys is None:
            keys = list(self._num)
            self._cache["keys"] = keys
            self._cache["cum"] = list(accumulate(self._num[k] for k in keys))
        return keys[bisect_right(self._cache["cum"], rng.below(self._den))]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(support={len(self)}, denominator={self._den})"

    # serialisation
    def to_json(self) -> dict:
        outcomes = sorted(self._num, key=encode_value)
        out = {
            "schema": self.schema,
            "outcomes_hex": [encode_value(o).hex() for o in outcomes],
            "weight_num": [self._num[o] for o in outcomes],
        }
        if self.is_dyadic:
            out["weight_denom_log2"] = self._den.bit_length() - 1
        else:
            out["weight_denom"] = self._den
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> Distribution:
        try:
            outcomes = [decode_value(bytes.fromhex(h)) for h in obj["outcomes_hex"]]
            nums = [int(v) for v in obj["weight_num"]]
            den = 1 << int(obj["weight_denom_log2"]) if "weight_denom_log2" in obj else int(obj["weight_denom"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParameterError(f"malformed distribution record: {exc}") from exc
        if len(outcomes) != len(nums) or len(set(outcomes)) != len(outcomes):
            raise ParameterError("outcome and weight lists disagree")
        schema = obj.get("schema")
        if isinstance(schema, Mapping) and "arity" in schema:
            return JointDistribution(dict(zip(outcomes, nums)), den, arity=int(schema["arity"]))
        return cls(dict(zip(outcomes, nums)), den, schema=schema)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


class JointDistribution(Distribution):
    """Distribution over fixed-arity tuples; coordinates are indexed from 1."""

    __slots__ = ("arity",)

    def __init__(self, weights: Mapping[tuple, int | Fraction], denominator: int | None = None, *, arity: int | None = None):
        keys = list(weights)
        if arity is None:
            if not keys:
                raise ParameterError("distribution must have non-empty support")
            arity = len(keys[0])
        for k in keys:
            if not isinstance(k, tuple) or len(k) != arity:
                raise ParameterError(f"outcome {k!r} does not match arity {arity}")
        super().__init__(weights, denominator, schema={"arity": arity})
        self.arity = arity

    @classmethod
    def from_counts(cls, counts: Mapping[tuple, int], *, arity: int | None = None) -> JointDistribution:
        return cls({k: v for k, v in counts.items() if v}, sum(counts.values()), arity=arity)

    @classmethod
    def from_distribution(cls, d: Distribution) -> JointDistribution:
        if isinstance(d, JointDistribution):
            return d
        return cls(dict(d.raw_items()), d.denominator)

    def _coords(self, idx: Sequence[int]) -> tuple[int, ...]:
        idx = tuple(idx)
        for i in idx:
            if not 1 <= i <= self.arity:
                raise ParameterError(f"coordinate {i} outside 1..{self.arity}")
        return idx

    def marginal(self, idx: Sequence[int]) -> JointDistribution:
        idx = self._coords(idx)
        key = ("marginal", idx)
        hit = self._cache.get(key)
        if hit is None:
            out: dict[tuple, int] = {}
            for o, v in self._num.items():
                k = tuple(o[i - 1] for i in idx)
                out[k] = out.get(k, 0) + v
            hit = JointDistribution(out, self._den, arity=len(idx))
            self._cache[key] = hit
        return hit

    def prefix_counts(self, length: int) -> dict[tuple, int]:
        key = ("prefix", length)
        hit = self._cache.get(key)
        if hit is None:
            hit = {}
            for o, v in self._num.items():
                k = o[:length]
                hit[k] = hit.get(k, 0) + v
            self._cache[key] = hit
        return hit


# ---------------------------------------------------------------------------
# Entropy measures (bits)


def sample_entropy(d: Distribution, x: Hashable) -> float:
    num = d.numerator(x)
    if num == 0:
        return INF
    return log2(d.denominator) - log2(num)


def shannon_entropy(d: Distribution) -> float:
    lden = log2(d.denominator)
    return sum(v * (lden - log2(v)) for _, v in d.raw_items()) / d.denominator


def min_entropy(d: Distribution) -> float:
    return log2(d.denominator) - log2(max(v for _, v in d.raw_items()))


def max_entropy(d: Distribution) -> float:
    return log2(len(d))


def collision_probability(d: Distribution) -> Fraction:
    return Fraction(sum(v * v for _, v in d.raw_items()), d.denominator**2)


def renyi2_entropy(d: Distribution) -> float:
    cp = collision_probability(d)
    return log2(cp.denominator) - log2(cp.numerator)


def _pair(j: Distribution) -> JointDistribution:
    jd = JointDistribution.from_distribution(j)
    if jd.arity != 2:
        raise ParameterError("conditional measures take a 2-coordinate joint (X, Y)")
    return jd


def cond_sample_entropy(j: Distribution, x: Hashable, y: Hashable) -> float:
    """-log2 Pr[X = x | Y = y] for a joint over pairs (x, y)."""
    jd = _pair(j)
    num = jd.numerator((x, y))
    if num == 0:
        return INF
    ny = jd.marginal((2,)).numerator((y,))
    return log2(ny) - log2(num)


def cond_shannon_entropy(j: Distribution) -> float:
    """H(X | Y) computed as the expectation of conditional sample-entropy."""
    jd = _pair(j)
    my = jd.marginal((2,))
    return sum(v * (log2(my.numerator((o[1],))) - log2(v)) for o, v in jd.raw_items()) / jd.denominator


def statistical_distance(d1: Distribution, d2: Distribution) -> Fraction:
    den = d1.denominator * d2.denominator // gcd(d1.denominator, d2.denominator)
    s1, s2 = den // d1.denominator, den // d2.denominator
    total = 0
    for x in set(d1.outcomes) | set(d2.outcomes):
        total += abs(d1.numerator(x) * s1 - d2.numerator(x) * s2)
    return Fraction(total, 2 * den)


def kl_divergence(p: Distribution, q: Distribution) -> float:
    total = 0.0
    for x, v in p.raw_items():
        w = q.numerator(x)
        if w == 0:
            return INF
        total += v * (log2(v) - log2(p.denominator) - log2(w) + log2(q.denominator))
    return total / p.denominator


def block_entropy_sum(j: Distribution, J: Iterable[int], x: tuple) -> float:
    """Sum over i in J (1-based) of H_{X_i | X_<i}(x_i | x_<i)."""
    jd = JointDistribution.from_distribution(j)
    idx = sorted(set(J))
    for i in idx:
        if not 1 <= i <= jd.arity:
            raise ParameterError(f"index {i} outside 1..{jd.arity}")
    if jd.numerator(tuple(x)) == 0:
        return INF
    x = tuple(x)
    total = 0.0
    for i in idx:
        total += log2(jd.prefix_counts(i - 1)[x[: i - 1]]) - log2(jd.prefix_counts(i)[x[:i]])
    return total


def sum_of_conditional_entropies(j: Distribution, J: Iterable[int]) -> float:
    """Sum over i in J of H(X_i | X_<i), via the chain rule on prefix marginals."""
    jd = JointDistribution.from_distribution(j)

    def prefix_h(length: int) -> float:
        counts = jd.prefix_counts(length)
        lden = log2(jd.denominator)
        return sum(v * (lden - log2(v)) for v in counts.values()) / jd.denominator

    return sum(prefix_h(i) - prefix_h(i - 1) for i in sorted(set(J)))


# ---------------------------------------------------------------------------
# Lemma verification


@dataclass
class VerificationReport:
    lemma: str
    bound: dict[str, Any]
    measured: dict[str, Any]
    passed: bool
    params: dict[str, Any] = field(default_factory=dict)
    method: str = "exact"
    ci: dict[str, list[float]] | None = None

    def to_json(self) -> dict:
        out = {
            "lemma": self.lemma,
            "bound": {k: _json_num(v) for k, v in self.bound.items()},
            "measured": {k: _json_num(v) for k, v in self.measured.items()},
            "pass": self.passed,
            "params": {k: _json_num(v) for k, v in self.params.items()},
            "method": self.method,
        }
        if self.ci is not None:
            out["ci"] = {k: [_json_num(a) for a in v] for k, v in self.ci.items()}
        return out


def _json_num(v: Any) -> Any:
    if isinstance(v, Fraction):
        return float(v)
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, (list, tuple)):
        return [_json_num(e) for e in v]
    return v


@dataclass
class _Item:
    """One inequality: measured (an expectation of ``fn`` or a precomputed value) vs bound."""

    name: str
    bound: Any
    relation: str  # "<=", "<", "~="
    fn: Callable[[Hashable], Any] | None = None
    value: Any = None
    rel_tol: bool = False

    def holds(self, measured: Any) -> bool:
        if self.relation == "<":
            if isinstance(measured, Fraction) and isinstance(self.bound, Fraction):
                return measured < self.bound
            return measured < self.bound + TOL
        if self.relation == "<=":
            slack = TOL * max(1.0, abs(float(self.bound))) if self.rel_tol else TOL
            return measured <= self.bound + slack
        scale = max(1.0, abs(float(self.bound))) if self.rel_tol else 1.0
        return abs(float(measured) - float(self.bound)) <= TOL * scale


def _expect(d: Distribution, fn: Callable[[Hashable], Any]) -> Any:
    exact = True
    acc_int = 0
    acc_float = 0.0
    for x, v in d.raw_items():
        r = fn(x)
        if exact and isinstance(r, int):
            acc_int += r * v
        else:
            if exact:
                acc_float = acc_int / d.denominator
                exact = False
            acc_float += float(r) * v / d.denominator
    return Fraction(acc_int, d.denominator) if exact else acc_float


def _eps_list(params: Mapping, default: Sequence) -> list[Fraction]:
    eps = [Fraction(e) for e in params.get("epsilons", default)]
    if any(e <= 0 for e in eps):
        raise ParameterError("epsilon must be positive")
    return eps


def _items_moment(d: Distribution, params: Mapping) -> list[_Item]:
    supp = len(d)
    items = [_Item("E[2^H_X]", supp, "~=", fn=lambda x: 2.0 ** sample_entropy(d, x), rel_tol=True)]
    for e in _eps_list(params, ["1/2", "1/4", "1/16"]):
        # H_X(x) > log(1/e) + H0  <=>  e > p(x) * |Supp|
        thr = e * d.denominator
        items.append(_Item(f"Pr[H_X > log(1/eps)+H0] @ eps={e}", e, "<", fn=lambda x, thr=thr: int(d.numerator(x) * supp < thr)))
    return items


def _items_high_contribution(d: Distribution, params: Mapping) -> list[_Item]:
    h = shannon_entropy(d)
    h0 = max_entropy(d)
    ks = params.get("ks")
    if ks is None:
        ks = sorted({round(min_entropy(d), 6), round(h, 6), round(h0, 6)})
    items = []
    for k in ks:
        eps = _expect(d, lambda x, k=k: int(sample_entropy(d, x) > k + 1e-12))
        e = float(eps)
        tail = 0.0 if e == 0 else e * (h0 - log2(e))
        items.append(_Item(f"H(X) <= (1-eps)k + eps(H0 - log eps) @ k={k}", (1 - e) * k + tail, "<=", value=h))
        items.append(_Item(f"H(X) <= k + eps H0 + 1 @ k={k}", k + e * h0 + 1, "<=", value=h))
    return items


def _items_short_conditioning(d: Distribution, params: Mapping) -> list[_Item]:
    jd = _pair(d)
    mx, my = jd.marginal((1,)), jd.marginal((2,))
    pmax = Fraction(max(v for _, v in mx.raw_items()), mx.denominator)
    supp_y = len(my)
    items = []
    for t in params.get("ts", [1, 2, 3]):
        t = int(t)
        if t <= 0:
            raise ParameterError("t must be positive")
        # H_{X|Y}(x|y) < k - l - t  <=>  p(x,y)/p(y) > pmax * |Supp Y| * 2^t
        thr = pmax * supp_y * (1 << t)

        def fn(o, thr=thr):
            return int(Fraction(jd.numerator(o), my.numerator((o[1],))) > thr)

        items.append(_Item(f"Pr[H_X|Y < H_inf(X) - H0(Y) - t] @ t={t}", Fraction(1, 1 << t), "<", fn=fn))
    return items


def _cap_witness(groups: Mapping[Hashable, dict[Hashable, Fraction]], cap: Fraction) -> tuple[dict, Fraction]:
    """Cap each group's conditional masses at ``cap``; move excess onto fresh pad outcomes."""
    witness: dict[Hashable, Fraction] = {}
    moved = Fraction(0)
    for gkey, (gmass, cond) in groups.items():
        excess = Fraction(0)
        for x, p in cond.items():
            if p > cap:
                excess += p - cap
                witness[(x, gkey)] = cap * gmass
            else:
                witness[(x, gkey)] = p * gmass
        if excess:
            pads = math.ceil(excess / cap)
            if pads > EXACT_SUPPORT_CAP:
                raise RegimeError("smoothing witness needs too many padding outcomes")
            for i in range(pads):
                witness[(("pad", i), gkey)] = excess / pads * gmass
            moved += excess * gmass
    return witness, moved


def _smoothing_items(d: Distribution, params: Mapping) -> tuple[list[_Item], dict]:
    k = params.get("k")
    items: list[_Item] = []
    extra: dict = {}
    if isinstance(d, JointDistribution) and d.arity == 2:
        jd = d
        my = jd.marginal((2,))
        if k is None:
            k = float(sorted(cond_sample_entropy(jd, o[0], o[1]) for o in jd.outcomes)[len(jd) // 2])
        cap = Fraction(2) ** -int(k) if float(k).is_integer() else Fraction(2.0 ** -float(k))
        groups: dict = {}
        for (x, y), v in jd.raw_items():
            py = Fraction(my.numerator((y,)), my.denominator)
            groups.setdefault(y, (py, {}))[1][x] = Fraction(v, jd.denominator) / py
        eps = _expect(jd, lambda o: int(cond_sample_entropy(jd, o[0], o[1]) < float(k) - 1e-12))
        witness, moved = _cap_witness(groups, cap)
        wd = JointDistribution({(x, y): p for (x, y), p in witness.items()})
        orig = JointDistribution(dict(jd.raw_items()), jd.denominator)
        sd = statistical_distance(orig, wd)
        worst = max(cond_sample_entropy(wd, x, y) for (x, y) in wd.outcomes)
        best = min(cond_sample_entropy(wd, x, y) for (x, y) in wd.outcomes)
        y_same = wd.marginal((2,)) == my
        items.append(_Item("SD((X,Y),(X',Y')) <= eps", eps, "<=", value=sd))
        items.append(_Item("min H_X'|Y' >= k", -float(k), "<=", value=-best))
        items.append(_Item("Y' distributed as Y", 1, "~=", value=int(y_same)))
        extra = {"k": k, "witness_support": len(wd), "mass_moved": moved, "max_cond_sample_entropy": worst}
        return items, extra
    if k is None:
        k = float(sorted(sample_entropy(d, x) for x in d.outcomes)[len(d) // 2])
    cap = Fraction(2) ** -int(k) if float(k).is_integer() else Fraction(2.0 ** -float(k))
    groups = {None: (Fraction(1), {x: p for x, p in d.items()})}
    eps = _expect(d, lambda x: int(sample_entropy(d, x) < float(k) - 1e-12))
    witness, moved = _cap_witness(groups, cap)
    wd = Distribution({x: p for (x, _), p in witness.items()})
    sd = statistical_distance(d, wd)
    items.append(_Item("SD(X,X') <= eps", eps, "<=", value=sd))
    items.append(_Item("H_inf(X') >= k", -float(k), "<=", value=-min_entropy(wd)))
    extra = {"k": k, "witness_support": len(wd), "mass_moved": moved}
    return items, extra


def _iid_sum_tail(values: Sequence[tuple[float, float]], t: int, threshold: float) -> float:
    """Pr[sum of t iid draws < threshold] for a distribution given as (value, prob) pairs."""
    dist = {0.0: 1.0}
    for _ in range(t):
        nxt: dict[float, float] = {}
        for s, p in dist.items():
            for v, q in values:
                key = round(s + v, 10)
                nxt[key] = nxt.get(key, 0.0) + p * q
        dist = nxt
    return sum(p for s, p in dist.items() if s < threshold - 1e-12)


def _flattening_items(d: Distribution, params: Mapping, conditional: bool) -> tuple[list[_Item], dict]:
    t = int(params.get("t", 4))
    eps = float(params.get("epsilon", math.exp(-2)))
    if t < 1 or not 0 < eps <= math.exp(-2) + 1e-15:
        raise ParameterError("need t >= 1 and 0 < epsilon <= 1/e^2")
    if conditional:
        jd = _pair(d)
        vals: dict[float, float] = {}
        for (x, y), v in jd.raw_items():
            s = round(cond_sample_entropy(jd, x, y), 12)
            vals[s] = vals.get(s, 0.0) + v / jd.denominator
        mean = cond_shannon_entropy(jd)
        universe = len(jd.marginal((1,)))
    else:
        vals = {}
        for x, v in d.raw_items():
            s = round(sample_entropy(d, x), 12)
            vals[s] = vals.get(s, 0.0) + v / d.denominator
        mean = shannon_entropy(d)
        universe = len(d)
    span = max(vals)
    deviation = span * math.sqrt(t * math.log(1 / eps) / 2)
    tail = _iid_sum_tail(sorted(vals.items()), t, t * mean - deviation)
    scale = math.sqrt(t * math.log2(1 / eps)) * math.log2(max(universe * t, 2))
    items = [_Item("Pr[H(x^t) - t H < -deviation] <= eps", eps, "<=", value=tail)]
    extra = {"t": t, "epsilon": eps, "deviation": deviation, "sample_entropy_span": span, "scale_term": scale}
    return items, extra


def _J_list(jd: JointDistribution, params: Mapping) -> list[tuple[int, ...]]:
    if "J" in params:
        return [tuple(sorted(params["J"]))]
    idx = range(1, jd.arity + 1)
    return [c for r in range(1, jd.arity + 1) for c in combinations(idx, r)]


def _items_block_expectation(d: Distribution, params: Mapping) -> list[_Item]:
    jd = JointDistribution.from_distribution(d)
    items = []
    for J in _J_list(jd, params):
        chain = sum_of_conditional_entropies(jd, J)
        h0 = max_entropy(jd.marginal(J))
        fn = lambda x, J=J: block_entropy_sum(jd, J, x)
        items.append(_Item(f"E[H_X,J] = sum H(X_j|X_<j) @ J={list(J)}", chain, "~=", fn=fn))
        items.append(_Item(f"E[H_X,J] <= H0(X_J) @ J={list(J)}", h0, "<=", fn=fn))
    return items


def _items_block_contribution(d: Distribution, params: Mapping) -> list[_Item]:
    jd = JointDistribution.from_distribution(d)
    items = []
    for J in _J_list(jd, params):
        h0 = max_entropy(jd.marginal(J))
        mean = float(_expect(jd, lambda x, J=J: block_entropy_sum(jd, J, x)))
        for k in params.get("ks", [0.5 * h0, h0]):
            e = float(_expect(jd, lambda x, J=J, k=k: int(block_entropy_sum(jd, J, x) > k + 1e-12)))
            tail = 0.0 if e == 0 else e * (h0 - log2(e))
            items.append(_Item(f"E[H_X,J] <= (1-eps)k + eps(H0 - log eps) @ J={list(J)} k={k}", (1 - e) * k + tail, "<=", value=mean))
            items.append(_Item(f"E[H_X,J] <= k + eps H0 + 1 @ J={list(J)} k={k}", k + e * h0 + 1, "<=", value=mean))
    return items


def _items_block_moment(d: Distribution, params: Mapping) -> list[_Item]:
    jd = JointDistribution.from_distribution(d)
    items = []
    for J in _J_list(jd, params):
        supp = len(jd.marginal(J))
        fn = lambda x, J=J: 2.0 ** block_entropy_sum(jd, J, x)
        items.append(_Item(f"E[2^H_X,J] <= |Supp(X_J)| @ J={list(J)}", supp, "<=", fn=fn, rel_tol=True))
        for e in _eps_list(params, ["1/2", "1/8"]):
            thr = log2(1 / e) + log2(supp)
            items.append(
                _Item(
                    f"Pr[H_X,J > log(1/eps) + H0(X_J)] @ J={list(J)} eps={e}",
                    e,
                    "<",
                    fn=lambda x, J=J, thr=thr: int(block_entropy_sum(jd, J, x) > thr + 1e-12),
                )
            )
    return items


def _items_subadditivity(d: Distribution, params: Mapping) -> list[_Item]:
    jd = JointDistribution.from_distribution(d)
    margs = [jd.marginal((i,)) for i in range(1, jd.arity + 1)]

    def gap(x: tuple) -> float:
        return sample_entropy(jd, x) - sum(sample_entropy(m, (x[i],)) for i, m in enumerate(margs))

    items = [_Item("E[2^(H_X - sum H_Xi)] <= 1", 1.0, "<=", fn=lambda x: 2.0 ** gap(x), rel_tol=True)]
    for e in _eps_list(params, ["1/2", "1/8"]):
        thr = log2(1 / e)
        items.append(_Item(f"Pr[H_X > log(1/eps) + sum H_Xi] @ eps={e}", e, "<", fn=lambda x, thr=thr: int(gap(x) > thr + 1e-12)))
    return items


LEMMAS: dict[str, str] = {
    "sample-entropy-moment": "E[2^H_X] = |Supp X| and the Markov tail above H0",
    "high-entropy-contribution": "contribution of high sample-entropy outcomes to H(X)",
    "short-conditioning": "conditioning on a short variable rarely lowers sample-entropy",
    "smoothing": "high sample-entropy w.h.p. implies closeness to high min-entropy",
    "flattening": "sample-entropy of t iid copies concentrates around t H(X)",
    "flattening-conditional": "conditional form of flattening",
    "block-sum-expectation": "E of the block sample-entropy sum equals the chain-rule sum",
    "block-sum-contribution": "contribution bound for block sample-entropy sums",
    "block-sum-moment": "moment and tail bound for block sample-entropy sums",
    "subadditivity": "sample-entropy subadditivity",
}

_EXPECTATION_CHECKERS = {
    "sample-entropy-moment": _items_moment,
    "high-entropy-contribution": _items_high_contribution,
    "short-conditioning": _items_short_conditioning,
    "block-sum-expectation": _items_block_expectation,
    "block-sum-contribution": _items_block_contribution,
    "block-sum-moment": _items_block_moment,
    "subadditivity": _items_subadditivity,
}


def verify_lemma(
    tag: str,
    d: Distribution,
    params: Mapping | None = None,
    *,
    budget: int | None = None,
    rng: SeedStream | None = None,
) -> VerificationReport:
    """Evaluate one lemma on ``d``; exact unless a sampling budget is given."""
    if tag not in LEMMAS:
        raise ParameterError(f"unknown lemma tag {tag!r}; known: {sorted(LEMMAS)}")
    params = dict(params or {})
    sampled = budget is not None
    if not sampled and len(d) > EXACT_SUPPORT_CAP:
        raise RegimeError("support above the exact cap; supply a sampling budget")
    extra: dict = {}
    if tag in _EXPECTATION_CHECKERS:
        items = _EXPECTATION_CHECKERS[tag](d, params)
    elif sampled:
        raise RegimeError(f"{tag} has no sampled mode")
    elif tag == "smoothing":
        items, extra = _smoothing_items(d, params)
    else:
        items, extra = _flattening_items(d, params, conditional=tag == "flattening-conditional")

    bound: dict[str, Any] = {}
    measured: dict[str, Any] = {}
    ci: dict[str, list[float]] = {}
    ok = True
    samples: list | None = None
    if sampled:
        if budget < 2:
            raise ParameterError("sampling budget must be at least 2")
        rng = rng or SeedStream(0, f"verify/{tag}")
        samples = [d.sample(rng) for _ in range(budget)]
    for item in items:
        if item.fn is None:
            value = item.value
        elif samples is None:
            value = _expect(d, item.fn)
        else:
            vals = [float(item.fn(x)) for x in samples]
            value = sum(vals) / len(vals)
            var = sum((v - value) ** 2 for v in vals) / (len(vals) - 1)
            half = 2.576 * math.sqrt(var / len(vals))
            ci[item.name] = [value - half, value + half]
        bound[item.name] = item.bound
        measured[item.name] = value
        if samples is not None and item.fn is not None:
            lo, hi = ci[item.name]
            b = float(item.bound)
            good = lo <= b if item.relation in ("<", "<=") else lo - TOL <= b <= hi + TOL
        else:
            good = item.holds(value)
        ok = ok and good
    params_out = {**{k: v for k, v in params.items() if isinstance(v, (int, float, str, Fraction, list))}, **extra}
    if sampled:
        params_out["budget"] = budget
    return VerificationReport(tag, bound, measured, ok, params_out, "sampled" if sampled else "exact", ci if sampled else None)
