from __future__ import annotations

import json
import math
import socket
import threading
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy_forge.errors import ConsistencyError, ParameterError, ProtocolError, RegimeError
from entropy_forge.generators import (
    builtin_function,
    chunk_generator,
    expected_accessible_entropy,
    owf_generator,
    table_generator,
)
from entropy_forge.hashing import HashFunction, all_functions
from entropy_forge.protocol import (
    PRESETS,
    CommitReceiver,
    CommitSender,
    Commitment,
    ExhaustiveCheater,
    ForcedCoins,
    GarbageSender,
    HashBreakOutput,
    HashingSpec,
    HashReceiver,
    HashSender,
    HonestCheater,
    LazyCheater,
    MsgType,
    Opening,
    ParallelCommitment,
    ProtocolMessage,
    ProtocolParams,
    binding_attack_harness,
    binding_to_hash_break,
    brute_force_view_distance,
    coeffs_to_key,
    delta_from_formula,
    exhaustive_cheater_rate,
    hiding_distance,
    high_entropy_generator_from_sender,
    honest_session,
    imask_frequencies,
    masked_round_sample,
    nonfailing_wrapper,
    parallel_binding_harness,
    parallel_repeat,
    asymptotic_repetitions,
    parse_frames,
    poly_batch_eval,
    preset,
    remote_commit,
    reveal_verify,
    run_commit,
    run_hashing,
    serve_receiver,
    set_restricted_binding_rate,
    strong_hash_game,
    support2_generator,
    support_survival_probability,
    weak_binding_bound,
    weak_hash_double_survival,
    weak_hash_step,
    strong_hash_step,
)
from entropy_forge.rng import SeedStream


def zero_key(g, order: int = 1) -> ProtocolParams:
    """Every hash has range 0, so the hashing rounds leak nothing and cost no keys."""
    return ProtocolParams(g, 0, order, 0, 0, name="zero-key")


def commit(params: ProtocolParams, b: int, seed: int, istar: int | None = None):
    rng = SeedStream(seed)
    sender = CommitSender(params, b, rng.spawn("sender"))
    receiver = CommitReceiver(params, rng.spawn("receiver"), istar)
    return run_commit(sender, receiver), sender, receiver


# ---------------------------------------------------------------------------
# wire format


fields_st = st.lists(st.text(alphabet="01", max_size=40), max_size=4).map(tuple)


@given(st.sampled_from(list(MsgType)), fields_st)
def test_message_round_trip(mtype: MsgType, fields: tuple) -> None:
    msg = ProtocolMessage(mtype, fields)
    raw = msg.to_bytes()
    back, end = ProtocolMessage.parse(raw)
    assert back == msg and end == len(raw)
    assert parse_frames(raw + raw) == [msg, msg]


def test_frame_errors() -> None:
    raw = ProtocolMessage(MsgType.BLOCK, ("1011",)).to_bytes()
    with pytest.raises(ProtocolError):
        ProtocolMessage.parse(raw[:3])
    with pytest.raises(ProtocolError):
        ProtocolMessage.parse(raw[:-1])
    with pytest.raises(ProtocolError):
        ProtocolMessage.parse(raw[:4] + b"\x63" + raw[5:])
    # a field length that overruns the payload
    with pytest.raises(ProtocolError):
        ProtocolMessage.parse(b"\x00\x00\x00\x02\x09\x00\x10")
    with pytest.raises(ParameterError):
        ProtocolMessage(MsgType.BLOCK, ("12",))


def test_commitment_and_opening_serialization() -> None:
    c, sender, _ = commit(preset("identity-n4"), 1, 3)
    assert Commitment.from_bytes(c.to_bytes()) == c
    assert [f["type"] for f in c.to_json()][:2] == ["H1", "Y1"]
    o = sender.opening()
    assert Opening.from_json(json.loads(json.dumps(o.to_json()))) == o
    with pytest.raises(ParameterError):
        Opening.from_json({"b": 0, "sigma": "2"})
    pc = ParallelCommitment((c, c))
    assert ParallelCommitment.from_bytes(pc.to_bytes()) == pc
    with pytest.raises(ProtocolError):
        ParallelCommitment.from_bytes(pc.to_bytes() + b"\x00")
    with pytest.raises(ProtocolError):
        ParallelCommitment.from_bytes(b"\x00")


def test_forced_coins() -> None:
    coins = ForcedCoins(SeedStream(1), [3, 1])
    assert coins.bits(2) == 3 and coins.below(5) == 1
    assert coins.bits(0) == 0 and coins.below(1) == 0
    coins.bits(4)
    assert coins.log[:2] == ["11", "001"] and len(coins.log) == 3
    with pytest.raises(ConsistencyError):
        ForcedCoins(None, [4]).bits(2)
    with pytest.raises(ConsistencyError):
        ForcedCoins(None).below(3)


# ---------------------------------------------------------------------------
# parameters


def test_params_json_and_validation() -> None:
    for name in PRESETS:
        p = preset(name)
        back = ProtocolParams.from_json(json.loads(json.dumps(p.to_json())))
        assert back.to_json() == p.to_json()
        assert ProtocolParams.from_json({"preset": name}).name == name
    g = support2_generator()
    with pytest.raises(ParameterError):
        ProtocolParams(g, 5)
    with pytest.raises(ParameterError):
        ProtocolParams(g, 1, tcr_range_bits=4)
    with pytest.raises(ParameterError):
        ProtocolParams.from_json({"delta": 1})
    with pytest.raises(ParameterError):
        preset("nope")


def test_delta_formula_and_repetitions() -> None:
    assert delta_from_formula(12, 4) == 0
    assert delta_from_formula(12, 4, "hiding") == 8
    with pytest.raises(ParameterError):
        delta_from_formula(4, 4)
    with pytest.raises(ParameterError):
        delta_from_formula(4, 4, "other")
    assert asymptotic_repetitions(4, 1, 3) == 12
    assert asymptotic_repetitions(16, 2, 2) == 64


# ---------------------------------------------------------------------------
# interactive hashing


def test_hashing_round_trip_weak_and_strong() -> None:
    weak = HashingSpec.build(4, 2, 2, 1)
    strong = HashingSpec.build(4, 2, 2, 1, 1)
    for spec, count in ((weak, 4), (strong, 6)):
        recv = HashReceiver(spec, SeedStream(2))
        frames = run_hashing(HashSender(spec, "1011"), recv)
        assert len(frames) == count and recv.done
        assert recv.consistent("1011")
    recv, out = weak_hash_step(HashReceiver(weak, SeedStream(0)), None)
    assert out[0].type == MsgType.H1
    with pytest.raises(ParameterError):
        strong_hash_step(recv, None)
    with pytest.raises(ParameterError):
        weak_hash_step(HashReceiver(strong, SeedStream(0)), None)


def test_hash_sender_rejects_out_of_order() -> None:
    spec = HashingSpec.build(4, 2, 2, 1)
    s = HashSender(spec, "0110")
    recv = HashReceiver(spec, SeedStream(5))
    h1 = recv.start()[0]
    s.step(h1)
    with pytest.raises(ProtocolError):
        s.step(h1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(0, 2**16))
def test_poly_batch_eval_matches_scalar(seed: int, order: int, xraw: int) -> None:
    spec = HashingSpec.build(8, 3, order, 4)
    fam = spec.h1
    rng = np.random.default_rng(seed)
    coeffs = rng.integers(0, 256, size=(5, order), dtype=np.uint64)
    xs = np.array([xraw & 255, (xraw >> 8) & 255], dtype=np.uint64)
    got = poly_batch_eval(fam, coeffs, xs)
    for r in range(5):
        h = HashFunction(fam, coeffs_to_key(fam, coeffs[r].tolist()))
        for c, x in enumerate(xs.tolist()):
            assert int(got[r, c]) == int(h(format(x, "08b")), 2)


# ---------------------------------------------------------------------------
# commitment


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("b", [0, 1])
def test_completeness_per_preset(name: str, b: int) -> None:
    p = preset(name)
    for k in range(20):
        res = honest_session(p, b, SeedStream(k, name))
        assert res.accepted == b
        assert res.receiver_public_coin


def test_sessions_are_deterministic() -> None:
    p = preset("permutation-n4")
    a = honest_session(p, 1, SeedStream(42))
    b = honest_session(p, 1, SeedStream(42))
    assert a.commitment.to_bytes() == b.commitment.to_bytes() and a.opening == b.opening
    c = honest_session(p, 1, SeedStream(43))
    assert c.commitment.to_bytes() != a.commitment.to_bytes()


def test_wrong_openings_are_rejected() -> None:
    p = preset("identity-n4")
    c, sender, _ = commit(p, 0, 9)
    o = sender.opening()
    assert reveal_verify(c, o, p) == 0
    assert reveal_verify(c, Opening(1, o.sigma), p) is None
    assert reveal_verify(c, Opening(0, o.sigma[:-1]), p) is None
    assert reveal_verify(c, Opening(2, o.sigma), p) is None
    assert reveal_verify(Commitment(c.frames[:-1]), o, p) is None
    assert reveal_verify(Commitment(c.frames + c.frames[-1:]), o, p) is None


def test_unused_seed_bit_does_not_matter() -> None:
    # block 1 depends only on the top seed bit; with round 1 masked, block 2 is never revealed
    g = table_generator("tail", 2, [("01", "0"), ("01", "1"), ("10", "0"), ("10", "1")])
    p = ProtocolParams(g, 1, 2, 1, 1)
    c, sender, _ = commit(p, 1, 4, istar=1)
    o = sender.opening()
    flipped = o.sigma[:1] + ("1" if o.sigma[1] == "0" else "0") + o.sigma[2:]
    assert reveal_verify(c, o, p) == 1
    assert reveal_verify(c, Opening(1, flipped), p) == 1
    top = ("1" if o.sigma[0] == "0" else "0") + o.sigma[1:]
    assert reveal_verify(c, Opening(1, top), p) is None


def test_receiver_rejects_protocol_violations() -> None:
    p = preset("identity-n4")
    recv = CommitReceiver(p, SeedStream(1))
    recv.start()
    with pytest.raises(ProtocolError):
        recv.step(ProtocolMessage(MsgType.BLOCK, ("0000",)))
    assert recv.phase == "dead"
    sender = CommitSender(p, 0, SeedStream(2))
    h1 = CommitReceiver(p, SeedStream(3)).start()[0]
    sender.step(h1)
    with pytest.raises(ProtocolError):
        sender.step(h1)
    with pytest.raises(ParameterError):
        CommitSender(p, 2, SeedStream(0))
    with pytest.raises(ParameterError):
        CommitSender(p, 0)


def test_masked_round_is_uniform() -> None:
    m = 4
    p = zero_key(table_generator("bits4", 1, [("0",) * m, ("1",) * m]))
    rng = SeedStream(8)
    counts = Counter(masked_round_sample(p, rng.spawn(str(k))) for k in range(100_000))
    chi2 = sum((counts[i] - 25_000) ** 2 / 25_000 for i in range(1, m + 1))
    assert chi2 < 16.27  # 99.9% point of chi-square with 3 degrees of freedom
    full = imask_frequencies(p, 2000, SeedStream(9))
    chi2 = sum((c - 500) ** 2 / 500 for c in full)
    assert chi2 < 16.27


def test_receiver_resume_rebuilds_from_history() -> None:
    p = preset("identity-n4")
    rng = SeedStream(12)
    sender = CommitSender(p, 0, rng.spawn("s"))
    recv = CommitReceiver(p, rng.spawn("r"))
    c = run_commit(sender, recv)
    again = CommitReceiver.resume(p, list(c.frames), SeedStream(0))
    assert again.done and again._pending == []
    bad = list(c.frames)
    bad[0] = ProtocolMessage(MsgType.H1, ("0" * len(bad[0].fields[0]),)) if set(bad[0].fields[0]) != {"0"} else ProtocolMessage(MsgType.H1, ("1" * len(bad[0].fields[0]),))
    forced = CommitReceiver.resume(p, bad[:1], SeedStream(0))
    assert forced.sent[0] == bad[0]


# ---------------------------------------------------------------------------
# hiding


def test_hiding_preset_exact_matches_brute_force() -> None:
    p = preset("hiding-n4-v2")
    rep = hiding_distance(p)
    assert rep.sd == Fraction(1, 16)
    assert rep.sd <= rep.lhl_budget
    assert rep.min_entropy_worst == 4.0
    assert brute_force_view_distance(p) == Fraction(1, 16)
    obj = rep.to_json()
    assert obj["sd_exact"] == "1/16"


def test_hiding_degenerate_generator_reveals_bit() -> None:
    p = zero_key(chunk_generator(builtin_function("zero", 4)))
    assert hiding_distance(p).sd == 1


def test_hiding_errors() -> None:
    p = preset("hiding-n4-v2")
    with pytest.raises(ParameterError):
        hiding_distance(p, receiver_strategy="curious")
    with pytest.raises(RegimeError):
        hiding_distance(p, mode="sampled")
    with pytest.raises(RegimeError):
        hiding_distance(preset("identity-n4"))


def test_delta_sweep_is_monotone() -> None:
    base = preset("hiding-n4-v2")
    sds = [hiding_distance(base.with_delta(d)).sd for d in range(3)]
    assert sds == sorted(sds)
    sp = preset("support2-m2")
    L = ["0011", "0101", "1110"]
    surv = [support_survival_probability(sp.with_delta(d).hashing, L) for d in range(4)]
    assert surv == sorted(surv, reverse=True)
    assert surv[0] > surv[-1]


# ---------------------------------------------------------------------------
# parallel repetition and binding


@pytest.mark.parametrize("t", [1, 8])
def test_parallel_honest_runs(t: int) -> None:
    p = preset("support2-m2")
    scheme = parallel_repeat(p, t)
    rng = SeedStream(21)
    for b in (0, 1):
        senders = [CommitSender(p, b, rng.spawn(f"s{b}{k}")) for k in range(t)]
        receivers = [CommitReceiver(p, rng.spawn(f"r{b}{k}")) for k in range(t)]
        c = scheme.commit(senders, receivers)
        opens = [s.opening() for s in senders]
        assert scheme.reveal_verify(c, opens) == b
        assert scheme.reveal_verify(c, opens[:-1]) is None
    with pytest.raises(ParameterError):
        parallel_repeat(p, 0)


def _zero_key_support2() -> ProtocolParams:
    return ProtocolParams(support2_generator(), 0, 2, 0, 0)


def test_exhaustive_cheater_exact_rates() -> None:
    p = preset("support2-m2")
    y0, y1 = "0011", "0101"
    tcr = p.hashing.tcr
    keys = list(all_functions(tcr))
    tcr_coll = Fraction(sum(h(y0) == h(y1) for h in keys), len(keys))
    # pairwise-independent h1 and h2 with one output bit collide with probability exactly 1/2
    expect = Fraction(1, 2) * Fraction(1, 2) * Fraction(1, 2) * Fraction(1, 2) * tcr_coll
    assert exhaustive_cheater_rate(p) == expect == Fraction(4095, 131072)
    assert exhaustive_cheater_rate(_zero_key_support2()) == Fraction(1, 4)
    with pytest.raises(ParameterError):
        exhaustive_cheater_rate(preset("identity-n4"))


def test_binding_harness_matches_exact_rate() -> None:
    p = _zero_key_support2()
    rep = binding_attack_harness(lambda c: ExhaustiveCheater(p, c), p, 2000, SeedStream(30))
    lo, hi = rep.ci
    assert lo <= 0.25 <= hi
    honest = binding_attack_harness(lambda c: HonestCheater(p, c), p, 200, SeedStream(31))
    sp = preset("support2-m2")
    garbage = binding_attack_harness(lambda c: GarbageSender(sp, c), sp, 200, SeedStream(32))
    assert honest.successes == 0 and garbage.successes == 0
    # a cheater built for other parameters sends wrong-width fields and is rejected
    broken = binding_attack_harness(lambda c: GarbageSender(sp, c), p, 20, SeedStream(35))
    assert broken.aborts == 20 and broken.successes == 0


def test_parallel_rate_is_a_product() -> None:
    p = _zero_key_support2()
    rep = parallel_binding_harness(lambda c: ExhaustiveCheater(p, c), parallel_repeat(p, 2), 3000, SeedStream(33))
    sigma = math.sqrt(1 / 16 * 15 / 16 / 3000)
    assert abs(rep.success_rate - 1 / 16) <= 4 * sigma


def test_lazy_cheater_beats_exhaustive() -> None:
    p = preset("support2-m2")
    lazy = binding_attack_harness(lambda c: LazyCheater(p, c), p, 2000, SeedStream(34))
    assert lazy.success_rate > float(exhaustive_cheater_rate(p))


# ---------------------------------------------------------------------------
# generators from senders


def test_high_entropy_generator_from_sender() -> None:
    p = zero_key(owf_generator(builtin_function("identity", 4)))
    honest = expected_accessible_entropy(high_entropy_generator_from_sender(lambda c: HonestCheater(p, c), p))
    assert honest.expected == pytest.approx(2.0) and honest.per_round == pytest.approx([2.0, 0.0, 0.0])
    lazy = expected_accessible_entropy(high_entropy_generator_from_sender(lambda c: LazyCheater(p, c), p))
    assert lazy.expected == pytest.approx(4.0) and lazy.per_round == pytest.approx([2.0, 2.0, 0.0])
    exhaustive = expected_accessible_entropy(high_entropy_generator_from_sender(lambda c: ExhaustiveCheater(p, c), p))
    assert exhaustive.expected == pytest.approx(2.0)


def test_nonfailing_wrapper_on_honest_and_garbage() -> None:
    p = preset("support2-m2")
    rng = SeedStream(40)
    for k in range(15):
        w = nonfailing_wrapper(HonestCheater(p, rng.spawn(f"h{k}")), p, 4, rng.spawn(f"w{k}"))
        c = run_commit(w, CommitReceiver(p, rng.spawn(f"r{k}")))
        assert reveal_verify(c, w.openings()[0], p) is not None
        assert not w.failed
    w = nonfailing_wrapper(GarbageSender(p, rng.spawn("g")), p, 3, rng.spawn("gw"))
    c = run_commit(w, CommitReceiver(p, rng.spawn("gr")))
    assert w.failed
    first = w.openings()[0]
    assert first == Opening(0, "0" * p.sigma_bits)
    assert reveal_verify(c, first, p) == 0
    with pytest.raises(ParameterError):
        nonfailing_wrapper(HonestCheater(p, rng), p, -1, rng)


def test_hash_break_from_honest_sender_never_wins() -> None:
    p = preset("support2-m2")
    make = binding_to_hash_break(lambda c: HonestCheater(p, c), p)
    rep = strong_hash_game(make, p, 200, SeedStream(50))
    assert rep.successes == 0
    adv = make(SeedStream(51))
    v = adv.prepare()
    run_hashing(adv, HashReceiver(p.hashing, SeedStream(52)))
    out = adv.finish()
    assert isinstance(out, HashBreakOutput) and out.v == v
    assert len(out.x0) == p.ell and len(out.x1) == p.ell


def test_hash_break_tracks_exhaustive_cheater() -> None:
    p = _zero_key_support2()
    make = binding_to_hash_break(lambda c: ExhaustiveCheater(p, c), p)
    rep = strong_hash_game(make, p, 2000, SeedStream(53))
    expect = 0.25 / p.m
    sigma = math.sqrt(expect * (1 - expect) / 2000)
    assert abs(rep.success_rate - expect) <= 4 * sigma


# ---------------------------------------------------------------------------
# weak-hash binding


def test_set_restricted_strong_hash_within_weak_bound() -> None:
    spec = HashingSpec.build(8, 2, 8, 4, 4)
    L = ["00000001", "00010010", "10000100", "11111111"]
    rep = set_restricted_binding_rate(spec, L, 1500, SeedStream(60))
    assert rep.success_rate <= weak_binding_bound(2, 8, 8) + 2**-4


def test_double_survival_matches_exact_probability() -> None:
    spec = HashingSpec.build(4, 1, 2, 1)
    L = ["0001", "0110", "1011", "1100"]
    exact = float(support_survival_probability(spec, L))
    rep = weak_hash_double_survival(spec, L, 20000, SeedStream(61), chunk=7000)
    lo, hi = rep.ci
    assert lo <= exact <= hi
    with pytest.raises(ParameterError):
        weak_hash_double_survival(spec, ["0001", "0001"], 10, SeedStream(0))


def test_weak_binding_bound_formula() -> None:
    assert weak_binding_bound(4, 12, 16) == 2**-2 + 2**-8


# ---------------------------------------------------------------------------
# transport


def test_tcp_commit_matches_in_process() -> None:
    p = preset("identity-n4")
    expected, _, _ = commit(p, 1, 77)
    a, b = socket.socketpair()
    result: dict = {}

    def serve() -> None:
        result["c"] = serve_receiver(a, p, SeedStream(77).spawn("receiver"))

    th = threading.Thread(target=serve)
    th.start()
    sender = CommitSender(p, 1, SeedStream(77).spawn("sender"))
    got = remote_commit(b, sender)
    th.join(timeout=10)
    a.close()
    b.close()
    assert got == expected == result["c"]
    assert reveal_verify(got, sender.opening(), p) == 1


def test_tcp_peer_hangup() -> None:
    a, b = socket.socketpair()
    a.sendall(ProtocolMessage(MsgType.H1, ("0101",)).to_bytes()[:6])
    a.close()
    with pytest.raises(ProtocolError):
        remote_commit(b, CommitSender(preset("identity-n4"), 0, SeedStream(0)))
    b.close()
