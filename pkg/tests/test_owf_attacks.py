from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy_forge.errors import ParameterError
from entropy_forge.generators import (
    brute_force_resampler,
    builtin_function,
    check_consistency,
    deterministic_generator,
    expected_accessible_entropy,
    honest_wrapper,
    owf_generator,
    table_generator,
)
from entropy_forge.owf_attacks import (
    FAIL,
    AttackReport,
    always_fail_inverter,
    brute_force_xi_inverter,
    consistent_generator_from_inverter,
    exact_inversion_probability,
    invert_via_entropy,
    invert_via_entropy_max,
    kl_analysis,
    max_retry_limit,
    noisy_inverter,
    owf_success_probability,
    prefix_inverter,
)
from entropy_forge.rng import SeedStream


def noisy_acch_closed_form(xi: Fraction) -> float:
    """Identity at n=4: each 2-bit round puts xi extra mass on the smallest chunk."""
    p = [xi + (1 - xi) / 4] + [(1 - xi) / 4] * 3
    return 2 * -sum(float(q) * math.log2(q) for q in p if q)


def test_brute_force_inverter_is_uniform_over_preimages() -> None:
    f = builtin_function("drop-last-bit", 4)
    inv = brute_force_xi_inverter(f, range(16))
    rng = SeedStream(1)
    counts = Counter(inv.apply(5, rng) for _ in range(4000))
    assert set(counts) == {10, 11}
    assert abs(counts[10] / 4000 - 0.5) < 0.05
    assert inv.apply(99, rng) is FAIL


def test_noisy_and_failing_inverters() -> None:
    f = builtin_function("drop-last-bit", 4)
    exact = brute_force_xi_inverter(f, range(16))
    always_small = noisy_inverter(exact, 1)
    assert {always_small.apply(5, SeedStream(k)) for k in range(20)} == {10}
    assert always_fail_inverter().apply(0, SeedStream(0)) is FAIL
    with pytest.raises(ParameterError):
        noisy_inverter(exact, "3/2")
    with pytest.raises(ParameterError):
        noisy_inverter(always_fail_inverter(), "1/2")


def test_inverter_generator_at_zero_noise_matches_real_entropy() -> None:
    g = owf_generator(builtin_function("identity", 4))
    a = consistent_generator_from_inverter(g, prefix_inverter(g))
    assert check_consistency(a)
    assert expected_accessible_entropy(a).expected == pytest.approx(4.0, abs=1e-9)


@pytest.mark.parametrize("xi", [Fraction(0), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1)])
def test_noisy_inverter_generator_matches_closed_form(xi: Fraction) -> None:
    g = owf_generator(builtin_function("identity", 4))
    a = consistent_generator_from_inverter(g, noisy_inverter(prefix_inverter(g), xi))
    assert expected_accessible_entropy(a).expected == pytest.approx(noisy_acch_closed_form(xi), abs=1e-9)


def test_noisy_inverter_frozen_values() -> None:
    assert noisy_acch_closed_form(Fraction(1, 8)) == pytest.approx(3.93699, abs=1e-5)
    assert noisy_acch_closed_form(Fraction(1, 4)) == pytest.approx(3.76048, abs=1e-5)


def test_failing_inverter_generator_has_no_entropy() -> None:
    g = owf_generator(builtin_function("identity", 4))
    a = consistent_generator_from_inverter(g, always_fail_inverter())
    assert expected_accessible_entropy(a).expected == 0.0
    assert check_consistency(a)


def test_invert_via_entropy_with_resampler() -> None:
    f = builtin_function("perm4")
    a = brute_force_resampler(owf_generator(f))
    rng = SeedStream(2)
    for y in range(16):
        res = invert_via_entropy(a, y, 64, rng.spawn(str(y)))
        assert res.success and f(res.preimage) == y
        assert len(res.attempts) == 2


def test_invert_via_entropy_retry_exhaustion() -> None:
    f = builtin_function("identity", 4)
    a = deterministic_generator(owf_generator(f), 0)
    assert invert_via_entropy(a, 0, 3, SeedStream(3)).success
    res = invert_via_entropy(a, 15, 3, SeedStream(3))
    assert not res.success and res.attempts == [3]
    with pytest.raises(ParameterError):
        invert_via_entropy(a, 16, 3, SeedStream(3))
    with pytest.raises(ParameterError):
        invert_via_entropy(a, 0, -1, SeedStream(3))


def test_invert_needs_owf_generator() -> None:
    g = table_generator("t", 1, [("0",), ("1",)])
    with pytest.raises(ParameterError):
        invert_via_entropy(honest_wrapper(g), 0, 4, SeedStream(0))


def test_max_retry_limit() -> None:
    assert max_retry_limit(4, "1/2") == 128
    assert max_retry_limit(3, 0.5) == 54
    with pytest.raises(ParameterError):
        max_retry_limit(4, 0)
    f = builtin_function("perm4")
    res = invert_via_entropy_max(brute_force_resampler(owf_generator(f)), 7, "1/2", SeedStream(4))
    assert res.success and f(res.preimage) == 7


@pytest.mark.parametrize("limit", [1, 2, 5, 64])
def test_exact_inversion_probability_closed_forms(limit: int) -> None:
    g = owf_generator(builtin_function("perm4"))
    q = 1 - Fraction(3, 4) ** limit
    # resampler: two independent 1/4-geometric rounds
    assert exact_inversion_probability(brute_force_resampler(g), limit) == q * q
    # honest wrapper: round 1 fixes x, so round 2 matches only by luck
    assert exact_inversion_probability(honest_wrapper(g), limit) == q / 4


def test_exact_probability_matches_simulation() -> None:
    f = builtin_function("perm4")
    a = honest_wrapper(owf_generator(f))
    exact = float(exact_inversion_probability(a, 2))
    rep = owf_success_probability(f, a, 3000, SeedStream(5), retry_limit=2)
    lo, hi = rep.ci
    assert lo <= exact <= hi


def test_owf_success_probability_modes() -> None:
    f = builtin_function("perm4")
    inv = brute_force_xi_inverter(f, range(16))
    rep = owf_success_probability(f, inv, 200, SeedStream(6))
    assert rep.success_rate == 1.0
    rep = owf_success_probability(f, brute_force_resampler(owf_generator(f)), 500, SeedStream(7), targets=list(range(16)))
    assert rep.success_rate == 1.0
    assert 3.0 < rep.mean_attempts_per_block < 5.0
    other = brute_force_resampler(owf_generator(builtin_function("identity", 4)))
    with pytest.raises(ParameterError):
        owf_success_probability(f, other, 10, SeedStream(0))


@pytest.mark.parametrize(
    "build, expected",
    [
        (brute_force_resampler, 0.0),
        (honest_wrapper, 2.0),
        # one transcript, which the inverter reproduces for 1/16 of the targets
        (lambda g: deterministic_generator(g, 3), 4.0),
    ],
)
def test_kl_routes_agree(build, expected: float) -> None:
    a = build(owf_generator(builtin_function("identity", 4)))
    rep = kl_analysis(a)
    assert rep.kl_tables == pytest.approx(rep.kl_formula, abs=1e-9)
    assert rep.kl_tables == pytest.approx(expected, abs=1e-9)
    assert rep.neg_log_target == pytest.approx(4.0)
    assert set(rep.to_json()) >= {"kl_tables", "kl_formula", "bound"}


def test_kl_routes_agree_on_non_injective_function() -> None:
    a = brute_force_resampler(owf_generator(builtin_function("drop-last-bit", 4)))
    rep = kl_analysis(a)
    assert rep.kl_tables == pytest.approx(rep.kl_formula, abs=1e-9)
    assert rep.kl_tables >= -1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.data())
def test_attack_report_interval(trials: int, data) -> None:
    succ = data.draw(st.integers(0, trials))
    rep = AttackReport(trials, succ)
    lo, hi = rep.ci
    assert 0.0 <= lo <= rep.success_rate <= hi <= 1.0
    obj = rep.to_json()
    assert obj["successes"] == succ and obj["trials"] == trials


def test_attack_report_validation() -> None:
    with pytest.raises(ParameterError):
        AttackReport(3, 4)
    assert AttackReport(0, 0).ci == (0.0, 1.0)
