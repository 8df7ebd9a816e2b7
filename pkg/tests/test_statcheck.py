import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairdiv.statcheck import (
    DiscreteRV,
    ZeroProbabilityEvent,
    association_gap,
    association_gap_exact,
    check_association,
    check_conditional,
    conditional_mean_gap,
    conditional_mean_gap_closed_form,
    random_rv,
    run_statcheck,
    strict_condition,
)
from fairdiv.rng import stream


def _brute_conditional(D, Dp, n):
    """Independent oracle: enumerate all n-tuples of (X, Y) pairs in exact rationals."""
    pairs = [
        (Fraction(x), Fraction(x) + Fraction(y), Fraction(wx) * Fraction(wy))
        for x, wx in zip(D.support, D.weights)
        for y, wy in zip(Dp.support, Dp.weights)
    ]
    pw = pwx = pl = plx = Fraction(0)
    for combo in itertools.product(pairs, repeat=n):
        prob = Fraction(1)
        for _, _, p in combo:
            prob *= p
        x1, s1, _ = combo[0]
        if all(s1 > s for _, s, _ in combo[1:]):
            pw += prob
            pwx += prob * x1
        else:
            pl += prob
            plx += prob * x1
    return pwx / pw, plx / pl


def test_two_point_identity_gap_is_a_quarter():
    assert association_gap(DiscreteRV.uniform([0, 1]), [0, 1], [0, 1]) == 0.25
    assert association_gap_exact(DiscreteRV.uniform([0, 1]), [0, 1], [0, 1]) == Fraction(1, 4)


def test_constant_table_or_point_mass_gives_zero_gap():
    X = DiscreteRV.uniform([0, 1, 2])
    assert association_gap(X, [1, 1, 1], [0, 1, 5]) == 0.0
    assert association_gap(DiscreteRV.point(3.0), [2.0], [7.0]) == 0.0


def test_strict_condition_examples():
    X = DiscreteRV.uniform([0, 1])
    assert strict_condition(X, [0, 1], [0, 1]) and association_gap(X, [0, 1], [0, 1]) > 0
    assert not strict_condition(X, [0, 1], [2, 2])
    assert not strict_condition(X, [4, 4], [0, 1])


def test_non_monotone_table_rejected():
    with pytest.raises(ValueError):
        association_gap(DiscreteRV.uniform([0, 1]), [1, 0], [0, 1])
    with pytest.raises(ValueError):
        association_gap(DiscreteRV.uniform([0, 1]), [0], [0, 1])


def test_discrete_rv_validation():
    with pytest.raises(ValueError):
        DiscreteRV((1.0, 0.0), (0.5, 0.5))
    with pytest.raises(ValueError):
        DiscreteRV((0.0, 1.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        DiscreteRV((0.0,), (0.0,))
    assert DiscreteRV.uniform([0, 2]).variance == 1.0


def test_point_mass_win_and_lose_means_agree():
    win, lose = conditional_mean_gap(DiscreteRV.point(1.0), DiscreteRV.uniform([0.0, 0.5]), 2)
    assert win == lose == 1.0


@pytest.mark.parametrize(
    "Dp",
    [DiscreteRV.uniform([0.0, 0.1]), DiscreteRV.point(0.0)],
)
def test_two_point_value_wins_strictly(Dp):
    D = DiscreteRV.uniform([0.0, 1.0])
    win, lose = conditional_mean_gap(D, Dp, 2)
    exact_win, exact_lose = _brute_conditional(D, Dp, 2)
    assert win == pytest.approx(float(exact_win), abs=1e-15)
    assert lose == pytest.approx(float(exact_lose), abs=1e-15)
    assert win > lose


def test_point_mass_noise_hand_values():
    # win only when X_1 = 1 and X_2 = 0; losses carry X_1 = 0, 0, 1 with equal weight
    win, lose = conditional_mean_gap(DiscreteRV.uniform([0.0, 1.0]), DiscreteRV.point(0.0), 2)
    assert win == 1.0
    assert lose == pytest.approx(1 / 3, abs=1e-15)


def test_zero_probability_win_raises():
    with pytest.raises(ZeroProbabilityEvent):
        conditional_mean_gap(DiscreteRV.point(0.0), DiscreteRV.point(0.0), 2)
    with pytest.raises(ValueError):
        conditional_mean_gap(DiscreteRV.point(0.0), DiscreteRV.point(0.0), 1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 3))
def test_conditional_means_match_brute_force_and_closed_form(seed, n):
    rng = np.random.default_rng(seed)
    D, Dp = random_rv(rng, 3), random_rv(rng, 2, lo=-1.0, hi=1.0)
    try:
        got = conditional_mean_gap(D, Dp, n)
    except ZeroProbabilityEvent:
        return
    exact = _brute_conditional(D, Dp, n)
    closed = conditional_mean_gap_closed_form(D, Dp, n)
    for a, b, c in zip(got, exact, closed):
        assert a == pytest.approx(float(b), abs=1e-12)
        assert c == pytest.approx(float(b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_association_gap_matches_direct_enumeration(seed):
    rng = np.random.default_rng(seed)
    X = random_rv(rng, 5)
    k = len(X.support)
    f = np.cumsum(rng.integers(0, 3, k)).astype(float).tolist()
    g = np.cumsum(rng.integers(0, 3, k)).astype(float).tolist()
    w = X.exact_weights()
    # covariance via the symmetric double sum, a different formula from the module's
    cov = sum(
        w[a] * w[b] * (Fraction(f[a]) - Fraction(f[b])) * (Fraction(g[a]) - Fraction(g[b]))
        for a in range(k)
        for b in range(k)
    ) / 2
    assert association_gap_exact(X, f, g) == cov
    assert cov >= 0


def test_property_harness_has_no_violations():
    assert check_association(stream(0, "assoc"), 200) == (200, 0)
    done, bad, skipped = check_conditional(stream(0, "cond"), 100)
    assert (done, bad) == (100, 0)
    summary = run_statcheck(stream(1))
    assert summary.violations == 0
    assert summary.association_cases == 200 and summary.conditional_cases == 100
