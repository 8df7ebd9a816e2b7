import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairdiv.allocators import (
    PickOrder,
    adversarial_instance,
    lower_bound_pair,
    round_robin,
    rr_envy_bound,
    welfare_max,
)
from fairdiv.core import Allocation, NoisyInstance, ValuationMatrix, envy_report, is_balanced
from fairdiv.noise import BoundedAdversarial, apply_noise
from fairdiv.rng import stream


def test_round_robin_hand_simulation():
    # picks: a0 -> item0, a1 -> item1, a0 -> item2, a1 -> item3
    alloc = round_robin(ValuationMatrix([[4, 3, 2, 1], [4, 3, 2, 1]]), PickOrder((0, 1)))
    assert alloc.bundles == (frozenset({0, 2}), frozenset({1, 3}))


def test_round_robin_single_agent_and_no_items():
    assert round_robin(ValuationMatrix([[1, 2, 3]])).bundles == (frozenset({0, 1, 2}),)
    empty = round_robin(ValuationMatrix(np.zeros((3, 0))))
    assert empty.bundles == (frozenset(),) * 3


def test_round_robin_custom_order_and_ties():
    alloc = round_robin(ValuationMatrix(np.ones((2, 3))), PickOrder.parse("1,0"))
    assert alloc.bundles == (frozenset({1}), frozenset({0, 2}))
    with pytest.raises(ValueError):
        round_robin(ValuationMatrix(np.ones((2, 3))), [0, 0])
    with pytest.raises(ValueError):
        round_robin(ValuationMatrix(np.ones((2, 3))), [0, 1, 2])


@pytest.mark.parametrize(
    "n,m,eps,b,expected",
    [(2, 4, 0.1, 1.0, 1.4), (5, 17, 0.0, 0.7, 0.7), (3, 7, 0.5, 0.0, 3.0)],
)
def test_rr_envy_bound_values(n, m, eps, b, expected):
    assert rr_envy_bound(n, m, eps, b) == pytest.approx(expected, abs=1e-15)


def test_welfare_max_unique_argmax():
    alloc = welfare_max(ValuationMatrix([[0.9, 0.1], [0.2, 0.8]]), stream(0))
    assert alloc.bundles == (frozenset({0}), frozenset({1}))
    assert welfare_max(ValuationMatrix(np.zeros((2, 0))), stream(0)).bundles == (frozenset(),) * 2


def test_welfare_max_tie_frequency():
    rng = stream(1, "tie")
    est = ValuationMatrix([[1.0], [1.0]])
    wins = sum(0 in welfare_max(est, rng).bundles[0] for _ in range(10_000))
    assert abs(wins / 10_000 - 0.5) <= 0.02


def test_welfare_max_replays_under_same_seed():
    est = ValuationMatrix(np.ones((3, 20)))
    assert welfare_max(est, stream(9)) == welfare_max(est, stream(9))


def _brute_welfare(est):
    n, m = est.shape
    return max(
        sum(est.values[i, j] for j, i in enumerate(owner))
        for owner in itertools.product(range(n), repeat=m)
    )


def test_welfare_max_matches_brute_force():
    for t in range(40):
        rng = stream(2, t)
        n, m = int(rng.integers(1, 4)), int(rng.integers(0, 9))
        # coarse grid values make ties common
        est = ValuationMatrix(rng.integers(0, 3, (n, m)) / 2.0)
        alloc = welfare_max(est, rng)
        got = sum(est.bundle_value(i, b) for i, b in enumerate(alloc.bundles))
        assert got == pytest.approx(_brute_welfare(est), abs=1e-12)


def test_adversarial_equal_sizes_hits_lower_bound_exactly():
    alloc = Allocation.from_owner([0, 0, 1, 1], 2)
    truth = adversarial_instance(2, 4, 0.1, alloc)
    assert envy_report(truth, alloc).pairwise_envy[1, 0] == pytest.approx(0.4, abs=1e-12)


def test_adversarial_two_items():
    alloc = Allocation.from_owner([0, 1], 2)
    truth = adversarial_instance(2, 2, 0.5, alloc)
    # (1/2 + 1/2) - (1/2 - 1/2)
    assert envy_report(truth, alloc).max_envy == pytest.approx(1.0, abs=1e-12)


def test_adversarial_empty_runner_up():
    alloc = Allocation((frozenset({0, 1, 2}), frozenset()), 3)
    truth = adversarial_instance(2, 3, 0.1, alloc)
    envy = envy_report(truth, alloc).pairwise_envy[1, 0]
    assert envy == pytest.approx(3 * 0.6, abs=1e-12)
    assert envy >= 2 * 0.1 * 3 / 2


def test_adversarial_is_close_to_half_and_picks_lowest_index():
    alloc = Allocation.from_owner([0, 1, 2, 0, 1, 2], 3)
    q, p = lower_bound_pair(alloc)
    assert (p, q) == (0, 1)
    truth = adversarial_instance(3, 6, 0.2, alloc)
    assert np.abs(truth.values - 0.5).max() <= 0.2 + 1e-15
    with pytest.raises(ValueError):
        adversarial_instance(3, 6, 0.0, alloc)
    with pytest.raises(ValueError):
        adversarial_instance(3, 6, 0.6, alloc)


def test_lower_bound_against_seeded_welfare_max():
    for n in range(2, 6):
        for m in range(n, 41):
            est = ValuationMatrix(np.full((n, m), 0.5))
            alloc = welfare_max(est, stream(4, n, m))
            for eps in (0.05, 0.25):
                truth = adversarial_instance(n, m, eps, alloc)
                assert envy_report(truth, alloc).max_envy >= 2 * eps * m / n - 1e-9


@settings(max_examples=150, deadline=None)
@given(n=st.integers(1, 6), m=st.integers(0, 30), seed=st.integers(0, 2**32 - 1))
def test_round_robin_is_balanced_and_ef1(n, m, seed):
    rng = np.random.default_rng(seed)
    est = ValuationMatrix(rng.random((n, m)))
    alloc = round_robin(est)
    assert is_balanced(alloc, m, n)
    assert envy_report(est, alloc).is_ef1
    assert round_robin(est) == alloc


@settings(max_examples=150, deadline=None)
@given(
    n=st.integers(1, 8),
    m=st.integers(0, 60),
    eps=st.floats(0.0, 0.5),
    seed=st.integers(0, 2**32 - 1),
    scheme=st.sampled_from(["per-agent-shift", "worst-against-RR", "uniform-in-box"]),
)
def test_round_robin_true_envy_bound(n, m, eps, seed, scheme):
    rng = np.random.default_rng(seed)
    truth = ValuationMatrix(rng.random((n, m)), 1.0, (0.0, 1.0))
    shifts = tuple(rng.uniform(0, 1, n))
    inst = apply_noise(truth, BoundedAdversarial(eps, scheme, shifts), rng)
    assert isinstance(inst, NoisyInstance)
    env = envy_report(truth, round_robin(inst.estimates)).max_envy
    assert env <= 2 * eps * math.ceil(m / n) + 1 + 1e-12


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 5), m=st.integers(0, 20), seed=st.integers(0, 2**32 - 1))
def test_allocators_produce_partitions(n, m, seed):
    rng = np.random.default_rng(seed)
    est = ValuationMatrix(rng.integers(0, 3, (n, m)).astype(float))
    for alloc in (round_robin(est), welfare_max(est, stream(seed % 1000))):
        owners = sorted(g for b in alloc.bundles for g in b)
        assert owners == list(range(m))
