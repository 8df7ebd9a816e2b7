import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairdiv.core import (
    Allocation,
    DimensionError,
    NoisyInstance,
    PartitionError,
    ValuationMatrix,
    envy_report,
    is_balanced,
)


def test_each_agent_holding_its_valued_item_is_envy_free():
    rep = envy_report(ValuationMatrix([[1, 0], [0, 1]]), Allocation.from_owner([0, 1], 2))
    assert rep.max_envy == -1.0
    assert rep.is_envy_free


def test_zero_valuations_give_zero_envy():
    rep = envy_report(ValuationMatrix(np.zeros((2, 3))), Allocation.from_owner([0, 1, 1], 2))
    assert rep.max_envy == 0.0
    assert rep.is_envy_free


def test_one_sided_allocation_envy_and_ef1():
    vm = ValuationMatrix([[3, 1], [2, 2]])
    alloc = Allocation((frozenset({0, 1}), frozenset()), 2)
    rep = envy_report(vm, alloc)
    # agent 2 (index 1) values {0,1} at 2+2 and its empty bundle at 0
    assert rep.pairwise_envy[1, 0] == 4.0
    assert not rep.is_envy_free
    # removing either item leaves 2 > 0
    remaining = [2 + 2 - 2, 2 + 2 - 2]
    assert all(r > 0 for r in remaining)
    assert not rep.is_ef1


def test_pairwise_diagonal_and_max():
    rng = np.random.default_rng(0)
    vm = ValuationMatrix(rng.random((4, 9)))
    alloc = Allocation.from_owner(rng.integers(0, 4, 9), 4)
    rep = envy_report(vm, alloc)
    assert np.all(np.diag(rep.pairwise_envy) == 0)
    off = rep.pairwise_envy[~np.eye(4, dtype=bool)]
    assert rep.max_envy == off.max()
    i, j = rep.worst_pair
    assert rep.pairwise_envy[i, j] == rep.max_envy


def test_single_agent_report():
    rep = envy_report(ValuationMatrix([[1.0, 2.0]]), Allocation.from_owner([0, 0], 1))
    assert rep.max_envy == 0.0 and rep.is_envy_free and rep.is_ef1


@pytest.mark.parametrize(
    "sizes,m,n,expected",
    [((2, 2), 4, 2, True), ((3, 2), 5, 2, True), ((3, 1), 4, 2, False)],
)
def test_is_balanced(sizes, m, n, expected):
    owner = [i for i, s in enumerate(sizes) for _ in range(s)]
    assert is_balanced(Allocation.from_owner(owner, n), m, n) is expected


def test_is_balanced_rejects_mismatch():
    with pytest.raises(DimensionError):
        is_balanced(Allocation.from_owner([0, 1], 2), 3, 2)


def test_partition_validation():
    with pytest.raises(PartitionError):
        Allocation((frozenset({0}), frozenset({0, 1})), 2)
    with pytest.raises(PartitionError):
        Allocation((frozenset({0}), frozenset()), 2)
    with pytest.raises(PartitionError):
        Allocation.from_owner([0, 3], 2)


def test_envy_report_dimension_mismatch():
    with pytest.raises(DimensionError):
        envy_report(ValuationMatrix(np.zeros((2, 3))), Allocation.from_owner([0, 1], 2))


def test_valuation_matrix_invariants():
    with pytest.raises(ValueError):
        ValuationMatrix([[np.nan]])
    with pytest.raises(DimensionError):
        ValuationMatrix([1.0, 2.0])
    with pytest.raises(ValueError):
        ValuationMatrix([[0.5, 1.5]], value_range=(0.0, 1.0))
    vm = ValuationMatrix([[0.5]])
    with pytest.raises(ValueError):
        vm.values[0, 0] = 1.0


def test_valuation_csv_round_trip():
    vm = ValuationMatrix([[0.1, 0.2, 1 / 3], [4.0, -5.5, 6.25]])
    text = vm.to_csv()
    assert text.splitlines()[0] == "agent,item_0,item_1,item_2"
    back = ValuationMatrix.from_csv(text)
    assert np.array_equal(back.values, vm.values)


def test_noisy_instance_bound_checked():
    truth = ValuationMatrix([[1.0, 0.0]])
    NoisyInstance(truth, ValuationMatrix([[0.9, -0.1]]), eps=0.1 + 1e-15)
    with pytest.raises(ValueError):
        NoisyInstance(truth, ValuationMatrix([[0.5, 0.0]]), eps=0.1)
    # shifts absorb a constant per-agent offset
    inst = NoisyInstance(truth, ValuationMatrix([[0.7, -0.3]]), eps=0.0, shifts=[0.3])
    assert inst.realized_eps() == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        NoisyInstance(truth, truth, shifts=[-1.0])


def test_display_is_one_indexed():
    assert str(Allocation.from_owner([1, 0], 2)) == "(A_1={2}, A_2={1})"


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 4),
    m=st.integers(0, 8),
    c=st.floats(-5, 5, allow_nan=False),
    seed=st.integers(0, 2**32 - 1),
)
def test_constant_shift_changes_envy_by_cardinality_gap(n, m, c, seed):
    rng = np.random.default_rng(seed)
    v = rng.random((n, m))
    alloc = Allocation.from_owner(rng.integers(0, n, m), n)
    shifted = v.copy()
    shifted[0] += c
    base = envy_report(ValuationMatrix(v), alloc).pairwise_envy
    moved = envy_report(ValuationMatrix(shifted), alloc).pairwise_envy
    sizes = alloc.sizes()
    for j in range(n):
        expected = base[0, j] + c * (sizes[j] - sizes[0])
        assert moved[0, j] == pytest.approx(expected, abs=1e-9)
