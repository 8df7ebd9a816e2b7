import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from fairdiv.core import NoisyInstance, ValuationMatrix
from fairdiv.lp_round import (
    FractionalAllocation,
    build_minmax_envy_lp,
    lp_pipeline,
    randomized_round,
    solve_lp,
)
from fairdiv.rng import stream
from fairdiv.simplex import Infeasible, LinearProgram, Unbounded, solve


def _highs(lp: LinearProgram) -> float:
    ub_rows = [k for k, s in enumerate(lp.senses) if s != "="]
    eq_rows = [k for k, s in enumerate(lp.senses) if s == "="]
    sign = np.array([1.0 if lp.senses[k] == "<=" else -1.0 for k in ub_rows])
    res = linprog(
        lp.c,
        A_ub=lp.A[ub_rows] * sign[:, None] if ub_rows else None,
        b_ub=lp.b[ub_rows] * sign if ub_rows else None,
        A_eq=lp.A[eq_rows] if eq_rows else None,
        b_eq=lp.b[eq_rows] if eq_rows else None,
        bounds=[(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(lp.lower, lp.upper)],
        method="highs",
    )
    assert res.status == 0
    return res.fun


@pytest.mark.parametrize(
    "values,alpha",
    [([[1, 0], [0, 1]], -1.0), ([[1, 1], [1, 1]], 0.0), ([[0, 0, 0], [0, 0, 0]], 0.0)],
)
def test_lp_optimum_examples(values, alpha):
    frac = solve_lp(build_minmax_envy_lp(ValuationMatrix(values)))
    assert frac.alpha == pytest.approx(alpha, abs=1e-9)
    assert frac.is_consistent(ValuationMatrix(values))


def test_identical_valuations_split_evenly_in_value():
    frac = solve_lp(build_minmax_envy_lp(ValuationMatrix([[1, 1], [1, 1]])))
    assert frac.x.sum(axis=1) == pytest.approx([1.0, 1.0], abs=1e-9)


def test_rounding_frequencies():
    frac = FractionalAllocation(np.array([[0.3, 1.0, 0.5], [0.7, 0.0, 0.5]]), 0.0)
    rng = stream(3, "round")
    counts = np.zeros((2, 3))
    trials = 20_000
    for _ in range(trials):
        for i, bundle in enumerate(randomized_round(frac, rng).bundles):
            for j in bundle:
                counts[i, j] += 1
    assert np.abs(counts / trials - frac.x).max() <= 0.015
    assert counts[1, 1] == 0


def test_rounding_consumes_one_draw_per_item():
    frac = FractionalAllocation(np.full((3, 4), 1 / 3), 0.0)
    a, b = stream(5), stream(5)
    randomized_round(frac, a)
    b.random(4)
    assert a.random() == b.random()


def test_fractional_allocation_validation():
    with pytest.raises(ValueError):
        FractionalAllocation(np.array([[0.5, 1.0], [0.4, 0.0]]), 0.0)
    with pytest.raises(ValueError):
        FractionalAllocation(np.array([[-0.1], [1.1]]), 0.0)


def test_single_agent_pipeline():
    truth = ValuationMatrix([[0.2, 0.4]])
    run = lp_pipeline(NoisyInstance(truth, truth), stream(0))
    assert run.allocation.bundles == (frozenset({0, 1}),)
    assert run.true_max_envy == 0.0


def test_lp_text_listing_names_every_variable():
    text = build_minmax_envy_lp(ValuationMatrix([[1, 2], [3, 4]])).to_text()
    assert text.startswith("Minimize")
    assert "alpha free" in text and "x_1_1" in text


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 4), m=st.integers(1, 10), seed=st.integers(0, 2**32 - 1))
def test_minmax_envy_lp_matches_highs(n, m, seed):
    rng = np.random.default_rng(seed)
    est = ValuationMatrix(rng.random((n, m)))
    lp = build_minmax_envy_lp(est)
    frac = solve_lp(lp)
    assert frac.alpha == pytest.approx(_highs(lp), abs=1e-7)
    assert frac.is_consistent(est)


def test_simplex_basic_and_phase1():
    # max x + y s.t. x + 2y <= 4, 3x + y <= 6  ->  optimum at (8/5, 6/5)
    lp = LinearProgram([-1, -1], [[1, 2], [3, 1]], ["<=", "<="], [4, 6], [0, 0], [np.inf, np.inf])
    sol = solve(lp)
    assert sol.x == pytest.approx([1.6, 1.2], abs=1e-12)
    # >= row forces phase 1
    lp2 = LinearProgram([1, 1], [[1, 1]], [">="], [2], [0, 0], [np.inf, np.inf])
    assert solve(lp2).objective == pytest.approx(2.0)
    assert not solve(lp2).phase1_skipped


def test_simplex_infeasible_and_unbounded():
    bad = LinearProgram([1], [[1], [1]], ["<=", ">="], [1, 2], [0], [np.inf])
    with pytest.raises(Infeasible):
        solve(bad)
    free = LinearProgram([-1], [[-1]], ["<="], [0], [0], [np.inf])
    with pytest.raises(Unbounded):
        solve(free)


def test_simplex_bounds_and_free_variables():
    lp = LinearProgram([1, -1], [[1, 1]], ["="], [1], [-np.inf, -2], [np.inf, 3])
    sol = solve(lp)
    assert sol.x == pytest.approx([-2, 3])
    assert lp.residuals(sol.x) <= 1e-12


def test_simplex_rejects_bad_input():
    with pytest.raises(ValueError):
        LinearProgram([1], [[np.nan]], ["<="], [1], [0], [1])
    with pytest.raises(ValueError):
        LinearProgram([1], [[1]], ["<"], [1], [0], [1])
    with pytest.raises(ValueError):
        LinearProgram([1], [[1]], ["<="], [1], [2], [1])


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 5), cols=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_simplex_matches_highs_on_random_bounded_lps(rows, cols, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(rows, cols))
    x0 = rng.uniform(0, 1, cols)
    b = A @ x0 + rng.uniform(0, 1, rows)
    lp = LinearProgram(rng.normal(size=cols), A, ["<="] * rows, b, np.zeros(cols), np.full(cols, 2.0))
    sol = solve(lp)
    assert sol.objective == pytest.approx(_highs(lp), abs=1e-7)
    assert lp.residuals(sol.x) <= 1e-8


def test_warm_start_skips_phase1():
    lp = build_minmax_envy_lp(ValuationMatrix(stream(1).random((3, 8))))
    assert solve(lp).phase1_skipped
