"""Min-max-envy LP over fractional allocations, and independent randomized rounding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Allocation, NoisyInstance, ValuationMatrix, envy_report
from .simplex import LinearProgram, solve

COLUMN_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FractionalAllocation:
    """``x[i, j]`` is the share of item j given to agent i; ``alpha`` the LP's max envy."""

    x: np.ndarray
    alpha: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim != 2:
            raise ValueError("x must be an n x m matrix")
        if np.any(x < -COLUMN_TOL):
            raise ValueError(f"negative assignment share {x.min():.3g}")
        x = np.clip(x, 0.0, None)
        if x.shape[1] and np.abs(x.sum(axis=0) - 1.0).max() > COLUMN_TOL:
            raise ValueError("every column of x must sum to 1")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    def envy_matrix(self, estimates: ValuationMatrix) -> np.ndarray:
        """Fractional envy ``sum_j v[i,j] (x[i',j] - x[i,j])`` for every ordered pair."""
        worth = estimates.values @ self.x.T  # worth[i, i'] = v_i(x_{i'})
        return worth - np.diag(worth)[:, None]

    def is_consistent(self, estimates: ValuationMatrix, tol: float = 1e-8) -> bool:
        env = self.envy_matrix(estimates)
        np.fill_diagonal(env, -np.inf)
        return bool(np.all(env <= self.alpha + tol))


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, k) for i in range(n) for k in range(n) if i != k]


def build_minmax_envy_lp(estimates: ValuationMatrix) -> LinearProgram:
    """LP with variables ``x`` (row-major, agent-by-item) followed by a free ``alpha``.

    Rows: one envy row ``sum_j v[i,j] x[k,j] - v[i,j] x[i,j] - alpha <= 0`` per
    ordered pair (i, k), then one ``sum_i x[i,j] = 1`` per item.  The
    ``start`` hint is the highest-estimate integral allocation with alpha set
    to its max envy, which is a vertex of the feasible region.
    """
    n, m = estimates.shape
    if n < 2:
        raise ValueError("the envy LP needs at least two agents")
    v = estimates.values
    nx = n * m
    pairs = _pairs(n)
    A = np.zeros((len(pairs) + m, nx + 1))
    for r, (i, k) in enumerate(pairs):
        A[r, k * m:(k + 1) * m] += v[i]
        A[r, i * m:(i + 1) * m] -= v[i]
        A[r, nx] = -1.0
    for j in range(m):
        A[len(pairs) + j, j:nx:m] = 1.0
    b = np.concatenate([np.zeros(len(pairs)), np.ones(m)])
    senses = ["<="] * len(pairs) + ["="] * m
    c = np.zeros(nx + 1)
    c[nx] = 1.0
    lower = np.concatenate([np.zeros(nx), [-np.inf]])
    upper = np.full(nx + 1, np.inf)
    names = [f"x_{i}_{j}" for i in range(n) for j in range(m)] + ["alpha"]

    owner = np.argmax(v, axis=0) if m else np.zeros(0, dtype=int)
    x0 = np.zeros((n, m))
    x0[owner, np.arange(m)] = 1.0
    alpha0 = envy_report(estimates, Allocation.from_owner(owner, n)).max_envy
    start = np.concatenate([x0.ravel(), [alpha0]])
    return LinearProgram(c, A, senses, b, lower, upper, names=names, shape=(n, m), start=start)


def solve_lp(lp: LinearProgram) -> FractionalAllocation:
    """Solve an LP produced by :func:`build_minmax_envy_lp`."""
    if lp.shape is None:
        raise ValueError("solve_lp expects an allocation LP (missing shape)")
    n, m = lp.shape
    sol = solve(lp)
    x = sol.x[: n * m].reshape(n, m)
    return FractionalAllocation(x, float(sol.x[n * m]))


def randomized_round(frac: FractionalAllocation, rng: np.random.Generator) -> Allocation:
    """Give item j to agent i with probability ``x[i, j]``, independently across items.

    One uniform draw is consumed per item, in item order.
    """
    n, m = frac.x.shape
    if m == 0:
        return Allocation.from_owner([], n)
    col_sums = frac.x.sum(axis=0)
    if np.abs(col_sums - 1.0).max() > COLUMN_TOL:
        raise ValueError("columns of x must sum to 1")
    cdf = np.cumsum(frac.x / col_sums, axis=0)
    cdf[-1] = 1.0
    u = rng.random(m)
    owner = np.array([int(np.searchsorted(cdf[:, j], u[j], side="right")) for j in range(m)])
    return Allocation.from_owner(np.minimum(owner, n - 1), n)


@dataclass(frozen=True, eq=False)
class LPRun:
    allocation: Allocation
    fractional: FractionalAllocation | None
    alpha: float
    observed_max_envy: float
    true_max_envy: float


def lp_pipeline(instance: NoisyInstance, rng: np.random.Generator) -> LPRun:
    """Build and solve the min-max-envy LP on the estimates, then round it."""
    n, m = instance.n, instance.m
    if n == 1:
        alloc = Allocation.from_owner([0] * m, 1)
        return LPRun(alloc, None, 0.0, 0.0, 0.0)
    frac = solve_lp(build_minmax_envy_lp(instance.estimates))
    alloc = randomized_round(frac, rng)
    return LPRun(
        allocation=alloc,
        fractional=frac,
        alpha=frac.alpha,
        observed_max_envy=envy_report(instance.estimates, alloc).max_envy,
        true_max_envy=envy_report(instance.truth, alloc).max_envy,
    )
