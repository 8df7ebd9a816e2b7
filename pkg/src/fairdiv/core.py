"""Valuations, allocations and envy metrics shared by every allocator."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Absolute tolerance for classifying envy against zero.
ENVY_TOL = 1e-9


class DimensionError(ValueError):
    pass


class PartitionError(ValueError):
    pass


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ValuationMatrix:
    """An n x m matrix of additive item values, one row per agent.

    ``bound_b`` is the value bound used by the envy guarantees; when
    ``value_range`` is given every entry is checked to lie inside it.
    """

    values: np.ndarray
    bound_b: float = 1.0
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 2:
            raise DimensionError(f"values must be a 2-D matrix, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise DimensionError("need at least one agent")
        if not np.all(np.isfinite(arr)):
            raise ValueError("values must be finite")
        if self.bound_b < 0:
            raise ValueError("bound_b must be non-negative")
        if self.value_range is not None:
            lo, hi = self.value_range
            if arr.size and (arr.min() < lo or arr.max() > hi):
                raise ValueError(
                    f"entries outside declared range [{lo}, {hi}]: "
                    f"min={arr.min()}, max={arr.max()}"
                )
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def bundle_value(self, agent: int, items: Iterable[int]) -> float:
        idx = np.fromiter(items, dtype=np.intp)
        return float(self.values[agent, idx].sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["agent"] + [f"item_{j}" for j in range(self.m)])
        for i, row in enumerate(self.values):
            writer.writerow([i] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, bound_b: float = 1.0) -> "ValuationMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:1] != ["agent"]:
            raise ValueError("expected header starting with 'agent'")
        header, body = rows[0], [r for r in rows[1:] if r]
        m = len(header) - 1
        values = np.empty((len(body), m))
        for line_no, row in enumerate(body, start=2):
            if len(row) != m + 1:
                raise ValueError(f"line {line_no}: expected {m + 1} fields, got {len(row)}")
            if int(row[0]) != line_no - 2:
                raise ValueError(f"line {line_no}: agents must be listed in order")
            values[line_no - 2] = [float(v) for v in row[1:]]
        return cls(values, bound_b=bound_b)


@dataclass(frozen=True, eq=False)
class NoisyInstance:
    """True valuations together with the estimates an algorithm gets to see.

    When ``verify`` is set the claimed bound
    ``max |truth - estimates - shifts_i| <= eps`` is checked on construction.
    """

    truth: ValuationMatrix
    estimates: ValuationMatrix
    eps: float = 0.0
    shifts: np.ndarray | None = None
    verify: bool = True

    def __post_init__(self):
        if self.truth.shape != self.estimates.shape:
            raise DimensionError(
                f"truth {self.truth.shape} and estimates {self.estimates.shape} differ"
            )
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        shifts = np.zeros(self.truth.n) if self.shifts is None else self.shifts
        shifts = _frozen_array(shifts)
        if shifts.shape != (self.truth.n,):
            raise DimensionError("shifts must have one entry per agent")
        if np.any(shifts < 0):
            raise ValueError("shifts must be non-negative")
        object.__setattr__(self, "shifts", shifts)
        if self.verify and not self.noise_bound_holds():
            raise ValueError(
                f"claimed noise bound eps={self.eps} violated: "
                f"realized {self.realized_eps()}"
            )

    @property
    def n(self) -> int:
        return self.truth.n

    @property
    def m(self) -> int:
        return self.truth.m

    def realized_eps(self) -> float:
        """Smallest eps consistent with the stored shifts."""
        if self.m == 0:
            return 0.0
        resid = self.truth.values - self.estimates.values - self.shifts[:, None]
        return float(np.abs(resid).max())

    def noise_bound_holds(self, tol: float = 1e-12) -> bool:
        return self.realized_eps() <= self.eps + tol


@dataclass(frozen=True)
class Allocation:
    """A complete partition of items ``0..m-1`` into ``n`` bundles (some may be empty)."""

    bundles: tuple[frozenset[int], ...]
    m: int

    def __post_init__(self):
        bundles = tuple(frozenset(int(g) for g in b) for b in self.bundles)
        if not bundles:
            raise PartitionError("need at least one bundle")
        seen: set[int] = set()
        for i, b in enumerate(bundles):
            overlap = seen & b
            if overlap:
                raise PartitionError(f"items {sorted(overlap)} assigned twice (agent {i})")
            seen |= b
        if seen != set(range(self.m)):
            missing = sorted(set(range(self.m)) - seen)
            extra = sorted(seen - set(range(self.m)))
            raise PartitionError(f"not a partition of 0..{self.m - 1}: missing={missing} extra={extra}")
        object.__setattr__(self, "bundles", bundles)

    @classmethod
    def from_owner(cls, owner: Sequence[int], n: int) -> "Allocation":
        bundles: list[set[int]] = [set() for _ in range(n)]
        for item, agent in enumerate(owner):
            if not 0 <= agent < n:
                raise PartitionError(f"item {item} assigned to unknown agent {agent}")
            bundles[int(agent)].add(item)
        return cls(tuple(frozenset(b) for b in bundles), len(owner))

    @property
    def n(self) -> int:
        return len(self.bundles)

    def owner(self) -> np.ndarray:
        out = np.empty(self.m, dtype=np.intp)
        for i, b in enumerate(self.bundles):
            out[list(b)] = i
        return out

    def sizes(self) -> list[int]:
        return [len(b) for b in self.bundles]

    def indicator(self) -> np.ndarray:
        """n x m 0/1 matrix with a one where agent i owns item j."""
        x = np.zeros((self.n, self.m))
        if self.m:
            x[self.owner(), np.arange(self.m)] = 1.0
        return x

    def __str__(self) -> str:
        # 1-indexed for display
        parts = [
            f"A_{i + 1}={{{', '.join(str(g + 1) for g in sorted(b))}}}"
            for i, b in enumerate(self.bundles)
        ]
        return "(" + ", ".join(parts) + ")"


@dataclass(frozen=True, eq=False)
class EnvyReport:
    pairwise_envy: np.ndarray
    max_envy: float
    is_envy_free: bool
    is_ef1: bool
    worst_pair: tuple[int, int] | None = field(default=None)


def _check_compatible(values: ValuationMatrix, alloc: Allocation) -> None:
    if alloc.n != values.n or alloc.m != values.m:
        raise DimensionError(
            f"allocation is {alloc.n} agents x {alloc.m} items, "
            f"valuations are {values.n} x {values.m}"
        )


def envy_report(values: ValuationMatrix, alloc: Allocation) -> EnvyReport:
    """Pairwise envy ``v_i(A_j) - v_i(A_i)`` with envy-freeness and EF1 flags.

    For a single agent there are no ordered pairs; ``max_envy`` is then 0.

    >>> vm = ValuationMatrix([[1.0, 0.0], [0.0, 1.0]])
    >>> envy_report(vm, Allocation.from_owner([0, 1], 2)).max_envy
    -1.0
    """
    _check_compatible(values, alloc)
    n = values.n
    x = alloc.indicator()
    # bundle_values[i, j] = v_i(A_j)
    bundle_values = values.values @ x.T
    own = np.diag(bundle_values).copy()
    pairwise = bundle_values - own[:, None]
    np.fill_diagonal(pairwise, 0.0)

    if n == 1:
        return EnvyReport(pairwise, 0.0, True, True, None)

    off = pairwise.copy()
    np.fill_diagonal(off, -np.inf)
    flat = int(np.argmax(off))
    worst = divmod(flat, n)
    max_envy = float(off[worst])

    # EF1: envy toward a non-empty bundle disappears after dropping its best item
    ef1 = True
    for j, bundle in enumerate(alloc.bundles):
        if not bundle:
            continue
        idx = np.fromiter(bundle, dtype=np.intp)
        best_item = values.values[:, idx].max(axis=1)
        for i in range(n):
            if i != j and pairwise[i, j] - best_item[i] > ENVY_TOL:
                ef1 = False
                break
        if not ef1:
            break

    return EnvyReport(
        pairwise_envy=pairwise,
        max_envy=max_envy,
        is_envy_free=max_envy <= ENVY_TOL,
        is_ef1=ef1,
        worst_pair=worst,
    )


def max_envy(values: ValuationMatrix, alloc: Allocation) -> float:
    return envy_report(values, alloc).max_envy


def is_balanced(alloc: Allocation, m: int, n: int) -> bool:
    """True iff every bundle holds floor(m/n) or ceil(m/n) items."""
    if alloc.m != m or alloc.n != n:
        raise DimensionError(f"allocation does not partition {m} items among {n} agents")
    lo, hi = m // n, -(-m // n)
    return all(lo <= s <= hi for s in alloc.sizes())
