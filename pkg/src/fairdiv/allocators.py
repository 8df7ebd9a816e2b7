"""Round-Robin, noisy welfare maximization and the adversarial lower-bound instance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Allocation, ValuationMatrix


@dataclass(frozen=True)
class PickOrder:
    """Cyclic order in which agents pick under Round-Robin."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(a) for a in self.order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"pick order {order} is not a permutation of 0..{len(order) - 1}")
        object.__setattr__(self, "order", order)

    @classmethod
    def identity(cls, n: int) -> "PickOrder":
        return cls(tuple(range(n)))

    @classmethod
    def parse(cls, text: str) -> "PickOrder":
        return cls(tuple(int(tok) for tok in text.split(",") if tok.strip()))

    def __len__(self) -> int:
        return len(self.order)


def round_robin(estimates: ValuationMatrix, order: PickOrder | Sequence[int] | None = None) -> Allocation:
    """Agents take turns picking their favourite remaining item.

    Picks are made on ``estimates``; ties go to the lowest item index.

    >>> round_robin(ValuationMatrix([[4, 3, 2, 1], [4, 3, 2, 1]])).bundles
    (frozenset({0, 2}), frozenset({1, 3}))
    """
    n, m = estimates.shape
    if order is None:
        order = PickOrder.identity(n)
    elif not isinstance(order, PickOrder):
        order = PickOrder(tuple(order))
    if len(order) != n:
        raise ValueError(f"pick order has {len(order)} agents, valuations have {n}")

    values = estimates.values
    available = np.ones(m, dtype=bool)
    owner = np.empty(m, dtype=np.intp)
    for turn in range(m):
        agent = order.order[turn % n]
        row = np.where(available, values[agent], -np.inf)
        item = int(np.argmax(row))  # first maximal index
        available[item] = False
        owner[item] = agent
    return Allocation.from_owner(owner, n)


def rr_envy_bound(n: int, m: int, eps: float, b: float) -> float:
    """Worst-case true envy of Round-Robin run on eps-accurate estimates: 2*eps*ceil(m/n) + b."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return 2.0 * eps * math.ceil(m / n) + b


def welfare_max(estimates: ValuationMatrix, rng: np.random.Generator) -> Allocation:
    """Give every item to an agent with the highest estimated value.

    Tied items are resolved by one uniform draw each, consumed in item order.
    """
    n, m = estimates.shape
    values = estimates.values
    owner = np.empty(m, dtype=np.intp)
    if m == 0:
        return Allocation.from_owner(owner, n)
    best = values.max(axis=0)
    for j in range(m):
        tied = np.flatnonzero(values[:, j] == best[j])
        if len(tied) == 1:
            owner[j] = tied[0]
        else:
            owner[j] = tied[int(rng.integers(len(tied)))]
    return Allocation.from_owner(owner, n)


def _largest_two(alloc: Allocation) -> tuple[int, int]:
    sizes = alloc.sizes()
    # stable sort: equal sizes keep ascending agent order
    ranked = sorted(range(len(sizes)), key=lambda i: -sizes[i])
    return ranked[0], ranked[1]


def adversarial_instance(n: int, m: int, eps: float, alloc: Allocation) -> ValuationMatrix:
    """True values, eps-close to the all-1/2 estimates, that punish ``alloc``.

    The runner-up bundle's owner ``q`` gets 1/2 + eps on the largest bundle
    (owner ``p``) and 1/2 - eps on its own; all other entries are 1/2.  Its
    envy toward ``p`` is then eps(|A_p| + |A_q|) + (|A_p| - |A_q|)/2, which is
    at least 2 eps m / n.
    """
    if not 0 < eps <= 0.5:
        raise ValueError(f"eps must lie in (0, 1/2], got {eps}")
    if n < 2:
        raise ValueError("the lower bound needs at least two agents")
    if alloc.n != n or alloc.m != m:
        raise ValueError("allocation does not match (n, m)")
    p, q = _largest_two(alloc)
    truth = np.full((n, m), 0.5)
    truth[q, list(alloc.bundles[p])] = 0.5 + eps
    truth[q, list(alloc.bundles[q])] = 0.5 - eps
    return ValuationMatrix(truth, bound_b=1.0, value_range=(0.0, 1.0))


def lower_bound_pair(alloc: Allocation) -> tuple[int, int]:
    """(envier q, envied p) targeted by :func:`adversarial_instance`."""
    p, q = _largest_two(alloc)
    return q, p
