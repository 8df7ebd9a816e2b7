"""Exact finite oracles for the association inequality and the noisy-maximum conditional-mean lemma."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

STRICT_MARGIN = 1e-12
MAX_OUTCOMES = 10_000_000


class ZeroProbabilityEvent(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteRV:
    support: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        s = tuple(float(x) for x in self.support)
        w = tuple(float(x) for x in self.weights)
        if not s or len(s) != len(w):
            raise ValueError("support and weights must be non-empty and of equal length")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("support must be strictly increasing")
        if any(x <= 0 for x in w):
            raise ValueError("weights must be positive")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point(cls, x: float) -> "DiscreteRV":
        return cls((x,), (1.0,))

    @classmethod
    def uniform(cls, support: Sequence[float]) -> "DiscreteRV":
        return cls(tuple(support), (1.0 / len(support),) * len(support))

    def exact_weights(self) -> list[Fraction]:
        """Weights as exact rationals, renormalized to sum to exactly 1."""
        w = [Fraction(x) for x in self.weights]
        total = sum(w)
        return [x / total for x in w]

    @property
    def variance(self) -> float:
        w = self.exact_weights()
        s = [Fraction(x) for x in self.support]
        mu = sum(a * b for a, b in zip(w, s))
        return float(sum(a * (b - mu) ** 2 for a, b in zip(w, s)))


def _table(X: DiscreteRV, f: Sequence[float], name: str) -> list[Fraction]:
    if len(f) != len(X.support):
        raise ValueError(f"{name} needs one value per support point")
    vals = [Fraction(float(v)) for v in f]
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} is not non-decreasing over the support")
    return vals


def association_gap_exact(X: DiscreteRV, f: Sequence[float], g: Sequence[float]) -> Fraction:
    """E[f(X) g(X)] - E[f(X)] E[g(X)] in exact rational arithmetic."""
    fv, gv = _table(X, f, "f"), _table(X, g, "g")
    w = X.exact_weights()
    ef = sum(a * b for a, b in zip(w, fv))
    eg = sum(a * b for a, b in zip(w, gv))
    efg = sum(a * b * c for a, b, c in zip(w, fv, gv))
    return efg - ef * eg


def association_gap(X: DiscreteRV, f: Sequence[float], g: Sequence[float]) -> float:
    """E[f(X) g(X)] - E[f(X)] E[g(X)] for non-decreasing tables f and g.

    >>> association_gap(DiscreteRV.uniform([0, 1]), [0, 1], [0, 1])
    0.25
    """
    return float(association_gap_exact(X, f, g))


def strict_condition(X: DiscreteRV, f: Sequence[float], g: Sequence[float]) -> bool:
    """True iff Var(f(X)) > 0 and Var(g(X)) > 0.

    Every support point has positive weight, so a variance is positive exactly
    when the table takes two distinct values.
    """
    fv, gv = _table(X, f, "f"), _table(X, g, "g")
    return len(set(fv)) > 1 and len(set(gv)) > 1


def _pair_outcomes(D: DiscreteRV, Dp: DiscreteRV) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.repeat(np.array(D.support), len(Dp.support))
    s = x + np.tile(np.array(Dp.support), len(D.support))
    p = np.outer(D.weights, Dp.weights).ravel()
    return x, s, p


def conditional_mean_gap(D: DiscreteRV, Dp: DiscreteRV, n: int) -> tuple[float, float]:
    """(E[X_1 | win], E[X_1 | lose]) where agent 1 wins iff X_1 + Y_1 > max_{i>=2} X_i + Y_i.

    Ties count as a loss.  Every joint outcome of the n (X_i, Y_i) pairs is
    enumerated; the competitors' outcomes are enumerated once and reused for
    each outcome of agent 1.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    x, s, p = _pair_outcomes(D, Dp)
    k = len(s)
    if k ** n > MAX_OUTCOMES:
        raise ValueError(f"{k ** n} joint outcomes exceed the cap of {MAX_OUTCOMES}")

    # competitors: max of their sums and joint probability, for every outcome tuple
    rival_max = np.full(1, -np.inf)
    rival_p = np.ones(1)
    for _ in range(n - 1):
        rival_max = np.maximum(rival_max[:, None], s[None, :]).ravel()
        rival_p = (rival_p[:, None] * p[None, :]).ravel()

    win_terms, winx_terms, lose_terms, losex_terms = [], [], [], []
    for a in range(k):
        won = rival_max < s[a]
        pw = math.fsum(rival_p[won])
        pl = math.fsum(rival_p[~won])
        win_terms.append(p[a] * pw)
        winx_terms.append(p[a] * pw * x[a])
        lose_terms.append(p[a] * pl)
        losex_terms.append(p[a] * pl * x[a])
    p_win, p_lose = math.fsum(win_terms), math.fsum(lose_terms)
    if p_win <= 0:
        raise ZeroProbabilityEvent("agent 1 never wins strictly")
    if p_lose <= 0:
        raise ZeroProbabilityEvent("agent 1 never loses")
    return math.fsum(winx_terms) / p_win, math.fsum(losex_terms) / p_lose


def conditional_mean_gap_closed_form(D: DiscreteRV, Dp: DiscreteRV, n: int) -> tuple[float, float]:
    """Same quantities via P(win | s) = P(S < s)^(n-1); an independent cross-check."""
    x, s, p = _pair_outcomes(D, Dp)
    below = np.array([math.fsum(p[s < v]) for v in s])
    pw = p * below ** (n - 1)
    pl = p - pw
    if math.fsum(pw) <= 0 or math.fsum(pl) <= 0:
        raise ZeroProbabilityEvent("conditioning event has probability zero")
    return math.fsum(pw * x) / math.fsum(pw), math.fsum(pl * x) / math.fsum(pl)


@dataclass(frozen=True)
class StatcheckSummary:
    association_cases: int
    association_violations: int
    conditional_cases: int
    conditional_violations: int
    skipped_zero_probability: int

    @property
    def violations(self) -> int:
        return self.association_violations + self.conditional_violations


def random_rv(rng: np.random.Generator, max_support: int = 4, lo: float = -3.0, hi: float = 3.0) -> DiscreteRV:
    k = int(rng.integers(1, max_support + 1))
    support = np.sort(rng.choice(np.arange(lo, hi + 0.5, 0.5), size=k, replace=False))
    w = rng.uniform(0.05, 1.0, k)
    w = w / w.sum()
    w[-1] = 1.0 - math.fsum(w[:-1])
    return DiscreteRV(tuple(support), tuple(w))


def random_monotone_table(rng: np.random.Generator, k: int) -> list[float]:
    """Non-decreasing table; roughly a third of tables are constant."""
    if rng.random() < 0.3:
        return [float(rng.integers(-3, 4))] * k
    steps = rng.integers(0, 3, k) * (rng.random(k) < 0.6)
    steps[0] = rng.integers(-3, 4)
    return np.cumsum(steps).astype(float).tolist()


def association_cases(rng: np.random.Generator, count: int):
    for _ in itertools.repeat(None, count):
        X = random_rv(rng, max_support=5)
        k = len(X.support)
        yield X, random_monotone_table(rng, k), random_monotone_table(rng, k)


def check_association(rng: np.random.Generator, count: int = 200) -> tuple[int, int]:
    """(cases, violations) for gap >= 0 and (gap > margin) == strict_condition."""
    bad = 0
    for X, f, g in association_cases(rng, count):
        gap = association_gap(X, f, g)
        if gap < 0 or (gap > STRICT_MARGIN) != strict_condition(X, f, g):
            bad += 1
    return count, bad


def check_conditional(rng: np.random.Generator, count: int = 100) -> tuple[int, int, int]:
    """(valid cases, violations, skipped) over random (D, D', n <= 3) with valid conditioning."""
    bad = skipped = done = 0
    while done < count:
        D, Dp = random_rv(rng, 3), random_rv(rng, 3, lo=-1.0, hi=1.0)
        n = int(rng.integers(2, 4))
        try:
            win, lose = conditional_mean_gap(D, Dp, n)
        except ZeroProbabilityEvent:
            skipped += 1
            continue
        done += 1
        # part (1) is asserted on every case: with Var(D') = 0 it follows from part (2)
        # or from X_1 being constant
        if win < lose - STRICT_MARGIN:
            bad += 1
        if D.variance > 0 and not win - lose > STRICT_MARGIN:
            bad += 1
    return done, bad, skipped


def run_statcheck(rng: np.random.Generator, association: int = 200, conditional: int = 100) -> StatcheckSummary:
    a_cases, a_bad = check_association(rng, association)
    c_cases, c_bad, skipped = check_conditional(rng, conditional)
    return StatcheckSummary(a_cases, a_bad, c_cases, c_bad, skipped)
