"""Dense tableau simplex with Bland's rule.

Problems are given as a :class:`LinearProgram` in general form (row senses,
variable bounds, free variables) and converted to standard form
``min c y  s.t.  A y = b, y >= 0`` before solving.  Phase 1 uses artificial
variables unless the caller supplies a feasible vertex in ``start``, in which
case a basis is recovered from it and phase 2 starts there directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PIVOT_TOL = 1e-10
OPT_TOL = 1e-9
FEAS_TOL = 1e-8
MAX_PIVOTS = 100_000

SENSES = ("<=", "=", ">=")


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


class IterationLimit(LPError):
    pass


@dataclass(eq=False)
class LinearProgram:
    """``min c.x`` subject to ``A x (senses) b`` and ``lower <= x <= upper``.

    Use ``-inf``/``inf`` bounds for free directions.  ``shape`` and ``start``
    are optional hints: ``shape`` records the (agents, items) layout of an
    allocation LP, ``start`` is a feasible vertex used to skip phase 1.
    """

    c: np.ndarray
    A: np.ndarray
    senses: Sequence[str]
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: Sequence[str] | None = None
    shape: tuple[int, int] | None = None
    start: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.c.size)
        self.b = np.asarray(self.b, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.senses = tuple(self.senses)
        nc, nv = self.A.shape
        if self.b.shape != (nc,) or len(self.senses) != nc:
            raise ValueError("row count mismatch between A, b and senses")
        if self.lower.shape != (nv,) or self.upper.shape != (nv,):
            raise ValueError("bounds must have one entry per variable")
        if any(s not in SENSES for s in self.senses):
            raise ValueError(f"senses must be drawn from {SENSES}")
        for name, arr in (("c", self.c), ("A", self.A), ("b", self.b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite coefficients")
        if np.any(self.lower > self.upper) or np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("inconsistent bounds")
        if self.names is None:
            self.names = tuple(f"x{k}" for k in range(nv))

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.b.size

    def residuals(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at ``x``."""
        ax = self.A @ x
        worst = 0.0
        for k, sense in enumerate(self.senses):
            d = ax[k] - self.b[k]
            viol = {"<=": max(d, 0.0), ">=": max(-d, 0.0), "=": abs(d)}[sense]
            worst = max(worst, viol)
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.upper, initial=0.0)))
        return worst

    def to_text(self) -> str:
        """Plain-text listing in a CPLEX-LP-like layout, for cross-checking."""

        def expr(coefs):
            terms = [f"{v:+.17g} {self.names[k]}" for k, v in enumerate(coefs) if v != 0.0]
            return " ".join(terms) if terms else "0"

        lines = ["Minimize", f" obj: {expr(self.c)}", "Subject To"]
        for k, sense in enumerate(self.senses):
            lines.append(f" r{k}: {expr(self.A[k])} {sense} {self.b[k]:.17g}")
        lines.append("Bounds")
        for k, name in enumerate(self.names):
            lo, hi = self.lower[k], self.upper[k]
            if np.isinf(lo) and np.isinf(hi):
                lines.append(f" {name} free")
            else:
                lo_s = "-inf" if np.isinf(lo) else f"{lo:.17g}"
                hi_s = "+inf" if np.isinf(hi) else f"{hi:.17g}"
                lines.append(f" {lo_s} <= {name} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    iterations: int
    phase1_skipped: bool
    basis: list[int] = field(default_factory=list)


@dataclass
class _Standard:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    # x = T @ y + offset (restricted to the structural part of y)
    T: np.ndarray
    offset: np.ndarray
    n_struct: int


def _standardize(lp: LinearProgram) -> _Standard:
    nv = lp.num_vars
    cols: list[np.ndarray] = []
    offset = np.zeros(nv)
    extra_rows: list[tuple[int, float]] = []  # (y column, upper bound on it)
    for k in range(nv):
        lo, hi = lp.lower[k], lp.upper[k]
        e = np.zeros(nv)
        e[k] = 1.0
        if np.isfinite(lo):
            offset[k] = lo
            cols.append(e)
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[k] = hi
            cols.append(-e)
        else:
            cols.append(e)
            cols.append(-e)
    T = np.array(cols).T if cols else np.zeros((nv, 0))
    n_struct = T.shape[1]

    A0 = lp.A @ T
    b0 = lp.b - lp.A @ offset
    senses = list(lp.senses)
    for col, ub in extra_rows:
        row = np.zeros(n_struct)
        row[col] = 1.0
        A0 = np.vstack([A0, row])
        b0 = np.append(b0, ub)
        senses.append("<=")

    n_slack = sum(s != "=" for s in senses)
    A = np.zeros((len(senses), n_struct + n_slack))
    A[:, :n_struct] = A0
    s_col = n_struct
    for r, sense in enumerate(senses):
        if sense == "<=":
            A[r, s_col] = 1.0
            s_col += 1
        elif sense == ">=":
            A[r, s_col] = -1.0
            s_col += 1
    b = b0.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    c = np.zeros(A.shape[1])
    c[:n_struct] = lp.c @ T
    return _Standard(A, b, c, T, offset, n_struct)


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    tab[:, col] = 0.0
    tab[row, col] = 1.0


def _run(tab: np.ndarray, basis: list[int], allowed: int, budget: int) -> int:
    """Bland-rule pivoting on ``tab`` (objective in the last row). Returns pivots used."""
    rows = tab.shape[0] - 1
    pivots = 0
    while True:
        reduced = tab[-1, :allowed]
        candidates = np.flatnonzero(reduced < -OPT_TOL)
        if candidates.size == 0:
            return pivots
        col = int(candidates[0])
        column = tab[:rows, col]
        ok = column > PIVOT_TOL
        if not ok.any():
            raise Unbounded("objective is unbounded below")
        ratios = np.full(rows, np.inf)
        ratios[ok] = tab[:rows, -1][ok] / column[ok]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
        pivots += 1
        if pivots > budget:
            raise IterationLimit(f"no convergence within {budget} pivots")


def _tableau(A: np.ndarray, b: np.ndarray, c: np.ndarray, basis: list[int]) -> np.ndarray:
    B = A[:, basis]
    body = np.linalg.solve(B, np.column_stack([A, b]))
    tab = np.zeros((A.shape[0] + 1, A.shape[1] + 1))
    tab[:-1] = body
    tab[-1, :-1] = c - c[basis] @ body[:, :-1]
    tab[-1, -1] = -c[basis] @ body[:, -1]
    return tab


def _basis_from_point(std: _Standard, y: np.ndarray) -> list[int] | None:
    """Complete the support of a vertex ``y`` to a nonsingular basis."""
    A = std.A
    rows, cols = A.shape
    support = [j for j in range(cols) if y[j] > FEAS_TOL]
    in_support = set(support)
    # slack columns (highest indices) first so degenerate completions stay sparse
    order = support + [j for j in range(cols - 1, -1, -1) if j not in in_support]
    q = np.zeros((rows, 0))
    chosen: list[int] = []
    for j in order:
        v = A[:, j] - q @ (q.T @ A[:, j])
        v = v - q @ (q.T @ v)
        norm = np.linalg.norm(v)
        if norm > 1e-9 * max(1.0, np.linalg.norm(A[:, j])):
            q = np.column_stack([q, v / norm])
            chosen.append(j)
        elif j in in_support:
            return None  # support is dependent: not a vertex
        if len(chosen) == rows:
            break
    if len(chosen) < rows:
        return None
    return chosen


def _point_to_standard(std: _Standard, lp: LinearProgram, x: np.ndarray) -> np.ndarray:
    # structural part: T y = x - offset, with y >= 0 (free vars split by sign)
    rel = x - std.offset
    y = np.zeros(std.A.shape[1])
    k = 0
    for var in range(lp.num_vars):
        lo, hi = lp.lower[var], lp.upper[var]
        if np.isfinite(lo):
            y[k] = rel[var]
            k += 1
        elif np.isfinite(hi):
            y[k] = -rel[var]
            k += 1
        else:
            y[k] = max(rel[var], 0.0)
            y[k + 1] = max(-rel[var], 0.0)
            k += 2
    struct = y[: std.n_struct]
    y[std.n_struct:] = 0.0
    resid = std.b - std.A[:, : std.n_struct] @ struct
    # slacks fill the remaining gap row by row
    for r in range(std.A.shape[0]):
        nz = np.flatnonzero(std.A[r, std.n_struct:])
        if nz.size:
            col = std.n_struct + nz[0]
            y[col] = resid[r] / std.A[r, col]
    return y


def solve(lp: LinearProgram, max_pivots: int = MAX_PIVOTS) -> LPSolution:
    std = _standardize(lp)
    A, b, c = std.A, std.b, std.c
    rows, cols = A.shape
    pivots = 0
    basis: list[int] | None = None

    if lp.start is not None:
        y0 = _point_to_standard(std, lp, np.asarray(lp.start, dtype=float))
        if np.all(y0 >= -FEAS_TOL) and np.abs(A @ y0 - b).max(initial=0.0) <= FEAS_TOL:
            basis = _basis_from_point(std, y0)
        if basis is not None:
            tab = _tableau(A, b, c, basis)
            if np.any(tab[:-1, -1] < -FEAS_TOL):
                basis = None

    phase1_skipped = basis is not None
    if basis is None:
        # phase 1: minimize the sum of one artificial per row
        tab = np.zeros((rows + 1, cols + rows + 1))
        tab[:rows, :cols] = A
        tab[:rows, cols:cols + rows] = np.eye(rows)
        tab[:rows, -1] = b
        tab[-1, :cols] = -A.sum(axis=0)
        tab[-1, -1] = -b.sum()
        basis = list(range(cols, cols + rows))
        pivots += _run(tab, basis, cols + rows, max_pivots)
        if -tab[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
            raise Infeasible(f"phase 1 ended with infeasibility {-tab[-1, -1]:.3g}")
        # drive artificials out of the basis; drop redundant rows
        keep = []
        for r in range(rows):
            if basis[r] >= cols:
                nz = np.flatnonzero(np.abs(tab[r, :cols]) > PIVOT_TOL)
                if nz.size == 0:
                    continue
                _pivot(tab, r, int(nz[0]))
                basis[r] = int(nz[0])
            keep.append(r)
        A, b = A[keep], b[keep]
        basis = [basis[r] for r in keep]
        tab = _tableau(A, b, c, basis)

    pivots += _run(tab, basis, cols, max_pivots - pivots)

    # recompute the basic solution from the original data for accuracy
    y = np.zeros(cols)
    y[basis] = np.linalg.solve(A[:, basis], b)
    y[np.abs(y) < 1e-13] = 0.0
    x = std.T @ y[: std.n_struct] + std.offset
    return LPSolution(
        x=x,
        objective=float(lp.c @ x),
        iterations=pivots,
        phase1_skipped=phase1_skipped,
        basis=list(basis),
    )
