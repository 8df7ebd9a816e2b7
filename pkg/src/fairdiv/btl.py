"""Bradley-Terry-Luce comparisons: simulation, maximum-likelihood estimation, and the
estimate-then-Round-Robin allocation pipeline."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import expit, log_expit

from .allocators import PickOrder, round_robin, rr_envy_bound
from .core import Allocation, ValuationMatrix, envy_report
from .rng import substream

CLAMP = 30.0
GRAD_TOL = 1e-10
MAX_ITER = 100_000
ARMIJO_C = 1e-4
MAX_GRAPH_ATTEMPTS = 3


class IdentifiabilityError(ValueError):
    """The observation graph is disconnected, so the scores are not identifiable."""

    def __init__(self, components: list[list[int]]):
        self.components = components
        shown = "; ".join(str(c) for c in components[:5])
        more = "" if len(components) <= 5 else f" (+{len(components) - 5} more)"
        super().__init__(f"observation graph has {len(components)} components: {shown}{more}")


def sigmoid(t):
    """Logistic function 1 / (1 + exp(-t)), stable for large |t|."""
    return expit(t)


@dataclass(frozen=True, eq=False)
class ObservationGraph:
    m: int
    edges: np.ndarray  # (E, 2) int array, rows (j, k) with j < k, lexicographic
    p: float

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.intp).reshape(-1, 2)
        if e.size:
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must be stored as (j, k) with j < k (no self-loops)")
            if e.min() < 0 or e.max() >= self.m:
                raise ValueError("edge endpoint out of range")
            order = np.lexsort((e[:, 1], e[:, 0]))
            e = e[order]
            if np.any(np.all(e[1:] == e[:-1], axis=1)):
                raise ValueError("duplicate edge")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be a probability")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @classmethod
    def complete(cls, m: int) -> "ObservationGraph":
        j, k = np.triu_indices(m, 1)
        return cls(m, np.column_stack([j, k]), 1.0)

    def components(self) -> list[list[int]]:
        if self.m == 0:
            return []
        e = self.edges
        adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.m, self.m))
        count, labels = connected_components(adj, directed=False)
        return [np.flatnonzero(labels == c).tolist() for c in range(count)]

    def is_connected(self) -> bool:
        return len(self.components()) == 1


@dataclass(frozen=True, eq=False)
class ComparisonData:
    """Win frequencies ``y[e]`` of ``edges[e][0]`` over ``edges[e][1]``.

    ``K`` is the number of repetitions per edge.  ``K=None`` marks the
    infinite-sample limit where ``y`` holds exact probabilities.
    """

    graph: ObservationGraph
    K: int | None
    y: np.ndarray
    wins: np.ndarray | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        if y.shape != (self.graph.n_edges,):
            raise ValueError("one frequency per edge required")
        if np.any((y < 0) | (y > 1)):
            raise ValueError("frequencies must lie in [0, 1]")
        if self.K is not None:
            if self.K < 1:
                raise ValueError("K must be at least 1")
            if self.wins is None:
                raise ValueError("finite-K data needs win counts")
            wins = np.array(self.wins, dtype=np.int64).reshape(-1)
            if np.any(wins != np.round(y * self.K)) or np.any((wins < 0) | (wins > self.K)):
                raise ValueError("frequencies must equal wins / K")
            wins.setflags(write=False)
            object.__setattr__(self, "wins", wins)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_wins(cls, graph: ObservationGraph, wins, K: int) -> "ComparisonData":
        wins = np.asarray(wins, dtype=np.int64)
        return cls(graph, K, wins / K, wins)

    @classmethod
    def exact(cls, graph: ObservationGraph, theta) -> "ComparisonData":
        """Infinite-repetition limit: frequencies equal the model probabilities."""
        theta = np.asarray(theta, dtype=float)
        e = graph.edges
        return cls(graph, None, sigmoid(theta[e[:, 0]] - theta[e[:, 1]]) if len(e) else np.zeros(0))


@dataclass(frozen=True, eq=False)
class PreferenceVector:
    theta: np.ndarray
    b: float | None = None

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        if th.size and abs(th.sum()) > 1e-9 * max(1.0, np.abs(th).max()) * max(1, th.size):
            raise ValueError(f"theta must sum to zero, sums to {th.sum():.3g}")
        if self.b is not None and th.size and np.abs(th).max() > self.b:
            raise ValueError("theta exceeds the declared bound b")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def m(self) -> int:
        return self.theta.size


def center_values(values: ValuationMatrix) -> list[PreferenceVector]:
    """Subtract each agent's mean value so every row sums to zero."""
    v = values.values
    if v.shape[1] == 0:
        return [PreferenceVector(np.zeros(0)) for _ in range(v.shape[0])]
    centered = v - v.mean(axis=1, keepdims=True)
    return [PreferenceVector(row) for row in centered]


def sample_er_graph(m: int, p: float, rng: np.random.Generator) -> ObservationGraph:
    """Each pair j < k is kept independently with probability p (one uniform per pair, row-major)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    j, k = np.triu_indices(m, 1)
    keep = rng.random(j.size) < p
    return ObservationGraph(m, np.column_stack([j[keep], k[keep]]), p)


def simulate_comparisons(theta: PreferenceVector, graph: ObservationGraph, K: int,
                         rng: np.random.Generator) -> ComparisonData:
    """K Bernoulli(psi(theta_j - theta_k)) outcomes per edge, aggregated to win counts."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if theta.m != graph.m:
        raise ValueError("theta and graph disagree on m")
    e = graph.edges
    prob = sigmoid(theta.theta[e[:, 0]] - theta.theta[e[:, 1]]) if len(e) else np.zeros(0)
    wins = rng.binomial(K, prob)
    return ComparisonData.from_wins(graph, wins, K)


def _project(z: np.ndarray, bound: float) -> np.ndarray:
    """Euclidean projection onto {sum(theta) = 0} intersected with the box [-bound, bound]^m."""
    x = z - z.mean()
    if np.abs(x).max(initial=0.0) <= bound:
        return x
    lo, hi = z.min() - bound, z.max() + bound
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.clip(z - tau, -bound, bound).sum() > 0:
            lo = tau
        else:
            hi = tau
        if hi - lo <= 1e-15 * max(1.0, abs(tau)):
            break
    return np.clip(z - 0.5 * (lo + hi), -bound, bound)


def _objective(theta, e, y, scale):
    d = theta[e[:, 0]] - theta[e[:, 1]]
    return -(y * log_expit(d) + (1.0 - y) * log_expit(-d)).sum() / scale


def _gradient(theta, e, y, scale):
    d = theta[e[:, 0]] - theta[e[:, 1]]
    g_edge = -(y - expit(d)) / scale
    g = np.zeros_like(theta)
    np.add.at(g, e[:, 0], g_edge)
    np.add.at(g, e[:, 1], -g_edge)
    return g


def _newton_direction(theta, g, e, scale, lip):
    """Newton direction on the coordinates not pinned at the clamp.

    A coordinate is pinned when it sits on the box and the gradient pushes it
    outward.  The free block solves the KKT system of
    min g.d - d'Hd/2 subject to sum(d) = 0, where H is the weighted graph
    Laplacian plus a small ridge, so the result is always a descent direction.
    """
    m = theta.size
    pinned = ((theta >= CLAMP - 1e-9) & (g < 0)) | ((theta <= -CLAMP + 1e-9) & (g > 0))
    free = np.flatnonzero(~pinned)
    if free.size < 2:
        return g
    d = theta[e[:, 0]] - theta[e[:, 1]]
    w = expit(d) * expit(-d) / scale
    H = np.zeros((m, m))
    np.add.at(H, (e[:, 0], e[:, 0]), w)
    np.add.at(H, (e[:, 1], e[:, 1]), w)
    np.add.at(H, (e[:, 0], e[:, 1]), -w)
    np.add.at(H, (e[:, 1], e[:, 0]), -w)
    k = free.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = H[np.ix_(free, free)] + 1e-12 * lip * np.eye(k)
    kkt[:k, k] = kkt[k, :k] = 1.0
    try:
        sol = np.linalg.solve(kkt, np.concatenate([g[free], [0.0]]))
    except np.linalg.LinAlgError:
        return g
    out = np.zeros(m)
    out[free] = sol[:k]
    if not np.all(np.isfinite(out)) or float(g @ out) <= 0.0:
        return g
    return out

@dataclass
class MLETrace:
    objective: list[float] = field(default_factory=list)
    grad_norm: float = math.nan
    iterations: int = 0


def mle_estimate(data: ComparisonData, mp_scale: float | None = None,
                 trace: MLETrace | None = None, tol: float = GRAD_TOL) -> PreferenceVector:
    """Maximum-likelihood scores under the zero-sum constraint.

    Projected descent from zero.  Each iteration tries a regularized Newton
    direction (the Hessian is a weighted graph Laplacian) with backtracking,
    and falls back to a plain projected gradient step of length 1/lip when
    that direction makes no progress.  Newton scaling matters for nearly
    separable data, where the curvature across the separating cut is
    exponentially small and gradient steps alone crawl.  Scores are kept in
    [-30, 30] so a perfectly separated item still converges.
    """
    graph = data.graph
    m = graph.m
    if m < 2:
        raise ValueError("need at least two items to compare")
    comps = graph.components()
    if len(comps) > 1:
        raise IdentifiabilityError(comps)
    if mp_scale is None:
        mp_scale = m * graph.p if graph.p > 0 else 1.0
    if mp_scale <= 0:
        raise ValueError("mp_scale must be positive")
    e, y = graph.edges, data.y

    # Hessian <= (1/4s) * graph Laplacian <= (max degree / 2s) * I, so a gradient
    # step of 1/lip always decreases f in exact arithmetic.
    degree = np.bincount(e.ravel(), minlength=m)
    lip = degree.max() / (2.0 * mp_scale)
    theta = np.zeros(m)
    f = _objective(theta, e, y, mp_scale)
    if trace is not None:
        trace.objective.append(f)
    g = _gradient(theta, e, y, mp_scale)
    for it in range(1, MAX_ITER + 1):
        pg = theta - _project(theta - g, CLAMP)
        if np.abs(pg).max() <= tol:
            break
        direction = _newton_direction(theta, g, e, mp_scale, lip)
        step = 1.0
        while step >= 1e-12:
            cand = _project(theta - step * direction, CLAMP)
            move = cand - theta
            slope = float(g @ move)
            if slope >= 0.0:
                step *= 0.5
                continue
            f_cand = _objective(cand, e, y, mp_scale)
            g_cand = _gradient(cand, e, y, mp_scale)
            # a predicted decrease below rounding level cannot be confirmed by f
            pred = ARMIJO_C * slope
            if -pred > 1e-13 * max(1.0, abs(f)) and f_cand <= f + pred:
                break
            # by convexity, a non-positive slope at the far end means f fell along the whole segment
            if float(g_cand @ move) <= 0.0:
                break
            step *= 0.5
        else:
            cand = _project(theta - g / lip, CLAMP)
            f_cand = _objective(cand, e, y, mp_scale)
            g_cand = _gradient(cand, e, y, mp_scale)
        theta, f, g = cand, f_cand, g_cand
        if trace is not None:
            trace.objective.append(f)
    else:
        raise RuntimeError(f"MLE did not converge in {MAX_ITER} iterations")
    if trace is not None:
        trace.iterations = it
        g = _gradient(theta, e, y, mp_scale)
        trace.grad_norm = float(np.abs(theta - _project(theta - g, CLAMP)).max())
    return PreferenceVector(theta - theta.mean())


@dataclass(frozen=True, eq=False)
class BTLRun:
    allocation: Allocation
    estimates: ValuationMatrix
    centered_truth: ValuationMatrix
    errors: np.ndarray  # per-agent inf-norm estimation error
    true_max_envy: float
    bound_value: float
    p_threshold_ok: bool
    mean_shifts: np.ndarray  # each agent's mean true value, reported only
    graph_attempts: tuple[int, ...]


def btl_fair_divide(truth: ValuationMatrix, p: float, K: int | None, rng: np.random.Generator,
                    order: PickOrder | Sequence[int] | None = None) -> BTLRun:
    """Estimate each agent's centered values from simulated comparisons, then run Round-Robin.

    ``K=None`` uses exact model probabilities in place of sampled frequencies.
    Agent i draws from ``substream(rng, "btl", i, attempt)``, so agents are
    independent of each other and of evaluation order.
    """
    n, m = truth.shape
    if m < 2:
        raise ValueError("need at least two items to compare")
    if np.any(truth.values < 0) or np.any(truth.values > 1):
        raise ValueError("truth must lie in [0, 1]")
    thetas = center_values(truth)
    estimates = np.empty((n, m))
    attempts = []
    for i, th in enumerate(thetas):
        for attempt in range(MAX_GRAPH_ATTEMPTS):
            sub = substream(rng, "btl", i, attempt)
            graph = ObservationGraph.complete(m) if p >= 1.0 else sample_er_graph(m, p, sub)
            if graph.is_connected():
                break
        else:
            raise IdentifiabilityError(graph.components())
        attempts.append(attempt + 1)
        data = ComparisonData.exact(graph, th.theta) if K is None else simulate_comparisons(th, graph, K, sub)
        estimates[i] = mle_estimate(data).theta

    est = ValuationMatrix(estimates)
    centered = ValuationMatrix(np.array([th.theta for th in thetas]))
    alloc = round_robin(est, order)
    errors = np.abs(estimates - centered.values).max(axis=1)
    return BTLRun(
        allocation=alloc,
        estimates=est,
        centered_truth=centered,
        errors=errors,
        true_max_envy=envy_report(truth, alloc).max_envy,
        bound_value=rr_envy_bound(n, m, float(errors.max()), 1.0),
        p_threshold_ok=p >= 4.0 * math.log(m) / m,
        mean_shifts=truth.values.mean(axis=1),
        graph_attempts=tuple(attempts),
    )


CSV_COLUMNS = ("agent", "item_j", "item_k", "wins_j", "K")


def comparisons_to_csv(per_agent: Sequence[ComparisonData]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i, data in enumerate(per_agent):
        if data.K is None:
            raise ValueError("exact-limit data has no win counts to serialize")
        for (j, k), w in zip(data.graph.edges, data.wins):
            writer.writerow([i, int(j), int(k), int(w), data.K])
    return buf.getvalue()


def comparisons_from_csv(text: str, m: int, p: float = 1.0, n: int | None = None) -> list[ComparisonData]:
    """Inverse of :func:`comparisons_to_csv`; ``m`` and ``p`` are not stored in the file."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"expected header {','.join(CSV_COLUMNS)}")
    rows: dict[int, list[tuple[int, int, int, int]]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ValueError(f"line {line_no}: expected 5 fields")
        agent, j, k, w, K = (int(x) for x in row)
        rows.setdefault(agent, []).append((j, k, w, K))
    count = n if n is not None else (max(rows) + 1 if rows else 0)
    out = []
    for i in range(count):
        recs = rows.get(i, [])
        Ks = {r[3] for r in recs}
        if len(Ks) > 1:
            raise ValueError(f"agent {i}: mixed K values {sorted(Ks)}")
        K = Ks.pop() if Ks else 1
        graph = ObservationGraph(m, np.array([(r[0], r[1]) for r in recs], dtype=np.intp).reshape(-1, 2), p)
        # the graph sorts its edges; reorder wins to match
        lookup = {(r[0], r[1]): r[2] for r in recs}
        wins = [lookup[(int(a), int(b))] for a, b in graph.edges]
        out.append(ComparisonData.from_wins(graph, wins, K))
    return out
