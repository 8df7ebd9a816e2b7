"""Online vector balancing under noisy arrivals, the k-color tree, and the online envy allocator.

Protocol: a noisy vector arrives, a sign (or color) is committed, then the
true vector is revealed and the running sums are updated.  The two phases
are enforced by the state objects, so a caller cannot reveal twice or skip
a reveal.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .core import Allocation, ValuationMatrix, envy_report

NORM_TOL = 1e-12
DEFAULT_C = 0.1
LOG_COLUMNS = ("t", "node_id", "sign", "dot_product", "c_t", "fail_flag", "w_inf_norm")


class ProtocolError(RuntimeError):
    """Decide/reveal calls made out of order."""


class NoiseBoundError(ValueError):
    """A vector violates the declared norm or noise bound."""


def threshold(n: int, m: int, eps: float, delta: float, C: float, t: int) -> float:
    """c_t = (9n / 4C) log(5nm / delta) + eps * n * t."""
    return 9.0 * n / (4.0 * C) * math.log(5.0 * n * m / delta) + eps * n * t


def balance_bound(n: int, m: int, eps: float, delta: float, C: float, t: int) -> float:
    """High-probability cap on ||w_t||_inf, i.e. c_t / sqrt(n)."""
    return threshold(n, m, eps, delta, C, t) / math.sqrt(n)


def multicolor_bound(n: int, m: int, k: int, eps: float, delta: float, C: float) -> float:
    return 27.0 * math.sqrt(n) / (2.0 * C) * math.log(5.0 * n * m * k / delta) + 6.0 * eps * m * math.sqrt(n)


def envy_bound(n: int, m: int, eps: float, delta: float, C: float) -> float:
    return 27.0 * math.sqrt(n) / C * math.log(5.0 * n * m / delta) + 6.0 * m * math.sqrt(n) * eps


def _as_vector(vec, n: int, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{what} must have length {n}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} must be finite")
    return v


@dataclass(frozen=True)
class StepRecord:
    t: int
    node_id: int
    sign: float
    dot_product: float
    c_t: float
    fail_flag: bool
    w_inf_norm: float  # before the update


@dataclass
class BalancerState:
    """One copy of the sign-sampling walk for vectors in R^n.

    ``w`` is the running signed sum of the revealed true vectors; it is kept
    with Kahan compensation so it agrees with an exact recomputation from the
    log to well below 1e-9.
    """

    n: int
    m: int
    p: float = 0.5
    eps: float = 0.0
    delta: float = 0.1
    C: float = DEFAULT_C
    node_id: int = 0
    keep_log: bool = True
    t: int = field(default=1, init=False)
    w: np.ndarray = field(init=False, repr=False)
    _comp: np.ndarray = field(init=False, repr=False)
    _pending: tuple[float, np.ndarray] | None = field(default=None, init=False, repr=False)
    log: list[StepRecord] = field(default_factory=list, init=False, repr=False)
    revealed: list[tuple[float, np.ndarray]] = field(default_factory=list, init=False, repr=False)
    fail_count: int = field(default=0, init=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0.5 - 1e-12 <= self.p <= 2.0 / 3.0 + 1e-12:
            raise ValueError(f"p must lie in [1/2, 2/3], got {self.p}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 1/2]")
        if not 0 < self.C < 0.125:
            raise ValueError("C must lie in (0, 1/8)")
        self.w = np.zeros(self.n)
        self._comp = np.zeros(self.n)

    def c_t(self, t: int | None = None) -> float:
        return threshold(self.n, self.m, self.eps, self.delta, self.C, self.t if t is None else t)

    @property
    def pending(self) -> bool:
        return self._pending is not None

    def fail_event(self, noisy_vec) -> bool:
        v = _as_vector(noisy_vec, self.n, "noisy vector")
        c = self.c_t()
        dot = float(self.w @ v)
        return bool(
            dot > 4.0 * (1.0 - self.p) * c
            or dot < -4.0 * self.p * c
            or np.abs(self.w).max() > c / math.sqrt(self.n)
        )

    def prob_plus(self, noisy_vec) -> float:
        """Probability of the sign ``p`` for this arrival."""
        v = _as_vector(noisy_vec, self.n, "noisy vector")
        x = (1.0 - self.p) - float(self.w @ v) / (4.0 * self.c_t())
        return min(1.0, max(0.0, x))

    def step(self, noisy_vec, rng: np.random.Generator) -> float:
        """Commit a sign in {p, p - 1} for the arriving noisy vector."""
        if self._pending is not None:
            raise ProtocolError("step called twice without a reveal")
        v = _as_vector(noisy_vec, self.n, "noisy vector")
        if np.abs(v).max(initial=0.0) > 1.0 + self.eps + NORM_TOL:
            raise NoiseBoundError("noisy vector exceeds 1 + eps in the inf-norm")
        c = self.c_t()
        dot = float(self.w @ v)
        fail = self.fail_event(v)
        prob = min(1.0, max(0.0, (1.0 - self.p) - dot / (4.0 * c)))
        sign = self.p if rng.random() < prob else self.p - 1.0
        self.fail_count += int(fail)
        if self.keep_log:
            self.log.append(StepRecord(self.t, self.node_id, sign, dot, c, fail, float(np.abs(self.w).max())))
        self._pending = (sign, v)
        return sign

    def reveal(self, true_vec) -> None:
        """Apply the committed sign to the true vector and advance t."""
        if self._pending is None:
            raise ProtocolError("reveal called with no pending sign")
        sign, noisy = self._pending
        v = _as_vector(true_vec, self.n, "true vector")
        if np.abs(v).max(initial=0.0) > 1.0 + NORM_TOL:
            raise NoiseBoundError("true vector exceeds 1 in the inf-norm")
        if np.abs(v - noisy).max(initial=0.0) > self.eps + NORM_TOL:
            raise NoiseBoundError("noisy vector differs from the true one by more than eps")
        # Kahan-compensated w += sign * v
        y = sign * v - self._comp
        total = self.w + y
        self._comp = (total - self.w) - y
        self.w = total
        if self.keep_log:
            self.revealed.append((sign, v))
        self.t += 1
        self._pending = None

    def recompute_w(self) -> np.ndarray:
        """Exactly rounded sum of sign * v over the revealed history."""
        if not self.keep_log:
            raise RuntimeError("history not kept")
        return np.array([math.fsum(s * v[i] for s, v in self.revealed) for i in range(self.n)])


def write_step_log(records: Iterable[StepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in records:
        writer.writerow([r.t, r.node_id, repr(r.sign), repr(r.dot_product), repr(r.c_t), int(r.fail_flag), repr(r.w_inf_norm)])
    return buf.getvalue()


@dataclass
class TreeNode:
    node_id: int
    leaves: tuple[int, int]  # half-open range of leaf labels below this node
    state: BalancerState | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    sums: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.state is None

    @property
    def label(self) -> int:
        return self.leaves[0]

    @property
    def width(self) -> int:
        return self.leaves[1] - self.leaves[0]


@dataclass
class ColorTree:
    """Complete full binary tree with k leaves and a balancer at each internal node."""

    k: int
    n: int
    root: TreeNode
    internal: list[TreeNode]
    color_sums: np.ndarray = field(repr=False)
    color_counts: np.ndarray = field(repr=False)
    _path: list[TreeNode] | None = field(default=None, repr=False)
    _noisy: np.ndarray | None = field(default=None, repr=False)
    _color: int | None = field(default=None, repr=False)

    def leaf_fraction(self, node: TreeNode) -> float:
        return node.width / self.k

    @property
    def pending(self) -> bool:
        return self._path is not None

    def fail_count(self) -> int:
        return sum(u.state.fail_count for u in self.internal)

    def discrepancy(self) -> float:
        """max over color pairs of ||S_a - S_b||_inf."""
        if self.color_sums.size == 0:
            return 0.0
        return float((self.color_sums.max(axis=0) - self.color_sums.min(axis=0)).max())

    def step_log(self) -> list[StepRecord]:
        records = [r for u in self.internal for r in u.state.log]
        return sorted(records, key=lambda r: (r.t, r.node_id))


def build_color_tree(k: int, n: int, m: int, eps: float, delta: float, C: float = DEFAULT_C,
                     keep_log: bool = True) -> ColorTree:
    """Split leaves as ceil/floor halves (left gets the larger half); each node gets budget delta/k."""
    if k < 2:
        raise ValueError("a color tree needs at least two colors")
    internal: list[TreeNode] = []
    counter = [0]

    def grow(lo: int, hi: int) -> TreeNode:
        width = hi - lo
        if width == 1:
            return TreeNode(node_id=-1, leaves=(lo, hi))
        n_left = -(-width // 2)
        node = TreeNode(node_id=counter[0], leaves=(lo, hi))
        counter[0] += 1
        internal.append(node)
        node.state = BalancerState(n=n, m=m, p=n_left / width, eps=eps, delta=delta / k, C=C,
                                   node_id=node.node_id, keep_log=keep_log)
        node.left = grow(lo, lo + n_left)
        node.right = grow(lo + n_left, hi)
        node.sums = {"left": np.zeros(n), "right": np.zeros(n)}
        return node

    root = grow(0, k)
    return ColorTree(k=k, n=n, root=root, internal=internal,
                     color_sums=np.zeros((k, n)), color_counts=np.zeros(k, dtype=np.int64))


def assign_color(tree: ColorTree, noisy_vec, rng: np.random.Generator) -> int:
    """Walk from the root to a leaf; sign p goes right, sign p - 1 goes left."""
    if tree.pending:
        raise ProtocolError("assign_color called twice without a reveal")
    v = _as_vector(noisy_vec, tree.n, "noisy vector")
    node = tree.root
    path: list[TreeNode] = []
    try:
        while not node.is_leaf:
            sign = node.state.step(v, rng)
            path.append(node)
            node = node.right if sign > 0 else node.left
    except Exception:
        # leave no node half-committed
        for u in path:
            u.state._pending = None
        raise
    tree._path, tree._noisy, tree._color = path, v, node.label
    return node.label


def tree_reveal(tree: ColorTree, true_vec) -> None:
    if not tree.pending:
        raise ProtocolError("tree_reveal called with no pending path")
    v = _as_vector(true_vec, tree.n, "true vector")
    # validate once so a bad vector leaves every node untouched
    state = tree._path[0].state
    if np.abs(v).max(initial=0.0) > 1.0 + NORM_TOL:
        raise NoiseBoundError("true vector exceeds 1 in the inf-norm")
    if np.abs(v - tree._noisy).max(initial=0.0) > state.eps + NORM_TOL:
        raise NoiseBoundError("noisy vector differs from the true one by more than eps")
    for u in tree._path:
        went_right = u.state._pending[0] > 0
        u.state.reveal(v)
        u.sums["right" if went_right else "left"] += v
    tree.color_sums[tree._color] += v
    tree.color_counts[tree._color] += 1
    tree._path = tree._noisy = tree._color = None


def tree_identity_error(tree: ColorTree) -> float:
    """Largest gap between each node's w and p * sum(right) - (1 - p) * sum(left), from the logs."""
    worst = 0.0
    for u in tree.internal:
        st = u.state
        right = [v for s, v in st.revealed if s > 0]
        left = [v for s, v in st.revealed if s <= 0]
        for i in range(tree.n):
            expected = st.p * math.fsum(v[i] for v in right) - (1.0 - st.p) * math.fsum(v[i] for v in left)
            worst = max(worst, abs(st.w[i] - expected))
    return worst


@dataclass(frozen=True, eq=False)
class OnlineEnvyRun:
    allocation: Allocation
    truth: ValuationMatrix
    max_envy: float
    discrepancy_scaled: float
    discrepancy: float  # in value units, i.e. sqrt(n) * discrepancy_scaled
    bound_scaled: float
    envy_bound: float
    fail_events: int
    tree: ColorTree | None


def online_envy_allocate(
    noisy_stream: Iterable,
    reveal: Callable[[int], np.ndarray],
    n: int,
    m: int,
    eps: float,
    delta: float,
    C: float,
    rng: np.random.Generator,
    keep_log: bool = False,
) -> OnlineEnvyRun:
    """Give each arriving item to an agent via a k = n color tree.

    Item values are divided by sqrt(n) before reaching the balancers, so a
    value-noise bound eps becomes eps / sqrt(n) for the vectors.  ``reveal(j)``
    must return the true value column of item j after it has been placed.
    """
    if n < 1:
        raise ValueError("n must be positive")
    scale = 1.0 / math.sqrt(n)
    owner: list[int] = []
    truth_cols: list[np.ndarray] = []
    if n == 1:
        tree = None
        for j, noisy in enumerate(noisy_stream):
            _as_vector(noisy, 1, "noisy vector")
            truth_cols.append(_as_vector(reveal(j), 1, "true vector"))
            owner.append(0)
    else:
        tree = build_color_tree(n, n, max(m, 1), eps * scale, delta, C, keep_log=keep_log)
        for j, noisy in enumerate(noisy_stream):
            owner.append(assign_color(tree, scale * _as_vector(noisy, n, "noisy vector"), rng))
            col = _as_vector(reveal(j), n, "true vector")
            tree_reveal(tree, scale * col)
            truth_cols.append(col)
    if len(owner) != m:
        raise ProtocolError(f"stream delivered {len(owner)} items, expected {m}")
    truth = ValuationMatrix(np.array(truth_cols).T.reshape(n, m))
    alloc = Allocation.from_owner(owner, n)
    envy = envy_report(truth, alloc).max_envy
    # same products as envy_report, so envy <= disc holds without rounding slack
    bundle_values = truth.values @ alloc.indicator().T  # [i, a] = coordinate i of color a's sum
    disc = float((bundle_values.max(axis=1) - bundle_values.min(axis=1)).max()) if n > 1 else 0.0
    return OnlineEnvyRun(
        allocation=alloc,
        truth=truth,
        max_envy=envy,
        discrepancy_scaled=disc * scale,
        discrepancy=disc,
        bound_scaled=multicolor_bound(n, max(m, 1), n, eps * scale, delta, C),
        envy_bound=envy_bound(n, max(m, 1), eps, delta, C),
        fail_events=0 if tree is None else tree.fail_count(),
        tree=tree,
    )
