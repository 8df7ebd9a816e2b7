"""The acceptance suite: each criterion as a function returning a pass/fail result.

Shared by ``tests/test_acceptance.py`` and ``fairdiv verify-all``.  Details
never include wall-clock times so that reports stay deterministic; elapsed
time is returned separately.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from . import discrepancy as disc
from .allocators import adversarial_instance, round_robin, rr_envy_bound, welfare_max
from .btl import (
    ComparisonData,
    ObservationGraph,
    btl_fair_divide,
    mle_estimate,
)
from .core import ENVY_TOL, Allocation, ValuationMatrix, envy_report
from .lp_round import build_minmax_envy_lp, lp_pipeline, solve_lp
from .noise import AdditiveIID, BoundedAdversarial, Distribution, apply_noise, mhr_failure_rate, mhr_pipeline
from .rng import stream
from .statcheck import check_association, check_conditional


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    time_limit: float | None = None


def _sigma(q: float, runs: int) -> float:
    return math.sqrt(q * (1.0 - q) / runs)


def criterion_1(seed: int) -> tuple[bool, str]:
    """Round-Robin upper bound on 1000 random noisy instances."""
    violations = 0
    worst = -math.inf
    for t in range(1000):
        rng = stream(seed, 1, t)
        n, m = int(rng.integers(1, 9)), int(rng.integers(0, 61))
        eps = float(rng.uniform(0.0, 0.5))
        shifts = tuple(rng.uniform(0.0, 1.0, n))
        scheme = ("per-agent-shift", "worst-against-RR")[t % 2]
        truth = ValuationMatrix(rng.random((n, m)), 1.0, (0.0, 1.0))
        inst = apply_noise(truth, BoundedAdversarial(eps, scheme, shifts), rng)
        env = envy_report(truth, round_robin(inst.estimates)).max_envy
        bound = rr_envy_bound(n, m, eps, 1.0)
        worst = max(worst, env - bound)
        violations += env > bound
    return violations == 0, f"violations=0/1000 worst_margin={worst:.6g}" if violations == 0 else f"violations={violations}/1000"


def criterion_2(seed: int) -> tuple[bool, str]:
    """Adversarial truth forces envy >= 2 eps m / n against Round-Robin."""
    cases = bad = 0
    for eps in (0.05, 0.25):
        for n in range(2, 6):
            for m in range(n, 41):
                est = ValuationMatrix(np.full((n, m), 0.5))
                alloc = round_robin(est)
                truth = adversarial_instance(n, m, eps, alloc)
                cases += 1
                bad += envy_report(truth, alloc).max_envy < 2 * eps * m / n - 1e-9
    return bad == 0, f"cases={cases} failures={bad}"


def criterion_3(seed: int) -> tuple[bool, str]:
    """Welfare maximization on noisy stochastic values is envy-free whp."""
    n, m, trials = 5, 400, 500
    D, Dp = Distribution("uniform", (0.0, 1.0)), Distribution("uniform", (-0.2, 0.2))
    ef = 0
    for t in range(trials):
        rng = stream(seed, 3, t)
        truth = ValuationMatrix(D.sample(rng, (n, m)))
        inst = apply_noise(truth, AdditiveIID(Dp), rng)
        ef += envy_report(truth, welfare_max(inst.estimates, rng)).max_envy <= ENVY_TOL
    frac = ef / trials
    return frac >= 0.95, f"envy_free={ef}/{trials} ({frac:.3f} >= 0.95)"


def criterion_4(seed: int) -> tuple[bool, str]:
    cases, bad = check_association(stream(seed, 4), 200)
    return bad == 0, f"cases={cases} failures={bad}"


def criterion_5(seed: int) -> tuple[bool, str]:
    cases, bad, skipped = check_conditional(stream(seed, 5), 100)
    return bad == 0, f"cases={cases} failures={bad} skipped_zero_probability={skipped}"


def _highs_optimum(lp) -> float:
    ub = [i for i, s in enumerate(lp.senses) if s == "<="]
    eq = [i for i, s in enumerate(lp.senses) if s == "="]
    res = linprog(lp.c, A_ub=lp.A[ub], b_ub=lp.b[ub], A_eq=lp.A[eq], b_eq=lp.b[eq],
                  bounds=list(zip(lp.lower, [None if math.isinf(u) else u for u in lp.upper])), method="highs")
    if res.status != 0:
        raise RuntimeError(f"reference solver failed: {res.message}")
    return float(res.fun)


def _best_integral_envy(est: ValuationMatrix) -> float:
    n, m = est.shape
    best = math.inf
    for owner in itertools.product(range(n), repeat=m):
        best = min(best, envy_report(est, Allocation.from_owner(owner, n)).max_envy)
    return best


def criterion_6(seed: int) -> tuple[bool, str]:
    """LP + rounding at n=3, m=150, plus solver agreement on small instances."""
    n, m, trials, eps = 3, 150, 200, 0.01
    strong = ef = 0
    for t in range(trials):
        rng = stream(seed, 6, t)
        truth = ValuationMatrix(rng.random((n, m)), 1.0, (0.0, 1.0))
        inst = apply_noise(truth, BoundedAdversarial(eps), rng)
        run = lp_pipeline(inst, rng)
        strong += run.alpha <= -0.01 * m
        ef += run.true_max_envy <= ENVY_TOL
    worst_gap = 0.0
    integral_ok = True
    for t in range(50):
        rng = stream(seed, 6, "small", t)
        nn, mm = int(rng.integers(2, 4)), int(rng.integers(1, 8))
        est = ValuationMatrix(rng.random((nn, mm)))
        lp = build_minmax_envy_lp(est)
        alpha = solve_lp(lp).alpha
        worst_gap = max(worst_gap, abs(alpha - _highs_optimum(lp)))
        integral_ok &= alpha <= _best_integral_envy(est) + 1e-9
    ok = strong >= 0.95 * trials and ef >= 0.90 * trials and worst_gap <= 1e-6 and integral_ok
    return ok, (f"alpha<=-0.01m: {strong}/{trials} envy_free: {ef}/{trials} "
                f"max|alpha-reference|={worst_gap:.3g} alpha<=best_integral: {integral_ok}")


def criterion_7(seed: int) -> tuple[bool, str]:
    delta, C, m, runs = 0.1, 0.1, 500, 200
    parts, ok = [], True
    for n in (2, 4):
        eps = math.log(5 * n * m / delta) / m
        within = failed = 0
        for r in range(runs):
            rng = stream(seed, 7, n, r)
            true = rng.uniform(-1.0, 1.0, (m, n))
            noisy = np.clip(true + rng.uniform(-eps, eps, (m, n)), true - eps, true + eps)
            st = disc.BalancerState(n=n, m=m, p=0.5, eps=eps, delta=delta, C=C, keep_log=False)
            good = True
            for t in range(m):
                good &= float(np.abs(st.w).max()) <= disc.balance_bound(n, m, eps, delta, C, st.t)
                st.step(noisy[t], rng)
                st.reveal(true[t])
            within += good
            failed += st.fail_count > 0
        fail_cap = delta + 3 * _sigma(delta, runs)
        ok &= within >= 180 and failed / runs <= fail_cap
        parts.append(f"n={n}: within={within}/{runs} fail_runs={failed}")
    return ok, "; ".join(parts)


def criterion_8(seed: int) -> tuple[bool, str]:
    n, m, delta, C, runs = 4, 400, 0.1, 0.1, 200
    eps = math.log(5 * n * m / delta) / m
    exact = within = 0
    for r in range(runs):
        rng = stream(seed, 8, r)
        truth = rng.uniform(-1.0, 1.0, (n, m))
        noisy = np.clip(truth + rng.uniform(-eps, eps, (n, m)), truth - eps, truth + eps)
        run = disc.online_envy_allocate(iter(noisy.T), lambda j: truth[:, j], n, m, eps, delta, C, rng)
        exact += run.max_envy <= run.discrepancy
        within += run.discrepancy_scaled <= run.bound_scaled
    floor = (1 - delta) - 3 * _sigma(delta, runs)
    ok = exact == runs and within >= floor * runs
    return ok, f"envy<=discrepancy: {exact}/{runs} discrepancy<=bound: {within}/{runs}"


def _random_connected_graph(rng: np.random.Generator, m: int) -> ObservationGraph:
    edges = {(int(rng.integers(j)), j) for j in range(1, m)}  # random spanning tree
    j, k = np.triu_indices(m, 1)
    extra = rng.random(j.size) < 0.3
    edges.update(zip(j[extra].tolist(), k[extra].tolist()))
    return ObservationGraph(m, np.array(sorted(edges)).reshape(-1, 2), 1.0)


def btl_error_medians(seed: int, K: int, trials: int = 50, m: int = 60, p: float = 0.5) -> float:
    errs = []
    for t in range(trials):
        rng = stream(seed, 9, "scaling", t)
        truth = ValuationMatrix(rng.random((1, m)))
        errs.append(float(btl_fair_divide(truth, p, K, rng).errors.max()))
    return float(np.median(errs))


def criterion_9(seed: int) -> tuple[bool, str]:
    worst = 0.0
    for t in range(30):
        rng = stream(seed, 9, "exact", t)
        m = int(rng.integers(2, 11))
        theta = rng.uniform(-1.0, 1.0, m)
        theta -= theta.mean()
        graph = _random_connected_graph(rng, m)
        est = mle_estimate(ComparisonData.exact(graph, theta)).theta
        worst = max(worst, float(np.abs(est - theta).max()))
    e16, e64 = btl_error_medians(seed, 16), btl_error_medians(seed, 64)
    ratio = e16 / e64
    same = 0
    for t in range(10):
        rng = stream(seed, 9, "shift", t)
        base = rng.uniform(0.0, 0.5, (3, 20))
        a = btl_fair_divide(ValuationMatrix(base), 0.5, 50, stream(seed, 9, "shift-run", t))
        b = btl_fair_divide(ValuationMatrix(base + 0.5), 0.5, 50, stream(seed, 9, "shift-run", t))
        same += a.allocation == b.allocation
    ok = worst <= 1e-6 and 1.7 <= ratio <= 2.6 and same == 10
    return ok, f"exact_max_err={worst:.3g} median_err K=16:{e16:.4f} K=64:{e64:.4f} ratio={ratio:.3f} shift_identical={same}/10"


def criterion_10(seed: int) -> tuple[bool, str]:
    n, m, batches = 4, 40, 500
    dist = Distribution("exp", (n / (m * math.log(n * m)),))
    good = 0
    for b in range(batches):
        rng = stream(seed, 10, b)
        truth = ValuationMatrix(rng.random((n, m)), 1.0, (0.0, 1.0))
        good += mhr_pipeline(truth, dist, rng).max_envy <= 10.0
    q = mhr_failure_rate(n, m)
    floor = 1 - q - 3 * _sigma(q, batches)
    return good >= floor * batches, f"envy<=10: {good}/{batches} (floor {floor:.4f})"


DETERMINISM_CONFIGS = {
    "rr": dict(n=3, m=12, trials=3, eps=0.1, noise="per-agent-shift"),
    "rr-lowerbound": dict(n=3, m=10, trials=2, eps=0.25),
    "welfare": dict(n=3, m=30, trials=3),
    "lp": dict(n=3, m=12, trials=2, eps=0.01),
    "online-envy": dict(n=3, m=40, trials=2, eps=0.05),
    "balance": dict(n=2, m=50, trials=2, eps=0.05),
    "multicolor": dict(n=3, m=40, k=3, trials=2),
    "btl": dict(n=2, m=12, trials=2, p=0.8, K=20),
    "mhr": dict(n=4, m=20, trials=3),
    "verify-statcheck": dict(trials=1),
}


def criterion_11(seed: int) -> tuple[bool, str]:
    from .cli import parse_config, render, run_experiment

    bad = []
    for sub, params in DETERMINISM_CONFIGS.items():
        for as_json in (False, True):
            cfg = parse_config("", dict(subcommand=sub, seed=seed, json=as_json, **params))
            first = render(run_experiment(cfg), cfg)
            second = render(run_experiment(cfg), cfg)
            if first != second:
                bad.append(f"{sub}{' (json)' if as_json else ''}")
    return not bad, f"subcommands={len(DETERMINISM_CONFIGS)} mismatches={bad or 0}"


CRITERIA: dict[int, tuple[str, Callable[[int], tuple[bool, str]], float]] = {
    1: ("Round-Robin upper bound", criterion_1, 5.0),
    2: ("lower bound tightness", criterion_2, 1.0),
    3: ("welfare maximization envy-free whp", criterion_3, 30.0),
    4: ("strict association oracle", criterion_4, 2.0),
    5: ("conditional-mean lemma", criterion_5, 10.0),
    6: ("LP pipeline", criterion_6, 180.0),
    7: ("online balancer bound", criterion_7, 30.0),
    8: ("multicolor discrepancy and envy reduction", criterion_8, 60.0),
    9: ("BTL consistency and scaling", criterion_9, 120.0),
    10: ("MHR application", criterion_10, 10.0),
    11: ("determinism", criterion_11, None),
}


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    name, fn, limit = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn(seed)
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start, limit)


def run_all(seed: int = 0) -> list[CriterionResult]:
    return [run_criterion(k, seed) for k in CRITERIA]
