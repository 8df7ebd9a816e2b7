"""Seeded Monte Carlo experiment runner.

    fairdiv <subcommand> [--config FILE] [--n N --m M --trials T --seed S ...]

Every trial draws from ``stream(seed, trial, subcommand)``, so reports are
byte-identical across runs and independent of ``FAIRDIV_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable

import numpy as np

from . import discrepancy as disc
from .allocators import PickOrder, adversarial_instance, round_robin, rr_envy_bound, welfare_max
from .btl import btl_fair_divide
from .core import ENVY_TOL, ValuationMatrix, envy_report
from .lp_round import lp_pipeline
from .noise import AdditiveIID, BoundedAdversarial, Distribution, apply_noise, mhr_pipeline, SCHEMES
from .rng import stream
from .statcheck import run_statcheck

SUBCOMMANDS = (
    "rr", "rr-lowerbound", "welfare", "lp", "online-envy", "balance",
    "multicolor", "btl", "mhr", "verify-statcheck", "verify-all",
)
BASE_COLUMNS = ("trial", "max_envy_true", "max_envy_observed", "bound_value", "bound_satisfied", "fail_events")
EXTRA_COLUMNS = {
    "rr": ("eps_realized",),
    "rr-lowerbound": (),
    "welfare": ("envy_free",),
    "lp": ("alpha", "envy_free"),
    "online-envy": ("discrepancy", "discrepancy_scaled", "multicolor_bound"),
    "balance": ("max_w_norm", "worst_ratio"),
    "multicolor": ("discrepancy",),
    "btl": ("est_error", "p_threshold_ok"),
    "mhr": ("eps_max", "beta_h", "beta_log", "event"),
    "verify-statcheck": ("association_cases", "conditional_cases", "skipped_zero_probability"),
}
ACCEPTANCE_COLUMNS = ("criterion", "name", "passed", "detail")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    subcommand: str
    seed: int
    n: int = 2
    m: int = 10
    trials: int = 1
    eps: float = 0.0
    delta: float = 0.1
    C: float = disc.DEFAULT_C
    p: float = 1.0
    K: int = 100
    k: int | None = None
    dist: str | None = None
    noise_dist: str | None = None
    noise: str = "uniform-in-box"
    order: str | None = None
    out: str | None = None
    json: bool = False
    timings: bool = False


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_INT_KEYS = {"seed", "n", "m", "trials", "K", "k"}
_FLOAT_KEYS = {"eps", "delta", "C", "p"}
_BOOL_KEYS = {"json", "timings"}


def _convert(key: str, raw: str) -> Any:
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw.strip()


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse a flat ``key=value`` file; ``#`` starts a comment line."""
    out: dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {line_no}: expected key=value, got {stripped!r}")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    return out


def parse_config(text: str = "", overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Merge a key=value file with flag overrides (flags win) and validate."""
    values = parse_config_text(text)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if val is not None:
            values[key] = val
    if "subcommand" not in values:
        raise ConfigError("subcommand required")
    if "seed" not in values:
        raise ConfigError("seed required")
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def _need(cond: bool, field_name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{field_name}: {msg}")


def validate(cfg: ExperimentConfig) -> None:
    sub = cfg.subcommand
    _need(sub in SUBCOMMANDS, "subcommand", f"unknown subcommand {sub!r}")
    _need(0 <= cfg.seed < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
    _need(cfg.trials >= 1, "trials", "must be at least 1")
    _need(cfg.n >= 1, "n", "must be at least 1")
    _need(cfg.m >= 0, "m", "must be non-negative")
    _need(cfg.eps >= 0, "eps", "must be non-negative")
    _need(0 < cfg.delta <= 0.5, "delta", "must lie in (0, 1/2]")
    _need(0 < cfg.C < 0.125, "C", "must lie in (0, 1/8)")
    _need(0 <= cfg.p <= 1, "p", "must be a probability")
    _need(cfg.K >= 1, "K", "must be at least 1")
    _need(cfg.noise in SCHEMES, "noise", f"must be one of {SCHEMES}")
    if cfg.order is not None:
        try:
            order = PickOrder.parse(cfg.order)
        except ValueError as exc:
            raise ConfigError(f"order: {exc}") from None
        _need(len(order) == cfg.n, "order", f"must list {cfg.n} agents")
    for name in ("dist", "noise_dist"):
        spec = getattr(cfg, name)
        if spec is not None:
            try:
                Distribution.parse(spec)
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
    if sub == "rr-lowerbound":
        _need(cfg.n >= 2, "n", "the lower bound needs at least two agents")
        _need(0 < cfg.eps <= 0.5, "eps", "must lie in (0, 1/2]")
    if sub in ("online-envy", "balance", "multicolor"):
        _need(cfg.m >= 1, "m", "must be at least 1")
        _need(cfg.eps <= 1, "eps", "must be at most 1")
    if sub == "multicolor":
        _need((cfg.k or cfg.n) >= 2, "k", "must be at least 2")
    if sub == "btl":
        _need(cfg.m >= 2, "m", "need at least two items to compare")
    if sub == "mhr":
        _need(cfg.n * cfg.m >= 4, "m", "need n * m >= 4")
        if cfg.dist is not None:
            _need(Distribution.parse(cfg.dist).is_mhr, "dist", "must be a non-negative MHR family")


# ---------------------------------------------------------------- trials

Row = dict[str, Any]


def _order(cfg: ExperimentConfig) -> PickOrder | None:
    return PickOrder.parse(cfg.order) if cfg.order else None


def _random_shifts(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[float, ...] | None:
    if cfg.noise == "per-agent-shift":
        return tuple(rng.uniform(0.0, 1.0, cfg.n))
    return None


def trial_rr(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    truth = ValuationMatrix(rng.random((cfg.n, cfg.m)), 1.0, (0.0, 1.0))
    model = BoundedAdversarial(cfg.eps, cfg.noise, _random_shifts(cfg, rng))
    inst = apply_noise(truth, model, rng)
    alloc = round_robin(inst.estimates, _order(cfg))
    true_env = envy_report(truth, alloc).max_envy
    bound = rr_envy_bound(cfg.n, cfg.m, cfg.eps, 1.0)
    ok = true_env <= bound + ENVY_TOL
    row = dict(max_envy_true=true_env, max_envy_observed=envy_report(inst.estimates, alloc).max_envy,
               bound_value=bound, bound_satisfied=ok, fail_events=0, eps_realized=inst.realized_eps())
    return row, ok


def trial_rr_lowerbound(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    est = ValuationMatrix(np.full((cfg.n, cfg.m), 0.5))
    alloc = round_robin(est, _order(cfg))
    truth = adversarial_instance(cfg.n, cfg.m, cfg.eps, alloc)
    env = envy_report(truth, alloc).max_envy
    bound = 2.0 * cfg.eps * cfg.m / cfg.n
    ok = env >= bound - ENVY_TOL
    row = dict(max_envy_true=env, max_envy_observed=envy_report(est, alloc).max_envy,
               bound_value=bound, bound_satisfied=ok, fail_events=0)
    return row, ok


def trial_welfare(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    D = Distribution.parse(cfg.dist or "uniform:0,1")
    Dp = Distribution.parse(cfg.noise_dist or "uniform:-0.2,0.2")
    truth = ValuationMatrix(np.asarray(D.sample(rng, (cfg.n, cfg.m)), dtype=float))
    inst = apply_noise(truth, AdditiveIID(Dp), rng)
    alloc = welfare_max(inst.estimates, rng)
    env = envy_report(truth, alloc).max_envy
    ef = env <= ENVY_TOL
    row = dict(max_envy_true=env, max_envy_observed=envy_report(inst.estimates, alloc).max_envy,
               bound_value=0.0, bound_satisfied=ef, fail_events=0, envy_free=ef)
    return row, True


def trial_lp(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    truth = ValuationMatrix(rng.random((cfg.n, cfg.m)), 1.0, (0.0, 1.0))
    inst = apply_noise(truth, BoundedAdversarial(cfg.eps, cfg.noise, _random_shifts(cfg, rng)), rng)
    run = lp_pipeline(inst, rng)
    ef = run.true_max_envy <= ENVY_TOL
    consistent = run.fractional is None or run.fractional.is_consistent(inst.estimates)
    row = dict(max_envy_true=run.true_max_envy, max_envy_observed=run.observed_max_envy,
               bound_value=0.0, bound_satisfied=ef, fail_events=0, alpha=run.alpha, envy_free=ef)
    return row, consistent


def trial_online_envy(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    n, m = cfg.n, cfg.m
    truth = rng.uniform(-1.0, 1.0, (n, m))
    noisy = np.clip(truth + rng.uniform(-cfg.eps, cfg.eps, (n, m)), truth - cfg.eps, truth + cfg.eps)
    run = disc.online_envy_allocate(iter(noisy.T), lambda j: truth[:, j], n, m, cfg.eps, cfg.delta, cfg.C, rng)
    observed = envy_report(ValuationMatrix(noisy), run.allocation).max_envy
    ok = run.max_envy <= run.envy_bound
    row = dict(max_envy_true=run.max_envy, max_envy_observed=observed, bound_value=run.envy_bound,
               bound_satisfied=ok, fail_events=run.fail_events, discrepancy=run.discrepancy,
               discrepancy_scaled=run.discrepancy_scaled, multicolor_bound=run.bound_scaled)
    return row, run.max_envy <= run.discrepancy


def _vector_stream(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    true = rng.uniform(-1.0, 1.0, (cfg.m, cfg.n))
    noisy = np.clip(true + rng.uniform(-cfg.eps, cfg.eps, (cfg.m, cfg.n)), true - cfg.eps, true + cfg.eps)
    return true, noisy


def run_balance(n: int, m: int, eps: float, delta: float, C: float, rng: np.random.Generator,
                true: np.ndarray, noisy: np.ndarray) -> tuple[float, float, bool, int]:
    """Balance m vectors with p = 1/2; returns (max ||w_t||, worst ratio to bound, all within, fails)."""
    st = disc.BalancerState(n=n, m=m, p=0.5, eps=eps, delta=delta, C=C, keep_log=False)
    worst_norm = worst_ratio = 0.0
    for t in range(m + 1):
        norm = float(np.abs(st.w).max())
        ratio = norm / disc.balance_bound(n, m, eps, delta, C, st.t)
        worst_norm, worst_ratio = max(worst_norm, norm), max(worst_ratio, ratio)
        if t < m:
            st.step(noisy[t], rng)
            st.reveal(true[t])
    return worst_norm, worst_ratio, worst_ratio <= 1.0, st.fail_count


def trial_balance(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    true, noisy = _vector_stream(cfg, rng)
    norm, ratio, ok, fails = run_balance(cfg.n, cfg.m, cfg.eps, cfg.delta, cfg.C, rng, true, noisy)
    row = dict(max_envy_true=None, max_envy_observed=None,
               bound_value=disc.balance_bound(cfg.n, cfg.m, cfg.eps, cfg.delta, cfg.C, cfg.m + 1),
               bound_satisfied=ok, fail_events=fails, max_w_norm=norm, worst_ratio=ratio)
    return row, True


def trial_multicolor(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    k = cfg.k or cfg.n
    true, noisy = _vector_stream(cfg, rng)
    tree = disc.build_color_tree(k, cfg.n, cfg.m, cfg.eps, cfg.delta, cfg.C, keep_log=False)
    for t in range(cfg.m):
        disc.assign_color(tree, noisy[t], rng)
        disc.tree_reveal(tree, true[t])
    value = tree.discrepancy()
    bound = disc.multicolor_bound(cfg.n, cfg.m, k, cfg.eps, cfg.delta, cfg.C)
    row = dict(max_envy_true=None, max_envy_observed=None, bound_value=bound,
               bound_satisfied=value <= bound, fail_events=tree.fail_count(), discrepancy=value)
    return row, int(tree.color_counts.sum()) == cfg.m


def trial_btl(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    truth = ValuationMatrix(rng.random((cfg.n, cfg.m)), 1.0, (0.0, 1.0))
    run = btl_fair_divide(truth, cfg.p, cfg.K, rng, _order(cfg))
    ok = run.true_max_envy <= run.bound_value + ENVY_TOL
    row = dict(max_envy_true=run.true_max_envy, max_envy_observed=envy_report(run.estimates, run.allocation).max_envy,
               bound_value=run.bound_value, bound_satisfied=ok, fail_events=0,
               est_error=float(run.errors.max()), p_threshold_ok=run.p_threshold_ok)
    return row, ok


def mhr_default_dist(n: int, m: int) -> Distribution:
    return Distribution("exp", (n / (m * math.log(n * m)),))


def trial_mhr(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    dist = Distribution.parse(cfg.dist) if cfg.dist else mhr_default_dist(cfg.n, cfg.m)
    truth = ValuationMatrix(rng.random((cfg.n, cfg.m)), 1.0, (0.0, 1.0))
    run = mhr_pipeline(truth, dist, rng, _order(cfg))
    # on the event eps_max < beta the Round-Robin guarantee is deterministic
    hard = (not run.event) or run.max_envy <= run.bound_value + ENVY_TOL
    row = dict(max_envy_true=run.max_envy, max_envy_observed=envy_report(run.instance.estimates, run.allocation).max_envy,
               bound_value=10.0, bound_satisfied=run.max_envy <= 10.0, fail_events=0,
               eps_max=run.eps_max, beta_h=run.beta_h, beta_log=run.beta_log, event=run.event)
    return row, hard


def trial_statcheck(cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[Row, bool]:
    s = run_statcheck(rng)
    row = dict(max_envy_true=None, max_envy_observed=None, bound_value=None,
               bound_satisfied=s.violations == 0, fail_events=s.violations,
               association_cases=s.association_cases, conditional_cases=s.conditional_cases,
               skipped_zero_probability=s.skipped_zero_probability)
    return row, s.violations == 0


TRIALS: dict[str, Callable[[ExperimentConfig, np.random.Generator], tuple[Row, bool]]] = {
    "rr": trial_rr,
    "rr-lowerbound": trial_rr_lowerbound,
    "welfare": trial_welfare,
    "lp": trial_lp,
    "online-envy": trial_online_envy,
    "balance": trial_balance,
    "multicolor": trial_multicolor,
    "btl": trial_btl,
    "mhr": trial_mhr,
    "verify-statcheck": trial_statcheck,
}


# ---------------------------------------------------------------- reports

@dataclass
class RunReport:
    subcommand: str
    columns: tuple[str, ...]
    rows: list[Row]
    hard_ok: bool
    summary: dict[str, Any]


def _run_one(args: tuple[ExperimentConfig, int]) -> tuple[Row, bool]:
    cfg, trial = args
    rng = stream(cfg.seed, trial, cfg.subcommand)
    start = time.perf_counter()
    try:
        row, hard = TRIALS[cfg.subcommand](cfg, rng)
    except Exception as exc:
        raise RuntimeError(f"trial {trial}: {exc}") from exc
    row = {"trial": trial, **row}
    if cfg.timings:
        row["seconds"] = time.perf_counter() - start
    return row, hard


def _threads() -> int:
    raw = os.environ.get("FAIRDIV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FAIRDIV_THREADS must be an integer, got {raw!r}") from None


def _summary(rows: list[Row], hard_ok: bool) -> dict[str, Any]:
    T = len(rows)
    succ = sum(bool(r["bound_satisfied"]) for r in rows)
    q = succ / T
    out: dict[str, Any] = {"trials": T, "success_frequency": q,
                           "success_ci_halfwidth": 1.96 * math.sqrt(q * (1 - q) / T)}
    for col in ("max_envy_true", "max_envy_observed"):
        vals = [r[col] for r in rows if r.get(col) is not None]
        out[f"median_{col}"] = statistics.median(vals) if vals else None
        if len(vals) > 1:
            out[f"{col}_ci_halfwidth"] = 1.96 * statistics.stdev(vals) / math.sqrt(len(vals))
        else:
            out[f"{col}_ci_halfwidth"] = None
    out["fail_events_total"] = sum(int(r["fail_events"]) for r in rows)
    out["hard_checks"] = "pass" if hard_ok else "fail"
    return out


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    if cfg.subcommand == "verify-all":
        from .acceptance import run_all

        results = run_all(seed=cfg.seed)
        rows = [dict(criterion=r.number, name=r.name, passed=r.passed, detail=r.detail) for r in results]
        ok = all(r.passed for r in results)
        summary = {"criteria": len(rows), "passed": sum(r.passed for r in results), "hard_checks": "pass" if ok else "fail"}
        return RunReport(cfg.subcommand, ACCEPTANCE_COLUMNS, rows, ok, summary)

    jobs = [(cfg, t) for t in range(cfg.trials)]
    workers = min(_threads(), cfg.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))  # map keeps trial order
    else:
        results = [_run_one(j) for j in jobs]
    rows = [r for r, _ in results]
    hard_ok = all(h for _, h in results)
    columns = BASE_COLUMNS + EXTRA_COLUMNS[cfg.subcommand] + (("seconds",) if cfg.timings else ())
    return RunReport(cfg.subcommand, columns, rows, hard_ok, _summary(rows, hard_ok))


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def render(report: RunReport, cfg: ExperimentConfig) -> str:
    if cfg.json:
        doc = {
            "subcommand": report.subcommand,
            "config": {k: v for k, v in asdict(cfg).items() if k not in ("out", "json")},
            "columns": list(report.columns),
            "rows": [{c: _jsonable(r.get(c)) for c in report.columns} for r in report.rows],
            "summary": {k: _jsonable(v) for k, v in report.summary.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    lines = [",".join(report.columns)]
    for r in report.rows:
        lines.append(",".join(_csv_cell(_fmt(r.get(c))) for c in report.columns))
    for key, val in report.summary.items():
        lines.append(f"# {key}={_fmt(val)}")
    return "\n".join(lines) + "\n"


def _csv_cell(text: str) -> str:
    if any(ch in text for ch in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairdiv", description="Fair division under noisy valuations: seeded experiments.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="key=value file; flags override its entries")
    ap.add_argument("--n", type=int)
    ap.add_argument("--m", type=int)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--eps", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--C", type=float, dest="C")
    ap.add_argument("--p", type=float)
    ap.add_argument("--K", type=int, dest="K")
    ap.add_argument("--k", type=int, help="number of colors (multicolor; default n)")
    ap.add_argument("--dist", help="value or noise distribution, e.g. exp:0.01 or uniform:0,1")
    ap.add_argument("--noise-dist", dest="noise_dist", help="additive noise distribution (welfare)")
    ap.add_argument("--noise", choices=SCHEMES, help="bounded-noise scheme")
    ap.add_argument("--order", help="Round-Robin pick order, e.g. 1,0,2")
    ap.add_argument("--out", help="write the report here instead of stdout")
    ap.add_argument("--json", action="store_true", default=None)
    ap.add_argument("--timings", action="store_true", default=None, help="add a per-trial seconds column")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        file_sub = parse_config_text(text).get("subcommand")
        if file_sub is not None and file_sub != args.subcommand:
            print(f"fairdiv: note: command line subcommand {args.subcommand!r} overrides {file_sub!r}", file=sys.stderr)
        cfg = parse_config(text, overrides)
        report = run_experiment(cfg)
    except (ConfigError, OSError) as exc:
        print(f"fairdiv: error: {exc}", file=sys.stderr)
        return 2
    output = render(report, cfg)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(output)
    else:
        sys.stdout.write(output)
    if not report.hard_ok:
        print("fairdiv: hard invariant check failed", file=sys.stderr)
    return 0 if report.hard_ok else 1


if __name__ == "__main__":
    sys.exit(main())
