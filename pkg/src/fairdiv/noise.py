"""Noise models: bounded adversarial, i.i.d. additive, and sign-flipped MHR noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .allocators import PickOrder, round_robin, rr_envy_bound
from .core import Allocation, NoisyInstance, ValuationMatrix, envy_report

FAMILIES = ("uniform", "exp", "halfnormal", "point", "discrete")


@dataclass(frozen=True)
class Distribution:
    """A scalar distribution given by a family tag and its parameters.

    ``uniform: (lo, hi)``, ``exp: (mean,)``, ``halfnormal: (scale,)``,
    ``point: (v,)``, ``discrete: (v_1, ..., v_k, w_1, ..., w_k)``.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        fam, par = self.family, tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", par)
        if fam not in FAMILIES:
            raise ValueError(f"unknown distribution family {fam!r}; expected one of {FAMILIES}")
        if not all(math.isfinite(x) for x in par):
            raise ValueError("distribution parameters must be finite")
        expected = {"uniform": 2, "exp": 1, "halfnormal": 1, "point": 1}
        if fam in expected and len(par) != expected[fam]:
            raise ValueError(f"{fam} takes {expected[fam]} parameter(s), got {len(par)}")
        if fam == "uniform" and not par[1] > par[0]:
            raise ValueError("uniform needs hi > lo")
        if fam in ("exp", "halfnormal") and not par[0] > 0:
            raise ValueError(f"{fam} parameter must be positive")
        if fam == "discrete":
            if len(par) < 2 or len(par) % 2:
                raise ValueError("discrete takes k values followed by k weights")
            k = len(par) // 2
            w = np.array(par[k:])
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("discrete weights must be non-negative and sum to 1")

    @classmethod
    def parse(cls, spec: str) -> "Distribution":
        """Parse ``family:p1,p2,...``; discrete uses ``discrete:v1,v2|w1,w2``."""
        fam, sep, rest = spec.strip().partition(":")
        if not sep:
            raise ValueError(f"distribution spec {spec!r} must look like family:params")
        fam = {"exponential": "exp", "pointmass": "point", "half-normal": "halfnormal"}.get(fam, fam)
        if fam == "discrete":
            vals, bar, wts = rest.partition("|")
            if not bar:
                raise ValueError("discrete spec must look like discrete:v1,v2|w1,w2")
            v = [float(x) for x in vals.split(",")]
            w = [float(x) for x in wts.split(",")]
            if len(v) != len(w):
                raise ValueError("discrete spec needs as many weights as values")
            return cls(fam, tuple(v + w))
        try:
            params = tuple(float(x) for x in rest.split(",") if x.strip())
        except ValueError as exc:
            raise ValueError(f"bad parameters in distribution spec {spec!r}") from exc
        return cls(fam, params)

    def __str__(self) -> str:
        if self.family == "discrete":
            k = len(self.params) // 2
            return "discrete:" + ",".join(map(repr, self.params[:k])) + "|" + ",".join(map(repr, self.params[k:]))
        return f"{self.family}:" + ",".join(repr(x) for x in self.params)

    @property
    def mean(self) -> float:
        fam, par = self.family, self.params
        if fam == "uniform":
            return 0.5 * (par[0] + par[1])
        if fam == "exp":
            return par[0]
        if fam == "halfnormal":
            return par[0] * math.sqrt(2.0 / math.pi)
        if fam == "point":
            return par[0]
        k = len(par) // 2
        return math.fsum(v * w for v, w in zip(par[:k], par[k:]))

    @property
    def is_mhr(self) -> bool:
        """Non-negative member of a family with non-decreasing hazard rate (declared, not tested)."""
        fam, par = self.family, self.params
        if fam in ("exp", "halfnormal"):
            return True
        if fam == "uniform":
            return par[0] >= 0
        if fam == "point":
            return par[0] >= 0  # degenerate limit, allowed for zero-noise runs
        return False

    def sample(self, rng: np.random.Generator, size=None):
        fam, par = self.family, self.params
        if fam == "uniform":
            return rng.uniform(par[0], par[1], size)
        if fam == "exp":
            return rng.exponential(par[0], size)
        if fam == "halfnormal":
            return np.abs(rng.normal(0.0, par[0], size))
        if fam == "point":
            return np.full(size, par[0]) if size is not None else par[0]
        k = len(par) // 2
        return rng.choice(np.array(par[:k]), size=size, p=np.array(par[k:]))


SCHEMES = ("uniform-in-box", "worst-against-RR", "per-agent-shift")


@dataclass(frozen=True)
class BoundedAdversarial:
    """Estimates with ``|truth - estimate - shift_i| <= eps``.

    ``uniform-in-box`` draws the residual uniformly from [-eps, eps].
    ``worst-against-RR`` pushes every entry eps toward its row median, which
    flattens each agent's ranking.  ``per-agent-shift`` is the box scheme with
    a mandatory shift vector.
    """

    eps: float
    scheme: str = "uniform-in-box"
    shifts: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "per-agent-shift" and self.shifts is None:
            raise ValueError("per-agent-shift needs a shift vector")
        if self.shifts is not None:
            object.__setattr__(self, "shifts", tuple(float(s) for s in self.shifts))


@dataclass(frozen=True)
class AdditiveIID:
    dist: Distribution


@dataclass(frozen=True)
class SignFlippedMHR:
    dist: Distribution

    def __post_init__(self):
        if not self.dist.is_mhr:
            raise ValueError(f"{self.dist} is not a declared non-negative MHR family")


NoiseModel = BoundedAdversarial | AdditiveIID | SignFlippedMHR


def apply_noise(truth: ValuationMatrix, model: NoiseModel, rng: np.random.Generator) -> NoisyInstance:
    """Draw estimates for ``truth`` under ``model``; random draws are taken in row-major order."""
    n, m = truth.shape
    v = truth.values
    if isinstance(model, BoundedAdversarial):
        shifts = np.zeros(n) if model.shifts is None else np.asarray(model.shifts, dtype=float)
        if shifts.shape != (n,):
            raise ValueError(f"expected {n} shifts, got {shifts.shape}")
        if model.scheme == "worst-against-RR":
            med = np.median(v, axis=1, keepdims=True) if m else np.zeros((n, 1))
            resid = model.eps * np.sign(med - v)
        else:
            resid = rng.uniform(-model.eps, model.eps, (n, m))
        est = v - shifts[:, None] + resid
        # keep |truth - est - shift| <= eps exactly despite rounding
        centre = v - shifts[:, None]
        est = np.clip(est, centre - model.eps, centre + model.eps)
        for _ in range(8):
            over = np.abs(v - est - shifts[:, None]) > model.eps
            if not over.any():
                break
            est[over] = np.nextafter(est[over], centre[over])
        return NoisyInstance(truth, ValuationMatrix(est, truth.bound_b), model.eps, shifts)
    if isinstance(model, AdditiveIID):
        eta = np.asarray(model.dist.sample(rng, (n, m)), dtype=float)
        est = v + eta
        eps = float(np.abs(est - v).max()) if m else 0.0
        return NoisyInstance(truth, ValuationMatrix(est, truth.bound_b), eps)
    if isinstance(model, SignFlippedMHR):
        z = np.asarray(model.dist.sample(rng, (n, m)), dtype=float)
        sigma = np.where(rng.random((n, m)) < 0.5, -1.0, 1.0)
        est = v + sigma * z
        eps = float(np.abs(est - v).max()) if m else 0.0
        return NoisyInstance(truth, ValuationMatrix(est, truth.bound_b), eps)
    raise TypeError(f"unsupported noise model {model!r}")


def harmonic(k: int) -> float:
    return math.fsum(1.0 / i for i in range(1, k + 1))


@dataclass(frozen=True, eq=False)
class MHRRun:
    allocation: Allocation
    instance: NoisyInstance
    max_envy: float
    eps_max: float
    beta_h: float      # 2 * H_{nm} * E[D]
    beta_log: float    # 2 * log(nm) * E[D]
    bound_value: float  # 2 * beta_h * ceil(m/n) + 1
    event: bool        # eps_max < beta_h
    mean_ok: bool      # E[D] <= n / (m log(nm))


def mhr_pipeline(truth: ValuationMatrix, dist: Distribution, rng: np.random.Generator,
                 order: PickOrder | Sequence[int] | None = None) -> MHRRun:
    """Sign-flipped MHR noise followed by Round-Robin on the estimates."""
    n, m = truth.shape
    if n * m < 4:
        raise ValueError("need n * m >= 4")
    if np.any(truth.values < 0) or np.any(truth.values > 1):
        raise ValueError("truth must lie in [0, 1]")
    inst = apply_noise(truth, SignFlippedMHR(dist), rng)
    alloc = round_robin(inst.estimates, order)
    nm = n * m
    beta_h = 2.0 * harmonic(nm) * dist.mean
    beta_log = 2.0 * math.log(nm) * dist.mean
    return MHRRun(
        allocation=alloc,
        instance=inst,
        max_envy=envy_report(truth, alloc).max_envy,
        eps_max=inst.eps,
        beta_h=beta_h,
        beta_log=beta_log,
        bound_value=rr_envy_bound(n, m, beta_h, 1.0),
        event=inst.eps < beta_h,
        mean_ok=dist.mean <= n / (m * math.log(nm)) * (1 + 1e-12),
    )


def mhr_failure_rate(n: int, m: int) -> float:
    """(nm)^(-3/5), the allowed failure probability of the MHR application."""
    return (n * m) ** -0.6
