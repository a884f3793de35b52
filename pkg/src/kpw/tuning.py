"""Kernel hyperparameter selection by simulated annealing on a bootstrap objective.

The objective ``MSE - KPW^2 / 2`` trades the bootstrap variability of the
statistic against its size; minimizing it approximately minimizes the
Markov-type bound on the type-II error.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .kernel import DegenerateGramError, KernelParams, check_samples, gaussian_gram, gram_bundle, median_heuristic
from .manifold import RetractionError
from .solver import DivergenceError, SolverConfig, bcd_solve

log = logging.getLogger(__name__)

_SOLVER_FAILURES = (DivergenceError, DegenerateGramError, RetractionError, FloatingPointError)
_STEP_LOG_SIGMA2 = 0.3
_STEP_RHO = 0.1
_COOLING = 0.95


@dataclass(frozen=True)
class TuningConfig:
    num_bootstrap: int = 20
    max_sa_iters: int = 100
    rho_init: float = 0.5
    sigma2_init: Union[str, float] = "median"
    seed: int = 0
    rho_bounds: tuple = (0.0, 1.0)
    sigma2_bounds: Optional[tuple] = None  # default: initial sigma2 times [1e-2, 1e2]

    def __post_init__(self):
        if self.num_bootstrap < 2:
            raise ValueError("num_bootstrap must be at least 2")
        if self.max_sa_iters < 0:
            raise ValueError("max_sa_iters must be nonnegative")
        lo, hi = self.rho_bounds
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"rho_bounds must be an ordered sub-interval of [0, 1], got {self.rho_bounds}")
        if not lo <= self.rho_init <= hi:
            raise ValueError("rho_init outside rho_bounds")
        if self.sigma2_bounds is not None:
            lo, hi = self.sigma2_bounds
            if not 0.0 < lo <= hi:
                raise ValueError(f"sigma2_bounds must be a positive ordered interval, got {self.sigma2_bounds}")
        if self.sigma2_init != "median" and not float(self.sigma2_init) > 0:
            raise ValueError("sigma2_init must be 'median' or positive")

    def to_dict(self) -> dict:
        return {
            "num_bootstrap": self.num_bootstrap,
            "max_sa_iters": self.max_sa_iters,
            "rho_init": self.rho_init,
            "sigma2_init": self.sigma2_init,
            "seed": self.seed,
            "rho_bounds": list(self.rho_bounds),
            "sigma2_bounds": None if self.sigma2_bounds is None else list(self.sigma2_bounds),
        }


@dataclass
class TuningResult:
    sigma2_star: float
    rho_star: float
    objective_value: float
    objective_trace: list = field(default_factory=list)
    mse_estimate: float = 0.0
    kpw_estimate: float = 0.0

    def params(self, d: int) -> KernelParams:
        return KernelParams(self.sigma2_star, self.rho_star, d)

    def to_dict(self) -> dict:
        return {
            "sigma2_star": self.sigma2_star,
            "rho_star": self.rho_star,
            "objective_value": self.objective_value,
            "mse_estimate": self.mse_estimate,
            "kpw_estimate": self.kpw_estimate,
            "objective_trace": [list(map(float, row)) for row in self.objective_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma2", "rho", "value"])
            for row in self.objective_trace:
                writer.writerow([repr(float(v)) for v in row])


def resample_indices(n: int, m: int, num_bootstrap: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Index pairs for resamples ``0..L``; resample 0 is held out for the squared-KPW proxy."""
    out = []
    for ell in range(num_bootstrap + 1):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, ell])
        out.append((rng.integers(0, n, size=n), rng.integers(0, m, size=m)))
    return out


def bootstrap_mse(
    xs,
    ys,
    params: KernelParams,
    config: SolverConfig,
    L: int = 20,
    seed: int = 0,
) -> tuple[float, float]:
    """Bootstrap MSE of the statistic and the statistic on the held-out resample 0.

    Returns ``(mean_l (T_l - T)^2, T_0)`` where ``T`` is the statistic on the
    original samples and ``T_l`` on resample ``l``.  Failed solves are dropped;
    losing half or more of the resamples raises ``RuntimeError``.
    """
    if L < 2:
        raise ValueError("L must be at least 2")
    xs = check_samples(xs, "xs")
    ys = check_samples(ys, "ys")
    n, m = xs.shape[0], ys.shape[0]
    pooled = np.vstack([xs, ys])
    scalar = gaussian_gram(pooled, pooled, params.sigma2)

    def stat(ix: np.ndarray, iy: np.ndarray) -> Optional[float]:
        order = np.concatenate([ix, n + iy])
        try:
            bundle = gram_bundle(xs[ix], ys[iy], params, scalar_gram=scalar[np.ix_(order, order)])
            return bcd_solve(bundle, config).statistic
        except _SOLVER_FAILURES as exc:
            log.warning("bootstrap solve failed: %s", exc)
            return None

    original = stat(np.arange(n), np.arange(m))
    if original is None:
        raise RuntimeError("KPW solve failed on the original samples")
    indices = resample_indices(n, m, L, seed)
    held = stat(*indices[0])
    devs = [stat(ix, iy) for ix, iy in indices[1:]]
    devs = [(t - original) ** 2 for t in devs if t is not None]
    if held is None or len(devs) <= L / 2:
        raise RuntimeError(f"too many failed bootstrap solves ({L - len(devs)} of {L})")
    return float(np.mean(devs)), float(held)


def _reflect(x: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    width = hi - lo
    y = math.fmod(x - lo, 2.0 * width)
    if y < 0:
        y += 2.0 * width
    return lo + (y if y <= width else 2.0 * width - y)


def tune(
    xs,
    ys,
    tuning_config: Optional[TuningConfig] = None,
    solver_config: Optional[SolverConfig] = None,
    d: int = 1,
) -> TuningResult:
    """Simulated annealing over ``(log sigma2, rho)`` minimizing ``MSE - KPW^2 / 2``.

    Proposals are Gaussian with scales (0.3, 0.1), reflected into the bounds;
    the temperature starts at the absolute initial objective and cools by 0.95
    per proposal.  The best point seen is returned.
    """
    tc = tuning_config or TuningConfig()
    sc = solver_config or SolverConfig()
    xs = check_samples(xs, "xs")
    ys = check_samples(ys, "ys")
    sigma2_0 = median_heuristic(np.vstack([xs, ys])) if tc.sigma2_init == "median" else float(tc.sigma2_init)
    s_lo, s_hi = tc.sigma2_bounds if tc.sigma2_bounds is not None else (sigma2_0 * 1e-2, sigma2_0 * 1e2)
    sigma2_0 = min(max(sigma2_0, s_lo), s_hi)
    r_lo, r_hi = tc.rho_bounds

    def evaluate(sigma2: float, rho: float) -> tuple[float, float, float]:
        mse, kpw = bootstrap_mse(xs, ys, KernelParams(sigma2, rho, d), sc, tc.num_bootstrap, tc.seed)
        return mse - 0.5 * kpw * kpw, mse, kpw

    cur = (math.log(sigma2_0), float(tc.rho_init))
    cur_val, mse, kpw = evaluate(sigma2_0, tc.rho_init)
    trace = [(sigma2_0, float(tc.rho_init), cur_val)]
    best = TuningResult(sigma2_0, float(tc.rho_init), cur_val, trace, mse, kpw)
    temp0 = abs(cur_val) if cur_val != 0 else 1e-12
    rng = np.random.default_rng([int(tc.seed) & 0xFFFFFFFFFFFFFFFF, 0x5A])

    for k in range(tc.max_sa_iters):
        temp = temp0 * _COOLING**k
        step = rng.standard_normal(2)
        log_s2 = _reflect(cur[0] + _STEP_LOG_SIGMA2 * step[0], math.log(s_lo), math.log(s_hi))
        rho = _reflect(cur[1] + _STEP_RHO * step[1], r_lo, r_hi)
        sigma2 = min(max(math.exp(log_s2), s_lo), s_hi)
        val, mse, kpw = evaluate(sigma2, rho)
        trace.append((sigma2, rho, val))
        accept_u = rng.random()
        if val <= cur_val or accept_u < math.exp(-(val - cur_val) / temp):
            cur, cur_val = (log_s2, rho), val
        if val < best.objective_value:
            best = TuningResult(sigma2, rho, val, trace, mse, kpw)
        log.debug("sa %d: sigma2=%.4g rho=%.3f value=%.5g best=%.5g", k, sigma2, rho, val, best.objective_value)

    best.objective_trace = trace
    return best
