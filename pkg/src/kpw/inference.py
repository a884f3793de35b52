"""Finite-sample thresholds and two-sample tests built on the KPW statistic."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import KernelParams, check_samples, gaussian_gram, gram_bundle, kernel_bound
from .solver import SolverConfig, bcd_solve, kpw_distance

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_COARSE_POINTS = 200
_MAX_PIECES = 10_000


@dataclass
class TestOutcome:
    statistic: float
    threshold: float
    reject_null: bool
    method: str
    alpha: float
    p_value: Optional[float] = None
    type2_bound: Optional[float] = None

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "threshold": float(self.threshold) if math.isfinite(self.threshold) else None,
            "reject_null": bool(self.reject_null),
            "method": self.method,
            "alpha": float(self.alpha),
            "p_value": None if self.p_value is None else float(self.p_value),
            "type2_bound": None if self.type2_bound is None else float(self.type2_bound),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")


def zeta_objective(eps, N: int, d: int, B: float):
    """Bracketed expression whose infimum over ``eps > 0`` is the zeta factor."""
    eps = np.asarray(eps, dtype=float)
    r = 4.0 * math.sqrt(B)
    cells = 2.0 * np.ceil(r / eps) + 1.0
    inner = cells + (1.0 + r / eps) ** d * math.log(2.0)
    return 4.0 * eps + 6.0 * math.sqrt(2.0 * B / N) * np.sqrt(inner)


def _piece(eps, k: int, N: int, d: int, B: float) -> float:
    # continuous extension of zeta_objective on the interval where ceil(r/eps) == k
    r = 4.0 * math.sqrt(B)
    inner = 2.0 * k + 1.0 + (1.0 + r / eps) ** d * math.log(2.0)
    return 4.0 * eps + 6.0 * math.sqrt(2.0 * B / N) * math.sqrt(inner)


def _golden_min(fn, lo: float, hi: float, tol: float = 1e-13) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    best = min((fn(lo), lo), (fn(hi), hi), (fn(x), x))
    return best


def zeta_factor(N: int, d: int, B: float) -> float:
    """Infimum over ``eps`` of the epsilon-net deviation term.

    A 200-point log grid over ``[1e-6 sqrt(B), 10 sqrt(B)]`` locates the basin;
    the bracket around the best grid point is then split into the intervals on
    which the ceiling is constant, and each continuous piece is minimized on its
    closure by golden-section search (the infimum may sit at an open end).
    """
    if N < 1 or d < 1 or not B > 0:
        raise ValueError("zeta_factor needs N >= 1, d >= 1 and B > 0")
    root_b = math.sqrt(B)
    lo, hi = 1e-6 * root_b, 10.0 * root_b
    grid = np.geomspace(lo, hi, _COARSE_POINTS)
    vals = zeta_objective(grid, N, d, B)
    i = int(np.argmin(vals))
    # the minimizer often sits on a ceiling breakpoint one piece away from the grid argmin
    b_lo, b_hi = grid[max(i - 3, 0)], grid[min(i + 3, grid.size - 1)]
    best = float(vals[i])

    r = 4.0 * root_b
    k_hi = int(math.ceil(r / b_lo)) + 1
    k_lo = int(math.ceil(r / b_hi)) - 1
    if k_hi - k_lo > _MAX_PIECES:
        val, _ = _golden_min(lambda e: float(zeta_objective(e, N, d, B)), b_lo, b_hi)
        return min(best, val)
    for k in range(max(k_lo, 1), k_hi + 1):
        left = r / k
        right = r / (k - 1) if k > 1 else math.inf
        a, b = max(left, b_lo), min(right, b_hi)
        if a > b:
            continue
        val, _ = _golden_min(lambda e, k=k: _piece(e, k, N, d, B), a, b)
        best = min(best, val)
    return best


def gamma_threshold(n: int, m: int, alpha: float, d: int, B: float) -> float:
    """Level-``alpha`` acceptance threshold for the empirical KPW statistic."""
    _check_alpha(alpha)
    if n < 1 or m < 1:
        raise ValueError("sample sizes must be positive")
    log_term = math.log(2.0 / alpha)
    if n == m:
        return (
            math.sqrt(4.0 * B / n * log_term)
            + 2.0 * math.sqrt(2.0 * d * B) / math.sqrt(n)
            + zeta_factor(n, d, B)
        )
    return (
        math.sqrt(2.0 * B * (m + n) / (m * n) * log_term)
        + 2.0 * math.sqrt(2.0 * d * B) / math.sqrt(n)
        + 2.0 * math.sqrt(2.0 * d * B) / math.sqrt(m)
        + zeta_factor(n, d, B)
        + zeta_factor(m, d, B)
    )


def type2_bound(kpw_population: float, gamma: float, mse: float) -> float:
    """Markov-type bound ``MSE / (KPW - gamma)^2`` on the type-II error."""
    if mse < 0:
        raise ValueError("mse must be nonnegative")
    if not kpw_population > gamma:
        raise ValueError("type-II bound is vacuous unless the population KPW exceeds the threshold")
    return mse / (kpw_population - gamma) ** 2


def analytic_test(
    xs,
    ys,
    params: KernelParams,
    config: Optional[SolverConfig] = None,
    alpha: float = 0.05,
) -> TestOutcome:
    """Reject iff the KPW statistic exceeds the concentration threshold."""
    _check_alpha(alpha)
    xs = check_samples(xs, "xs")
    ys = check_samples(ys, "ys")
    result = kpw_distance(xs, ys, params, config)
    threshold = gamma_threshold(xs.shape[0], ys.shape[0], alpha, params.d, kernel_bound(params))
    return TestOutcome(
        statistic=result.statistic,
        threshold=threshold,
        reject_null=bool(result.statistic > threshold),
        method="analytic",
        alpha=alpha,
    )


def permutation_statistics(
    xs,
    ys,
    params: KernelParams,
    config: Optional[SolverConfig] = None,
    num_perms: int = 99,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Observed statistic and the statistics of ``num_perms`` random re-splits.

    Permutation ``k`` draws its split from ``default_rng([seed, k])`` and every
    solve shares ``config.seed``; the pooled scalar Gram is computed once.
    """
    config = config or SolverConfig()
    xs = check_samples(xs, "xs")
    ys = check_samples(ys, "ys")
    n = xs.shape[0]
    pooled = np.vstack([xs, ys])
    scalar = gaussian_gram(pooled, pooled, params.sigma2)

    def stat(order: np.ndarray) -> float:
        bundle = gram_bundle(pooled[order[:n]], pooled[order[n:]], params, scalar_gram=scalar[np.ix_(order, order)])
        return bcd_solve(bundle, config).statistic

    observed = stat(np.arange(pooled.shape[0]))
    perms = np.empty(num_perms)
    for k in range(num_perms):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, k])
        perms[k] = stat(rng.permutation(pooled.shape[0]))
    return observed, perms


def permutation_test(
    xs,
    ys,
    params: KernelParams,
    config: Optional[SolverConfig] = None,
    num_perms: int = 99,
    alpha: float = 0.05,
    seed: int = 0,
    kpw_population: Optional[float] = None,
    mse: Optional[float] = None,
) -> TestOutcome:
    """Permutation calibration with the add-one p-value ``(1 + #{T_k >= T}) / (K + 1)``.

    The null is rejected iff the p-value is strictly below ``alpha``, which
    (without ties) is the same as the statistic exceeding the reported
    threshold.  When ``alpha`` is too small for ``num_perms`` to ever reject,
    the threshold is infinite.
    """
    _check_alpha(alpha)
    if num_perms < 19:
        raise ValueError("num_perms must be at least 19")
    observed, perms = permutation_statistics(xs, ys, params, config, num_perms, seed)
    p_value = (1.0 + np.count_nonzero(perms >= observed)) / (num_perms + 1.0)
    # largest exceedance count that still rejects, using the same comparison as the p-value
    counts = np.arange(num_perms + 1)
    rejecting = np.flatnonzero((1.0 + counts) / (num_perms + 1.0) < alpha)
    ordered = np.sort(perms)[::-1]
    threshold = float(ordered[rejecting[-1]]) if rejecting.size else math.inf
    bound = None
    if kpw_population is not None and mse is not None:
        gamma = gamma_threshold(len(xs), len(ys), alpha, params.d, kernel_bound(params))
        bound = min(1.0, type2_bound(kpw_population, gamma, mse)) if kpw_population > gamma else None
    return TestOutcome(
        statistic=observed,
        threshold=threshold,
        reject_null=bool(p_value < alpha),
        method="permutation",
        alpha=alpha,
        p_value=float(p_value),
        type2_bound=bound,
    )
