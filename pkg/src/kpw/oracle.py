"""Brute-force references: exact discrete optimal transport and finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

MAX_PAIRS = 400
LP_TOL = 1e-10  # tightest feasibility tolerance HiGHS accepts


@dataclass
class ExactOtResult:
    cost: float
    plan: np.ndarray


def exact_ot(points_a, points_b) -> ExactOtResult:
    """Exact 1-Wasserstein transport between uniform empirical measures.

    Equal sizes reduce to an optimal assignment (a permutation matrix is an
    optimal vertex of the Birkhoff polytope); otherwise the transport LP is
    solved with HiGHS.
    """
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    n, m = a.shape[0], b.shape[0]
    if n * m > MAX_PAIRS:
        raise ValueError(f"exact_ot is limited to n*m <= {MAX_PAIRS}, got {n * m}")
    cost = cdist(a, b)
    if n == m:
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros((n, m))
        plan[rows, cols] = 1.0 / n
        return ExactOtResult(cost=float(cost[rows, cols].sum() / n), plan=plan)

    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": LP_TOL, "dual_feasibility_tolerance": LP_TOL},
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, m), 0.0)
    return ExactOtResult(cost=float(np.sum(plan * cost)), plan=plan)


def finite_diff_gradient(evaluate: Callable[[np.ndarray], float], s, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``evaluate`` at ``s``."""
    if not h > 0:
        raise ValueError("h must be positive")
    s = np.asarray(s, dtype=float)
    grad = np.empty_like(s)
    for i in range(s.size):
        step = np.zeros_like(s)
        step[i] = h
        hi = evaluate(s + step)
        lo = evaluate(s - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite evaluation along coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad
