"""Riemannian block coordinate descent for the entropic KPW max-min problem.

The sphere variable ``s`` parametrizes the RKHS unit ball through
``omega = U s``.  The solver minimizes the dual objective

    F(u, v, s) = sum_ij exp(-c_ij(s)/eta + u_i + v_j) - mean(u) - mean(v)

by exact (log-domain) Sinkhorn updates in ``u`` and ``v`` followed by one
retracted Riemannian gradient step in ``s``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .kernel import GramBundle, KernelParams, gram_bundle
from .manifold import random_sphere_point, retract, tangent_project

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0


class DivergenceError(FloatingPointError):
    """Dual potentials or plan entries left the representable range."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the BCD solver.

    ``tau`` is a positive step size, ``"auto"`` (backtracking that starts at
    ``step_scale * eta`` and never accepts an increase of F), or ``"safe"``
    (the provably decreasing step of :func:`default_step_size`).
    """

    eta: float = 1e-2
    kappa: float = 1e-2
    tau: Union[float, str] = "auto"
    eps1: float = 1e-3
    eps2: float = 1e-3
    max_iters: int = 1000
    seed: int = 0
    restarts: int = 1
    step_scale: float = 1.0
    freeze_s: bool = False

    def __post_init__(self):
        for name in ("eta", "kappa", "eps1", "eps2", "step_scale"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val}")
        if isinstance(self.tau, str):
            if self.tau not in ("auto", "safe"):
                raise ValueError(f"tau must be positive, 'auto' or 'safe', got {self.tau!r}")
        elif not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    @classmethod
    def theoretical(cls, eps1: float, eps2: float, **kwargs) -> "SolverConfig":
        """Convergence-theory setting: ``eta = eps2`` and the safe step size."""
        return cls(eta=eps2, eps1=eps1, eps2=eps2, tau="safe", **kwargs)

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "kappa": self.kappa,
            "tau": self.tau,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "max_iters": self.max_iters,
            "seed": self.seed,
            "restarts": self.restarts,
            "step_scale": self.step_scale,
            "freeze_s": self.freeze_s,
        }


@dataclass
class SolverState:
    u: np.ndarray
    v: np.ndarray
    s: np.ndarray
    iter: int = 0
    f_value: float = np.inf
    grad_norm: float = np.inf
    row_residual: float = np.inf
    col_residual: float = np.inf
    u_sup: float = 1.0
    v_sup: float = 1.0
    tau: float = 0.0


@dataclass
class KpwResult:
    statistic: float
    regularized_objective: float
    omega: np.ndarray
    projected_x: np.ndarray
    projected_y: np.ndarray
    plan: np.ndarray
    trace: list
    converged: bool
    iters: int
    s: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    grad_norm: float = np.inf
    row_residual: float = np.inf
    col_residual: float = np.inf
    u_sup: float = 1.0
    v_sup: float = 1.0

    def to_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "regularized_objective": float(self.regularized_objective),
            "converged": bool(self.converged),
            "iters": int(self.iters),
            "trace": [[float(f), float(g)] for f, g in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    out = np.log(np.sum(np.exp(a - mx), axis=axis)) + np.squeeze(mx, axis=axis)
    return out


def projected_points(s, bundle: GramBundle) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``f = sum_l K(., z_l) e_l a_l`` (with ``omega = U s``) at every sample point."""
    mat = np.reshape(np.asarray(s, dtype=float), (bundle.size, bundle.d))
    pooled = bundle.eval_left @ mat @ bundle.eval_right
    return pooled[: bundle.n], pooled[bundle.n :]


def _pair_diffs(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    return px[:, None, :] - py[None, :, :]


def _pair_sqdist(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    # coordinate-wise accumulation: d is small and contiguous (n, m) passes beat an (n, m, d) reduction
    sq = np.subtract.outer(px[:, 0], py[:, 0])
    sq *= sq
    for p in range(1, px.shape[1]):
        diff = np.subtract.outer(px[:, p], py[:, p])
        diff *= diff
        sq += diff
    return sq


def _smoothed_cost(px: np.ndarray, py: np.ndarray, kappa: float) -> np.ndarray:
    sq = _pair_sqdist(px, py)
    return sq / (np.sqrt(sq + kappa * kappa) + kappa)


def cost_matrix(s, bundle: GramBundle, kappa: float) -> np.ndarray:
    """Smoothed pairwise costs ``||f(x_i) - f(y_j)||_{2,kappa}``."""
    px, py = projected_points(s, bundle)
    return _smoothed_cost(px, py, kappa)


def _log_plan(cost: np.ndarray, u: np.ndarray, v: np.ndarray, eta: float) -> np.ndarray:
    return -cost / eta + u[:, None] + v[None, :]


def entropic_plan(cost, u, v, eta: float) -> np.ndarray:
    """``pi_ij = exp(-c_ij/eta + u_i + v_j)`` for an explicit cost matrix."""
    logp = _log_plan(np.asarray(cost, dtype=float), np.asarray(u, dtype=float), np.asarray(v, dtype=float), eta)
    if np.max(logp) > EXP_LIMIT or not np.all(np.isfinite(logp)):
        raise DivergenceError("plan exponent exceeds the representable range")
    return np.exp(logp)


def plan_matrix(u, v, s, bundle: GramBundle, config: SolverConfig) -> np.ndarray:
    """Plan at ``(u, v, s)`` using the smoothed costs of the projected points."""
    return entropic_plan(cost_matrix(s, bundle, config.kappa), u, v, config.eta)


def objective(u, v, s, bundle: GramBundle, config: SolverConfig) -> float:
    """Dual objective ``F(u, v, s)``."""
    plan = plan_matrix(u, v, s, bundle, config)
    return float(np.sum(plan) - np.mean(u) - np.mean(v))


def _u_from(cost, v, eta, n):
    return -np.log(n) - _lse(-cost / eta + v[None, :], axis=1)


def _v_from(cost, u, eta, m):
    return -np.log(m) - _lse(-cost / eta + u[:, None], axis=0)


def update_u(state: SolverState, bundle: GramBundle, config: SolverConfig) -> np.ndarray:
    """Exact minimizer of F in ``u``: every row of the plan sums to ``1/n``."""
    cost = cost_matrix(state.s, bundle, config.kappa)
    new_u = _u_from(cost, state.v, config.eta, bundle.n)
    if not np.all(np.isfinite(new_u)):
        raise DivergenceError("a plan row vanished numerically; eta is too small for the costs")
    return new_u


def update_v(state: SolverState, bundle: GramBundle, config: SolverConfig) -> np.ndarray:
    """Exact minimizer of F in ``v``: every column of the plan sums to ``1/m``."""
    cost = cost_matrix(state.s, bundle, config.kappa)
    new_v = _v_from(cost, state.u, config.eta, bundle.m)
    if not np.all(np.isfinite(new_v)):
        raise DivergenceError("a plan column vanished numerically; eta is too small for the costs")
    return new_v


def _gradient_from(px, py, plan, radius, bundle: GramBundle, eta: float) -> np.ndarray:
    # radius_ij = sqrt(||f(x_i) - f(y_j)||^2 + kappa^2) = smoothed cost + kappa
    w = plan / radius
    gx = -(w.sum(axis=1)[:, None] * px - w @ py) / eta
    gy = (w.T @ px - w.sum(axis=0)[:, None] * py) / eta
    g_pooled = np.vstack([gx, gy])
    return (bundle.eval_left.T @ g_pooled @ bundle.eval_right.T).ravel()


def euclidean_gradient(u, v, s, bundle: GramBundle, config: SolverConfig) -> np.ndarray:
    """Gradient of F in ``s`` (ambient, before tangent projection)."""
    px, py = projected_points(s, bundle)
    plan = plan_matrix(u, v, s, bundle, config)
    radius = _smoothed_cost(px, py, config.kappa) + config.kappa
    return _gradient_from(px, py, plan, radius, bundle, config.eta)


def au_bound(bundle: GramBundle) -> float:
    """Analytic bound ``||AU||_inf <= 2 sqrt(B)``."""
    return 2.0 * np.sqrt(bundle.bound_b)


def default_step_size(bundle: GramBundle, config: SolverConfig) -> float:
    """Step size that guarantees descent of F in ``s`` (retraction constants equal to 1)."""
    a2 = au_bound(bundle) ** 2
    ke = config.kappa * config.eta
    varrho = a2 / ke + bundle.n * bundle.m * a2 * a2 / (ke * ke)
    return 1.0 / (2.0 * a2 / ke + varrho)


_TINY = 1e-280


def _scaled_update(plan, pot, axis, size, cost_over_eta, other, other_axis):
    """Closed-form potential update ``pot + log((1/size) / marginal)``, in place on ``plan``.

    Falls back to log-sum-exp when a marginal underflowed or overflowed.
    """
    marg = plan.sum(axis=axis)
    if np.all(np.isfinite(marg)) and np.min(marg) > _TINY:
        step = -np.log(size * marg)
        if axis == 1:
            plan *= np.exp(step)[:, None]
        else:
            plan *= np.exp(step)[None, :]
        return pot + step, plan
    if axis == 1:
        new = -np.log(size) - _lse(cost_over_eta + other[None, :], axis=1)
        logp = cost_over_eta + new[:, None] + other[None, :]
    else:
        new = -np.log(size) - _lse(cost_over_eta + other[:, None], axis=0)
        logp = cost_over_eta + other[:, None] + new[None, :]
    return new, np.exp(logp)


def _unnormalized_plan(neg_cost, u, v) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp(neg_cost + u[:, None] + v[None, :])


def _f_at(cost, u, v, eta) -> float:
    plan = _unnormalized_plan(-cost / eta, u, v)
    return float(np.sum(plan) - np.mean(u) - np.mean(v))


def _solve_once(
    bundle: GramBundle,
    config: SolverConfig,
    s0: np.ndarray,
    callback: Optional[Callable[[str, SolverState], None]],
) -> tuple[SolverState, np.ndarray, np.ndarray, np.ndarray, np.ndarray, list, bool]:
    n, m, eta, kappa = bundle.n, bundle.m, config.eta, config.kappa
    tau_safe = default_step_size(bundle, config)
    if config.tau == "auto":
        tau = max(config.step_scale * eta, tau_safe)
    elif config.tau == "safe":
        tau = tau_safe
    else:
        tau = float(config.tau)

    state = SolverState(u=np.zeros(n), v=np.zeros(m), s=np.asarray(s0, dtype=float), tau=tau)
    px, py = projected_points(state.s, bundle)
    cost = _smoothed_cost(px, py, kappa)
    neg = -cost / eta
    # exp(-c/eta + u + v) at the current (u, v, s); normalized into the plan by the u/v updates
    plan = _unnormalized_plan(neg, state.u, state.v)
    trace = []
    converged = False

    for it in range(1, config.max_iters + 1):
        state.iter = it
        state.u, plan = _scaled_update(plan, state.u, 1, n, neg, state.v, 0)
        if not np.all(np.isfinite(state.u)):
            raise DivergenceError(f"row potentials diverged at iteration {it}")
        state.u_sup = max(state.u_sup, float(np.max(np.abs(state.u))))
        if callback is not None:
            callback("u", state)
        state.v, plan = _scaled_update(plan, state.v, 0, m, neg, state.u, 1)
        if not np.all(np.isfinite(state.v)):
            raise DivergenceError(f"column potentials diverged at iteration {it}")
        state.v_sup = max(state.v_sup, float(np.max(np.abs(state.v))))
        if callback is not None:
            callback("v", state)

        state.f_value = float(np.sum(plan) - np.mean(state.u) - np.mean(state.v))
        state.row_residual = float(np.linalg.norm(1.0 / n - plan.sum(axis=1)))
        state.col_residual = float(np.sum(np.abs(1.0 / m - plan.sum(axis=0))))
        if config.freeze_s:
            state.grad_norm = 0.0
        else:
            zeta = _gradient_from(px, py, plan, cost + kappa, bundle, eta)
            xi = tangent_project(state.s, zeta)
            state.grad_norm = float(np.linalg.norm(xi))
        trace.append((state.f_value, state.grad_norm))

        if (
            state.grad_norm <= config.eps1 / eta
            and state.row_residual <= config.eps2 / (4.0 * state.u_sup)
            and state.col_residual <= config.eps2 / (4.0 * state.v_sup)
        ):
            converged = True
            break
        if it == config.max_iters:
            break
        if config.freeze_s:
            continue

        f_old = state.f_value
        mean_uv = np.mean(state.u) + np.mean(state.v)
        while True:
            s_new = retract(state.s, -tau * xi)
            px_new, py_new = projected_points(s_new, bundle)
            cost_new = _smoothed_cost(px_new, py_new, kappa)
            neg_new = -cost_new / eta
            plan_new = _unnormalized_plan(neg_new, state.u, state.v)
            f_new = float(np.sum(plan_new) - mean_uv)
            if config.tau != "auto":
                break
            if f_new <= f_old:
                tau *= 1.5
                break
            tau *= 0.5
            if tau <= tau_safe:
                tau = tau_safe
                s_new = retract(state.s, -tau * xi)
                px_new, py_new = projected_points(s_new, bundle)
                cost_new = _smoothed_cost(px_new, py_new, kappa)
                neg_new = -cost_new / eta
                plan_new = _unnormalized_plan(neg_new, state.u, state.v)
                f_new = float(np.sum(plan_new) - mean_uv)
                break
        state.s, px, py, cost, neg, plan = s_new, px_new, py_new, cost_new, neg_new, plan_new
        state.tau = tau
        state.f_value = f_new
        if callback is not None:
            callback("s", state)

    return state, px, py, plan, cost, trace, converged


def _result_from(bundle, config, state, px, py, plan, cost, trace, converged) -> KpwResult:
    statistic = float(np.sum(plan * np.sqrt(_pair_sqdist(px, py))))
    return KpwResult(
        statistic=statistic,
        regularized_objective=float(np.sum(plan) - np.mean(state.u) - np.mean(state.v)),
        omega=bundle.omega(state.s),
        projected_x=px,
        projected_y=py,
        plan=plan,
        trace=trace,
        converged=converged,
        iters=state.iter,
        s=state.s,
        u=state.u,
        v=state.v,
        grad_norm=state.grad_norm,
        row_residual=state.row_residual,
        col_residual=state.col_residual,
        u_sup=state.u_sup,
        v_sup=state.v_sup,
    )


def initial_point(bundle: GramBundle, seed: int, restart: int = 0) -> np.ndarray:
    """Seeded uniform starting point on the sphere."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, restart])
    return random_sphere_point(bundle.dim, rng)


def bcd_solve(
    bundle: GramBundle,
    config: SolverConfig,
    s0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[str, SolverState], None]] = None,
) -> KpwResult:
    """Run the BCD iterations; with ``restarts > 1`` keep the largest statistic.

    The returned triple is ``(u^{t+1}, v^{t+1}, s^t)``: the point where the last
    Riemannian gradient was evaluated.  ``callback(stage, state)`` is invoked
    after each ``"u"``, ``"v"`` and ``"s"`` block update.
    """
    best = None
    for restart in range(config.restarts):
        start = s0 if (s0 is not None and restart == 0) else initial_point(bundle, config.seed, restart)
        if abs(np.linalg.norm(start) - 1.0) > 1e-12:
            start = start / np.linalg.norm(start)
        out = _solve_once(bundle, config, start, callback)
        result = _result_from(bundle, config, *out)
        log.debug("restart %d: statistic=%.6g iters=%d converged=%s", restart, result.statistic, result.iters, result.converged)
        if best is None or result.statistic > best.statistic:
            best = result
    return best


def kpw_distance(
    xs,
    ys,
    params: KernelParams,
    config: Optional[SolverConfig] = None,
    s0: Optional[np.ndarray] = None,
) -> KpwResult:
    """Kernel projected Wasserstein statistic between two samples."""
    config = config or SolverConfig()
    bundle = gram_bundle(xs, ys, params)
    return bcd_solve(bundle, config, s0=s0)
