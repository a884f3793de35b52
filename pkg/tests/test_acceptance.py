"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import csv
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from zeta_oracle import dense_zeta

from kpw.cli import main
from kpw.inference import gamma_threshold, zeta_factor
from kpw.kernel import KernelParams, gram_bundle, median_heuristic
from kpw.manifold import random_sphere_point, tangent_project
from kpw.oracle import exact_ot, finite_diff_gradient
from kpw.rng import derive_seed
from kpw.solver import (
    SolverConfig,
    SolverState,
    bcd_solve,
    euclidean_gradient,
    kpw_distance,
    objective,
    plan_matrix,
    projected_points,
    update_u,
    update_v,
)
from kpw.synthdata import gauss_mean_shift, hdgm
from kpw.tuning import TuningConfig, tune

TESTS_DIR = Path(__file__).parent
# fast solver used for Monte-Carlo loops; any deterministic statistic keeps the permutation test valid
MC_SOLVER = ["--eta", "0.1", "--max-iters", "100"]


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def _cli(capsys, *argv):
    code = main(list(argv))
    capsys.readouterr()
    assert code == 0
    return code


def _table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _instance(seed, n, m, D, d, rho=0.5, sigma2=None, shift=0.5):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=(n, D)), rng.normal(size=(m, D)) + shift
    if sigma2 is None:
        sigma2 = median_heuristic(np.vstack([xs, ys]))
    bundle = gram_bundle(xs, ys, KernelParams(sigma2, rho, d))
    return rng, bundle


def _descent_run(seed=0):
    """500 safe-step iterations on an n=m=20, D=5, d=2 instance, recording every block update."""
    _, bundle = _instance(seed, 20, 20, 5, 2)
    cfg = SolverConfig(eta=0.1, tau="safe", eps1=1e-300, eps2=1e-300, max_iters=500, seed=seed)
    events = []

    def callback(stage, state):
        events.append((stage, state.u.copy(), state.v.copy(), state.s.copy()))

    res = bcd_solve(bundle, cfg, callback=callback)
    return bundle, cfg, res, events


_DESCENT = {}


def _descent():
    if not _DESCENT:
        _DESCENT["run"] = _descent_run()
    return _DESCENT["run"]


# --- 1 ------------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence(report):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng, bundle = _instance(seed, 5, 5, 2, 1, shift=0.0)
        s = random_sphere_point(bundle.dim, rng)
        # Sinkhorn at this eta creeps towards its stopping certificate; 2000 sweeps already settle the cost
        cfg = SolverConfig(eta=1e-3, freeze_s=True, max_iters=2000)
        res = bcd_solve(bundle, cfg, s0=s)
        exact = exact_ot(res.projected_x, res.projected_y).cost
        worst = max(worst, abs(res.statistic - exact) / exact)
    elapsed = time.perf_counter() - start
    report(1, worst <= 0.01 and elapsed < 5.0, f"max relative gap to exact OT {worst:.2e} (<= 1e-2), {elapsed:.2f}s (< 5s)")


# --- 2 ------------------------------------------------------------------------------


def test_criterion_2_gradient_finite_differences(report):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        n, m = (int(v) for v in rng.integers(2, 7, size=2))
        d = int(rng.integers(1, 4))
        _, bundle = _instance(1000 + seed, n, m, 3, d)
        cfg = SolverConfig(eta=0.1, kappa=1e-2)
        s = random_sphere_point(bundle.dim, rng)
        state = SolverState(u=np.zeros(n), v=np.zeros(m), s=s)
        state.u = update_u(state, bundle, cfg)
        state.v = update_v(state, bundle, cfg)
        fd = finite_diff_gradient(lambda t: objective(state.u, state.v, t, bundle, cfg), s, 1e-6)
        got = euclidean_gradient(state.u, state.v, s, bundle, cfg)
        worst = max(worst, np.max(np.abs(got - fd)) / np.max(np.abs(fd)))
    report(2, worst <= 1e-5, f"max relative gradient error {worst:.2e} over 20 instances (<= 1e-5)")


# --- 3 ------------------------------------------------------------------------------


def test_criterion_3_monotone_descent_and_lower_bound(report):
    bundle, cfg, res, events = _descent()
    values = [objective(u, v, s, bundle, cfg) for _, u, v, s in events]
    rises = max(b - a for a, b in zip(values, values[1:]))
    floor = 1.0 - 2.0 * math.sqrt(bundle.bound_b) / cfg.eta - 1e-9
    ok = res.iters == 500 and rises <= 1e-9 and min(values) >= floor
    report(3, ok, f"{res.iters} iterations, largest block increase {rises:.2e} (<= 1e-9), min F {min(values):.4f} >= {floor:.4f}")


# --- 4 ------------------------------------------------------------------------------


def test_criterion_4_marginal_exactness(report):
    bundle, cfg, _, events = _descent()
    row_dev = col_dev = 0.0
    for stage, u, v, s in events:
        plan = plan_matrix(u, v, s, bundle, cfg)
        if stage == "u":
            row_dev = max(row_dev, np.max(np.abs(plan.sum(axis=1) - 1.0 / bundle.n)))
        elif stage == "v":
            col_dev = max(col_dev, np.max(np.abs(plan.sum(axis=0) - 1.0 / bundle.m)))
    ok = row_dev <= 1e-12 and col_dev <= 1e-12
    report(4, ok, f"max row deviation {row_dev:.1e}, max column deviation {col_dev:.1e} (<= 1e-12)")


# --- 5 ------------------------------------------------------------------------------


def test_criterion_5_rkhs_constraint_and_projection_bound(report):
    bundle, _, _, events = _descent()
    gram = bundle.signed_gram
    root_b = math.sqrt(bundle.bound_b)
    norm_err = overshoot = 0.0
    for stage, _, _, s in events:
        if stage != "s":
            continue
        omega = bundle.omega(s)
        norm_err = max(norm_err, abs(omega @ gram @ omega - 1.0))
        px, py = projected_points(s, bundle)
        overshoot = max(overshoot, np.linalg.norm(np.vstack([px, py]), axis=1).max() - root_b)
    ok = norm_err <= 1e-8 and overshoot <= 1e-8
    report(5, ok, f"max |w'Gw - 1| {norm_err:.1e} (<= 1e-8), max norm - sqrt(B) {overshoot:.2e} (<= 1e-8)")


# --- 6 ------------------------------------------------------------------------------


def test_criterion_6_termination_semantics(report):
    checked = 0
    ok = True
    for seed in range(10):
        _, bundle = _instance(200 + seed, 8, 6, 3, 2)
        cfg = SolverConfig(eta=0.1, eps1=1e-3, eps2=1e-3, max_iters=5000, seed=seed)
        res = bcd_solve(bundle, cfg)
        if not res.converged:
            continue
        checked += 1
        xi = tangent_project(res.s, euclidean_gradient(res.u, res.v, res.s, bundle, cfg))
        plan = plan_matrix(res.u, res.v, res.s, bundle, cfg)
        u_sup = max(res.u_sup, np.max(np.abs(res.u)))
        v_sup = max(res.v_sup, np.max(np.abs(res.v)))
        ok &= np.linalg.norm(xi) <= cfg.eps1 / cfg.eta
        ok &= np.linalg.norm(1.0 / bundle.n - plan.sum(axis=1)) <= cfg.eps2 / (4 * u_sup)
        ok &= np.sum(np.abs(1.0 / bundle.m - plan.sum(axis=0))) <= cfg.eps2 / (4 * v_sup)
    report(6, bool(ok) and checked >= 5, f"stationarity conditions re-verified on {checked} of 10 converged solves")


# --- 7 ------------------------------------------------------------------------------


def test_criterion_7_zeta_and_gamma(report):
    worst = 0.0
    for N in (10, 100, 1000):
        for d in (1, 2, 5):
            for B in (0.5, 1.0, 4.0):
                oracle = dense_zeta(N, d, B)
                worst = max(worst, abs(zeta_factor(N, d, B) - oracle) / oracle)
    monotone = True
    for d, B in ((1, 1.0), (2, 1.5), (5, 4.0)):
        for alpha in (0.01, 0.05, 0.2):
            vals = [gamma_threshold(n, n, alpha, d, B) for n in (5, 20, 50, 125, 250, 625)]
            monotone &= all(a > b for a, b in zip(vals, vals[1:]))
            vals = [gamma_threshold(40, m, alpha, d, B) for m in (10, 30, 60, 200)]
            monotone &= all(a > b for a, b in zip(vals, vals[1:]))
        for n in (20, 100):
            vals = [gamma_threshold(n, n, a, d, B) for a in (0.4, 0.2, 0.1, 0.05, 0.01, 0.001)]
            monotone &= all(a < b for a, b in zip(vals, vals[1:]))
    report(7, worst <= 1e-6 and monotone, f"max zeta relative error {worst:.1e} over 27 cells (<= 1e-6), gamma monotone: {monotone}")


# --- 8 ------------------------------------------------------------------------------


def test_criterion_8_convergence_smoke_tier(report, capsys, tmp_path):
    table = tmp_path / "conv.csv"
    start = time.perf_counter()
    _cli(capsys, "convergence", "--dims", "30", "--proj-dims", "1,2", "--csv-out", str(table))
    elapsed = time.perf_counter() - start
    rows = _table(table)
    ns = [5, 20, 50, 125, 250, 625]
    ok = len(rows) == 2 * len(ns) * 10
    details = []
    for d in ("1", "2"):
        med = [np.median([float(r["statistic"]) for r in rows if r["d"] == d and int(r["n"]) == n]) for n in ns]
        inversions = sum(b > a for a, b in zip(med, med[1:]))
        ok &= med[-1] < med[0] and inversions <= 1
        details.append(f"d={d}: median {med[0]:.3f} -> {med[-1]:.3f}, {inversions} inversion(s)")
    ok &= elapsed <= 180
    report(8, bool(ok), f"D=30; {'; '.join(details)}; {elapsed:.0f}s (<= 180s)")


# --- 9 ------------------------------------------------------------------------------


def test_criterion_9_null_calibration(report, capsys, tmp_path):
    perm, analytic = tmp_path / "perm.csv", tmp_path / "analytic.csv"
    common = ["power", "--null", "--family", "mean_shift", "--dims", "10", "--trials", "100", "--n", "100", *MC_SOLVER]
    _cli(capsys, *common, "--method", "permutation", "--perms", "99", "--alpha", "0.05", "--csv-out", str(perm))
    _cli(capsys, *common, "--method", "analytic", "--alpha", "0.05", "--csv-out", str(analytic))
    perm_rate = np.mean([int(r["reject"]) for r in _table(perm)])
    analytic_rate = np.mean([int(r["reject"]) for r in _table(analytic)])
    ok = 0.01 <= perm_rate <= 0.10 and analytic_rate <= 0.05
    report(9, ok, f"permutation rejection {perm_rate:.2f} (in [0.01, 0.10]), analytic {analytic_rate:.2f} (<= 0.05)")


# --- 10 -----------------------------------------------------------------------------


def test_criterion_10_power_direction(report, capsys, tmp_path):
    table = tmp_path / "power.csv"
    _cli(capsys, "power", "--family", "mean_shift", "--dims", "5,50", "--trials", "50", "--n", "100", "--perms", "99", *MC_SOLVER, "--csv-out", str(table))
    rows = _table(table)
    power = {D: np.mean([int(r["reject"]) for r in rows if r["D"] == D]) for D in ("5", "50")}
    ok = power["5"] >= power["50"] and power["5"] >= 0.5
    report(10, ok, f"power at D=5 {power['5']:.2f} >= D=50 {power['50']:.2f}, and >= 0.5")


# --- 11 -----------------------------------------------------------------------------


def test_criterion_11_tuned_kernel_beats_median(report):
    wins = 0
    pairs = []
    for seed in range(10):
        xs = hdgm(400, 2, derive_seed(seed, 0))
        ys = hdgm(400, 2, derive_seed(seed, 1), is_alternative=True)
        sc = SolverConfig(eta=0.1, max_iters=300, seed=seed)
        tuned = tune(xs[:100], ys[:100], TuningConfig(num_bootstrap=10, max_sa_iters=100, seed=seed), sc)
        median = KernelParams(median_heuristic(np.vstack([xs, ys])), 0.5, 1)
        base = kpw_distance(xs, ys, median, sc).statistic
        better = kpw_distance(xs, ys, tuned.params(1), sc).statistic
        wins += better > base
        pairs.append(f"{better:.3f}/{base:.3f}")
    report(11, wins >= 7, f"tuned > median in {wins} of 10 runs (>= 7); tuned/median: {' '.join(pairs)}")


# --- 12 -----------------------------------------------------------------------------


def test_criterion_12_property_suite(report):
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(TESTS_DIR / "test_properties.py")],
        capture_output=True,
        text=True,
        cwd=TESTS_DIR.parent,
    )
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(12, proc.returncode == 0 and elapsed < 60, f"property suite: {summary}; {elapsed:.1f}s (< 60s)")
