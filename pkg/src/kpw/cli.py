"""Command-line front end: distances, tests, tuning and the experiment protocols.

Exit codes: 0 success (converged / H0 accepted), 1 input or runtime error,
2 solver did not converge, 3 H0 rejected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from .inference import analytic_test, permutation_test
from .kernel import KernelParams, median_heuristic
from .rng import derive_seed
from .solver import SolverConfig, kpw_distance
from .synthdata import DatasetSpec, load_csv, save_csv
from .tuning import TuningConfig, tune

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_REJECT = 3

POWER_FAMILIES = {"mean_shift": "gauss_mean_shift", "cov_shift": "gauss_cov_shift"}

_SOLVER_DEFAULTS = {
    "eta": 1e-2,
    "kappa": 1e-2,
    "tau": "auto",
    "eps1": 1e-3,
    "eps2": 1e-3,
    "max_iters": 1000,
    "restarts": 1,
    "seed": 0,
}
_KERNEL_DEFAULTS = {"sigma2": "median", "rho": 0.5, "proj_dim": 1}
_PAIR_DEFAULTS = {"x": None, "y": None, "json_out": None}

DEFAULTS = {
    "distance": {**_PAIR_DEFAULTS, **_KERNEL_DEFAULTS, **_SOLVER_DEFAULTS},
    "test": {
        **_PAIR_DEFAULTS,
        **_KERNEL_DEFAULTS,
        **_SOLVER_DEFAULTS,
        "method": "permutation",
        "alpha": 0.05,
        "perms": 99,
    },
    "tune": {
        **_PAIR_DEFAULTS,
        **_KERNEL_DEFAULTS,
        **_SOLVER_DEFAULTS,
        "sa_iters": 100,
        "bootstrap": 20,
        "csv_out": None,
    },
    "project": {**_PAIR_DEFAULTS, **_KERNEL_DEFAULTS, **_SOLVER_DEFAULTS, "csv_out": None},
    "convergence": {
        **_SOLVER_DEFAULTS,
        "family": "uniform_cube",
        "dims": [30, 40, 60],
        "proj_dims": [1, 2, 5],
        "ns": [5, 20, 50, 125, 250, 625],
        "trials": 10,
        "sigma2": 3.0,
        "rho": 0.5,
        "jobs": 1,
        "json_out": None,
        "csv_out": None,
    },
    "power": {
        **_SOLVER_DEFAULTS,
        "family": "mean_shift",
        "dims": [5, 10, 20, 30, 40, 50],
        "trials": 100,
        "n": 100,
        "intrinsic_dim": 1,
        "null": False,
        "method": "permutation",
        "alpha": 0.05,
        "perms": 99,
        "sigma2": "median",
        "rho": 0.5,
        "proj_dim": 1,
        "jobs": 1,
        "json_out": None,
        "csv_out": None,
    },
}


class CliError(Exception):
    """Input problem reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with "not converged"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _sigma2(text: str):
    return text if text == "median" else float(text)


def _tau(text: str):
    return text if text in ("auto", "safe") else float(text)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--eta", type=float, help="entropic regularization (default 1e-2)")
    g.add_argument("--kappa", type=float, help="norm smoothing (default 1e-2)")
    g.add_argument("--tau", type=_tau, help="step size: auto, safe or a positive number")
    g.add_argument("--eps1", type=float, help="gradient tolerance (default 1e-3)")
    g.add_argument("--eps2", type=float, help="marginal tolerance (default 1e-3)")
    g.add_argument("--max-iters", type=int, help="iteration cap (default 1000)")
    g.add_argument("--restarts", type=int, help="random restarts (default 1)")
    g.add_argument("--seed", type=int, help="master seed (default: $KPW_SEED or 0)")
    p.add_argument("--config", help="JSON file of settings; flags take precedence")
    p.add_argument("--json-out", help="also write the JSON result to this path")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_kernel_flags(p: argparse.ArgumentParser, sigma_help: str = "'median' or a positive number") -> None:
    p.add_argument("--sigma2", type=_sigma2, help=f"Gaussian bandwidth: {sigma_help}")
    p.add_argument("--rho", type=float, help="output-matrix mixing weight in [0, 1] (default 0.5)")
    p.add_argument("--proj-dim", type=int, help="projection dimension d (default 1)")


def _add_pair_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x", help="CSV of the first sample (rows are observations)")
    p.add_argument("--y", help="CSV of the second sample")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kpw", description="Kernel projected Wasserstein distance and two-sample tests.")
    parser.add_argument("--version", action="version", version=f"kpw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("distance", help="compute the KPW statistic between two samples")
    _add_pair_flags(p)
    _add_kernel_flags(p)
    _add_solver_flags(p)

    p = sub.add_parser("test", help="two-sample test (exit 3 rejects H0)")
    _add_pair_flags(p)
    _add_kernel_flags(p)
    _add_solver_flags(p)
    p.add_argument("--method", choices=["analytic", "permutation"])
    p.add_argument("--alpha", type=float, help="test level in (0, 0.5) (default 0.05)")
    p.add_argument("--perms", type=int, help="number of permutations (default 99)")

    p = sub.add_parser("tune", help="select sigma2 and rho by simulated annealing")
    _add_pair_flags(p)
    _add_kernel_flags(p, "initial value, 'median' or a positive number")
    _add_solver_flags(p)
    p.add_argument("--sa-iters", type=int, help="annealing proposals (default 100)")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples L (default 20)")
    p.add_argument("--csv-out", help="write the objective trace as CSV")

    p = sub.add_parser("project", help="write the optimally projected points as CSV")
    _add_pair_flags(p)
    _add_kernel_flags(p)
    _add_solver_flags(p)
    p.add_argument("--csv-out", help="output stem (required); writes STEM_x.csv and STEM_y.csv")

    p = sub.add_parser("convergence", help="statistic versus sample size under the null")
    p.add_argument("--family", choices=["uniform_cube", "gauss_mean_shift", "hdgm"])
    p.add_argument("--dims", type=_int_list, help="ambient dimensions (default 30,40,60)")
    p.add_argument("--proj-dims", type=_int_list, help="projection dimensions (default 1,2,5)")
    p.add_argument("--ns", type=_int_list, help="sample sizes (default 5,20,50,125,250,625)")
    p.add_argument("--trials", type=int, help="trials per cell (default 10)")
    p.add_argument("--sigma2", type=_sigma2, help="bandwidth (default 3)")
    p.add_argument("--rho", type=float, help="mixing weight (default 0.5)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--csv-out", help="write the (D, d, n, trial, statistic) table")
    _add_solver_flags(p)

    p = sub.add_parser("power", help="Monte-Carlo rejection rates across dimensions")
    p.add_argument("--family", choices=sorted(POWER_FAMILIES))
    p.add_argument("--dims", type=_int_list, help="ambient dimensions (default 5,10,20,30,40,50)")
    p.add_argument("--trials", type=int, help="trials per dimension (default 100)")
    p.add_argument("--n", type=int, help="sample size per group (default 100)")
    p.add_argument("--intrinsic-dim", type=int, help="shifted coordinates for cov_shift (default 1)")
    p.add_argument("--null", action="store_const", const=True, help="draw both samples from the null")
    p.add_argument("--method", choices=["analytic", "permutation"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--perms", type=int)
    _add_kernel_flags(p)
    p.add_argument("--jobs", type=int)
    p.add_argument("--csv-out", help="write the (D, trial, reject) table")
    _add_solver_flags(p)
    return parser


def resolve_config(command: str, args: argparse.Namespace, environ=os.environ) -> dict:
    """Merge built-in defaults, the optional JSON config file and explicit flags.

    ``KPW_SEED`` replaces only the built-in default seed.
    """
    cfg = dict(DEFAULTS[command])
    if environ.get("KPW_SEED") not in (None, ""):
        try:
            cfg["seed"] = int(environ["KPW_SEED"])
        except ValueError:
            raise CliError(f"KPW_SEED must be an integer, got {environ['KPW_SEED']!r}") from None
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise CliError("config file must hold a JSON object")
        unknown = sorted(set(from_file) - set(cfg))
        if unknown:
            raise CliError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(from_file)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("x", "y"):
        if key in cfg and cfg[key] is None:
            raise CliError(f"--{key} is required")
    return cfg


def manifest(command: str, cfg: dict) -> dict:
    """Provenance record; ``SOURCE_DATE_EPOCH`` pins the timestamp for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "versions": f"kpw {__version__}; numpy {np.__version__}; scipy {scipy.__version__}; "
        f"python {platform.python_version()}",
        "timestamp": when.strftime("%Y-%m-%dT%H:%M:%SZ"),
    }


def _emit(payload: dict, cfg: dict) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    sys.stdout.write(text)
    if cfg.get("json_out"):
        Path(cfg["json_out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["json_out"]).write_bytes(text.encode("utf-8"))


def solver_config(cfg: dict, seed: Optional[int] = None) -> SolverConfig:
    return SolverConfig(
        eta=float(cfg["eta"]),
        kappa=float(cfg["kappa"]),
        tau=cfg["tau"],
        eps1=float(cfg["eps1"]),
        eps2=float(cfg["eps2"]),
        max_iters=int(cfg["max_iters"]),
        restarts=int(cfg["restarts"]),
        seed=int(cfg["seed"] if seed is None else seed),
    )


def _load_pair(cfg: dict) -> tuple[np.ndarray, np.ndarray]:
    xs = load_csv(cfg["x"])
    ys = load_csv(cfg["y"])
    if xs.shape[1] != ys.shape[1]:
        raise CliError(f"samples have different dimensions: {xs.shape[1]} and {ys.shape[1]}")
    return xs, ys


def kernel_params(cfg: dict, xs: np.ndarray, ys: np.ndarray) -> KernelParams:
    sigma2 = cfg["sigma2"]
    if sigma2 == "median":
        sigma2 = median_heuristic(np.vstack([xs, ys]))
    return KernelParams(float(sigma2), float(cfg["rho"]), int(cfg["proj_dim"]))


def cmd_distance(cfg: dict) -> int:
    xs, ys = _load_pair(cfg)
    params = kernel_params(cfg, xs, ys)
    result = kpw_distance(xs, ys, params, solver_config(cfg))
    payload = result.to_dict()
    payload["kernel"] = params.to_dict()
    payload["manifest"] = manifest("distance", cfg)
    _emit(payload, cfg)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_test(cfg: dict) -> int:
    if not 0.0 < float(cfg["alpha"]) < 0.5:
        raise CliError(f"--alpha must lie in (0, 0.5), got {cfg['alpha']}")
    xs, ys = _load_pair(cfg)
    params = kernel_params(cfg, xs, ys)
    sc = solver_config(cfg)
    if cfg["method"] == "analytic":
        outcome = analytic_test(xs, ys, params, sc, float(cfg["alpha"]))
    else:
        outcome = permutation_test(xs, ys, params, sc, int(cfg["perms"]), float(cfg["alpha"]), seed=int(cfg["seed"]))
    payload = outcome.to_dict()
    payload["kernel"] = params.to_dict()
    payload["manifest"] = manifest("test", cfg)
    _emit(payload, cfg)
    return EXIT_REJECT if outcome.reject_null else EXIT_OK


def cmd_tune(cfg: dict) -> int:
    xs, ys = _load_pair(cfg)
    tc = TuningConfig(
        num_bootstrap=int(cfg["bootstrap"]),
        max_sa_iters=int(cfg["sa_iters"]),
        rho_init=float(cfg["rho"]),
        sigma2_init=cfg["sigma2"],
        seed=int(cfg["seed"]),
    )
    result = tune(xs, ys, tc, solver_config(cfg), d=int(cfg["proj_dim"]))
    if cfg.get("csv_out"):
        Path(cfg["csv_out"]).parent.mkdir(parents=True, exist_ok=True)
        result.write_trace_csv(cfg["csv_out"])
    payload = result.to_dict()
    payload["manifest"] = manifest("tune", cfg)
    _emit(payload, cfg)
    return EXIT_OK


def cmd_project(cfg: dict) -> int:
    if not cfg.get("csv_out"):
        raise CliError("--csv-out is required")
    xs, ys = _load_pair(cfg)
    params = kernel_params(cfg, xs, ys)
    result = kpw_distance(xs, ys, params, solver_config(cfg))
    stem = cfg["csv_out"]
    x_path, y_path = f"{stem}_x.csv", f"{stem}_y.csv"
    save_csv(result.projected_x, x_path)
    save_csv(result.projected_y, y_path)
    payload = {
        "statistic": result.statistic,
        "converged": result.converged,
        "projected_x": x_path,
        "projected_y": y_path,
        "kernel": params.to_dict(),
        "manifest": manifest("project", cfg),
    }
    _emit(payload, cfg)
    return EXIT_OK


def _run_ordered(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def convergence_trial(task: tuple) -> float:
    """Null-sample statistic for one (D, d, n, trial) cell of the convergence table."""
    cfg, D, d, n, trial = task
    data_seed = derive_seed(int(cfg["seed"]), D, n, trial)
    spec = DatasetSpec(cfg["family"], D, n, n, seed=data_seed)
    xs, ys = spec.generate(is_alternative=False)
    params = kernel_params({**cfg, "proj_dim": d}, xs, ys)
    sc = solver_config(cfg, seed=derive_seed(int(cfg["seed"]), D, d, n, trial))
    return kpw_distance(xs, ys, params, sc).statistic


def cmd_convergence(cfg: dict) -> int:
    if cfg["family"] == "hdgm" and any(D != 2 for D in cfg["dims"]):
        raise CliError("the hdgm family needs --dims 2")
    cells = [(D, d, n, t) for D in cfg["dims"] for d in cfg["proj_dims"] for n in cfg["ns"] for t in range(cfg["trials"])]
    stats = _run_ordered(convergence_trial, [(cfg, *c) for c in cells], int(cfg["jobs"]))
    rows = [(*c, s) for c, s in zip(cells, stats)]
    if cfg.get("csv_out"):
        _write_table(cfg["csv_out"], ["D", "d", "n", "trial", "statistic"], rows)
    medians = []
    for D in cfg["dims"]:
        for d in cfg["proj_dims"]:
            for n in cfg["ns"]:
                vals = [r[4] for r in rows if r[:3] == (D, d, n)]
                medians.append({"D": D, "d": d, "n": n, "median_statistic": float(np.median(vals))})
    _emit({"medians": medians, "rows": len(rows), "manifest": manifest("convergence", cfg)}, cfg)
    return EXIT_OK


def power_trial(task: tuple) -> tuple[float, Optional[float], bool]:
    """(statistic, p-value, reject) for one trial of the power experiment."""
    cfg, D, trial = task
    family = POWER_FAMILIES[cfg["family"]]
    intrinsic = int(cfg["intrinsic_dim"]) if family == "gauss_cov_shift" else None
    spec = DatasetSpec(family, D, int(cfg["n"]), int(cfg["n"]), intrinsic, seed=derive_seed(int(cfg["seed"]), D, trial))
    xs, ys = spec.generate(is_alternative=not cfg["null"])
    params = kernel_params(cfg, xs, ys)
    trial_seed = derive_seed(int(cfg["seed"]), D, trial, 1)
    sc = solver_config(cfg, seed=trial_seed)
    if cfg["method"] == "analytic":
        out = analytic_test(xs, ys, params, sc, float(cfg["alpha"]))
    else:
        out = permutation_test(xs, ys, params, sc, int(cfg["perms"]), float(cfg["alpha"]), seed=trial_seed)
    return out.statistic, out.p_value, out.reject_null


def cmd_power(cfg: dict) -> int:
    if not 0.0 < float(cfg["alpha"]) < 0.5:
        raise CliError(f"--alpha must lie in (0, 0.5), got {cfg['alpha']}")
    if cfg["family"] == "cov_shift" and any(not 1 <= int(cfg["intrinsic_dim"]) <= D for D in cfg["dims"]):
        raise CliError("--intrinsic-dim must lie between 1 and every D")
    cells = [(D, t) for D in cfg["dims"] for t in range(cfg["trials"])]
    outs = _run_ordered(power_trial, [(cfg, *c) for c in cells], int(cfg["jobs"]))
    power = {D: float(np.mean([o[2] for c, o in zip(cells, outs) if c[0] == D])) for D in cfg["dims"]}
    rows = [(D, t, int(o[2]), o[0], "" if o[1] is None else o[1], power[D]) for (D, t), o in zip(cells, outs)]
    if cfg.get("csv_out"):
        _write_table(cfg["csv_out"], ["D", "trial", "reject", "statistic", "p_value", "power"], rows)
    summary = [{"D": D, "power": power[D]} for D in cfg["dims"]]
    _emit({"power": summary, "rows": len(rows), "manifest": manifest("power", cfg)}, cfg)
    return EXIT_OK


def _write_table(path, header: list, rows: list) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


COMMANDS = {
    "distance": cmd_distance,
    "test": cmd_test,
    "tune": cmd_tune,
    "project": cmd_project,
    "convergence": cmd_convergence,
    "power": cmd_power,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except (CliError, ValueError, OSError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"kpw {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
