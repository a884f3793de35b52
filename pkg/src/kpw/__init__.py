"""Kernel projected Wasserstein distance and nonparametric two-sample tests."""

__version__ = "0.1.0"

from .inference import TestOutcome, analytic_test, gamma_threshold, permutation_test, type2_bound, zeta_factor
from .kernel import GramBundle, KernelParams, gram_bundle, kernel_bound, median_heuristic
from .oracle import exact_ot
from .solver import KpwResult, SolverConfig, bcd_solve, kpw_distance
from .synthdata import DatasetSpec, load_csv, save_csv
from .tuning import TuningConfig, TuningResult, bootstrap_mse, tune

__all__ = [
    "DatasetSpec",
    "GramBundle",
    "KernelParams",
    "KpwResult",
    "SolverConfig",
    "TestOutcome",
    "TuningConfig",
    "TuningResult",
    "analytic_test",
    "bcd_solve",
    "bootstrap_mse",
    "exact_ot",
    "gamma_threshold",
    "gram_bundle",
    "kernel_bound",
    "kpw_distance",
    "load_csv",
    "median_heuristic",
    "permutation_test",
    "save_csv",
    "tune",
    "type2_bound",
    "zeta_factor",
]
