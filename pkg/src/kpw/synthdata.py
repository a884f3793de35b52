"""Seeded synthetic datasets for the convergence, visualization and power experiments."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .rng import counter_normal, counter_uniform, derive_seed

FAMILIES = ("uniform_cube", "gauss_mean_shift", "gauss_cov_shift", "hdgm")

HDGM_MEANS = np.array([[0.0, 0.0], [5.0, 0.0]])
HDGM_ALT_COV = np.array([[1.0, 0.5], [0.5, 1.0]])

# streams 0 (uniform) and 1 (Gaussian, consumes uniform streams 3 and 4) are fixed so that
# null and alternative draws with the same seed share their noise
_UNIFORM_STREAM = 0
_NORMAL_STREAM = 1


class CsvFormatError(ValueError):
    pass


def _check_sizes(n: int, D: int) -> None:
    if n < 1 or D < 1:
        raise ValueError(f"n and D must be positive, got n={n}, D={D}")


def uniform_cube(n: int, D: int, seed: int) -> np.ndarray:
    """``n`` draws from the uniform distribution on ``[-1, 1]^D``."""
    _check_sizes(n, D)
    return 2.0 * counter_uniform(seed, _UNIFORM_STREAM, n, D) - 1.0


def gauss_mean_shift(n: int, D: int, seed: int, is_alternative: bool = False) -> np.ndarray:
    """``N(0, I_D)``, or ``N(0.8 * 1 / sqrt(D), I_D)`` under the alternative."""
    _check_sizes(n, D)
    z = counter_normal(seed, _NORMAL_STREAM, n, D)
    if is_alternative:
        z = z + 0.8 / np.sqrt(D)
    return z


def gauss_cov_shift(n: int, D: int, intrinsic_dim: int, seed: int, is_alternative: bool = False) -> np.ndarray:
    """``N(0, I_D)``, or variance 0.25 on the first ``intrinsic_dim`` coordinates under the alternative."""
    _check_sizes(n, D)
    if not 1 <= intrinsic_dim <= D:
        raise ValueError(f"intrinsic_dim must lie in [1, D={D}], got {intrinsic_dim}")
    z = counter_normal(seed, _NORMAL_STREAM, n, D)
    if is_alternative:
        z[:, :intrinsic_dim] *= 0.5
    return z


def hdgm(n: int, D: int, seed: int, is_alternative: bool = False, return_labels: bool = False):
    """Equal-weight two-component Gaussian mixture in the plane.

    Components are centred at (0, 0) and (5, 0) with identity covariance, or
    covariance ``[[1, .5], [.5, 1]]`` under the alternative.  With
    ``return_labels`` the component index of every row is returned as well.
    """
    if D != 2:
        raise ValueError(f"the HDGM dataset is defined only for D = 2, got D = {D}")
    _check_sizes(n, D)
    z = counter_normal(seed, _NORMAL_STREAM, n, 2)
    label = (counter_uniform(seed, _UNIFORM_STREAM, n, 1)[:, 0] >= 0.5).astype(int)
    if is_alternative:
        z = z @ np.linalg.cholesky(HDGM_ALT_COV).T
    points = z + HDGM_MEANS[label]
    return (points, label) if return_labels else points


@dataclass(frozen=True)
class DatasetSpec:
    family: str
    D: int
    n: int
    m: int
    intrinsic_dim: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        _check_sizes(self.n, self.D)
        _check_sizes(self.m, self.D)
        if self.family == "gauss_cov_shift":
            if self.intrinsic_dim is None or not 1 <= self.intrinsic_dim <= self.D:
                raise ValueError("gauss_cov_shift needs 1 <= intrinsic_dim <= D")
        if self.family == "hdgm" and self.D != 2:
            raise ValueError("the HDGM dataset is defined only for D = 2")

    def draw(self, size: int, seed: int, is_alternative: bool) -> np.ndarray:
        if self.family == "uniform_cube":
            return uniform_cube(size, self.D, seed)
        if self.family == "gauss_mean_shift":
            return gauss_mean_shift(size, self.D, seed, is_alternative)
        if self.family == "gauss_cov_shift":
            return gauss_cov_shift(size, self.D, self.intrinsic_dim, seed, is_alternative)
        return hdgm(size, self.D, seed, is_alternative)

    def generate(self, is_alternative: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """``xs`` from the null distribution and ``ys`` from the null or alternative one."""
        xs = self.draw(self.n, derive_seed(self.seed, 0), False)
        ys = self.draw(self.m, derive_seed(self.seed, 1), is_alternative)
        return xs, ys

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        return cls(**data)


def load_csv(path) -> np.ndarray:
    """Read a headerless numeric CSV (one observation per row)."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            if not all(np.isfinite(values)):
                raise CsvFormatError(f"{path}:{lineno}: non-finite value")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CsvFormatError(f"{path}:{lineno}: expected {width} columns, found {len(values)}")
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no observations")
    return np.array(rows, dtype=float)


def save_csv(points, path) -> None:
    """Write a matrix as headerless CSV with round-trip precision."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])
