"""Unit-sphere primitives and the smoothed Euclidean norm."""

from __future__ import annotations

import numpy as np

SPHERE_TOL = 1e-12


class RetractionError(ArithmeticError):
    """Raised when a retraction step lands on the origin."""


def smoothed_norm(x, kappa: float):
    """``sqrt(||x||^2 + kappa^2) - kappa`` along the last axis.

    Written as ``||x||^2 / (sqrt(||x||^2 + kappa^2) + kappa)`` to avoid
    cancellation for small ``x``.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    sq = np.sum(np.square(x), axis=-1)
    return sq / (np.sqrt(sq + kappa * kappa) + kappa)


def tangent_project(s, zeta) -> np.ndarray:
    """Orthogonal projection of ``zeta`` onto the tangent space of the sphere at ``s``."""
    s = np.asarray(s, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if s.shape != zeta.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {zeta.shape}")
    return zeta - np.dot(s, zeta) * s


def retract(s, delta) -> np.ndarray:
    """Normalization retraction ``(s + delta) / ||s + delta||``."""
    step = np.asarray(s, dtype=float) + np.asarray(delta, dtype=float)
    norm = np.linalg.norm(step)
    if not norm > 0 or not np.isfinite(norm):
        raise RetractionError("retraction step reached the origin; reduce the step size")
    return step / norm


def random_sphere_point(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw on the unit sphere in ``R^dim``."""
    g = rng.standard_normal(dim)
    return g / np.linalg.norm(g)


def on_sphere(s, tol: float = SPHERE_TOL) -> bool:
    return abs(np.linalg.norm(s) - 1.0) <= tol
