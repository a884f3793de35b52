"""Matrix-valued Gaussian kernels ``K(x, x') = k(x, x') * P`` and their Gram bundle."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.spatial.distance import cdist, pdist

JITTER_BASE = 1e-10
JITTER_CAP = 1e-4
WHITEN_TOL = 1e-9  # Frobenius error allowed in U^T G U - I


class DegenerateGramError(la.LinAlgError):
    """Raised when no admissible jitter makes the signed Gram matrix positive definite."""


def check_samples(points, name: str = "samples") -> np.ndarray:
    """Validate an ``(n, D)`` sample matrix and return it as a float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty (n, D) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class KernelParams:
    """Gaussian bandwidth ``sigma2``, output mixing weight ``rho`` and projected dimension ``d``."""

    sigma2: float
    rho: float = 0.5
    d: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "d", int(self.d))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "KernelParams":
        return cls(sigma2=data["sigma2"], rho=data["rho"], d=data["d"])

    @classmethod
    def from_json(cls, text: str) -> "KernelParams":
        return cls.from_dict(json.loads(text))


def gaussian_kernel(x, x2, sigma2: float) -> float:
    """``exp(-||x - x2||^2 / (2 sigma2))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    diff = x - x2
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma2)))


def gaussian_gram(a, b, sigma2: float) -> np.ndarray:
    """Scalar Gaussian Gram matrix between the rows of ``a`` and ``b``."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    sq = cdist(np.asarray(a, dtype=float), np.asarray(b, dtype=float), "sqeuclidean")
    return np.exp(-sq / (2.0 * sigma2))


def output_matrix(rho: float, d: int) -> np.ndarray:
    """Output-structure matrix ``P = (1 - rho) 11^T + rho I_d``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    return (1.0 - rho) * np.ones((d, d)) + rho * np.eye(d)


def kernel_bound(params: KernelParams) -> float:
    """Uniform bound ``B`` with ``0 <= K(x, x') <= B I``: ``lambda_max(P)`` since ``k <= 1``."""
    return params.rho + (1.0 - params.rho) * params.d


def median_heuristic(pooled) -> float:
    """Squared median of the non-zero pairwise distances of ``pooled``."""
    pts = check_samples(pooled, "pooled")
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    dists = pdist(pts)
    dists = dists[dists > 0]
    if dists.size == 0:
        raise ValueError("median heuristic undefined: all points are identical")
    return float(np.median(dists) ** 2)


@dataclass(frozen=True, eq=False)
class GramBundle:
    """Factored signed Gram matrix ``G = (E k E + jI) (x) (P + jI)`` over the pooled sample.

    Only the ``(n+m) x (n+m)`` scalar Gram and the ``d x d`` output matrix are
    stored densely.  ``chol_k`` and ``chol_p`` are the lower Cholesky factors of
    the two jittered factors, so ``G^{-1} = U U^T`` with
    ``U = chol_k^{-T} (x) chol_p^{-T}``.
    """

    points: np.ndarray
    n: int
    m: int
    params: KernelParams
    scalar_gram: np.ndarray
    out_matrix: np.ndarray
    chol_k: np.ndarray
    chol_p: np.ndarray
    jitter_used: float
    bound_b: float
    # E (k E U_K) and (U_P^T P): pooled projected points are eval_left @ S @ eval_right
    eval_left: np.ndarray = field(repr=False)
    eval_right: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def size(self) -> int:
        return self.n + self.m

    @property
    def dim(self) -> int:
        """Dimension ``d (n + m)`` of the coefficient vector."""
        return self.d * (self.n + self.m)

    @property
    def signs(self) -> np.ndarray:
        return np.concatenate([np.ones(self.n), -np.ones(self.m)])

    @property
    def signed_scalar_gram(self) -> np.ndarray:
        e = self.signs
        return e[:, None] * self.scalar_gram * e[None, :]

    @property
    def signed_gram(self) -> np.ndarray:
        """Dense jittered ``G`` (the matrix actually factored)."""
        jit = self.jitter_used * np.eye(self.size)
        jit_p = self.jitter_used * np.eye(self.d)
        return np.kron(self.signed_scalar_gram + jit, self.out_matrix + jit_p)

    @property
    def inv_chol_k(self) -> np.ndarray:
        return la.solve_triangular(self.chol_k, np.eye(self.size), lower=True).T

    @property
    def inv_chol_p(self) -> np.ndarray:
        return la.solve_triangular(self.chol_p, np.eye(self.d), lower=True).T

    @property
    def inv_chol(self) -> np.ndarray:
        """Dense ``U`` with ``G^{-1} = U U^T``."""
        return np.kron(self.inv_chol_k, self.inv_chol_p)

    def omega(self, s: np.ndarray) -> np.ndarray:
        """Coefficient vector ``omega = U s``, laid out point-major (``omega[l*d + p]``)."""
        mat = np.reshape(s, (self.size, self.d))
        return (self.inv_chol_k @ mat @ self.inv_chol_p.T).ravel()

    def sphere_point(self, omega: np.ndarray) -> np.ndarray:
        """Inverse change of variables ``s = U^{-1} omega``."""
        mat = np.reshape(omega, (self.size, self.d))
        return (self.chol_k.T @ mat @ self.chol_p).ravel()


def _jittered_cholesky(mat: np.ndarray, jitter: float) -> np.ndarray:
    return la.cholesky(mat + jitter * np.eye(mat.shape[0]), lower=True, check_finite=True)


def gram_bundle(
    xs,
    ys,
    params: KernelParams,
    jitter_base: float = JITTER_BASE,
    jitter_cap: float = JITTER_CAP,
    scalar_gram: np.ndarray | None = None,
) -> GramBundle:
    """Assemble and factor the signed Gram matrix for samples ``xs`` and ``ys``.

    Jitter is relative to ``trace/dim`` of each factor (both equal 1 here) and
    escalates by 10x from ``jitter_base`` until both Cholesky factors exist and
    whiten ``G`` to ``WHITEN_TOL``.  Failing to factor at ``jitter_cap`` raises;
    a factor that exists but whitens poorly at the cap is accepted.  A precomputed ``scalar_gram`` over
    ``vstack([xs, ys])`` may be passed to skip the kernel evaluation.
    """
    xs = check_samples(xs, "xs")
    ys = check_samples(ys, "ys")
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"ambient dimensions differ: {xs.shape[1]} vs {ys.shape[1]}")
    if jitter_base < 0:
        raise ValueError("jitter_base must be nonnegative")
    n, m = xs.shape[0], ys.shape[0]
    points = np.vstack([xs, ys])
    if scalar_gram is None:
        scalar = gaussian_gram(points, points, params.sigma2)
    else:
        scalar = np.asarray(scalar_gram, dtype=float)
        if scalar.shape != (n + m, n + m):
            raise ValueError(f"scalar_gram must be {(n + m, n + m)}, got {scalar.shape}")
    signs = np.concatenate([np.ones(n), -np.ones(m)])
    signed = signs[:, None] * scalar * signs[None, :]
    out = output_matrix(params.rho, params.d)

    scale_k = np.trace(signed) / signed.shape[0]
    scale_p = np.trace(out) / out.shape[0]
    jitter = jitter_base if jitter_base > 0 else JITTER_BASE
    eye_k, eye_p = np.eye(n + m), np.eye(params.d)
    while True:
        try:
            chol_k = _jittered_cholesky(signed, jitter * scale_k)
            chol_p = _jittered_cholesky(out, jitter * scale_p)
        except la.LinAlgError:
            chol_k = None
        if chol_k is not None:
            inv_k = la.solve_triangular(chol_k, eye_k, lower=True).T
            inv_p = la.solve_triangular(chol_p, eye_p, lower=True).T
            # a factorization that succeeds can still be too ill-conditioned to whiten G
            res_k = inv_k.T @ ((signed + jitter * scale_k * eye_k) @ inv_k) - eye_k
            res_p = inv_p.T @ ((out + jitter * scale_p * eye_p) @ inv_p) - eye_p
            err = np.linalg.norm(res_k) * np.sqrt(params.d) + np.linalg.norm(res_p) * np.sqrt(n + m)
            if err <= WHITEN_TOL or jitter * 10.0 > jitter_cap * (1 + 1e-12):
                break
        jitter *= 10.0
        if jitter > jitter_cap * (1 + 1e-12):
            raise DegenerateGramError(f"signed Gram not positive definite with jitter up to {jitter_cap:g}")
    # scale_k == scale_p == 1 for Gaussian k and unit-trace-per-dim P
    jit = jitter * scale_k
    # k E U_K = E (E k E) U_K = E (L L^T - jI) L^{-T} = E (L - j U_K), avoiding large U_K products
    eval_left = signs[:, None] * (chol_k - jit * inv_k)
    eval_right = chol_p.T - (jitter * scale_p) * inv_p.T
    return GramBundle(
        points=points,
        n=n,
        m=m,
        params=params,
        scalar_gram=scalar,
        out_matrix=out,
        chol_k=chol_k,
        chol_p=chol_p,
        jitter_used=jit,
        bound_b=kernel_bound(params),
        eval_left=eval_left,
        eval_right=eval_right,
    )
