"""Prior samplers: Latin hypercube designs and truncated K-L random fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class BoxPrior:
    """Axis-aligned uniform prior over [lower_i, upper_i]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lower[i] < upper[i] for every dimension")

    @property
    def dim(self) -> int:
        return self.lower.size


def lhs_sample(prior: BoxPrior, n_s: int, seed) -> np.ndarray:
    """Latin hypercube draw of n_s points inside the prior box.

    Per dimension the box splits into n_s equal strata; each stratum receives
    exactly one point, uniformly placed, with independently shuffled stratum
    assignments across dimensions. Returns an (n_s, d) array.
    """
    if n_s < 1:
        raise ValueError(f"need at least one sample, got n_s={n_s}")
    rng = np.random.default_rng(seed)
    d = prior.dim
    strata = np.empty((n_s, d))
    for k in range(d):
        perm = rng.permutation(n_s)
        strata[:, k] = (perm + rng.uniform(size=n_s)) / n_s
    return prior.lower + strata * (prior.upper - prior.lower)


def gaussian_sample(n_s: int, n_k: int, seed) -> np.ndarray:
    """i.i.d. standard-normal coefficient ensemble of shape (n_s, n_k)."""
    if n_s < 1:
        raise ValueError(f"need at least one sample, got n_s={n_s}")
    if n_k < 1:
        raise ValueError(f"need at least one coefficient dimension, got n_k={n_k}")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_s, n_k))


@dataclass(frozen=True)
class KernelSpec:
    """Exponential covariance kernel k(r) = sigma0^2 exp(-r / (2 l^2))."""

    sigma0: float
    length_scale: float

    def __post_init__(self):
        if self.sigma0 <= 0 or self.length_scale <= 0:
            raise ValueError("sigma0 and length_scale must be positive")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.sigma0**2 * np.exp(-np.asarray(r, float) / (2.0 * self.length_scale**2))


@dataclass(frozen=True)
class KlBasis:
    """Truncated discrete Karhunen-Loeve basis of a stationary Gaussian field.

    Eigenvalues are sorted non-increasing; modes are orthonormal under the
    plain Euclidean inner product on the stored points. ``energy_fraction``
    is the captured share of the full covariance trace.
    """

    points: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray = field(repr=False)
    energy_fraction: float
    total_energy: float

    @property
    def n_k(self) -> int:
        return self.eigenvalues.size

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def build_kl_basis(points: np.ndarray, kernel: KernelSpec, n_k: int) -> KlBasis:
    """Leading n_k eigenpairs of the covariance matrix K(x_i, x_j).

    Points may be an (N,) array of 1-D coordinates (e.g. arclength along a
    boundary curve) or an (N, dim) array; distances are Euclidean. Tiny
    negative eigenvalues from roundoff are clamped to zero; anything below
    -1e-10 * lambda_1 means the kernel matrix is not PSD and raises.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n_pts = pts.shape[0]
    if not 1 <= n_k <= n_pts:
        raise ValueError(f"truncation n_k={n_k} must be in [1, {n_pts}]")

    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    cov = kernel(dist)
    cov = 0.5 * (cov + cov.T)

    eigvals, eigvecs = scipy.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if eigvals[0] <= 0:
        raise ValueError("covariance matrix has no positive eigenvalue")
    if eigvals[-1] < -1e-10 * eigvals[0]:
        raise ValueError(f"covariance matrix is not PSD: min eigenvalue {eigvals[-1]:.3e}")
    eigvals = np.clip(eigvals, 0.0, None)

    total = float(eigvals.sum())
    return KlBasis(
        points=pts,
        eigenvalues=eigvals[:n_k].copy(),
        modes=eigvecs[:, :n_k].T.copy(),
        energy_fraction=float(eigvals[:n_k].sum() / total),
        total_energy=total,
    )


def sample_field(basis: KlBasis, omega: np.ndarray) -> np.ndarray:
    """Field realization sum_i sqrt(lambda_i) * omega_i * mode_i at the basis points."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.shape != (basis.n_k,):
        raise ValueError(f"expected {basis.n_k} coefficients, got shape {omega.shape}")
    return (np.sqrt(basis.eigenvalues) * omega) @ basis.modes
