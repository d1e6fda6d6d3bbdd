"""Site geometry, the RBF interpolation matrix, regularized fits, and LOOCV.

The interpolation matrix Phi has entries phi(||x_i - x_j||).  For distinct
sites and the supported kernels it is nonsingular, so exact interpolation
solves Phi c = u directly; the regularized path solves the ridge normal
equations (Phi^T Phi + lambda I) c = Phi^T u, which is what the learned model
uses on noisy-ish measurement vectors.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve
from scipy.spatial.distance import cdist

from .errors import ConditioningError, DataError
from .kernels import RadialKernel, kernel_eval

# Solve reliability guards for double precision.
COND_WARN = 1e10
COND_FAIL = 1e14


class SiteSet:
    """An ordered set of pairwise-distinct data sites in R^d."""

    def __init__(self, sites: np.ndarray):
        sites = np.ascontiguousarray(np.atleast_2d(np.asarray(sites, dtype=float)))
        if sites.ndim != 2 or sites.shape[0] == 0:
            raise ValueError(f"sites must be a nonempty n x d array, got shape {sites.shape}")
        if not np.all(np.isfinite(sites)):
            raise DataError("site coordinates contain non-finite values")
        self.sites = sites
        self._distances: np.ndarray | None = None
        if self.n > 1 and self.min_pairwise_distance() <= 0.0:
            raise DataError("data sites must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.sites.shape[0]

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def distance_matrix(self) -> np.ndarray:
        if self._distances is None:
            d = cdist(self.sites, self.sites)
            np.fill_diagonal(d, 0.0)
            self._distances = d
        return self._distances

    def min_pairwise_distance(self) -> float:
        d = self.distance_matrix()
        if self.n < 2:
            return np.inf
        off = d[~np.eye(self.n, dtype=bool)]
        return float(off.min())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.sites.shape).encode())
        h.update(self.sites.tobytes())
        return h.hexdigest()

    def subset(self, indices) -> "SiteSet":
        return SiteSet(self.sites[np.asarray(indices, dtype=int)])


class InterpolationSystem:
    """The matrix Phi for one (kernel, site set) pair, with cached solves.

    Construction computes the LU factorization, a 2-norm condition estimate
    (guarded by COND_WARN / COND_FAIL), and the inverse scaled so its largest
    absolute entry is exactly 1.  Instances are immutable in practice: fits
    and evaluations never mutate state other than the factorization caches.
    """

    def __init__(self, kernel: RadialKernel, site_set: SiteSet, reg_lambda: float = 0.0):
        if reg_lambda < 0:
            raise ValueError("regularization parameter must be nonnegative")
        self.kernel = kernel
        self.site_set = site_set
        self.reg_lambda = float(reg_lambda)
        self.phi = kernel_eval(kernel, site_set.distance_matrix())
        cond = float(np.linalg.cond(self.phi))
        if not np.isfinite(cond) or cond > COND_FAIL:
            raise ConditioningError(
                f"interpolation matrix condition estimate {cond:.3e} exceeds {COND_FAIL:.0e}",
                condition_estimate=cond,
            )
        if cond > COND_WARN:
            warnings.warn(
                f"interpolation matrix condition estimate {cond:.3e}; solves may lose accuracy",
                stacklevel=2,
            )
        self.condition_estimate = cond
        self._lu = lu_factor(self.phi)
        self._ridge_cache: dict[float, tuple] = {}
        inv = lu_solve(self._lu, np.eye(site_set.n))
        self._inverse = inv
        self._inverse_scale = float(np.max(np.abs(inv)))
        self._scaled_inverse = inv / self._inverse_scale

    @property
    def n(self) -> int:
        return self.site_set.n

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve Phi c = rhs (exact interpolation)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has leading dimension {rhs.shape[0]}, expected {self.n}")
        return lu_solve(self._lu, rhs)

    def _ridge_factor(self, lam: float):
        factor = self._ridge_cache.get(lam)
        if factor is None:
            gram = self.phi.T @ self.phi + lam * np.eye(self.n)
            factor = cho_factor(gram)
            self._ridge_cache[lam] = factor
        return factor

    def fit_matrix(self, lam: float | None = None) -> np.ndarray:
        """The linear map u -> c of the lambda-regularized fit, as a dense matrix."""
        lam = self.reg_lambda if lam is None else float(lam)
        if lam == 0.0:
            return self._inverse.copy()
        return cho_solve(self._ridge_factor(lam), self.phi.T)


def build_phi(kernel: RadialKernel, sites: SiteSet | np.ndarray, reg_lambda: float = 0.0) -> InterpolationSystem:
    """Assemble and factorize the interpolation system for the given sites."""
    if not isinstance(sites, SiteSet):
        sites = SiteSet(sites)
    return InterpolationSystem(kernel, sites, reg_lambda=reg_lambda)


def fit_coefficients(system: InterpolationSystem, values: np.ndarray, reg_lambda: float | None = None) -> np.ndarray:
    """Solve for coefficients minimizing ||Phi c - u||^2 + lambda ||c||^2.

    With lambda = 0 this is the exact interpolation solve.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (system.n,):
        raise ValueError(f"values must have shape ({system.n},), got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("values contain non-finite entries")
    lam = system.reg_lambda if reg_lambda is None else float(reg_lambda)
    if lam < 0:
        raise ValueError("regularization parameter must be nonnegative")
    if lam == 0.0:
        return system.solve(values)
    return cho_solve(system._ridge_factor(lam), system.phi.T @ values)


def evaluate_interpolant(
    kernel: RadialKernel, sites: SiteSet, coeffs: np.ndarray, queries: np.ndarray
) -> np.ndarray:
    """Evaluate sum_j c_j phi(||q - x_j||) at each query point q."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (sites.n,):
        raise ValueError(f"coefficients must have shape ({sites.n},), got {coeffs.shape}")
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != sites.dim:
        raise ValueError(f"queries have dimension {queries.shape[1]}, sites have {sites.dim}")
    basis = kernel_eval(kernel, cdist(queries, sites.sites))
    return basis @ coeffs


def scaled_inverse(system: InterpolationSystem) -> np.ndarray:
    """Phi^{-1} divided by its largest absolute entry, so max-abs is exactly 1."""
    return system._scaled_inverse.copy()


def inverse_scale_factor(system: InterpolationSystem) -> float:
    """The max-abs entry of Phi^{-1} that `scaled_inverse` divided out."""
    return system._inverse_scale


@dataclass(frozen=True)
class LoocvScore:
    kernel: RadialKernel
    mean_abs_error: float


def _loocv_snapshots(dataset) -> np.ndarray:
    """Flatten the training split into a (num_snapshots, n) array."""
    train = dataset.split_values("train")
    if train.size == 0:
        raise ValueError("dataset has an empty training split")
    return train.reshape(-1, train.shape[-1])


def loocv_select_kernel(
    candidates: Sequence[RadialKernel], dataset, seed: int
) -> tuple[RadialKernel, list[LoocvScore]]:
    """Pick the kernel with the lowest leave-one-out prediction error.

    For every training snapshot one seeded-random site is left out; the
    remaining n-1 values are interpolated exactly and the interpolant is
    evaluated at the held-out site.  The score per candidate is the mean
    absolute error over all snapshots.  Candidates whose reduced systems are
    singular or too ill-conditioned are penalized with +inf rather than
    aborting the search.  Ties break in candidate order.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate kernel")
    sites = dataset.sites
    if sites.n < 2:
        raise ValueError("leave-one-out selection needs at least two sites")
    snapshots = _loocv_snapshots(dataset)
    rng = np.random.default_rng(seed)
    left_out = rng.integers(0, sites.n, size=snapshots.shape[0])

    scores = []
    for kernel in candidates:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scores.append(LoocvScore(kernel, _loocv_error(kernel, sites, snapshots, left_out)))
    best_idx = int(np.argmin([s.mean_abs_error for s in scores]))
    return candidates[best_idx], scores


def _loocv_error(kernel, sites, snapshots, left_out) -> float:
    errors = np.empty(snapshots.shape[0])
    # Group snapshots by the held-out site so each reduced system is factored once.
    for i in np.unique(left_out):
        rows = np.flatnonzero(left_out == i)
        keep = np.delete(np.arange(sites.n), i)
        reduced = sites.subset(keep)
        try:
            system = build_phi(kernel, reduced)
        except (ConditioningError, np.linalg.LinAlgError):
            return np.inf
        coeffs = system.solve(snapshots[np.ix_(rows, keep)].T)
        basis = kernel_eval(kernel, cdist(sites.sites[i : i + 1], reduced.sites))
        predicted = (basis @ coeffs)[0]
        errors[rows] = np.abs(predicted - snapshots[rows, i])
    if not np.all(np.isfinite(errors)):
        return np.inf
    return float(errors.mean())
