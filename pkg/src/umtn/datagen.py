"""Synthetic convection-diffusion benchmark: simulation and dataset assembly.

The benchmark PDE is du/dt = [a, b].grad(u) + c*laplacian(u) on [0, 2*pi]^2
with variable coefficient fields and a random Fourier-series initial
condition.  Snapshots are produced on a regular periodic grid by
method-of-lines RK4 over second-order central differences, then subsampled at
a fixed set of data sites to form measurement sequences.

Boundary treatment: the initial condition is 2*pi-periodic by construction,
so the grid is periodic (the 2*pi edge wraps to 0).  This choice affects the
generated numbers and is deliberate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DataError, DivergenceError
from .interpolation import SiteSet

# Highest Fourier mode index of the random initial condition (inclusive).
MAX_MODE = 9
# Variance of the normal distribution the Fourier coefficients are drawn from;
# read as a variance, not a standard deviation.
COEFF_VARIANCE = 0.02
# Largest diffusion coefficient of the benchmark fields, for the stability bound.
MAX_DIFFUSION = 0.5


def coefficient_fields(point) -> tuple[float, float, float]:
    """The convection components a, b and diffusion c at one point of [0, 2*pi]^2."""
    x, y = float(point[0]), float(point[1])
    a = 0.5 * (math.cos(y) + x * (2.0 * math.pi - x) * math.sin(x)) + 0.6
    b = 2.0 * (math.cos(y) + math.sin(x)) + 0.8
    c = 0.5 * (1.0 - math.sqrt((x - math.pi) ** 2 + (y - math.pi) ** 2) / (math.sqrt(2.0) * math.pi))
    return a, b, c


@dataclass
class ConvDiffConfig:
    """Generation settings for the convection-diffusion benchmark."""

    grid_size: int = 50
    dt_out: float = 0.01
    t_end: float = 0.2
    n_sites: int = 250
    n_sequences: int = 1000
    split: tuple[int, int, int] = (700, 150, 150)
    substeps_per_output: int = 10
    seed: int = 0

    def __post_init__(self):
        self.split = tuple(int(s) for s in self.split)
        if self.grid_size < 2:
            raise ConfigError("grid_size must be at least 2")
        if self.dt_out <= 0 or self.t_end <= 0:
            raise ConfigError("dt_out and t_end must be positive")
        n_out = self.t_end / self.dt_out
        if abs(n_out - round(n_out)) > 1e-9 * max(n_out, 1.0):
            raise ConfigError(f"t_end={self.t_end} is not an integer multiple of dt_out={self.dt_out}")
        if self.substeps_per_output < 1:
            raise ConfigError("substeps_per_output must be >= 1")
        if len(self.split) != 3 or any(s <= 0 for s in self.split):
            raise ConfigError("split must be three positive counts")
        if sum(self.split) != self.n_sequences:
            raise ConfigError(
                f"split {self.split} sums to {sum(self.split)}, expected n_sequences={self.n_sequences}"
            )
        if self.n_sites > self.grid_size**2:
            raise ConfigError(
                f"n_sites={self.n_sites} exceeds the {self.grid_size}x{self.grid_size} grid"
            )
        # Explicit diffusion stability bound dt < h^2 / (4 * max c).
        bound = self.grid_spacing**2 / (4.0 * MAX_DIFFUSION)
        if self.dt_internal >= bound:
            raise ConfigError(
                f"internal step {self.dt_internal:.3e} violates the diffusion stability bound "
                f"{bound:.3e}; increase substeps_per_output"
            )

    @property
    def grid_spacing(self) -> float:
        return 2.0 * math.pi / self.grid_size

    @property
    def dt_internal(self) -> float:
        return self.dt_out / self.substeps_per_output

    @property
    def n_outputs(self) -> int:
        """Snapshots after t=0; the emitted series has n_outputs+1 entries."""
        return int(round(self.t_end / self.dt_out))

    @property
    def sequence_length(self) -> int:
        """Observations kept per sequence (the trailing snapshot is dropped)."""
        return self.n_outputs

    def to_dict(self) -> dict:
        return {
            "grid_size": self.grid_size,
            "dt_out": self.dt_out,
            "t_end": self.t_end,
            "n_sites": self.n_sites,
            "n_sequences": self.n_sequences,
            "split": list(self.split),
            "substeps_per_output": self.substeps_per_output,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConvDiffConfig":
        kwargs = dict(data)
        if "split" in kwargs:
            kwargs["split"] = tuple(kwargs["split"])
        return cls(**kwargs)


def grid_coordinates(grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    """1-D coordinate arrays of the periodic grid; 2*pi is identified with 0."""
    x = np.arange(grid_size) * (2.0 * math.pi / grid_size)
    return x, x.copy()


def _field_grids(grid_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, ys = grid_coordinates(grid_size)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    a = 0.5 * (np.cos(Y) + X * (2.0 * np.pi - X) * np.sin(X)) + 0.6
    b = 2.0 * (np.cos(Y) + np.sin(X)) + 0.8
    c = 0.5 * (1.0 - np.sqrt((X - np.pi) ** 2 + (Y - np.pi) ** 2) / (np.sqrt(2.0) * np.pi))
    return a, b, c


class FourierInitialCondition:
    """A 2*pi-periodic field sum of cos/sin modes with |k|,|l| <= MAX_MODE.

    Coefficient arrays are indexed [k + MAX_MODE, l + MAX_MODE].
    """

    def __init__(self, lambda_kl: np.ndarray, zeta_kl: np.ndarray):
        size = 2 * MAX_MODE + 1
        lambda_kl = np.asarray(lambda_kl, dtype=float)
        zeta_kl = np.asarray(zeta_kl, dtype=float)
        if lambda_kl.shape != (size, size) or zeta_kl.shape != (size, size):
            raise ValueError(f"coefficient arrays must have shape ({size}, {size})")
        if not (np.all(np.isfinite(lambda_kl)) and np.all(np.isfinite(zeta_kl))):
            raise ValueError("coefficients must be finite")
        self.lambda_kl = lambda_kl
        self.zeta_kl = zeta_kl

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FourierInitialCondition":
        size = 2 * MAX_MODE + 1
        std = math.sqrt(COEFF_VARIANCE)
        lam = rng.normal(0.0, std, size=(size, size))
        zeta = rng.normal(0.0, std, size=(size, size))
        return cls(lam, zeta)

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate the double sum at broadcastable coordinate arrays."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        modes = np.arange(-MAX_MODE, MAX_MODE + 1)
        out = np.zeros(np.broadcast(x, y).shape)
        for ki, k in enumerate(modes):
            for li, l in enumerate(modes):
                angle = k * x + l * y
                out += self.lambda_kl[ki, li] * np.cos(angle) + self.zeta_kl[ki, li] * np.sin(angle)
        return out

    def on_grid(self, grid_size: int) -> np.ndarray:
        cos_basis, sin_basis = _mode_bases(grid_size)
        flat = self.lambda_kl.ravel() @ cos_basis + self.zeta_kl.ravel() @ sin_basis
        return flat.reshape(grid_size, grid_size)


_BASIS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _mode_bases(grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin of k*x + l*y for all modes, flattened over the grid; cached."""
    cached = _BASIS_CACHE.get(grid_size)
    if cached is None:
        xs, ys = grid_coordinates(grid_size)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        modes = np.arange(-MAX_MODE, MAX_MODE + 1)
        K, L = np.meshgrid(modes, modes, indexing="ij")
        angles = np.multiply.outer(K.ravel(), X.ravel()) + np.multiply.outer(L.ravel(), Y.ravel())
        cached = (np.cos(angles), np.sin(angles))
        _BASIS_CACHE[grid_size] = cached
    return cached


def sample_initial_condition(rng: np.random.Generator, grid_size: int = 50) -> np.ndarray:
    """Draw Fourier coefficients and evaluate the field on the grid."""
    return FourierInitialCondition.sample(rng).on_grid(grid_size)


def _rhs(u: np.ndarray, h: float, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """a*u_x + b*u_y + c*laplacian(u) with periodic central differences.

    u may carry leading batch axes; the grid spans the last two axes.
    """
    xp = np.roll(u, -1, axis=-2)
    xm = np.roll(u, 1, axis=-2)
    yp = np.roll(u, -1, axis=-1)
    ym = np.roll(u, 1, axis=-1)
    ux = (xp - xm) / (2.0 * h)
    uy = (yp - ym) / (2.0 * h)
    lap = (xp + xm + yp + ym - 4.0 * u) / (h * h)
    return a * ux + b * uy + c * lap


def _simulate_batch(config: ConvDiffConfig, initial: np.ndarray) -> np.ndarray:
    """RK4 snapshots for a (batch, g, g) stack of initial fields.

    Returns (batch, n_outputs + 1, g, g) including the t=0 field.  Per-slice
    results are identical regardless of how the batch is chunked because every
    operation is elementwise or a same-shaped stencil shift.
    """
    g = config.grid_size
    if initial.shape[-2:] != (g, g):
        raise ValueError(f"initial field shape {initial.shape[-2:]} does not match grid {g}x{g}")
    a, b, c = _field_grids(g)
    h = config.grid_spacing
    dt = config.dt_internal
    u = np.array(initial, dtype=float)
    out = np.empty(u.shape[:-2] + (config.n_outputs + 1, g, g))
    out[..., 0, :, :] = u
    for step in range(config.n_outputs):
        for _ in range(config.substeps_per_output):
            k1 = _rhs(u, h, a, b, c)
            k2 = _rhs(u + 0.5 * dt * k1, h, a, b, c)
            k3 = _rhs(u + 0.5 * dt * k2, h, a, b, c)
            k4 = _rhs(u + dt * k3, h, a, b, c)
            u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u)):
            t_bad = (step + 1) * config.dt_out
            raise DivergenceError(f"simulation produced non-finite values at t={t_bad:.4g}", at_time=t_bad)
        out[..., step + 1, :, :] = u
    return out


def simulate_convdiff(config: ConvDiffConfig, initial: np.ndarray) -> np.ndarray:
    """Integrate one initial field; returns (n_outputs + 1, g, g) snapshots."""
    initial = np.asarray(initial, dtype=float)
    if initial.ndim != 2:
        raise ValueError(f"initial field must be 2-D, got shape {initial.shape}")
    return _simulate_batch(config, initial[None])[0]


class SequenceDataset:
    """Measurement sequences over a shared site set, with a fixed split.

    ``sequences`` has shape (N, length, n).  Split assignment is sequential by
    sequence index: the first `split[0]` sequences are training, then
    validation, then test.  Normalization statistics are always those of the
    raw training split; `normalized` records whether `sequences` currently
    holds raw or normalized values.
    """

    SPLITS = ("train", "val", "test")

    def __init__(
        self,
        sites: SiteSet,
        sequences: np.ndarray,
        split: tuple[int, int, int],
        tau: int,
        mean: float | None = None,
        variance: float | None = None,
        normalized: bool = False,
        seed: int | None = None,
        kernel=None,
    ):
        sequences = np.ascontiguousarray(np.asarray(sequences, dtype=float))
        if sequences.ndim != 3:
            raise ValueError(f"sequences must be (N, length, n), got shape {sequences.shape}")
        if sequences.shape[2] != sites.n:
            raise ValueError(
                f"sequences cover {sequences.shape[2]} sites, site set has {sites.n}"
            )
        if not np.all(np.isfinite(sequences)):
            raise DataError("sequences contain non-finite values")
        split = tuple(int(s) for s in split)
        if len(split) != 3 or any(s < 0 for s in split) or sum(split) != sequences.shape[0]:
            raise ValueError(f"split {split} does not partition {sequences.shape[0]} sequences")
        if not (1 <= tau < sequences.shape[1]):
            raise ValueError(f"tau={tau} must lie in [1, sequence_length)")
        self.sites = sites
        self.sequences = sequences
        self.split = split
        self.tau = int(tau)
        self.normalized = bool(normalized)
        self.seed = seed
        self.kernel = kernel  # optional tuned-kernel annotation
        if mean is None:
            train = self.split_values("train")
            mean = float(train.mean()) if train.size else 0.0
            variance = float(train.var()) if train.size else 1.0
        self.mean = float(mean)
        self.variance = float(variance)

    @property
    def n_sequences(self) -> int:
        return self.sequences.shape[0]

    @property
    def sequence_length(self) -> int:
        return self.sequences.shape[1]

    @property
    def horizon(self) -> int:
        """Forecast steps implied by the sequence length and tau."""
        return self.sequence_length - self.tau

    def split_indices(self, name: str) -> np.ndarray:
        if name not in self.SPLITS:
            raise ValueError(f"unknown split {name!r}")
        offsets = np.concatenate([[0], np.cumsum(self.split)])
        i = self.SPLITS.index(name)
        return np.arange(offsets[i], offsets[i + 1])

    def split_values(self, name: str) -> np.ndarray:
        return self.sequences[self.split_indices(name)]

    def _std(self) -> float:
        std = math.sqrt(self.variance)
        if std == 0.0:
            warnings.warn("training split has zero variance; dividing by 1", RuntimeWarning)
            std = 1.0
        return std

    def normalize(self) -> "SequenceDataset":
        """Shift and scale every split by the raw training split's mean and std."""
        if self.normalized:
            return self
        scaled = (self.sequences - self.mean) / self._std()
        return SequenceDataset(
            self.sites,
            scaled,
            self.split,
            self.tau,
            mean=self.mean,
            variance=self.variance,
            normalized=True,
            seed=self.seed,
            kernel=self.kernel,
        )

    def denormalize_values(self, values: np.ndarray) -> np.ndarray:
        """Map normalized measurements back to the raw scale."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return np.asarray(values) * self._std() + self.mean


def generate_dataset(config: ConvDiffConfig, tau: int = 5, chunk_size: int = 100) -> SequenceDataset:
    """Simulate independent sequences and subsample them at shared random sites.

    Deterministic per config.seed: the site choice and each sequence's initial
    condition come from seeds spawned off the master seed, so chunking does
    not change the result.
    """
    g = config.grid_size
    master = np.random.SeedSequence(config.seed)
    site_seed, ic_root = master.spawn(2)
    site_rng = np.random.default_rng(site_seed)
    site_idx = site_rng.choice(g * g, size=config.n_sites, replace=False)
    coords = np.stack(np.unravel_index(site_idx, (g, g)), axis=1) * config.grid_spacing
    sites = SiteSet(coords)

    ic_seeds = ic_root.spawn(config.n_sequences)
    length = config.sequence_length
    flat_idx = np.asarray(site_idx)
    sequences = np.empty((config.n_sequences, length, config.n_sites))
    for start in range(0, config.n_sequences, chunk_size):
        stop = min(start + chunk_size, config.n_sequences)
        fields = np.stack(
            [
                FourierInitialCondition.sample(np.random.default_rng(s)).on_grid(g)
                for s in ic_seeds[start:stop]
            ]
        )
        snaps = _simulate_batch(config, fields)
        # Keep the first `length` snapshots (t=0 .. t_end - dt_out).
        sequences[start:stop] = snaps[:, :length].reshape(stop - start, length, g * g)[:, :, flat_idx]
    return SequenceDataset(sites, sequences, config.split, tau=tau, seed=config.seed)
