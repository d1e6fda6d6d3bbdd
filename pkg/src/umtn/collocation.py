"""Discrete-time RBF collocation for time-dependent linear PDEs.

One step advances the coefficient vector through Phi c_{t+dt} = H c_t with
H = Phi + dt * (operator applied to the kernel).  Dirichlet conditions are
imposed by replacing the corresponding rows of the right-hand side with the
prescribed boundary values; the left-hand side keeps the interpolation rows,
which already express "value at this site".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import NumericalError
from .interpolation import InterpolationSystem, SiteSet, build_phi
from .kernels import LinearOperatorSpec, RadialKernel, _radial_parts


def operator_matrix(kernel: RadialKernel, sites: SiteSet, op: LinearOperatorSpec) -> np.ndarray:
    """The n x n matrix of L phi(||x - x_j||) evaluated at x = x_i.

    Row i applies the operator's coefficient fields at site i; column j picks
    the kernel centered at site j.
    """
    pts = sites.sites
    n, d = pts.shape
    offsets = pts[:, None, :] - pts[None, :, :]
    r = sites.distance_matrix()
    phi, por, second = _radial_parts(kernel, r)
    if not np.all(np.isfinite(por)):
        raise ValueError(f"{kernel.family.value} kernel is not smooth enough for operator assembly")
    out = np.zeros((n, n))
    try:
        if op.convection is not None:
            a = np.stack([np.asarray(op.convection(p), dtype=float) for p in pts])
            out += np.einsum("id,ijd->ij", a, offsets) * por
        if op.diffusion is not None:
            c = np.array([float(op.diffusion(p)) for p in pts])
            out += c[:, None] * (second + (d - 1) * por)
        if op.reaction is not None:
            rv = np.array([float(op.reaction(p)) for p in pts])
            out += rv[:, None] * phi
    except ValueError:
        raise
    except Exception as exc:  # surface which site's field evaluation failed
        raise NumericalError(f"operator field evaluation failed: {exc}") from exc
    return out


def build_h(kernel: RadialKernel, sites: SiteSet, op: LinearOperatorSpec, dt: float) -> np.ndarray:
    """H_ij = phi(||x_i - x_j||) + dt * L phi(||x - x_j||) at x = x_i."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    from .kernels import kernel_eval

    phi = kernel_eval(kernel, sites.distance_matrix())
    return phi + dt * operator_matrix(kernel, sites, op)


class TrajectoryPoint(NamedTuple):
    time: float
    values: np.ndarray
    coeffs: np.ndarray


class CollocationStepper:
    """Immutable stepper holding Phi, H, and optional Dirichlet boundary rows."""

    def __init__(
        self,
        system: InterpolationSystem,
        operator: LinearOperatorSpec,
        dt: float,
        boundary_indices: Sequence[int] = (),
        boundary_values: Optional[Callable[[float], np.ndarray]] = None,
    ):
        if dt <= 0:
            raise ValueError("time step must be positive")
        boundary_indices = np.asarray(sorted(boundary_indices), dtype=int)
        if boundary_indices.size:
            if boundary_indices[0] < 0 or boundary_indices[-1] >= system.n:
                raise ValueError("boundary indices out of range")
            if np.unique(boundary_indices).size != boundary_indices.size:
                raise ValueError("boundary indices contain duplicates")
            if boundary_values is None:
                raise ValueError("boundary indices given without a boundary value callback")
        self.system = system
        self.operator = operator
        self.dt = float(dt)
        self.h_matrix = build_h(system.kernel, system.site_set, operator, dt)
        self.boundary_indices = boundary_indices
        self.boundary_values = boundary_values

    def _apply_boundary(self, rhs: np.ndarray, t: float) -> np.ndarray:
        if self.boundary_indices.size:
            values = np.asarray(self.boundary_values(t), dtype=float)
            if values.shape != (self.boundary_indices.size,):
                raise ValueError(
                    f"boundary callback returned shape {values.shape}, "
                    f"expected ({self.boundary_indices.size},)"
                )
            rhs[self.boundary_indices] = values
        return rhs


def solve_ivp(stepper: CollocationStepper, initial_values: np.ndarray, t_end: float) -> list[TrajectoryPoint]:
    """Iterate Phi c_{t+dt} = H c_t from Phi c_0 = w up to t_end.

    Returns the trajectory including t=0; each point carries both the site
    values Phi c_t (the contract) and the raw coefficients (diagnostics).
    t_end must be a positive integer multiple of the stepper's dt.
    """
    system = stepper.system
    w = np.asarray(initial_values, dtype=float)
    if w.shape != (system.n,):
        raise ValueError(f"initial values must have shape ({system.n},), got {w.shape}")
    steps = int(round(t_end / stepper.dt))
    if steps < 1 or abs(t_end - steps * stepper.dt) > 1e-12 * max(abs(t_end), 1.0):
        raise ValueError(f"t_end={t_end} is not a positive integer multiple of dt={stepper.dt}")

    c = system.solve(w)
    trajectory = [TrajectoryPoint(0.0, system.phi @ c, c)]
    for k in range(1, steps + 1):
        t_next = k * stepper.dt
        rhs = stepper.h_matrix @ c
        rhs = stepper._apply_boundary(rhs, t_next)
        if not np.all(np.isfinite(rhs)):
            raise NumericalError(f"collocation iteration diverged at t={t_next:.6g}")
        c = system.solve(rhs)
        values = system.phi @ c
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"collocation iteration diverged at t={t_next:.6g}")
        trajectory.append(TrajectoryPoint(t_next, values, c))
    return trajectory
