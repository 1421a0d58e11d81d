"""Backward-Euler diffusion on uniform 1D grids.

u_t = K u_xx discretized as (I - dt K D2) u_next = u_prev with second-order
mirrored-ghost Neumann rows, so zero-flux problems conserve the trapezoid
integral of u exactly. Interface flux extraction is one-sided second order.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import ShapeError, ValidationError


def _be_matrix(n, dt, kappa, dx, left, right):
    """Banded (ab form) backward-Euler matrix with bc kinds 'n' or 'd'."""
    r = dt * kappa / dx**2
    ab = np.zeros((3, n))
    ab[1, :] = 1.0 + 2.0 * r
    ab[0, 1:] = -r  # superdiagonal
    ab[2, :-1] = -r  # subdiagonal
    if left == "n":
        ab[0, 1] = -2.0 * r
    else:
        ab[1, 0] = 1.0
        ab[0, 1] = 0.0
    if right == "n":
        ab[2, -2] = -2.0 * r
    else:
        ab[1, -1] = 1.0
        ab[2, -2] = 0.0
    return ab


def heat_be_step(u_prev, dt, kappa, dx, left_bc, right_bc) -> np.ndarray:
    """One implicit step. Each bc is ('neumann', flux) or ('dirichlet', value).

    Neumann data is the flux K du/dx in the +x direction at that boundary,
    imposed with a mirrored ghost node.
    """
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_prev.ndim != 1 or u_prev.size < 3:
        raise ShapeError("u_prev must be 1D with at least 3 nodes")
    if dt <= 0 or kappa <= 0 or dx <= 0:
        raise ValidationError("dt, kappa, dx must be positive")
    n = u_prev.size
    kinds = []
    rhs = u_prev.copy()
    r = dt * kappa / dx**2
    for side, (kind, value) in (("left", left_bc), ("right", right_bc)):
        if kind == "neumann":
            kinds.append("n")
            # ghost mirror: u_ghost = u_1 -+ 2 dx (q / K)
            sign = -1.0 if side == "left" else 1.0
            idx = 0 if side == "left" else n - 1
            rhs[idx] += sign * 2.0 * r * dx * value / kappa
        elif kind == "dirichlet":
            kinds.append("d")
            rhs[0 if side == "left" else n - 1] = value
        else:
            raise ValidationError(f"unknown bc kind {kind!r}")
    ab = _be_matrix(n, dt, kappa, dx, kinds[0], kinds[1])
    return sla.solve_banded((1, 1), ab, rhs)


def heat_monolithic(u0, dt, kappa, dx, n_steps, left_bc=("neumann", 0.0), right_bc=("neumann", 0.0)):
    """Trajectory array (n_steps + 1, n) including the initial state."""
    u0 = np.asarray(u0, dtype=np.float64)
    out = np.empty((n_steps + 1, u0.size))
    out[0] = u0
    for k in range(n_steps):
        out[k + 1] = heat_be_step(out[k], dt, kappa, dx, left_bc, right_bc)
    return out


def flux_right(u, dx, kappa) -> float:
    """One-sided second-order K du/dx at the right end of the grid."""
    u = np.asarray(u, dtype=np.float64)
    if u.size < 3:
        raise ShapeError("need at least 3 nodes for one-sided flux")
    return float(kappa * (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dx))


def flux_left(u, dx, kappa) -> float:
    """One-sided second-order K du/dx at the left end of the grid."""
    u = np.asarray(u, dtype=np.float64)
    if u.size < 3:
        raise ShapeError("need at least 3 nodes for one-sided flux")
    return float(kappa * (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx))


def trapezoid_weights(n, dx) -> np.ndarray:
    w = np.full(n, dx)
    w[0] = w[-1] = 0.5 * dx
    return w
