"""Total-Lagrangian SPH for plane-strain hyperelastic solids.

Particles carry fixed reference neighborhoods (kernel values, gradients, and
the inverse shape tensor are computed once from the reference configuration);
deformation gradients use corrected kernel gradients, which makes them exact
for affine motions. Forces are the pairwise-antisymmetric divergence of the
first Piola-Kirchhoff stress plus Ganzenmueller-style hourglass control, and
statics are reached by damped velocity-Verlet dynamic relaxation.

The per-pair accumulation loops are the hot path; they run through numba
when it is importable and the environment variable OPCOUPLE_NUMBA is not
"0", and through equivalent vectorized numpy otherwise. `python -m
opcouple.bench` times both paths.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhoodError,
    InstabilityError,
    ShapeError,
    UnconvergedError,
    ValidationError,
)
from .solid import HgoParams, hgo_pk1

USE_NUMBA = os.environ.get("OPCOUPLE_NUMBA", "1") != "0"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

HOURGLASS_ALPHA = 0.05
CFL_FACTOR = 0.3


def kernel_w(R, h: float):
    """Cubic kernel A (h - R)^3 with 2D normalization A = 10 / (pi h^5)."""
    if h <= 0:
        raise ValidationError("smoothing radius must be positive")
    R = np.asarray(R, dtype=np.float64)
    if np.any(R < 0):
        raise ValidationError("separations must be nonnegative")
    a = 10.0 / (np.pi * h**5)
    return np.where(R < h, a * (h - R) ** 3, 0.0)


def kernel_grad(separation, h: float):
    """Reference-space kernel gradient -3A (h - R)^2 R-hat; zero at and
    beyond the support radius and for the self term."""
    d = np.asarray(separation, dtype=np.float64)
    if d.shape[-1] != 2:
        raise ShapeError("separations must be 2-vectors")
    R = np.linalg.norm(d, axis=-1)
    a = 10.0 / (np.pi * h**5)
    mag = np.where(R < h, -3.0 * a * (h - R) ** 2, 0.0)
    safe = np.where(R > 0, R, 1.0)
    return (mag / safe)[..., None] * d


# -- particle system -------------------------------------------------------------


@dataclass
class ParticleSystem:
    """Reference-configuration particle cloud with frozen neighbor tables.

    pair_* arrays are CSR-ordered over ordered pairs (i, j): pair_i repeats
    the row index, indices holds j. corr_grad is the corrected gradient
    Ainv_i @ gradW(X_j - X_i) entering the deformation gradient.
    """

    ref_pos: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    vol: np.ndarray
    mass: np.ndarray
    h: float
    rho: float
    pinned: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    pair_i: np.ndarray
    pair_dx: np.ndarray
    pair_r: np.ndarray
    pair_w: np.ndarray
    pair_gradw: np.ndarray
    corr_grad: np.ndarray
    ainv: np.ndarray

    @property
    def n(self) -> int:
        return self.ref_pos.shape[0]

    @classmethod
    def build(cls, ref_pos, vol, h: float, pinned=None, rho: float = 1.0) -> "ParticleSystem":
        ref_pos = np.ascontiguousarray(ref_pos, dtype=np.float64)
        if ref_pos.ndim != 2 or ref_pos.shape[1] != 2:
            raise ShapeError("reference positions must be (n, 2)")
        n = ref_pos.shape[0]
        vol = np.broadcast_to(np.asarray(vol, dtype=np.float64), (n,)).copy()
        if np.any(vol <= 0):
            raise ValidationError("particle volumes must be positive")
        if h <= 0:
            raise ValidationError("smoothing radius must be positive")
        if pinned is None:
            pinned = np.zeros(n, dtype=bool)
        else:
            pinned = np.asarray(pinned, dtype=bool).copy()
            if pinned.shape != (n,):
                raise ShapeError("pinned mask must be (n,)")

        tree = cKDTree(ref_pos)
        pairs = tree.query_pairs(h, output_type="ndarray")
        both = np.vstack([pairs, pairs[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        pair_i = np.ascontiguousarray(both[order, 0])
        indices = np.ascontiguousarray(both[order, 1])
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, pair_i + 1, 1)
        indptr = np.cumsum(indptr)

        dx = ref_pos[indices] - ref_pos[pair_i]
        r = np.linalg.norm(dx, axis=1)
        w = kernel_w(r, h)
        gradw = kernel_grad(dx, h)

        # shape tensors and their inverses, with a conditioning guard
        a = np.zeros((n, 2, 2))
        np.add.at(a, pair_i, vol[indices, None, None] * gradw[:, :, None] * dx[:, None, :])
        s = np.linalg.svd(a, compute_uv=False)
        bad = (s[:, 1] <= 0) | (s[:, 0] > 1e12 * np.where(s[:, 1] > 0, s[:, 1], 1e-300))
        if np.any(bad):
            raise DegenerateNeighborhoodError(
                f"{int(bad.sum())} particles have rank-deficient neighborhoods "
                f"(first: {int(np.where(bad)[0][0])})"
            )
        ainv = np.linalg.inv(a)
        corr_grad = np.einsum("kij,kj->ki", ainv[pair_i], gradw)

        return cls(
            ref_pos=ref_pos,
            pos=ref_pos.copy(),
            vel=np.zeros((n, 2)),
            vol=vol,
            mass=rho * vol,
            h=float(h),
            rho=float(rho),
            pinned=pinned,
            indptr=indptr,
            indices=indices,
            pair_i=pair_i,
            pair_dx=np.ascontiguousarray(dx),
            pair_r=np.ascontiguousarray(r),
            pair_w=np.ascontiguousarray(w),
            pair_gradw=np.ascontiguousarray(gradw),
            corr_grad=np.ascontiguousarray(corr_grad),
            ainv=np.ascontiguousarray(ainv),
        )


def shape_tensors(ps: ParticleSystem) -> np.ndarray:
    """A_i = sum_j V_j gradW (x) (X_j - X_i) for every particle."""
    a = np.zeros((ps.n, 2, 2))
    np.add.at(
        a,
        ps.pair_i,
        ps.vol[ps.indices, None, None] * ps.pair_gradw[:, :, None] * ps.pair_dx[:, None, :],
    )
    return a


def shape_tensor(ps: ParticleSystem, i: int) -> np.ndarray:
    sl = slice(ps.indptr[i], ps.indptr[i + 1])
    if sl.stop - sl.start < 3:
        raise DegenerateNeighborhoodError(f"particle {i} has too few neighbors")
    a = np.einsum(
        "k,ki,kj->ij", ps.vol[ps.indices[sl]], ps.pair_gradw[sl], ps.pair_dx[sl]
    )
    s = np.linalg.svd(a, compute_uv=False)
    if s[1] <= 0 or s[0] > 1e12 * s[1]:
        raise DegenerateNeighborhoodError(f"particle {i} neighborhood is degenerate")
    return a


# -- hot kernels: numba twins with numpy fallbacks --------------------------------


def _def_grads_np(indptr, indices, pair_i, corr_grad, vol, pos):
    n = indptr.size - 1
    r = pos[indices] - pos[pair_i]
    F = np.zeros((n, 2, 2))
    np.add.at(F, pair_i, vol[indices, None, None] * r[:, :, None] * corr_grad[:, None, :])
    return F


def _pair_forces_np(indices, pair_i, pair_gradw, vol, pa):
    f = np.zeros((pa.shape[0], 2))
    contrib = np.einsum(
        "kij,kj->ki", pa[pair_i] + pa[indices], pair_gradw
    ) * (vol[pair_i] * vol[indices])[:, None]
    np.add.at(f, pair_i, contrib)
    return f


def _hourglass_np(indices, pair_i, pair_dx, pair_r, pair_w, vol, pos, F, coeff):
    xij = pos[indices] - pos[pair_i]
    L = np.linalg.norm(xij, axis=1)
    xhat = xij / L[:, None]
    err_i = np.einsum("kij,kj->ki", F[pair_i], pair_dx) - xij
    err_j = np.einsum("kij,kj->ki", F[indices], pair_dx) - xij
    delta = np.einsum("ki,ki->k", err_i + err_j, xhat)
    scale = -coeff * vol[pair_i] * vol[indices] * pair_w / (2.0 * pair_r**2) * delta
    f = np.zeros((F.shape[0], 2))
    np.add.at(f, pair_i, scale[:, None] * xhat)
    return f


if USE_NUMBA:

    @njit(cache=True)
    def _def_grads_nb(indptr, indices, pair_i, corr_grad, vol, pos):  # pragma: no cover
        n = indptr.size - 1
        F = np.zeros((n, 2, 2))
        for k in range(indices.size):
            i = pair_i[k]
            j = indices[k]
            vj = vol[j]
            rx = pos[j, 0] - pos[i, 0]
            ry = pos[j, 1] - pos[i, 1]
            F[i, 0, 0] += vj * rx * corr_grad[k, 0]
            F[i, 0, 1] += vj * rx * corr_grad[k, 1]
            F[i, 1, 0] += vj * ry * corr_grad[k, 0]
            F[i, 1, 1] += vj * ry * corr_grad[k, 1]
        return F

    @njit(cache=True)
    def _pair_forces_nb(indices, pair_i, pair_gradw, vol, pa):  # pragma: no cover
        f = np.zeros((pa.shape[0], 2))
        for k in range(indices.size):
            i = pair_i[k]
            j = indices[k]
            vv = vol[i] * vol[j]
            gx = pair_gradw[k, 0]
            gy = pair_gradw[k, 1]
            f[i, 0] += vv * ((pa[i, 0, 0] + pa[j, 0, 0]) * gx + (pa[i, 0, 1] + pa[j, 0, 1]) * gy)
            f[i, 1] += vv * ((pa[i, 1, 0] + pa[j, 1, 0]) * gx + (pa[i, 1, 1] + pa[j, 1, 1]) * gy)
        return f

    @njit(cache=True)
    def _hourglass_nb(indices, pair_i, pair_dx, pair_r, pair_w, vol, pos, F, coeff):  # pragma: no cover
        f = np.zeros((F.shape[0], 2))
        for k in range(indices.size):
            i = pair_i[k]
            j = indices[k]
            xx = pos[j, 0] - pos[i, 0]
            xy = pos[j, 1] - pos[i, 1]
            L = np.sqrt(xx * xx + xy * xy)
            hx = xx / L
            hy = xy / L
            dx0 = pair_dx[k, 0]
            dx1 = pair_dx[k, 1]
            ei0 = F[i, 0, 0] * dx0 + F[i, 0, 1] * dx1 - xx
            ei1 = F[i, 1, 0] * dx0 + F[i, 1, 1] * dx1 - xy
            ej0 = F[j, 0, 0] * dx0 + F[j, 0, 1] * dx1 - xx
            ej1 = F[j, 1, 0] * dx0 + F[j, 1, 1] * dx1 - xy
            delta = (ei0 + ej0) * hx + (ei1 + ej1) * hy
            s = -coeff * vol[i] * vol[j] * pair_w[k] / (2.0 * pair_r[k] ** 2) * delta
            f[i, 0] += s * hx
            f[i, 1] += s * hy
        return f


def deformation_gradients(ps: ParticleSystem) -> np.ndarray:
    """Corrected-gradient deformation gradient per particle, exact for
    affine motions."""
    if USE_NUMBA:
        return _def_grads_nb(ps.indptr, ps.indices, ps.pair_i, ps.corr_grad, ps.vol, ps.pos)
    return _def_grads_np(ps.indptr, ps.indices, ps.pair_i, ps.corr_grad, ps.vol, ps.pos)


def deformation_gradient(ps: ParticleSystem, i: int) -> np.ndarray:
    sl = slice(ps.indptr[i], ps.indptr[i + 1])
    r = ps.pos[ps.indices[sl]] - ps.pos[i]
    return np.einsum("k,ki,kj->ij", ps.vol[ps.indices[sl]], r, ps.corr_grad[sl])


def internal_forces(ps: ParticleSystem, params: HgoParams, F=None) -> np.ndarray:
    """f_i = sum_j V_i V_j (P_i Ainv_i + P_j Ainv_j) gradW_ij; pairwise
    antisymmetric, so the total over a free body is zero."""
    if F is None:
        F = deformation_gradients(ps)
    pa = hgo_pk1(F, params) @ ps.ainv
    if USE_NUMBA:
        return _pair_forces_nb(ps.indices, ps.pair_i, ps.pair_gradw, ps.vol, pa)
    return _pair_forces_np(ps.indices, ps.pair_i, ps.pair_gradw, ps.vol, pa)


def hourglass_forces(
    ps: ParticleSystem, params: HgoParams, alpha: float = HOURGLASS_ALPHA, F=None
) -> np.ndarray:
    """Pairwise penalty on the mismatch between F-predicted and actual
    current separations; vanishes identically on affine deformations. The
    stiffness couples alpha to the Young-like modulus from (lam, mu)."""
    if F is None:
        F = deformation_gradients(ps)
    lam = params.bulk - 2.0 * params.mu / 3.0
    e_mod = params.mu * (3.0 * lam + 2.0 * params.mu) / (lam + params.mu)
    coeff = alpha * e_mod
    if USE_NUMBA:
        return _hourglass_nb(
            ps.indices, ps.pair_i, ps.pair_dx, ps.pair_r, ps.pair_w, ps.vol, ps.pos, F, coeff
        )
    return _hourglass_np(
        ps.indices, ps.pair_i, ps.pair_dx, ps.pair_r, ps.pair_w, ps.vol, ps.pos, F, coeff
    )


def total_forces(
    ps: ParticleSystem, params: HgoParams, alpha: float = HOURGLASS_ALPHA, ext=None
) -> np.ndarray:
    F = deformation_gradients(ps)
    f = internal_forces(ps, params, F=F)
    if alpha > 0:
        f += hourglass_forces(ps, params, alpha=alpha, F=F)
    if ext is not None:
        f = f + ext
    return f


# -- time integration -------------------------------------------------------------


def sound_speed(params: HgoParams, rho: float = 1.0) -> float:
    return float(np.sqrt((params.bulk + 2.0 * params.mu) / rho))


def stable_dt(ps: ParticleSystem, params: HgoParams) -> float:
    """CFL-like bound 0.3 h / c with c = sqrt((K + 2 mu) / rho)."""
    return CFL_FACTOR * ps.h / sound_speed(params, ps.rho)


def step(
    ps: ParticleSystem,
    params: HgoParams,
    dt: float,
    damping: float = 0.0,
    alpha: float = HOURGLASS_ALPHA,
    ext=None,
    forces=None,
) -> np.ndarray:
    """One velocity-Verlet step with mass-proportional damping, in place.

    Pinned particles hold their current positions. Returns the end-of-step
    forces so callers can chain steps without recomputing them.
    """
    if dt > stable_dt(ps, params) * (1.0 + 1e-12):
        raise ValidationError("dt exceeds the stability bound 0.3 h / c")
    if forces is None:
        forces = total_forces(ps, params, alpha=alpha, ext=ext)
    free = ~ps.pinned
    acc = forces / ps.mass[:, None]
    v_half = ps.vel + 0.5 * dt * (acc - damping * ps.vel)
    v_half[ps.pinned] = 0.0
    ps.pos[free] += dt * v_half[free]
    forces = total_forces(ps, params, alpha=alpha, ext=ext)
    acc = forces / ps.mass[:, None]
    ps.vel = v_half + 0.5 * dt * (acc - damping * v_half)
    ps.vel[ps.pinned] = 0.0
    if not (np.all(np.isfinite(ps.pos)) and np.all(np.isfinite(ps.vel))):
        raise InstabilityError("non-finite particle state; reduce dt or add damping")
    return forces


def relax_to_equilibrium(
    ps: ParticleSystem,
    params: HgoParams,
    targets=None,
    ext=None,
    tol: float = 1e-4,
    max_steps: int = 40000,
    ramp_steps: int = 200,
    dt: float = None,
    damping: float = None,
    alpha: float = HOURGLASS_ALPHA,
) -> int:
    """Damped dynamics until the free-particle force residual settles.

    targets, if given, prescribe final positions for the pinned particles;
    they are applied over ramp_steps increments to keep the transient within
    the kernel's deformation range. Convergence is max |f| on free particles
    below tol times the larger of the applied-load scale and the peak force
    seen during the ramp; an absolute floor at machine scale relative to the
    material stiffness covers unloaded systems, whose reference scale is
    pure roundoff. Returns the number of steps taken; raises
    UnconvergedError when the budget runs out.
    """
    if dt is None:
        dt = 0.8 * stable_dt(ps, params)
    if damping is None:
        # near-critical for the slowest mode of a body of this extent
        extent = np.ptp(ps.ref_pos, axis=0).max()
        damping = 2.0 * np.pi * sound_speed(params, ps.rho) / (2.0 * extent)
    if targets is not None:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (int(ps.pinned.sum()), 2):
            raise ShapeError("targets must be (n_pinned, 2) final positions")
        start = ps.pos[ps.pinned].copy()
    ref_scale = 0.0
    if ext is not None:
        ref_scale = float(np.abs(ext).max())
    floor = 1e-12 * float(np.max(ps.rho * sound_speed(params, ps.rho) ** 2)) * float(
        np.sqrt(ps.vol.min())
    )
    free = ~ps.pinned
    forces = None
    for k in range(max_steps):
        if targets is not None and k < ramp_steps:
            frac = (k + 1) / ramp_steps
            ps.pos[ps.pinned] = (1.0 - frac) * start + frac * targets
            forces = None  # boundary moved; stale end-of-step forces
        forces = step(ps, params, dt, damping=damping, alpha=alpha, ext=ext, forces=forces)
        resid = float(np.abs(forces[free]).max()) if free.any() else 0.0
        ref_scale = max(ref_scale, resid if k < max(ramp_steps, 1) else 0.0)
        if k >= ramp_steps and resid <= max(tol * ref_scale, floor):
            return k + 1
    raise UnconvergedError(
        f"dynamic relaxation: residual {resid:.3e} above {tol:.1e} x {ref_scale:.3e} "
        f"after {max_steps} steps"
    )


# -- lattice helpers ---------------------------------------------------------------


def square_lattice(x0, x1, y0, y1, dx) -> np.ndarray:
    """Cell-centered uniform lattice covering [x0,x1] x [y0,y1]; each point
    represents volume dx^2."""
    nx = int(round((x1 - x0) / dx))
    ny = int(round((y1 - y0) / dx))
    xs = x0 + (np.arange(nx) + 0.5) * dx
    ys = y0 + (np.arange(ny) + 0.5) * dx
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def kinetic_energy(ps: ParticleSystem) -> float:
    return float(0.5 * np.sum(ps.mass[:, None] * ps.vel**2))
