"""Plane-strain solid mechanics on triangle meshes.

Small-strain linear elasticity, J2 elastoplasticity (associative flow,
linear isotropic hardening, radial-return update), and the fiber-reinforced
HGO hyperelastic model solved by Newton energy minimization. Displacement
fields are stored (n_dofs, 2) over the scalar Lagrange dofs of a
fem.ScalarSpace; interleaved flattening [u0x, u0y, u1x, ...] is internal to
the solvers. Symmetric small-strain stress rows carry the out-of-plane
component explicitly as [t11, t22, t33, t12].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    NewtonError,
    ShapeError,
    SingularSystemError,
    ValidationError,
)
from .fem import RobinSpec, ScalarSpace, TraceOperator, _EDGE_QP, _EDGE_QW, _edge_basis


@dataclass(frozen=True)
class ElasticParams:
    lam: float
    mu: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam + self.mu <= 0:
            raise ValidationError("need mu > 0 and lam + mu > 0")


@dataclass(frozen=True)
class PlasticParams:
    y0: float
    h0: float

    def __post_init__(self):
        if self.y0 <= 0 or self.h0 < 0:
            raise ValidationError("need y0 > 0 and h0 >= 0")


@dataclass(frozen=True)
class HgoParams:
    mu: float
    bulk: float
    k1: float
    k2: float
    alpha1: float = np.pi / 2
    alpha2: float = np.pi / 2
    kappa: float = 0.0

    def __post_init__(self):
        if self.mu <= 0 or self.bulk < 0 or self.k1 < 0 or self.k2 <= 0:
            raise ValidationError("need mu > 0, bulk >= 0, k1 >= 0, k2 > 0")
        if not 0.0 <= self.kappa <= 1.0 / 3.0:
            raise ValidationError("fiber dispersion kappa must be in [0, 1/3]")

    def fibers(self) -> np.ndarray:
        return np.array(
            [
                [np.cos(self.alpha1), np.sin(self.alpha1)],
                [np.cos(self.alpha2), np.sin(self.alpha2)],
            ]
        )


# -- J2 plasticity -------------------------------------------------------------


@dataclass
class PlasticState:
    """Quadrature-point history: plastic strain rows [p11, p22, p33, p12]
    (trace-free) and the accumulated equivalent plastic strain."""

    eps_p: np.ndarray
    ebar: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "PlasticState":
        shape = tuple(np.atleast_1d(shape))
        return cls(np.zeros(shape + (4,)), np.zeros(shape))

    def copy(self) -> "PlasticState":
        return PlasticState(self.eps_p.copy(), self.ebar.copy())


def von_mises(sig) -> np.ndarray:
    """sqrt(3/2 s:s) for stress rows [t11, t22, t33, t12]."""
    sig = np.asarray(sig, dtype=np.float64)
    if sig.shape[-1] != 4:
        raise ShapeError("stress rows must be [t11, t22, t33, t12]")
    m = (sig[..., 0] + sig[..., 1] + sig[..., 2]) / 3.0
    s0, s1, s2 = sig[..., 0] - m, sig[..., 1] - m, sig[..., 2] - m
    return np.sqrt(1.5 * (s0**2 + s1**2 + s2**2 + 2.0 * sig[..., 3] ** 2))


def j2_return_map(strain, state: PlasticState, ep: ElasticParams, pp: PlasticParams):
    """Radial return for plane-strain J2 flow with linear hardening.

    strain rows are total [e11, e22, e12] with e33 = 0. Returns (stress rows
    [t11, t22, t33, t12], updated PlasticState); inputs are not mutated.
    Linear hardening makes the return closed form: d_ebar = f_trial /
    (3 mu + H0), after which the Mises stress equals Y0 + H0 ebar exactly,
    so the Kuhn-Tucker conditions hold to round-off.
    """
    strain = np.asarray(strain, dtype=np.float64)
    if strain.shape[-1] != 3:
        raise ShapeError("strain rows must be [e11, e22, e12]")
    if strain.shape[:-1] != state.ebar.shape:
        raise ShapeError("strain and state disagree on point shape")
    ee = np.empty(strain.shape[:-1] + (4,))
    ee[..., 0] = strain[..., 0] - state.eps_p[..., 0]
    ee[..., 1] = strain[..., 1] - state.eps_p[..., 1]
    ee[..., 2] = -state.eps_p[..., 2]
    ee[..., 3] = strain[..., 2] - state.eps_p[..., 3]
    tr = ee[..., 0] + ee[..., 1] + ee[..., 2]
    sig = 2.0 * ep.mu * ee
    sig[..., :3] += (ep.lam * tr)[..., None]
    sbar = von_mises(sig)
    f = sbar - (pp.y0 + pp.h0 * state.ebar)
    if not np.any(f > 0):
        return sig, state.copy()
    d_ebar = np.where(f > 0, f / (3.0 * ep.mu + pp.h0), 0.0)
    m = (sig[..., 0] + sig[..., 1] + sig[..., 2]) / 3.0
    dev = sig.copy()
    dev[..., :3] -= m[..., None]
    scale = 1.5 * d_ebar / np.where(sbar > 0, sbar, 1.0)
    d_p = dev * scale[..., None]
    return sig - 2.0 * ep.mu * d_p, PlasticState(state.eps_p + d_p, state.ebar + d_ebar)


def traction_from_stress(sig, normals) -> np.ndarray:
    """Cauchy traction t = sigma . n for in-plane rows [t11, t22, t12]."""
    sig = np.asarray(sig, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if sig.shape[-1] != 3:
        raise ShapeError("stress rows must be [t11, t22, t12]")
    if nrm.shape != sig.shape[:-1] + (2,):
        raise ShapeError("normals must pair with stress rows")
    if np.any(np.abs(np.linalg.norm(nrm, axis=-1) - 1.0) > 1e-10):
        raise ValidationError("normals must be unit length")
    t = np.empty(nrm.shape)
    t[..., 0] = sig[..., 0] * nrm[..., 0] + sig[..., 2] * nrm[..., 1]
    t[..., 1] = sig[..., 2] * nrm[..., 0] + sig[..., 1] * nrm[..., 1]
    return t


# -- HGO hyperelasticity -------------------------------------------------------


def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _inv_t2(F, J):
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1]
    out[..., 0, 1] = -F[..., 1, 0]
    out[..., 1, 0] = -F[..., 0, 1]
    out[..., 1, 1] = F[..., 0, 0]
    return out / J[..., None, None]


def hgo_energy(F, p: HgoParams) -> np.ndarray:
    """Strain energy density of the two-fiber HGO model, plane strain.

    The out-of-plane stretch is one, so I1 = tr(C_2x2) + 1 and the
    undeformed state has zero energy. Fiber terms enter through the Macaulay
    bracket of E_i = kappa (I1 - 3) + (1 - 3 kappa)(I4i - 1).
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape[-2:] != (2, 2):
        raise ShapeError("F must be (..., 2, 2)")
    J = _det2(F)
    if np.any(J <= 0):
        raise ValidationError("det F must be positive")
    C = np.einsum("...ki,...kj->...ij", F, F)
    i1 = C[..., 0, 0] + C[..., 1, 1] + 1.0
    ln_j = np.log(J)
    psi = 0.5 * p.mu * (i1 - 3.0) - p.mu * ln_j
    psi += 0.5 * p.bulk * (0.5 * (J**2 - 1.0) - ln_j)
    for n in p.fibers():
        i4 = np.einsum("i,...ij,j->...", n, C, n)
        e = p.kappa * (i1 - 3.0) + (1.0 - 3.0 * p.kappa) * (i4 - 1.0)
        e = np.maximum(e, 0.0)
        psi += p.k1 / (2.0 * p.k2) * (np.exp(p.k2 * e**2) - 1.0)
    return psi


def hgo_pk1(F, p: HgoParams) -> np.ndarray:
    """First Piola-Kirchhoff stress, the exact F-derivative of hgo_energy."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[-2:] != (2, 2):
        raise ShapeError("F must be (..., 2, 2)")
    J = _det2(F)
    if np.any(J <= 0):
        raise ValidationError("det F must be positive")
    f_inv_t = _inv_t2(F, J)
    C = np.einsum("...ki,...kj->...ij", F, F)
    i1 = C[..., 0, 0] + C[..., 1, 1] + 1.0
    P = p.mu * (F - f_inv_t)
    P += (0.5 * p.bulk * (J**2 - 1.0))[..., None, None] * f_inv_t
    for n in p.fibers():
        i4 = np.einsum("i,...ij,j->...", n, C, n)
        e = p.kappa * (i1 - 3.0) + (1.0 - 3.0 * p.kappa) * (i4 - 1.0)
        e = np.maximum(e, 0.0)
        gain = 2.0 * p.k1 * e * np.exp(p.k2 * e**2)
        fiber_dir = p.kappa * F + (1.0 - 3.0 * p.kappa) * np.einsum(
            "...ij,j,k->...ik", F, n, n
        )
        P += gain[..., None, None] * fiber_dir
    return P


def pk1_traction(P, normals) -> np.ndarray:
    """Reference traction T = P . N along a curve with unit normals N."""
    P = np.asarray(P, dtype=np.float64)
    nrm = np.asarray(normals, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(nrm, axis=-1) - 1.0) > 1e-10):
        raise ValidationError("normals must be unit length")
    return np.einsum("...ij,...j->...i", P, nrm)


# -- vector FEM scaffolding ----------------------------------------------------

# Voigt convention [e11, e22, g12] with engineering shear g12 = 2 e12, so the
# conjugate stress rows are [t11, t22, t12].
_D_IDX = np.arange(2)


def _b_tensor(grads):
    e, q, d, _ = grads.shape
    B = np.zeros((e, q, d, 2, 3))
    B[..., 0, 0] = grads[..., 0]
    B[..., 0, 2] = grads[..., 1]
    B[..., 1, 1] = grads[..., 1]
    B[..., 1, 2] = grads[..., 0]
    return B


def elastic_moduli(ep: ElasticParams) -> np.ndarray:
    """Plane-strain Voigt stiffness for [e11, e22, g12]."""
    lam, mu = ep.lam, ep.mu
    return np.array(
        [[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]]
    )


class VectorOperator:
    """Shared tables for vector-valued problems on a ScalarSpace: element
    quadrature, boundary edge tables, Dirichlet bookkeeping, and scatter
    indices for interleaved (2 n_dofs) systems."""

    def __init__(self, space: ScalarSpace, bc: dict):
        self.space = space
        self.bc = dict(bc)
        tags = set(space.mesh.tag_names())
        unknown = set(bc) - tags
        if unknown:
            raise ValidationError(f"bc tags {unknown} not in mesh tags {tags}")
        if tags - set(bc):
            raise ValidationError(f"missing bc for tags {tags - set(bc)}")
        for tag, kind in self.bc.items():
            if isinstance(kind, RobinSpec):
                if kind.r2 == 0:
                    raise ValidationError("RobinSpec needs R2 != 0")
            elif kind not in ("dirichlet", "traction", "free"):
                raise ValidationError(f"unknown bc kind {kind!r} for {tag!r}")

        N, Gref, qw = space.basis_tables()
        self.qw = qw
        self.N = N
        self.grads = space.phys_grads(Gref)
        self.detj = np.abs(space.det_j)
        self.B = _b_tensor(self.grads)
        nd = space.cell_dofs.shape[1]
        gd = (2 * space.cell_dofs[:, :, None] + _D_IDX[None, None, :]).reshape(-1, 2 * nd)
        self._gdofs = gd
        self._rows = np.repeat(gd, 2 * nd, axis=1).ravel()
        self._cols = np.tile(gd, (1, 2 * nd)).ravel()
        self.n_sys = 2 * space.n_dofs

        self._edge_tables = {}
        for tag, kind in self.bc.items():
            if kind == "free":
                continue
            edges = space.mesh.edges_of(tag)
            ed = space.edge_dofs(edges)
            p0 = space.mesh.vertices[edges[:, 0]]
            p1 = space.mesh.vertices[edges[:, 1]]
            lengths = np.linalg.norm(p1 - p0, axis=1)
            qpts = p0[:, None, :] + _EDGE_QP[None, :, None] * (p1 - p0)[:, None, :]
            Ne = np.stack([_edge_basis(space.degree, s) for s in _EDGE_QP])
            self._edge_tables[tag] = (ed, lengths, qpts, Ne)

        self.dirichlet_tags = [t for t, k in self.bc.items() if k == "dirichlet"]
        if self.dirichlet_tags:
            dofs = np.unique(
                np.concatenate([space.boundary_dofs(t) for t in self.dirichlet_tags])
            )
            self.fixed = np.concatenate([2 * dofs, 2 * dofs + 1])
            self.fixed.sort()
        else:
            self.fixed = np.empty(0, dtype=np.int64)
        mask = np.ones(self.n_sys, dtype=bool)
        mask[self.fixed] = False
        self.free = np.where(mask)[0]

    def assemble(self, ke) -> sp.csr_matrix:
        """Scatter per-element blocks (e, nd, 2, nd, 2) into the system."""
        ne = ke.shape[0]
        return sp.coo_matrix(
            (ke.reshape(ne, -1).ravel(), (self._rows, self._cols)),
            shape=(self.n_sys, self.n_sys),
        ).tocsr()

    def elastic_stiffness(self, D) -> sp.csr_matrix:
        ke = np.einsum("q,eqaiV,VW,eqbjW,e->eaibj", self.qw, self.B, D, self.B, self.detj)
        return self.assemble(ke)

    def tangent_stiffness(self, Dq) -> sp.csr_matrix:
        """Stiffness from per-quadrature-point Voigt moduli (e, q, 3, 3)."""
        ke = np.einsum(
            "q,eqaiV,eqVW,eqbjW,e->eaibj", self.qw, self.B, Dq, self.B, self.detj
        )
        return self.assemble(ke)

    def qp_strain(self, u) -> np.ndarray:
        """Voigt strain [e11, e22, g12] per (element, qp)."""
        return np.einsum("eqdiV,edi->eqV", self.B, u[self.space.cell_dofs])

    def qp_def_grad(self, u) -> np.ndarray:
        """Deformation gradient I + grad u per (element, qp)."""
        g = np.einsum("eqdj,edi->eqij", self.grads, u[self.space.cell_dofs])
        g[..., 0, 0] += 1.0
        g[..., 1, 1] += 1.0
        return g

    def internal_force_voigt(self, sig_v) -> np.ndarray:
        """Nodal forces from Voigt stresses [t11, t22, t12] per (e, q)."""
        fe = np.einsum("q,eqdiV,eqV,e->edi", self.qw, self.B, sig_v, self.detj)
        out = np.zeros((self.space.n_dofs, 2))
        np.add.at(out, self.space.cell_dofs, fe)
        return out

    def internal_force_pk1(self, P) -> np.ndarray:
        """Nodal forces from PK1 stresses (e, q, 2, 2)."""
        fe = np.einsum("q,eqij,eqdj,e->edi", self.qw, P, self.grads, self.detj)
        out = np.zeros((self.space.n_dofs, 2))
        np.add.at(out, self.space.cell_dofs, fe)
        return out

    def volume_integral(self, vals) -> float:
        """Integral of a per-(element, qp) scalar field."""
        return float(np.einsum("q,eq,e->", self.qw, vals, self.detj))

    def edge_load(self, tag, data) -> np.ndarray:
        """Nodal load from a traction field on a tagged boundary.

        data is callable(points)->(n, 2), a constant length-2 vector, or an
        array aligned with (boundary_dofs(tag), 2).
        """
        ed, lengths, qpts, Ne = self._edge_tables[tag]
        flat = qpts.reshape(-1, 2)
        if callable(data):
            tq = np.asarray(data(flat), dtype=np.float64).reshape(qpts.shape[0], -1, 2)
        else:
            data = np.asarray(data, dtype=np.float64)
            if data.shape == (2,):
                tq = np.broadcast_to(data, qpts.shape[:2] + (2,))
            else:
                dofs = self.space.boundary_dofs(tag)
                if data.shape != (dofs.size, 2):
                    raise ShapeError(
                        f"traction data for {tag!r} must be (boundary_dofs, 2)"
                    )
                nodal = np.zeros((self.space.n_dofs, 2))
                nodal[dofs] = data
                tq = np.einsum("qd,edi->eqi", Ne, nodal[ed])
        out = np.zeros((self.space.n_dofs, 2))
        np.add.at(out, ed, np.einsum("q,qd,eqi,e->edi", _EDGE_QW, Ne, tq, lengths))
        return out

    def edge_mass(self, tag) -> sp.csr_matrix:
        """Boundary mass matrix acting identically on both components."""
        ed, lengths, _, Ne = self._edge_tables[tag]
        me = np.einsum("q,qd,qc,e->edc", _EDGE_QW, Ne, Ne, lengths)
        blocks = np.zeros(me.shape[:2] + (2,) + (me.shape[2],) + (2,))
        blocks[:, :, 0, :, 0] = me
        blocks[:, :, 1, :, 1] = me
        nd = ed.shape[1]
        gd = (2 * ed[:, :, None] + _D_IDX[None, None, :]).reshape(-1, 2 * nd)
        rows = np.repeat(gd, 2 * nd, axis=1).ravel()
        cols = np.tile(gd, (1, 2 * nd)).ravel()
        return sp.coo_matrix(
            (blocks.reshape(len(ed), -1).ravel(), (rows, cols)),
            shape=(self.n_sys, self.n_sys),
        ).tocsr()

    def edge_squared_norm(self, tag, u) -> float:
        """Integral of |u|^2 over a tagged boundary."""
        ed, lengths, _, Ne = self._edge_tables[tag]
        uq = np.einsum("qd,edi->eqi", Ne, u[ed])
        return float(np.einsum("q,eqi,eqi,e->", _EDGE_QW, uq, uq, lengths))

    def dirichlet_values(self, data: dict, scale: float = 1.0) -> np.ndarray:
        """Prescribed displacement array (n_dofs, 2); zero off the boundary."""
        u = np.zeros((self.space.n_dofs, 2))
        for tag in self.dirichlet_tags:
            dofs = self.space.boundary_dofs(tag)
            val = data[tag]
            if callable(val):
                u[dofs] = scale * np.asarray(val(self.space.dof_coords[dofs]))
            else:
                val = np.asarray(val, dtype=np.float64)
                if val.ndim == 0:
                    u[dofs] = scale * float(val)
                elif val.shape == (2,):
                    u[dofs] = scale * val
                elif val.shape == (dofs.size, 2):
                    u[dofs] = scale * val
                else:
                    raise ShapeError(f"dirichlet data for {tag!r} must be (dofs, 2)")
        return u


class QpProjector:
    """Consistent-mass L2 projection of per-(element, qp) values to nodes.

    Row-sum mass lumping is unusable here: quadratic vertex basis functions
    have zero mean on a triangle. The mass matrix is factored once so
    repeated projections (stress recovery inside coupling loops) are cheap.
    """

    def __init__(self, space: ScalarSpace):
        N, _, qw = space.basis_tables()
        detj = np.abs(space.det_j)
        me = np.einsum("q,qa,qb,e->eab", qw, N, N, detj)
        nd = space.cell_dofs.shape[1]
        rows = np.repeat(space.cell_dofs, nd, axis=1).ravel()
        cols = np.tile(space.cell_dofs, (1, nd)).ravel()
        M = sp.coo_matrix(
            (me.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs)
        ).tocsc()
        self.space = space
        self._N, self._qw, self._detj = N, qw, detj
        self._lu = spla.splu(M)

    def __call__(self, vals) -> np.ndarray:
        vals = np.asarray(vals, dtype=np.float64)
        if vals.shape != (len(self.space.mesh.triangles), self._qw.size):
            raise ShapeError("vals must be per (element, quadrature point)")
        b = np.zeros(self.space.n_dofs)
        np.add.at(
            b,
            self.space.cell_dofs,
            np.einsum("q,qd,eq,e->ed", self._qw, self._N, vals, self._detj),
        )
        return self._lu.solve(b)


def project_qp_to_nodes(space: ScalarSpace, vals) -> np.ndarray:
    """One-shot consistent L2 projection; build a QpProjector to reuse."""
    return QpProjector(space)(vals)


def trace_vector(trace: TraceOperator, u) -> np.ndarray:
    """Vector field values at a TraceOperator's points, (n, 2)."""
    return np.stack([trace.values(u[:, 0]), trace.values(u[:, 1])], axis=1)


# -- linear elasticity ---------------------------------------------------------


class ElasticProblem:
    """Plane-strain linear elasticity with reusable factorization.

    bc maps tag -> 'dirichlet' | 'traction' | 'free'. Dirichlet and traction
    data are supplied per solve like PoissonProblem; traction and Dirichlet
    data may be scaled for incremental loading.
    """

    def __init__(self, space: ScalarSpace, bc: dict, params: ElasticParams):
        self.params = params
        self.op = VectorOperator(space, bc)
        for tag, kind in self.op.bc.items():
            if isinstance(kind, RobinSpec):
                raise ValidationError("linear elasticity takes dirichlet/traction/free")
        K = self.op.elastic_stiffness(elastic_moduli(params))
        self.K = K.tocsc()
        free, fixed = self.op.free, self.op.fixed
        self._Kff = self.K[np.ix_(free, free)]
        self._Kfd = self.K[np.ix_(free, fixed)] if fixed.size else None
        try:
            self._lu = spla.splu(self._Kff.tocsc())
        except RuntimeError as exc:  # pragma: no cover
            raise SingularSystemError(str(exc)) from exc

    def external_load(self, data: dict) -> np.ndarray:
        f = np.zeros((self.op.space.n_dofs, 2))
        for tag, kind in self.op.bc.items():
            if kind == "traction":
                f += self.op.edge_load(tag, data[tag])
        return f

    def solve(self, data: dict) -> np.ndarray:
        """Displacement (n_dofs, 2) for the given per-tag boundary data."""
        missing = {t for t, k in self.op.bc.items() if k != "free"} - set(data)
        if missing:
            raise ValidationError(f"missing boundary data for {missing}")
        u = self.op.dirichlet_values(data)
        b = self.external_load(data).ravel()
        rhs = b[self.op.free]
        if self.op.fixed.size:
            rhs = rhs - self._Kfd @ u.ravel()[self.op.fixed]
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("solution contains non-finite values")
        flat = u.ravel()
        flat[self.op.free] = x
        return flat.reshape(-1, 2)

    def qp_stress(self, u) -> np.ndarray:
        """Voigt stress [t11, t22, t12] per (element, qp)."""
        return np.einsum("VW,eqW->eqV", elastic_moduli(self.params), self.op.qp_strain(u))

    def residual(self, u, data: dict) -> float:
        r = self.K @ u.ravel() - self.external_load(data).ravel()
        return float(np.linalg.norm(r[self.op.free]))


# -- elastoplastic incremental solver -------------------------------------------


def _voigt_to_tensor_strain(eps_v):
    out = np.empty(eps_v.shape)
    out[..., 0] = eps_v[..., 0]
    out[..., 1] = eps_v[..., 1]
    out[..., 2] = 0.5 * eps_v[..., 2]
    return out


def _stress4_to_voigt(sig4):
    return sig4[..., [0, 1, 3]]


class ElastoplasticProblem:
    """Incremental J2 elastoplasticity under proportional loading.

    Each load step freezes the committed quadrature state, runs Newton with
    a finite-difference consistent tangent on the radial-return stress, and
    commits the state on convergence. One level of step bisection is
    attempted when Newton stalls.
    """

    def __init__(self, space: ScalarSpace, bc: dict, ep: ElasticParams, pp: PlasticParams):
        self.ep = ep
        self.pp = pp
        self.op = VectorOperator(space, bc)
        self._qp_shape = (len(space.mesh.triangles), self.op.qw.size)

    def _stress_and_tangent(self, eps_v, state, need_tangent=True):
        sig4, new_state = j2_return_map(_voigt_to_tensor_strain(eps_v), state, self.ep, self.pp)
        if not need_tangent:
            return sig4, new_state, None
        D = np.empty(eps_v.shape[:-1] + (3, 3))
        h = 1e-7
        for v in range(3):
            ep_p = eps_v.copy()
            ep_p[..., v] += h
            em_p = eps_v.copy()
            em_p[..., v] -= h
            sp4, _ = j2_return_map(_voigt_to_tensor_strain(ep_p), state, self.ep, self.pp)
            sm4, _ = j2_return_map(_voigt_to_tensor_strain(em_p), state, self.ep, self.pp)
            D[..., v] = _stress4_to_voigt((sp4 - sm4) / (2.0 * h))
        return sig4, new_state, D

    def _newton(self, u, state, data, scale, tol, max_newton):
        f_ext = np.zeros(self.op.n_sys)
        for tag, kind in self.op.bc.items():
            if kind == "traction":
                f_ext += scale * self.op.edge_load(tag, data[tag]).ravel()
        ref = max(1.0, np.linalg.norm(f_ext[self.op.free]))
        u = u.copy()
        ud = self.op.dirichlet_values(data, scale)
        flat = u.ravel()
        flat[self.op.fixed] = ud.ravel()[self.op.fixed]
        u = flat.reshape(-1, 2)
        eps_v = self.op.qp_strain(u)
        sig4, new_state, D = self._stress_and_tangent(eps_v, state)
        r = f_ext - self.op.internal_force_voigt(_stress4_to_voigt(sig4)).ravel()
        rn = np.linalg.norm(r[self.op.free])
        for _ in range(max_newton):
            if rn <= tol * ref:
                return u, sig4, new_state, True
            K = self.op.tangent_stiffness(D).tocsc()
            Kff = K[np.ix_(self.op.free, self.op.free)]
            try:
                du = spla.splu(Kff).solve(r[self.op.free])
            except RuntimeError as exc:  # pragma: no cover
                raise SingularSystemError(str(exc)) from exc
            # backtrack on the residual norm: plastic branch flips can make
            # the full step cycle without a decrease condition
            s = 1.0
            for _ in range(10):
                flat = u.ravel().copy()
                flat[self.op.free] += s * du
                u_try = flat.reshape(-1, 2)
                eps_v = self.op.qp_strain(u_try)
                sig_t, _, _ = self._stress_and_tangent(eps_v, state, need_tangent=False)
                r_try = f_ext - self.op.internal_force_voigt(_stress4_to_voigt(sig_t)).ravel()
                rn_try = np.linalg.norm(r_try[self.op.free])
                if rn_try < rn:
                    break
                s *= 0.5
            u = u_try
            sig4, new_state, D = self._stress_and_tangent(eps_v, state)
            r = f_ext - self.op.internal_force_voigt(_stress4_to_voigt(sig4)).ravel()
            rn = np.linalg.norm(r[self.op.free])
        return u, sig4, new_state, rn <= tol * ref

    def solve(
        self,
        data: dict,
        n_steps: int = 4,
        tol: float = 1e-8,
        max_newton: int = 25,
        program=None,
    ):
        """Incremental solve from the virgin state; returns (u, qp stress
        rows [t11, t22, t33, t12], committed PlasticState).

        The loading ramps linearly to full scale over n_steps, or follows an
        explicit program of scale factors (e.g. [0.5, 1.0, 0.5, 0.0] to load
        and unload).
        """
        missing = {t for t, k in self.op.bc.items() if k != "free"} - set(data)
        if missing:
            raise ValidationError(f"missing boundary data for {missing}")
        state = PlasticState.zeros(self._qp_shape)
        u = np.zeros((self.op.space.n_dofs, 2))
        sig4 = np.zeros(self._qp_shape + (4,))
        if program is None:
            program = np.linspace(0.0, 1.0, n_steps + 1)[1:]
        prev = 0.0
        for scale in program:
            u_try, sig_try, state_try, ok = self._newton(
                u, state, data, scale, tol, max_newton
            )
            if not ok:
                # one bisection: insert a half step, then retry the full one
                half = 0.5 * (prev + scale)
                u_half, _, state_half, ok_half = self._newton(
                    u, state, data, half, tol, max_newton
                )
                if not ok_half:
                    raise NewtonError(f"load step at scale {scale:.3f} failed")
                u_try, sig_try, state_try, ok = self._newton(
                    u_half, state_half, data, scale, tol, max_newton
                )
                if not ok:
                    raise NewtonError(f"load step at scale {scale:.3f} failed")
            u, sig4, state = u_try, sig_try, state_try
            prev = scale
        return u, sig4, state


# -- hyperelastic Newton solver --------------------------------------------------


class HyperelasticProblem:
    """Total-potential-energy minimization for the HGO solid.

    bc maps tag -> 'dirichlet' | 'traction' | 'free' | RobinSpec(R, 1); a
    Robin tag contributes the surface energy 0.5 R |u|^2 - r . u with data r
    supplied per solve, which weakly enforces traction + R u = r.
    """

    def __init__(self, space: ScalarSpace, bc: dict, params: HgoParams):
        self.params = params
        self.op = VectorOperator(space, bc)
        self._robin = {}
        for tag, kind in self.op.bc.items():
            if isinstance(kind, RobinSpec):
                if kind.r2 != 1.0:
                    raise ValidationError("Robin tags use R1 * u + traction = r, R2 = 1")
                if kind.r1 < 0:
                    raise ValidationError("Robin coefficient must be nonnegative")
                self._robin[tag] = kind.r1 * self.op.edge_mass(tag)

    def _loads(self, data, scale):
        f = np.zeros(self.op.n_sys)
        for tag, kind in self.op.bc.items():
            if kind == "traction" or isinstance(kind, RobinSpec):
                f += scale * self.op.edge_load(tag, data[tag]).ravel()
        return f

    def energy(self, u, data: dict, scale: float = 1.0) -> float:
        """Total potential energy at displacement u."""
        F = self.op.qp_def_grad(u)
        val = self.op.volume_integral(hgo_energy(F, self.params))
        val -= float(self._loads(data, scale) @ u.ravel())
        for tag, kind in self.op.bc.items():
            if isinstance(kind, RobinSpec):
                val += 0.5 * kind.r1 * self.op.edge_squared_norm(tag, u)
        return val

    def gradient(self, u, data: dict, scale: float = 1.0) -> np.ndarray:
        """Flat energy gradient over all 2 n_dofs displacement unknowns."""
        F = self.op.qp_def_grad(u)
        g = self.op.internal_force_pk1(hgo_pk1(F, self.params)).ravel()
        g -= self._loads(data, scale)
        for M in self._robin.values():
            g += M @ u.ravel()
        return g

    def _hessian(self, u):
        F = self.op.qp_def_grad(u)
        P0 = hgo_pk1(F, self.params)
        A = np.empty(F.shape[:2] + (2, 2, 2, 2))
        h = 1e-7
        for k in range(2):
            for l in range(2):
                Fp = F.copy()
                Fp[..., k, l] += h
                A[..., k, l] = (hgo_pk1(Fp, self.params) - P0) / h
        ke = np.einsum(
            "q,eqaJ,eqiJkL,eqbL,e->eaikb", self.op.qw, self.op.grads, A,
            self.op.grads, self.op.detj,
        ).transpose(0, 1, 2, 4, 3)
        K = self.op.assemble(np.ascontiguousarray(ke))
        for M in self._robin.values():
            K = K + M
        return K

    def solve(
        self,
        data: dict,
        n_steps: int = 1,
        tol: float = 1e-8,
        max_newton: int = 40,
        u0=None,
    ) -> np.ndarray:
        """Newton minimization with backtracking line search.

        Loading (tractions, Robin data, Dirichlet values) ramps over n_steps
        continuation stages; each stage converges the gradient norm on free
        dofs below tol before the next. Accepted line-search iterates never
        increase the energy.
        """
        missing = {t for t, k in self.op.bc.items() if k != "free"} - set(data)
        if missing:
            raise ValidationError(f"missing boundary data for {missing}")
        u = np.zeros((self.op.space.n_dofs, 2)) if u0 is None else u0.copy()
        free = self.op.free
        for scale in np.linspace(0.0, 1.0, n_steps + 1)[1:]:
            flat = u.ravel()
            flat[self.op.fixed] = self.op.dirichlet_values(data, scale).ravel()[self.op.fixed]
            u = flat.reshape(-1, 2)
            for _ in range(max_newton):
                g = self.gradient(u, data, scale)
                gn = np.linalg.norm(g[free])
                if gn <= tol:
                    break
                K = self._hessian(u).tocsc()
                Kff = K[np.ix_(free, free)]
                try:
                    du = spla.splu(Kff).solve(-g[free])
                except RuntimeError as exc:  # pragma: no cover
                    raise SingularSystemError(str(exc)) from exc
                if not np.all(np.isfinite(du)):
                    raise SingularSystemError("Newton direction is non-finite")
                e0 = self.energy(u, data, scale)
                step = 1.0
                while step >= 1e-6:
                    trial = u.ravel().copy()
                    trial[free] += step * du
                    trial = trial.reshape(-1, 2)
                    try:
                        e1 = self.energy(trial, data, scale)
                    except ValidationError:
                        e1 = np.inf  # inverted elements; shrink the step
                    if e1 <= e0 + 1e-12 * max(1.0, abs(e0)):
                        u = trial
                        break
                    step *= 0.5
                else:
                    raise NewtonError("line search failed to reduce the energy")
            else:
                raise NewtonError(
                    f"Newton stalled at scale {scale:.3f}, gradient {gn:.2e}"
                )
        return u
