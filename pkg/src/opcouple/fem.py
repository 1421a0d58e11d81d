"""Scalar Lagrange FEM on triangles: -div(k grad u) = f with mixed BCs.

Quadratic elements by default (linear available). Solvers are split into an
assembly/factorization stage and a cheap per-boundary-data solve so coupling
loops that only change interface data reuse the factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import OutsideMeshError, ShapeError, SingularSystemError, ValidationError
from .mesh import Mesh2D, boundary_loop_vertices

# Degree-5 rule on the reference triangle, barycentric points and weights
# summing to one (scaled by the half reference area at use).
_TRI_QP = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [0.0597158717897698, 0.4701420641051151, 0.4701420641051151],
        [0.4701420641051151, 0.0597158717897698, 0.4701420641051151],
        [0.4701420641051151, 0.4701420641051151, 0.0597158717897698],
        [0.7974269853530873, 0.1012865073234563, 0.1012865073234563],
        [0.1012865073234563, 0.7974269853530873, 0.1012865073234563],
        [0.1012865073234563, 0.1012865073234563, 0.7974269853530873],
    ]
)
_TRI_QW = np.array(
    [0.225]
    + [0.1323941527885062] * 3
    + [0.1259391805448271] * 3
)

# 3-point Gauss on [0, 1].
_EDGE_QP = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_EDGE_QW = np.array([5 / 18, 8 / 18, 5 / 18])


def _p2_basis(lam):
    l0, l1, l2 = lam
    return np.array(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0]
    )


def _p2_grad_ref(lam):
    l0, l1, l2 = lam
    d0, d1, d2 = np.array([-1.0, -1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])
    return np.array(
        [
            (4 * l0 - 1) * d0,
            (4 * l1 - 1) * d1,
            (4 * l2 - 1) * d2,
            4 * (l1 * d0 + l0 * d1),
            4 * (l2 * d1 + l1 * d2),
            4 * (l0 * d2 + l2 * d0),
        ]
    )


def _p1_basis(lam):
    return np.asarray(lam, dtype=np.float64)


def _p1_grad_ref(_lam):
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _edge_basis(degree, s):
    if degree == 1:
        return np.array([1.0 - s, s])
    return np.array([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])


class ScalarSpace:
    """Lagrange dofs (vertices, plus edge midpoints for degree 2)."""

    def __init__(self, mesh: Mesh2D, degree: int = 2):
        if degree not in (1, 2):
            raise ValidationError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        nv = len(mesh.vertices)
        if degree == 1:
            self.dof_coords = mesh.vertices.copy()
            self.cell_dofs = mesh.triangles.copy()
            self._edge_mid = {}
        else:
            edge_ids = {}
            tris = mesh.triangles
            for tri in tris:
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    key = (min(a, b), max(a, b))
                    if key not in edge_ids:
                        edge_ids[key] = nv + len(edge_ids)
            coords = np.empty((nv + len(edge_ids), 2))
            coords[:nv] = mesh.vertices
            for (a, b), d in edge_ids.items():
                coords[d] = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
            cell_dofs = np.empty((len(tris), 6), dtype=np.int64)
            cell_dofs[:, :3] = tris
            for i, tri in enumerate(tris):
                for k, (a, b) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))):
                    cell_dofs[i, 3 + k] = edge_ids[(min(a, b), max(a, b))]
            self.dof_coords = coords
            self.cell_dofs = cell_dofs
            self._edge_mid = edge_ids
        self.n_dofs = len(self.dof_coords)
        p = mesh.vertices[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.det_j = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        self.inv_j = inv / self.det_j[:, None, None]
        self._locator = None

    # -- boundary bookkeeping -------------------------------------------------

    def edge_dofs(self, edges) -> np.ndarray:
        """Per-edge dof rows [v0, v1(, midside)] for given vertex-id edges."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if self.degree == 1:
            return edges
        mids = [self._edge_mid[(min(a, b), max(a, b))] for a, b in edges]
        return np.column_stack([edges, np.asarray(mids, dtype=np.int64)])

    def boundary_dofs(self, tag: str) -> np.ndarray:
        """Sorted unique dof ids on the tagged boundary."""
        ed = self.edge_dofs(self.mesh.edges_of(tag))
        return np.unique(ed)

    def boundary_loop_dofs(self, tag: str) -> np.ndarray:
        """Dofs in walk order around a closed tagged loop.

        Degree 2 interleaves midside dofs: v0, m01, v1, m12, v2, ...
        """
        loop = boundary_loop_vertices(self.mesh, tag)
        if self.degree == 1:
            return loop
        out = []
        for i, v in enumerate(loop):
            w = loop[(i + 1) % len(loop)]
            out.append(v)
            out.append(self._edge_mid[(min(v, w), max(v, w))])
        return np.asarray(out, dtype=np.int64)

    # -- quadrature-level element tables --------------------------------------

    def basis_tables(self):
        basis = _p2_basis if self.degree == 2 else _p1_basis
        grad = _p2_grad_ref if self.degree == 2 else _p1_grad_ref
        lam = _TRI_QP
        N = np.stack([basis(l) for l in lam])  # (nq, nd)
        G = np.stack([grad(l) for l in lam])  # (nq, nd, 2)
        return N, G, _TRI_QW * 0.5

    def phys_grads(self, Gref):
        """Physical basis gradients per (element, qp, dof, xy)."""
        return np.einsum("qdr,erx->eqdx", Gref, self.inv_j)

    def qp_coords(self):
        p = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qv,evx->eqx", _TRI_QP, p)

    def lumped_mass(self) -> np.ndarray:
        """Row-sum lumped mass diagonal (nodal quadrature weights)."""
        N, _, qw = self.basis_tables()
        vals = np.einsum("q,qd->d", qw, N)[None, :] * np.abs(self.det_j)[:, None]
        out = np.zeros(self.n_dofs)
        np.add.at(out, self.cell_dofs, vals)
        return out

    # -- point location and traces --------------------------------------------

    def locate(self, points, tol=1e-9):
        """(element id, barycentric coords) for each query point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tris = self.mesh.triangles
        p0 = self.mesh.vertices[tris[:, 0]]
        d = pts[:, None, :] - p0[None, :, :]
        # barycentric lambda1, lambda2 via the element inverse Jacobians
        lam12 = np.einsum("erx,pex->per", self.inv_j, d)
        lam0 = 1.0 - lam12.sum(axis=2)
        ok = (lam0 >= -tol) & (lam12[:, :, 0] >= -tol) & (lam12[:, :, 1] >= -tol)
        tri_idx = np.argmax(ok, axis=1)
        missing = ~ok[np.arange(len(pts)), tri_idx]
        if np.any(missing):
            bad = pts[missing][0]
            raise OutsideMeshError(f"point {bad} outside mesh (tol {tol})")
        lam = np.empty((len(pts), 3))
        lam[:, 1:] = lam12[np.arange(len(pts)), tri_idx]
        lam[:, 0] = lam0[np.arange(len(pts)), tri_idx]
        np.clip(lam, 0.0, 1.0, out=lam)
        lam /= lam.sum(axis=1, keepdims=True)
        return tri_idx, lam


class TraceOperator:
    """Reusable evaluator of field values and gradients at fixed points."""

    def __init__(self, space: ScalarSpace, points):
        self.space = space
        self.points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        self.tri, lam = space.locate(self.points)
        basis = _p2_basis if space.degree == 2 else _p1_basis
        grad = _p2_grad_ref if space.degree == 2 else _p1_grad_ref
        self.N = np.stack([basis(l) for l in lam])  # (np, nd)
        Gref = np.stack([grad(l) for l in lam])  # (np, nd, 2)
        self.G = np.einsum("pdr,prx->pdx", Gref, space.inv_j[self.tri])
        self.dofs = space.cell_dofs[self.tri]

    def values(self, u) -> np.ndarray:
        return np.einsum("pd,pd->p", self.N, u[self.dofs])

    def gradients(self, u) -> np.ndarray:
        return np.einsum("pdx,pd->px", self.G, u[self.dofs])

    def normal_derivatives(self, u, normals) -> np.ndarray:
        nrm = np.asarray(normals, dtype=np.float64)
        return np.einsum("px,px->p", self.gradients(u), nrm)


def boundary_trace(space: ScalarSpace, u, points) -> np.ndarray:
    return TraceOperator(space, points).values(u)


def normal_derivative_trace(space: ScalarSpace, u, points, normals) -> np.ndarray:
    return TraceOperator(space, points).normal_derivatives(u, normals)


# -- Poisson problem ----------------------------------------------------------


@dataclass
class RobinSpec:
    """R1 * u + R2 * du/dn = g on the tagged boundary (R2 nonzero)."""

    r1: float
    r2: float


class PoissonProblem:
    """-lap u = f with per-tag Dirichlet / Neumann / Robin conditions.

    bc maps tag -> 'dirichlet' | 'neumann' | RobinSpec. Data for each tag is
    supplied to solve() as a callable(points) or an array aligned with
    boundary_dofs(tag) (Dirichlet) / edge quadrature interpolation (others).
    The stiffness (plus Robin boundary mass) is factorized once.
    """

    def __init__(self, space: ScalarSpace, bc: dict, f=0.0):
        self.space = space
        self.bc = dict(bc)
        tags = set(space.mesh.tag_names())
        unknown = set(bc) - tags
        if unknown:
            raise ValidationError(f"bc tags {unknown} not in mesh tags {tags}")
        if tags - set(bc):
            raise ValidationError(f"missing bc for tags {tags - set(bc)}")
        self.f = f

        N, Gref, qw = space.basis_tables()
        grads = space.phys_grads(Gref)
        detj = np.abs(space.det_j)
        ke = np.einsum("q,eqdx,eqcx,e->edc", qw, grads, grads, detj)
        rows = np.repeat(space.cell_dofs, space.cell_dofs.shape[1], axis=1).ravel()
        cols = np.tile(space.cell_dofs, (1, space.cell_dofs.shape[1])).ravel()
        K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(space.n_dofs,) * 2).tocsr()

        # base load vector from f
        self.b0 = np.zeros(space.n_dofs)
        xq = space.qp_coords()
        fq = f(xq.reshape(-1, 2)).reshape(xq.shape[:2]) if callable(f) else np.full(xq.shape[:2], float(f))
        fe = np.einsum("q,qd,eq,e->ed", qw, N, fq, detj)
        np.add.at(self.b0, space.cell_dofs, fe)

        # Robin boundary mass and edge tables for data terms
        self._edge_tables = {}
        for tag, kind in self.bc.items():
            edges = space.mesh.edges_of(tag)
            ed = space.edge_dofs(edges)
            p0 = space.mesh.vertices[edges[:, 0]]
            p1 = space.mesh.vertices[edges[:, 1]]
            lengths = np.linalg.norm(p1 - p0, axis=1)
            qpts = p0[:, None, :] + _EDGE_QP[None, :, None] * (p1 - p0)[:, None, :]
            Ne = np.stack([_edge_basis(space.degree, s) for s in _EDGE_QP])  # (q, nd)
            self._edge_tables[tag] = (ed, lengths, qpts, Ne)
            if isinstance(kind, RobinSpec):
                if kind.r2 == 0:
                    raise ValidationError("RobinSpec needs R2 != 0; use dirichlet instead")
                me = np.einsum("q,qd,qc,e->edc", _EDGE_QW, Ne, Ne, lengths)
                r = np.repeat(ed, ed.shape[1], axis=1).ravel()
                c = np.tile(ed, (1, ed.shape[1])).ravel()
                K = K + (kind.r1 / kind.r2) * sp.coo_matrix(
                    (me.ravel(), (r, c)), shape=(space.n_dofs,) * 2
                ).tocsr()

        self.dirichlet_tags = [t for t, k in self.bc.items() if k == "dirichlet"]
        fixed = (
            np.unique(np.concatenate([space.boundary_dofs(t) for t in self.dirichlet_tags]))
            if self.dirichlet_tags
            else np.empty(0, dtype=np.int64)
        )
        self.fixed = fixed
        mask = np.ones(space.n_dofs, dtype=bool)
        mask[fixed] = False
        self.free = np.where(mask)[0]
        self.K = K.tocsc()
        self._Kff = self.K[np.ix_(self.free, self.free)]
        self._Kfd = self.K[np.ix_(self.free, fixed)] if fixed.size else None
        try:
            self._lu = spla.splu(self._Kff.tocsc())
        except RuntimeError as exc:  # pragma: no cover
            raise SingularSystemError(str(exc)) from exc

    def _edge_data_vector(self, tag, data, scale):
        ed, lengths, qpts, Ne = self._edge_tables[tag]
        if callable(data):
            gq = data(qpts.reshape(-1, 2)).reshape(qpts.shape[:2])
        else:
            data = np.asarray(data, dtype=np.float64)
            if data.ndim == 0:
                gq = np.full(qpts.shape[:2], float(data))
            else:
                dofs = self.space.boundary_dofs(tag)
                if data.shape != dofs.shape:
                    raise ShapeError(
                        f"boundary data for {tag!r} must match boundary_dofs({tag!r})"
                    )
                nodal = np.zeros(self.space.n_dofs)
                nodal[dofs] = data
                gq = np.einsum("qd,ed->eq", Ne, nodal[ed])
        vec = np.zeros(self.space.n_dofs)
        np.add.at(vec, ed, scale * np.einsum("q,qd,eq,e->ed", _EDGE_QW, Ne, gq, lengths))
        return vec

    def solve(self, data: dict) -> np.ndarray:
        """Solve for the given per-tag boundary data; returns nodal values."""
        missing = set(self.bc) - set(data)
        if missing:
            raise ValidationError(f"missing boundary data for {missing}")
        b = self.b0.copy()
        u = np.zeros(self.space.n_dofs)
        for tag, kind in self.bc.items():
            if kind == "dirichlet":
                dofs = self.space.boundary_dofs(tag)
                val = data[tag]
                if callable(val):
                    u[dofs] = val(self.space.dof_coords[dofs])
                else:
                    val = np.asarray(val, dtype=np.float64)
                    u[dofs] = val if val.ndim else np.full(dofs.shape, float(val))
            elif kind == "neumann":
                b += self._edge_data_vector(tag, data[tag], 1.0)
            elif isinstance(kind, RobinSpec):
                b += self._edge_data_vector(tag, data[tag], 1.0 / kind.r2)
            else:
                raise ValidationError(f"unknown bc kind {kind!r} for {tag!r}")
        rhs = b[self.free]
        if self.fixed.size:
            rhs = rhs - self._Kfd @ u[self.fixed]
        u[self.free] = self._lu.solve(rhs)
        if not np.all(np.isfinite(u)):
            raise SingularSystemError("solution contains non-finite values")
        return u

    def residual(self, u, data: dict) -> float:
        """Free-dof residual norm of the assembled system for a solution."""
        b = self.b0.copy()
        for tag, kind in self.bc.items():
            if kind == "neumann":
                b += self._edge_data_vector(tag, data[tag], 1.0)
            elif isinstance(kind, RobinSpec):
                b += self._edge_data_vector(tag, data[tag], 1.0 / kind.r2)
        r = (self.K @ u - b)[self.free]
        return float(np.linalg.norm(r))
