"""Plate-with-hole elastoplasticity benchmark.

A 2 x 2 plane-strain plate with a circular hole (radius 0.1) is clamped at
the bottom and pulled by a random vertical traction on the top edge.
Plasticity concentrates near the hole, so the annulus between the hole and
the circle r = 0.3 (interface gamma) is the fine-scale region: its truth
model is incremental J2 elastoplasticity, its surrogate is one operator net
per Cauchy stress component (s11, s12, s22) driven by the interface
displacement. The outer region stays linear elastic. Exchange is
Neumann-Dirichlet: the outer model receives relaxed interface tractions and
returns interface displacements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import deeponet, fem, mesh, solid
from ..coupling import InterfaceCondition, InterfaceResponse, SubdomainModel
from ..errors import ShapeError, ValidationError
from ..sampling import derive_rng, fourier_traction, fourier_traction_coeffs

R_HOLE = 0.1
R_INTERFACE = 0.3
HALF_WIDTH = 1.0
ELASTIC = solid.ElasticParams(lam=0.5769, mu=0.3846)
PLASTIC = solid.PlasticParams(y0=0.1, h0=0.3)
TRACTION_SIGMA = 0.05
N_LOAD_STEPS = 4
STRESS_CHANNELS = ("s11", "s12", "s22")


@dataclass
class ElastoGeometry:
    space_fem: fem.ScalarSpace
    space_nn: fem.ScalarSpace
    space_full: fem.ScalarSpace
    gamma_points: np.ndarray  # interface P2 dofs, fem-side loop order
    gamma_normals: np.ndarray  # outward from the annulus (radial)
    gamma_dofs_fem: np.ndarray
    gamma_dofs_nn: np.ndarray  # aligned with gamma_points
    sensor_idx: np.ndarray  # rows of gamma_points used as branch sensors
    query_points: np.ndarray  # annulus target locations (vertices)


def build_geometry(ntheta: int = 48, nr_nn: int = 6, nr_fem: int = 10) -> ElastoGeometry:
    """Conforming annulus + square-ring pair sharing the interface circle."""
    if ntheta % 8:
        raise ValidationError("ntheta must be a multiple of 8")
    m_nn = mesh.annulus_mesh((0, 0), R_HOLE, R_INTERFACE, nr_nn, ntheta)
    m_fem = mesh.square_ring_mesh((0, 0), R_INTERFACE, HALF_WIDTH, nr_fem, ntheta, grading=1.3)
    m_full = mesh.glue_meshes(m_nn, m_fem, drop_tags=("interface",))
    sf = fem.ScalarSpace(m_fem, 2)
    sn = fem.ScalarSpace(m_nn, 2)
    su = fem.ScalarSpace(m_full, 2)

    g_fem = sf.boundary_loop_dofs("interface")
    pts = sf.dof_coords[g_fem]
    g_nn = sn.boundary_loop_dofs("interface")
    pts_nn = sn.dof_coords[g_nn]
    # align the annulus loop with the fem loop point-by-point
    d2 = np.sum((pts[:, None, :] - pts_nn[None, :, :]) ** 2, axis=2)
    match = np.argmin(d2, axis=1)
    if np.max(d2[np.arange(len(pts)), match]) > 1e-18 or len(set(match)) != len(pts):
        raise ValidationError("interface discretizations do not coincide")
    g_nn = g_nn[match]

    normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    # sensors: the interface vertices (every other loop entry is a midside)
    sensor_idx = np.arange(0, len(pts), 2)
    return ElastoGeometry(
        space_fem=sf,
        space_nn=sn,
        space_full=su,
        gamma_points=pts,
        gamma_normals=normals,
        gamma_dofs_fem=g_fem,
        gamma_dofs_nn=g_nn,
        sensor_idx=sensor_idx,
        query_points=sn.mesh.vertices.copy(),
    )


def sample_traction(seed: int, case: int, sigma: float = TRACTION_SIGMA):
    """Random vertical top-edge traction t0(x) from the three-mode Fourier
    family; returns callable(points) -> (n, 2)."""
    coeffs = fourier_traction_coeffs(derive_rng(seed, case), sigma)

    def evaluate(points):
        t = fourier_traction(np.asarray(points)[:, 0], coeffs)
        out = np.zeros((len(t), 2))
        out[:, 1] = t
        return out

    return evaluate


def full_problem(geom: ElastoGeometry) -> solid.ElastoplasticProblem:
    bc = {"hole": "free", "bottom": "dirichlet", "top": "traction",
          "left": "free", "right": "free"}
    return solid.ElastoplasticProblem(geom.space_full, bc, ELASTIC, PLASTIC)


def monolithic_truth(geom: ElastoGeometry, t0, problem=None, projector=None):
    """Full-domain elastoplastic solve; returns traces used by the coupled
    run: interface displacement/traction plus the nodal stress channels."""
    if problem is None:
        problem = full_problem(geom)
    if projector is None:
        projector = solid.QpProjector(geom.space_full)
    data = {"bottom": np.zeros(2), "top": t0}
    u, sig4, state = problem.solve(data, n_steps=N_LOAD_STEPS)
    nodal = {c: projector(sig4[..., k]) for c, k in zip(STRESS_CHANNELS, (0, 3, 1))}
    tr = fem.TraceOperator(geom.space_full, geom.gamma_points)
    sig_g = np.stack([tr.values(nodal[c]) for c in STRESS_CHANNELS], axis=1)
    traction = solid.traction_from_stress(
        sig_g[:, [0, 2, 1]], geom.gamma_normals
    )
    return {
        "u": u,
        "state": state,
        "gamma_u": solid.trace_vector(tr, u),
        "gamma_t": traction,
        "nodal_stress": nodal,
        "ebar_nodal": projector(state.ebar),
    }


class ElastoOuterModel(SubdomainModel):
    """Linear elasticity on the square ring; interface tractions in, interface
    displacements out."""

    def __init__(self, geom: ElastoGeometry, t0):
        self.geom = geom
        bc = {"interface": "traction", "bottom": "dirichlet", "top": "traction",
              "left": "free", "right": "free"}
        self.problem = solid.ElasticProblem(geom.space_fem, bc, ELASTIC)
        self.t0 = t0
        sorted_dofs = geom.space_fem.boundary_dofs("interface")
        pos = {d: i for i, d in enumerate(sorted_dofs)}
        self._perm = np.array([pos[d] for d in geom.gamma_dofs_fem])
        self._n_sorted = sorted_dofs.size
        self._trace = fem.TraceOperator(geom.space_fem, geom.gamma_points)
        self.weights = np.repeat(
            geom.space_fem.lumped_mass()[:, None], 2, axis=1
        )

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        if ic.kind != "neumann":
            raise ValidationError("outer model expects interface tractions")
        vals = np.asarray(ic.values, dtype=np.float64)
        if vals.shape != (len(self.geom.gamma_points), 2):
            raise ShapeError("interface traction must be (n_gamma, 2)")
        # the annulus pulls on the ring with the opposite sign of its own
        # outward traction
        sorted_vals = np.empty((self._n_sorted, 2))
        sorted_vals[self._perm] = -vals
        u = self.problem.solve(
            {"interface": sorted_vals, "bottom": np.zeros(2), "top": self.t0}
        )
        return InterfaceResponse(
            u=solid.trace_vector(self._trace, u),
            T=None,
            field=u,
            weights=self.weights,
            extra={"displacement": u},
        )


class ElastoOracleInner(SubdomainModel):
    """Exact Model II: incremental J2 solve on the annulus from interface
    displacements, reporting the interface traction of the annulus."""

    def __init__(self, geom: ElastoGeometry):
        self.geom = geom
        bc = {"hole": "free", "interface": "dirichlet"}
        self.problem = solid.ElastoplasticProblem(geom.space_nn, bc, ELASTIC, PLASTIC)
        sorted_dofs = geom.space_nn.boundary_dofs("interface")
        pos = {d: i for i, d in enumerate(sorted_dofs)}
        self._perm = np.array([pos[d] for d in geom.gamma_dofs_nn])
        self._n_sorted = sorted_dofs.size
        self._proj = solid.QpProjector(geom.space_nn)
        self._trace = fem.TraceOperator(geom.space_nn, geom.gamma_points)
        self.weights = np.repeat(geom.space_nn.lumped_mass()[:, None], 2, axis=1)

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        if ic.kind != "dirichlet":
            raise ValidationError("inner model expects interface displacements")
        vals = np.asarray(ic.values, dtype=np.float64)
        sorted_vals = np.empty((self._n_sorted, 2))
        sorted_vals[self._perm] = vals
        u, sig4, state = self.problem.solve(
            {"interface": sorted_vals}, n_steps=N_LOAD_STEPS
        )
        nodal = np.stack(
            [self._proj(sig4[..., k]) for k in (0, 3, 1)], axis=1
        )  # columns [s11, s12, s22]
        sig_g = np.stack([self._trace.values(nodal[:, k]) for k in range(3)], axis=1)
        traction = solid.traction_from_stress(
            sig_g[:, [0, 2, 1]], self.geom.gamma_normals
        )
        return InterfaceResponse(
            u=None,
            T=traction,
            field=u,
            weights=self.weights,
            extra={"stress_nodal": nodal, "state": state, "displacement": u},
        )


class ElastoSurrogateInner(SubdomainModel):
    """Stress-component operator nets on the annulus.

    Branch input: interface displacement at the sensor vertices, x values
    then y values. Each net is evaluated at the interface points (for the
    returned traction) and at the annulus query points (for the convergence
    field).
    """

    def __init__(self, nets: dict, geom: ElastoGeometry):
        missing = set(STRESS_CHANNELS) - set(nets)
        if missing:
            raise ValidationError(f"missing stress nets {missing}")
        self.nets = dict(nets)
        self.geom = geom
        self.weights = np.ones(len(geom.query_points) * len(STRESS_CHANNELS))

    def branch_input(self, gamma_u) -> np.ndarray:
        return np.asarray(gamma_u)[self.geom.sensor_idx].T.ravel()

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        if ic.kind != "dirichlet":
            raise ValidationError("surrogate inner model expects displacements")
        g = self.branch_input(ic.values)
        sig_g = np.stack(
            [
                deeponet.evaluate_field(self.nets[c], g, self.geom.gamma_points)
                for c in STRESS_CHANNELS
            ],
            axis=1,
        )
        traction = solid.traction_from_stress(
            sig_g[:, [0, 2, 1]], self.geom.gamma_normals
        )
        field = np.concatenate(
            [
                deeponet.evaluate_field(self.nets[c], g, self.geom.query_points)
                for c in STRESS_CHANNELS
            ]
        )
        return InterfaceResponse(
            u=None,
            T=traction,
            field=field,
            weights=self.weights,
            extra={"stress_gamma": sig_g},
        )


def gen_dataset(geom: ElastoGeometry, n_cases: int = 250, seed: int = 17):
    """Training data: full-domain elastoplastic solves under random top
    tractions; branch carries the interface displacement at the sensors,
    targets are the nodal stress channels at the annulus vertices plus the
    interface points."""
    problem = full_problem(geom)
    proj = solid.QpProjector(geom.space_full)
    sensors_pts = geom.gamma_points[geom.sensor_idx]
    sensors = np.vstack([sensors_pts, sensors_pts])
    qpts = np.vstack([geom.query_points, geom.gamma_points])
    tr_gamma = fem.TraceOperator(geom.space_full, geom.gamma_points)
    tr_query = fem.TraceOperator(geom.space_full, qpts)

    branch = np.empty((n_cases, sensors.shape[0]))
    targets = {c: np.empty((n_cases, len(qpts))) for c in STRESS_CHANNELS}
    for case in range(n_cases):
        t0 = sample_traction(seed, case)
        u, sig4, _ = problem.solve(
            {"bottom": np.zeros(2), "top": t0}, n_steps=N_LOAD_STEPS
        )
        gamma_u = solid.trace_vector(tr_gamma, u)
        branch[case] = gamma_u[geom.sensor_idx].T.ravel()
        for c, k in zip(STRESS_CHANNELS, (0, 3, 1)):
            targets[c][case] = tr_query.values(proj(sig4[..., k]))
    datasets = {
        c: deeponet.OperatorDataset(
            sensors=sensors,
            branch_inputs=branch,
            query_points=qpts,
            targets=targets[c],
        )
        for c in STRESS_CHANNELS
    }
    return datasets


def train_surrogates(
    geom: ElastoGeometry,
    n_cases: int = 250,
    seed: int = 17,
    epochs: int = 400,
    lbfgs_iterations: int = 1500,
    datasets=None,
) -> dict:
    """One net per stress channel with the benchmark defaults."""
    if datasets is None:
        datasets = gen_dataset(geom, n_cases=n_cases, seed=seed)
    lo = np.array([-R_INTERFACE, -R_INTERFACE])
    hi = np.array([R_INTERFACE, R_INTERFACE])
    nets = {}
    for k, c in enumerate(STRESS_CHANNELS):
        net = deeponet.build_operator_net(
            datasets[c].sensors, 2, width=80, depth=3, seed=seed + k,
            harmonics=3, query_box=(lo, hi),
        )
        config = deeponet.TrainConfig(
            epochs=epochs,
            learning_rate=1e-3,
            seed=seed + k,
            holdout_fraction=0.05,
            lbfgs_iterations=lbfgs_iterations,
        )
        nets[c] = deeponet.train(net, datasets[c], config).net
    return nets


def interface_errors(result, truth) -> dict:
    """Relative L2 errors of the final coupled iterates on gamma."""
    u_pred = result.resp_i.u
    t_pred = result.resp_ii.T
    return {
        "u": float(
            np.linalg.norm(u_pred - truth["gamma_u"]) / np.linalg.norm(truth["gamma_u"])
        ),
        "t": float(
            np.linalg.norm(t_pred - truth["gamma_t"]) / np.linalg.norm(truth["gamma_t"])
        ),
    }
