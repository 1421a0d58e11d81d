"""Steady diffusion benchmark: -lap u = 6 on the unit square.

Model I is FEM on the square with a central square hole (interface gamma1,
the hole boundary); Model II covers the larger concentric square (boundary
gamma2), so the subdomains overlap. Exchanges are Dirichlet or Robin on
gamma1 and Dirichlet traces on gamma2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import deeponet, fem, mesh
from ..coupling import InterfaceCondition, InterfaceResponse, SubdomainModel
from ..errors import ValidationError
from ..sampling import derive_rng, grf_eval_periodic, grf_fft
from .common import square_boundary_normals

HOLE = (0.4, 0.6, 0.4, 0.6)
INNER = (0.3, 0.7, 0.3, 0.7)
SOURCE = 6.0


@dataclass
class PoissonGeometry:
    space_fem: fem.ScalarSpace
    space_nn: fem.ScalarSpace
    space_full: fem.ScalarSpace
    gamma1_points: np.ndarray
    gamma1_normals: np.ndarray
    gamma2_sensors: np.ndarray
    gamma2_all_points: np.ndarray
    gamma1_dofs_fem: np.ndarray  # loop order, in space_fem numbering
    gamma2_dofs_nn: np.ndarray  # loop order, in space_nn numbering
    gamma2_sensor_dofs_nn: np.ndarray


def build_geometry(n: int = 40, degree: int = 2) -> PoissonGeometry:
    """n is the grid count across the unit square; must be a multiple of 10
    so the hole and the inner square sit on grid lines."""
    if n % 10:
        raise ValidationError("n must be a multiple of 10")
    m_fem = mesh.square_with_square_hole(0, 1, 0, 1, HOLE, n)
    inner_cells = int(round(n * (INNER[1] - INNER[0])))
    m_nn = mesh.rect_mesh(
        INNER[0], INNER[1], INNER[2], INNER[3], inner_cells, inner_cells,
        tags={s: "gamma2" for s in ("left", "right", "bottom", "top")},
    )
    m_full = mesh.rect_mesh(
        0, 1, 0, 1, n, n, tags={s: "gamma0" for s in ("left", "right", "bottom", "top")}
    )
    sf = fem.ScalarSpace(m_fem, degree)
    sn = fem.ScalarSpace(m_nn, degree)
    su = fem.ScalarSpace(m_full, degree)

    g1_dofs = sf.boundary_loop_dofs("gamma1")
    g1_pts = sf.dof_coords[g1_dofs]
    g1_nrm = square_boundary_normals(g1_pts, HOLE)

    g2_dofs = sn.boundary_loop_dofs("gamma2")
    g2_pts = sn.dof_coords[g2_dofs]
    sensor_vertices = mesh.boundary_loop_vertices(m_nn, "gamma2")
    sensors = sn.dof_coords[sensor_vertices]
    return PoissonGeometry(
        space_fem=sf,
        space_nn=sn,
        space_full=su,
        gamma1_points=g1_pts,
        gamma1_normals=g1_nrm,
        gamma2_sensors=sensors,
        gamma2_all_points=g2_pts,
        gamma1_dofs_fem=g1_dofs,
        gamma2_dofs_nn=g2_dofs,
        gamma2_sensor_dofs_nn=sensor_vertices,
    )


def sample_boundary_function(alpha: float, seed: int, case: int, grid: int = 64, scale: float = 0.5):
    """Random boundary function: a periodic random field restricted to curves.

    Returns a callable(points) -> values, normalized to the given standard
    deviation over the sampling grid. Deterministic in (alpha, seed, case).
    """
    rng = derive_rng(seed, case)
    field = grf_fft(grid, alpha, rng)
    sd = field.std()
    if sd == 0:
        raise ValidationError("degenerate random field")
    field = field * (scale / sd)

    def evaluate(points):
        return grf_eval_periodic(field, points)

    return evaluate


class PoissonOuterModel(SubdomainModel):
    """FEM on the holed square. gamma0 data fixed; gamma1 data per solve."""

    def __init__(self, geom: PoissonGeometry, g0_data, kind="dirichlet", r1=1.0, r2=1.0,
                 out_points=None):
        self.geom = geom
        space = geom.space_fem
        bc_kind = fem.RobinSpec(r1, r2) if kind == "robin" else kind
        self.kind = kind
        self.problem = fem.PoissonProblem(space, {"gamma0": "dirichlet", "gamma1": bc_kind}, f=SOURCE)
        self.g0_data = g0_data
        # permutation: gamma1 loop order -> sorted boundary_dofs order
        sorted_dofs = space.boundary_dofs("gamma1")
        pos = {d: i for i, d in enumerate(sorted_dofs)}
        self._perm = np.array([pos[d] for d in geom.gamma1_dofs_fem])
        self._n_sorted = sorted_dofs.size
        pts = geom.gamma2_sensors if out_points is None else out_points
        self._trace_out = fem.TraceOperator(space, pts)
        self._trace_g1 = fem.TraceOperator(space, geom.gamma1_points)
        self.weights = space.lumped_mass()

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        vals = np.zeros(self._n_sorted)
        vals[self._perm] = ic.values
        u = self.problem.solve({"gamma0": self.g0_data, "gamma1": vals})
        u_g1 = self._trace_g1.values(u)
        if ic.kind == "robin":
            t_g1 = self._trace_g1.normal_derivatives(u, self.geom.gamma1_normals)
            h_self = ic.r1 * u_g1 + ic.r2 * t_g1
        else:
            h_self = u_g1
        return InterfaceResponse(
            u=self._trace_out.values(u),
            T=None,
            field=u,
            weights=self.weights,
            h_self=h_self,
        )


class PoissonOracleInner(SubdomainModel):
    """Exact Model II: FEM on the inner square with full Dirichlet data."""

    def __init__(self, geom: PoissonGeometry):
        self.geom = geom
        space = geom.space_nn
        self.problem = fem.PoissonProblem(space, {"gamma2": "dirichlet"}, f=SOURCE)
        sorted_dofs = space.boundary_dofs("gamma2")
        pos = {d: i for i, d in enumerate(sorted_dofs)}
        self._perm = np.array([pos[d] for d in geom.gamma2_dofs_nn])
        self._n_sorted = sorted_dofs.size
        self._trace_g1 = fem.TraceOperator(space, geom.gamma1_points)
        self.weights = space.lumped_mass()
        self.input_points = geom.gamma2_all_points

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        if ic.kind != "dirichlet":
            raise ValidationError("oracle inner model takes dirichlet data")
        vals = np.zeros(self._n_sorted)
        vals[self._perm] = ic.values
        u = self.problem.solve({"gamma2": vals})
        return InterfaceResponse(
            u=self._trace_g1.values(u),
            T=self._trace_g1.normal_derivatives(u, self.geom.gamma1_normals),
            field=u,
            weights=self.weights,
        )


class PoissonSurrogateInner(SubdomainModel):
    """Trained operator surrogate for the inner square."""

    def __init__(self, net: deeponet.OperatorNet, geom: PoissonGeometry, with_derivative=True):
        self.net = net
        self.geom = geom
        self.with_derivative = with_derivative
        self.field_points = geom.space_nn.dof_coords
        self.weights = geom.space_nn.lumped_mass()
        self.input_points = geom.gamma2_sensors

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:
        if ic.kind != "dirichlet":
            raise ValidationError("surrogate inner model takes dirichlet data")
        g = ic.values
        u_g1 = deeponet.evaluate_field(self.net, g, self.geom.gamma1_points)
        t_g1 = None
        if self.with_derivative:
            t_g1 = deeponet.normal_derivative_field(
                self.net, g, self.geom.gamma1_points, self.geom.gamma1_normals
            )
        field = deeponet.evaluate_field(self.net, g, self.field_points)
        return InterfaceResponse(u=u_g1, T=t_g1, field=field, weights=self.weights)


def train_surrogate(
    geom: PoissonGeometry,
    n_cases: int = 1200,
    alpha: float = 5.0,
    seed: int = 7,
    epochs: int = 1000,
    lbfgs_iterations: int = 8000,
) -> deeponet.OperatorNet:
    """Train the inner-square operator net with the benchmark defaults.

    Sized so the coupled interface error lands well under 1%: sinusoidal
    query encoding, derivative supervision on gamma1, short Adam warmup and
    a long full-batch L-BFGS polish.
    """
    dataset, _ = gen_dataset(geom, n_cases=n_cases, alpha=alpha, seed=seed)
    lo = np.array([INNER[0], INNER[2]])
    hi = np.array([INNER[1], INNER[3]])
    net = deeponet.build_operator_net(
        geom.gamma2_sensors, 2, width=100, depth=3, seed=seed,
        harmonics=8, query_box=(lo, hi),
    )
    config = deeponet.TrainConfig(
        epochs=epochs,
        learning_rate=1e-3,
        seed=seed,
        regularizer_weight=1e-2,
        holdout_fraction=0.05,
        lbfgs_iterations=lbfgs_iterations,
    )
    return deeponet.train(net, dataset, config).net


def monolithic_truth(geom: PoissonGeometry, g0_data):
    """Reference solve on the undecomposed square; returns (u, traces dict)."""
    problem = fem.PoissonProblem(geom.space_full, {"gamma0": "dirichlet"}, f=SOURCE)
    u = problem.solve({"gamma0": g0_data})
    tr_g1 = fem.TraceOperator(geom.space_full, geom.gamma1_points)
    tr_g2s = fem.TraceOperator(geom.space_full, geom.gamma2_sensors)
    tr_g2a = fem.TraceOperator(geom.space_full, geom.gamma2_all_points)
    return u, {
        "gamma1_u": tr_g1.values(u),
        "gamma1_T": tr_g1.normal_derivatives(u, geom.gamma1_normals),
        "gamma2_u": tr_g2s.values(u),
        "gamma2_all_u": tr_g2a.values(u),
    }


def project_truth(geom: PoissonGeometry, u_full):
    """Truth values at the subdomain dof coordinates (matched grids)."""
    tf = fem.TraceOperator(geom.space_full, geom.space_fem.dof_coords)
    tn = fem.TraceOperator(geom.space_full, geom.space_nn.dof_coords)
    return tf.values(u_full), tn.values(u_full)


def gen_dataset(geom: PoissonGeometry, n_cases: int, alpha: float, seed: int,
                scale: float = 0.5, grid: int = 64):
    """Training data: random gamma2 Dirichlet data, inner-square FEM solves.

    Returns (OperatorDataset, solutions) where solutions holds the full nodal
    fields so stored cases can be re-audited against the discrete system.
    """
    space = geom.space_nn
    problem = fem.PoissonProblem(space, {"gamma2": "dirichlet"}, f=SOURCE)
    sorted_dofs = space.boundary_dofs("gamma2")

    vertex_pts = space.mesh.vertices
    query_pts = np.vstack([vertex_pts, geom.gamma1_points])
    tr_query = fem.TraceOperator(space, query_pts)
    tr_g1 = fem.TraceOperator(space, geom.gamma1_points)

    m = geom.gamma2_sensors.shape[0]
    branch = np.empty((n_cases, m))
    targets = np.empty((n_cases, query_pts.shape[0]))
    deriv_targets = np.empty((n_cases, geom.gamma1_points.shape[0]))
    solutions = np.empty((n_cases, space.n_dofs))
    for case in range(n_cases):
        bc = sample_boundary_function(alpha, seed, case, grid=grid, scale=scale)
        u = problem.solve({"gamma2": bc(space.dof_coords[sorted_dofs])})
        solutions[case] = u
        branch[case] = u[geom.gamma2_sensor_dofs_nn]
        targets[case] = tr_query.values(u)
        deriv_targets[case] = tr_g1.normal_derivatives(u, geom.gamma1_normals)
    dataset = deeponet.OperatorDataset(
        sensors=geom.gamma2_sensors,
        branch_inputs=branch,
        query_points=query_pts,
        targets=targets,
        deriv_points=geom.gamma1_points,
        deriv_normals=geom.gamma1_normals,
        deriv_targets=deriv_targets,
    )
    return dataset, solutions
