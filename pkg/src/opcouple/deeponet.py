"""Operator surrogates: branch/trunk networks over sampled input functions.

An OperatorNet maps a function g sampled at m fixed sensors plus a query
point y to a scalar G(g)(y) = sum_k branch_k(g) * trunk_k(y). Branch inputs
and outputs are z-score normalized with statistics frozen at training time.
Vector-valued targets use one OperatorNet per scalar channel.

The training loss is the mean squared prediction error over all (case, query)
pairs, optionally plus a weighted mean squared mismatch of the predicted
normal derivative along a curve, which keeps derivative exchange usable in
Robin-type coupling. Normal derivatives are exact (automatic differentiation
through the trunk and the normalization chain rule), never finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import nn
from .errors import ShapeError, TrainingError, ValidationError
from .sampling import derive_rng


@dataclass
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def identity(n: int) -> "Normalization":
        return Normalization(np.zeros(n), np.ones(n))

    @staticmethod
    def fit(data: np.ndarray, floor: float = 1e-12) -> "Normalization":
        """Per-column statistics; constant columns get unit scale."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std < floor, 1.0, std)
        return Normalization(mean, std)


@dataclass
class QueryLift:
    """Fixed sinusoidal encoding of query coordinates fed to the trunk.

    Plain coordinates pass through; each coordinate additionally contributes
    sin/cos pairs at harmonics of its bounding box, which removes the low
    frequency bias of tanh trunks. omega is (F, d): angular frequency of
    harmonic f along dimension j.
    """

    omega: np.ndarray

    @staticmethod
    def for_box(lo, hi, harmonics: int) -> "QueryLift":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if np.any(hi <= lo):
            raise ValidationError("query box needs hi > lo per dimension")
        base = 2.0 * np.pi / (hi - lo)
        return QueryLift(np.arange(1, harmonics + 1)[:, None] * base[None, :])

    @property
    def raw_dim(self) -> int:
        return self.omega.shape[1]

    @property
    def lifted_dim(self) -> int:
        return self.raw_dim + 2 * self.omega.size

    def apply(self, y: np.ndarray) -> np.ndarray:
        phase = y[..., None, :] * self.omega  # (..., F, d)
        flat = phase.reshape(*y.shape[:-1], -1)
        return np.concatenate([y, np.sin(flat), np.cos(flat)], axis=-1)

    def tangent(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Directional derivative of the lift: J_psi(y) @ v, batched."""
        phase = y[..., None, :] * self.omega
        dphase = v[..., None, :] * self.omega
        flat = phase.reshape(*y.shape[:-1], -1)
        dflat = dphase.reshape(*y.shape[:-1], -1)
        return np.concatenate([v, np.cos(flat) * dflat, -np.sin(flat) * dflat], axis=-1)


@dataclass
class OperatorNet:
    branch: nn.DenseNet
    trunk: nn.DenseNet
    sensors: np.ndarray
    input_norm: Normalization
    output_norm: Normalization
    query_norm: Normalization
    query_lift: QueryLift | None = None

    @property
    def n_sensors(self) -> int:
        return self.branch.n_in

    @property
    def query_dim(self) -> int:
        """Raw query coordinate dimension accepted by evaluate()."""
        if self.query_lift is not None:
            return self.query_lift.raw_dim
        return self.trunk.n_in

    def params(self):
        return self.branch.params() + self.trunk.params()


def build_operator_net(
    sensors: np.ndarray,
    query_dim: int,
    width: int = 100,
    depth: int = 3,
    interact: int = 0,
    seed: int = 0,
    harmonics: int = 0,
    query_box=None,
) -> OperatorNet:
    """Fresh Xavier-initialized operator net.

    depth counts hidden layers; interact is the shared branch/trunk output
    width (defaults to the hidden width). sensors is (m, d) sensor locations
    kept as metadata so callers can interpolate interface data onto them.
    harmonics > 0 adds a sinusoidal query encoding with that many harmonics
    per dimension over query_box = (lo, hi).
    """
    sensors = np.atleast_2d(np.asarray(sensors, dtype=np.float64))
    m = sensors.shape[0]
    interact = interact or width
    rng = derive_rng(seed, 101)
    lift = None
    trunk_in = query_dim
    if harmonics:
        if query_box is None:
            raise ValidationError("harmonics need a query_box=(lo, hi)")
        lift = QueryLift.for_box(query_box[0], query_box[1], harmonics)
        if lift.raw_dim != query_dim:
            raise ShapeError("query_box dimension disagrees with query_dim")
        trunk_in = lift.lifted_dim
    branch = nn.init_dense([m] + [width] * depth + [interact], rng)
    trunk = nn.init_dense([trunk_in] + [width] * depth + [interact], rng)
    return OperatorNet(
        branch,
        trunk,
        sensors,
        Normalization.identity(m),
        Normalization.identity(1),
        Normalization.identity(trunk_in),
        lift,
    )


def _norm_branch(net: OperatorNet, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != net.n_sensors:
        raise ShapeError(f"branch input needs {net.n_sensors} sensor values, got {g.shape}")
    return (g - net.input_norm.mean) / net.input_norm.std


def _norm_query(net: OperatorNet, y):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != net.query_dim:
        raise ShapeError(f"query needs {net.query_dim} coordinates, got {y.shape}")
    if net.query_lift is not None:
        y = net.query_lift.apply(y)
    return (y - net.query_norm.mean) / net.query_norm.std


def _query_tangent(net: OperatorNet, pts, direction):
    """Directions mapped through the lift and normalization chain rule."""
    if net.query_lift is not None:
        direction = net.query_lift.tangent(pts, direction)
    return direction / net.query_norm.std


def evaluate(net: OperatorNet, g, y) -> float:
    """G(g)(y) for one input function and one query point."""
    b = nn.forward(net.branch, _norm_branch(net, g))
    t = nn.forward(net.trunk, _norm_query(net, np.asarray(y, dtype=np.float64)))
    raw = float(b @ t)
    return float(net.output_norm.mean[0] + net.output_norm.std[0] * raw)


def evaluate_field(net: OperatorNet, g, points) -> np.ndarray:
    """G(g) at many query points, shape (N,)."""
    b = nn.forward(net.branch, _norm_branch(net, g))
    t = nn.forward(net.trunk, _norm_query(net, np.atleast_2d(points)))
    raw = t @ b
    return net.output_norm.mean[0] + net.output_norm.std[0] * raw


def evaluate_many(net: OperatorNet, G, points) -> np.ndarray:
    """Predictions for M input functions, shape (M, N).

    points is either one shared (N, d) set or per-case (M, N, d).
    """
    B = nn.forward(net.branch, _norm_branch(net, np.atleast_2d(G)))
    pts = _norm_query(net, points)
    if pts.ndim == 2:
        T = nn.forward(net.trunk, pts)
        raw = B @ T.T
    elif pts.ndim == 3:
        if pts.shape[0] != B.shape[0]:
            raise ShapeError("per-case query points must match case count")
        flat = nn.forward(net.trunk, pts.reshape(-1, pts.shape[-1]))
        T = flat.reshape(pts.shape[0], pts.shape[1], -1)
        raw = np.einsum("mk,mnk->mn", B, T)
    else:
        raise ShapeError("query points must be (N, d) or (M, N, d)")
    return net.output_norm.mean[0] + net.output_norm.std[0] * raw


def _check_normals(points, normals):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    nrm = np.atleast_2d(np.asarray(normals, dtype=np.float64))
    if nrm.shape != pts.shape:
        raise ShapeError("normals must match query points in shape")
    lengths = np.linalg.norm(nrm, axis=1)
    if np.any(np.abs(lengths - 1.0) > 1e-10):
        raise ValidationError("normals must be unit length to 1e-10")
    return pts, nrm


def normal_derivative_field(net: OperatorNet, g, points, normals) -> np.ndarray:
    """Exact directional derivative of G(g) along unit normals, shape (N,)."""
    pts, nrm = _check_normals(points, normals)
    b = nn.forward(net.branch, _norm_branch(net, g))
    _, dt = nn.input_jvp(net.trunk, _norm_query(net, pts), _query_tangent(net, pts, nrm))
    return net.output_norm.std[0] * (dt @ b)


def normal_derivative(net: OperatorNet, g, y, normal) -> float:
    return float(normal_derivative_field(net, g, [y], [normal])[0])


@dataclass
class OperatorDataset:
    """Sampled input/output pairs for operator training.

    branch_inputs: (M, m) function samples at the sensors.
    query_points: (N, d) shared, or (M, N, d) per case.
    targets: (M, N).
    Optional derivative supervision on a curve: deriv_points (Nd, d) with
    unit deriv_normals (Nd, d) and deriv_targets (M, Nd).
    """

    sensors: np.ndarray
    branch_inputs: np.ndarray
    query_points: np.ndarray
    targets: np.ndarray
    deriv_points: np.ndarray | None = None
    deriv_normals: np.ndarray | None = None
    deriv_targets: np.ndarray | None = None

    def __post_init__(self):
        self.branch_inputs = np.asarray(self.branch_inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        m_cases = self.branch_inputs.shape[0]
        if self.targets.shape[0] != m_cases:
            raise ShapeError("targets and branch inputs disagree on case count")
        q = np.asarray(self.query_points, dtype=np.float64)
        if q.ndim == 3 and q.shape[0] != m_cases:
            raise ShapeError("per-case query points disagree on case count")
        if q.shape[-2] != self.targets.shape[1]:
            raise ShapeError("targets and query points disagree on point count")
        self.query_points = q
        if self.deriv_targets is not None:
            self.deriv_points, self.deriv_normals = _check_normals(
                self.deriv_points, self.deriv_normals
            )
            self.deriv_targets = np.asarray(self.deriv_targets, dtype=np.float64)
            if self.deriv_targets.shape != (m_cases, self.deriv_points.shape[0]):
                raise ShapeError("derivative targets shape mismatch")

    @property
    def n_cases(self) -> int:
        return self.branch_inputs.shape[0]

    def case_query_points(self, idx):
        if self.query_points.ndim == 3:
            return self.query_points[idx]
        return self.query_points


def loss(net: OperatorNet, dataset: OperatorDataset, regularizer_weight: float = 0.0):
    """Mean squared error over all pairs plus the weighted derivative term."""
    pred = evaluate_many(net, dataset.branch_inputs, dataset.query_points)
    value = float(np.mean((pred - dataset.targets) ** 2))
    if regularizer_weight and dataset.deriv_targets is not None:
        B = nn.forward(net.branch, _norm_branch(net, dataset.branch_inputs))
        _, dt = nn.input_jvp(
            net.trunk,
            _norm_query(net, dataset.deriv_points),
            _query_tangent(net, dataset.deriv_points, dataset.deriv_normals),
        )
        dpred = net.output_norm.std[0] * (B @ dt.T)
        value += regularizer_weight * float(np.mean((dpred - dataset.deriv_targets) ** 2))
    return value


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-3
    batch_size: int = 0  # 0 means full batch
    seed: int = 0
    regularizer_weight: float = 0.0
    holdout_fraction: float = 0.0
    lr_decay_epochs: int = 0  # halve the learning rate every this many epochs
    clip_norm: float = 0.0
    refit_epochs: int = 0  # closed-form branch head refit every this many epochs
    lbfgs_iterations: int = 0  # full-batch L-BFGS polish after the Adam epochs


@dataclass
class TrainResult:
    net: OperatorNet
    history: np.ndarray
    holdout_mse: float | None = None
    holdout_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def _ridge_solve(A, Y, lam):
    """argmin ||A X - Y||^2 + lam*tr(A^T A)/n ||X||^2, by normal equations."""
    gram = A.T @ A
    scale = lam * np.trace(gram) / gram.shape[0]
    gram[np.diag_indices_from(gram)] += scale
    return np.linalg.solve(gram, A.T @ Y)


def _refit_branch_head(net, Gn, Qn, Tn, reg, state, holdout):
    """Ridge least squares for the branch output layer, trunk held fixed.

    The prediction is bilinear: (H W^T + b) T^T with H the last branch hidden
    activation and T the trunk features, so for fixed features the optimal
    (W, b) solve min ||H_aug B T_aug^T - U_aug||_F, which separates into two
    small solves. The derivative penalty enters as extra rows of T_aug scaled
    so the stacked Frobenius norm reproduces the training loss weighting.
    Trunk features are collinear enough that a plain pseudoinverse overfits,
    so the ridge strength is picked on the holdout split (largest lambda when
    there is none). Only valid for query points shared across cases. Adam
    moments of the refit parameters are reset.
    """
    _, bacts = nn.forward_cache(net.branch, Gn)
    h_aug = np.hstack([bacts[-2], np.ones((Gn.shape[0], 1))])
    t_feat = nn.forward(net.trunk, Qn)
    u_aug = Tn
    if reg is not None:
        w, dpts, dnrm, Tdn = reg
        _, ddt = nn.input_jvp(net.trunk, dpts, dnrm)
        s = np.sqrt(w * Tn.shape[1] / Tdn.shape[1])
        t_feat = np.vstack([t_feat, s * ddt])
        u_aug = np.hstack([Tn, s * Tdn])
    if holdout is not None:
        Gh, Qh, Th = holdout
        _, hacts = nn.forward_cache(net.branch, Gh)
        h_hold = np.hstack([hacts[-2], np.ones((Gh.shape[0], 1))])
        t_hold = nn.forward(net.trunk, Qh)
    best = (np.inf, None)
    for lam in (1e-10, 1e-8, 1e-6, 1e-4, 1e-2):
        B = _ridge_solve(h_aug, u_aug @ _ridge_solve(t_feat, np.eye(t_feat.shape[0]), lam).T, lam)
        if holdout is None:
            best = (0.0, B)
            continue
        score = float(np.mean((h_hold @ B @ t_hold.T - Th) ** 2))
        if score < best[0]:
            best = (score, B)
    B = best[1]
    net.branch.weights[-1][...] = B[:-1].T
    net.branch.biases[-1][...] = B[-1]
    k = 2 * (len(net.branch.weights) - 1)
    for idx in (k, k + 1):
        state.m[idx][...] = 0.0
        state.v[idx][...] = 0.0


def _batch_grads(net, Gn, Qn, Tn, reg):
    """Loss and parameter gradients for one normalized minibatch.

    reg is None or (weight, deriv_points, deriv_normals, Tdn). Gradients are
    returned ordered branch params then trunk params.
    """
    bvec, bcache = nn.forward_cache(net.branch, Gn)
    nb, nq = Gn.shape[0], Tn.shape[1]
    shared = Qn.ndim == 2
    if shared:
        tvec, tcache = nn.forward_cache(net.trunk, Qn)
        pred = bvec @ tvec.T
    else:
        tflat, tcache = nn.forward_cache(net.trunk, Qn.reshape(-1, Qn.shape[-1]))
        tvec = tflat.reshape(nb, nq, -1)
        pred = np.einsum("mk,mnk->mn", bvec, tvec)
    resid = pred - Tn
    value_loss = float(np.mean(resid**2))
    up = resid * (2.0 / resid.size)
    if shared:
        g_b = up @ tvec
        g_t = up.T @ bvec
    else:
        g_b = np.einsum("mn,mnk->mk", up, tvec)
        g_t = (up[:, :, None] * bvec[:, None, :]).reshape(-1, bvec.shape[1])
    total = value_loss
    jvp_grads = None
    if reg is not None:
        w, dpts, dnrm, Tdn = reg
        _, ddt, jcache = nn.input_jvp_cache(net.trunk, dpts, dnrm)
        dpred = bvec @ ddt.T
        dresid = dpred - Tdn
        reg_loss = float(np.mean(dresid**2))
        total += w * reg_loss
        dup = dresid * (2.0 * w / dresid.size)
        g_b += dup @ ddt
        g_dt = dup.T @ bvec
        jvp_grads = nn.jvp_backprop(net.trunk, jcache, np.zeros_like(g_dt), g_dt)
    branch_grads, _ = nn.backprop(net.branch, bcache, g_b)
    trunk_grads, _ = nn.backprop(net.trunk, tcache, g_t)
    if jvp_grads is not None:
        trunk_grads = [a + b for a, b in zip(trunk_grads, jvp_grads)]
    return total, branch_grads + trunk_grads


def train(net: OperatorNet, dataset: OperatorDataset, config: TrainConfig) -> TrainResult:
    """Adam training. Mutates net in place and returns it with history.

    Normalization statistics are fit on the training split only and stored in
    the net. History records the per-epoch mean training loss in physical
    units. Non-finite losses raise TrainingError carrying the last finite
    checkpoint on the exception's net attribute.
    """
    rng = derive_rng(config.seed, 7)
    m_cases = dataset.n_cases
    n_hold = int(round(config.holdout_fraction * m_cases))
    perm = rng.permutation(m_cases)
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if train_idx.size == 0:
        raise ValidationError("holdout fraction leaves no training cases")

    G = dataset.branch_inputs[train_idx]
    T = dataset.targets[train_idx]
    net.input_norm = Normalization.fit(G)
    net.output_norm = Normalization.fit(T.reshape(-1, 1))
    out_std = net.output_norm.std[0]
    Gn = (G - net.input_norm.mean) / net.input_norm.std
    Tn = (T - net.output_norm.mean[0]) / out_std
    Q = dataset.query_points
    per_case = Q.ndim == 3
    if per_case:
        Q = Q[train_idx]
    if net.query_lift is not None:
        Q = net.query_lift.apply(Q)
    net.query_norm = Normalization.fit(Q.reshape(-1, Q.shape[-1]))
    Q = (Q - net.query_norm.mean) / net.query_norm.std

    reg_static = None
    if config.regularizer_weight and dataset.deriv_targets is not None:
        Tdn = dataset.deriv_targets[train_idx] / out_std
        dpts = _norm_query(net, dataset.deriv_points)
        dnrm = _query_tangent(net, dataset.deriv_points, dataset.deriv_normals)
        reg_static = (config.regularizer_weight, dpts, dnrm, Tdn)

    if config.refit_epochs and per_case:
        raise ValidationError("head refit needs query points shared across cases")
    refit_holdout = None
    if config.refit_epochs and hold_idx.size:
        refit_holdout = (
            (dataset.branch_inputs[hold_idx] - net.input_norm.mean) / net.input_norm.std,
            Q,
            (dataset.targets[hold_idx] - net.output_norm.mean[0]) / out_std,
        )

    params = net.params()
    state = nn.adam_init(params, config.learning_rate)
    n_train = train_idx.size
    bs = config.batch_size if 0 < config.batch_size < n_train else n_train
    history = np.empty(config.epochs)
    best = (np.inf, None)
    for epoch in range(config.epochs):
        if config.lr_decay_epochs and epoch and epoch % config.lr_decay_epochs == 0:
            state.lr *= 0.5
        if config.refit_epochs and epoch and epoch % config.refit_epochs == 0:
            _refit_branch_head(net, Gn, Q, Tn, reg_static, state, refit_holdout)
        order = rng.permutation(n_train) if bs < n_train else np.arange(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, bs):
            sel = order[start : start + bs]
            reg = None
            if reg_static is not None:
                w, dp, dn, Tdn = reg_static
                reg = (w, dp, dn, Tdn[sel])
            batch_loss, grads = _batch_grads(
                net, Gn[sel], Q[sel] if per_case else Q, Tn[sel], reg
            )
            if not np.isfinite(batch_loss):
                if best[1] is not None:
                    for p, saved in zip(params, best[1]):
                        p[...] = saved
                err = TrainingError(f"non-finite loss at epoch {epoch}")
                err.net = net
                err.history = history[:epoch]
                raise err
            if config.clip_norm:
                gn = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if gn > config.clip_norm:
                    scale = config.clip_norm / gn
                    grads = [g * scale for g in grads]
            nn.adam_step(params, grads, state)
            epoch_loss += batch_loss * sel.size
        epoch_loss /= n_train
        history[epoch] = out_std**2 * epoch_loss
        if history[epoch] < best[0]:
            best = (history[epoch], [p.copy() for p in params])

    if config.lbfgs_iterations:
        trace = []

        def objective(x):
            offset = 0
            for p in params:
                p[...] = x[offset : offset + p.size].reshape(p.shape)
                offset += p.size
            value, grads = _batch_grads(net, Gn, Q, Tn, reg_static)
            trace.append(value)
            return value, np.concatenate([g.ravel() for g in grads])

        x0 = np.concatenate([p.ravel() for p in params])
        out = scipy.optimize.minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": config.lbfgs_iterations, "maxcor": 50, "ftol": 0.0, "gtol": 0.0},
        )
        if not np.all(np.isfinite(out.x)):
            raise TrainingError("non-finite parameters after L-BFGS")
        offset = 0
        for p in params:
            p[...] = out.x[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        history = np.concatenate([history, out_std**2 * np.minimum.accumulate(trace)])

    if config.refit_epochs:
        _refit_branch_head(net, Gn, Q, Tn, reg_static, state, refit_holdout)

    holdout_mse = None
    if hold_idx.size:
        qh = dataset.query_points[hold_idx] if per_case else dataset.query_points
        pred = evaluate_many(net, dataset.branch_inputs[hold_idx], qh)
        holdout_mse = float(np.mean((pred - dataset.targets[hold_idx]) ** 2))
    return TrainResult(net, history, holdout_mse, hold_idx)
