"""Iterative interface coupling of two subdomain models.

Model I (conventional solver) receives relaxed interface data on gamma1 and
returns traces on gamma2; Model II (surrogate or oracle) consumes those and
returns values/derivatives back on gamma1. The relaxed update weights the
Model II response by theta. The loop stops when the sum of squared
nodal-quadrature-weighted L2 norms of successive subdomain iterate
differences drops strictly below eps.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError


def relax_update(h_i, h_ii, theta: float):
    """(1 - theta) * h_i + theta * h_ii, elementwise on matching shapes."""
    h_i = np.asarray(h_i, dtype=np.float64)
    h_ii = np.asarray(h_ii, dtype=np.float64)
    if h_i.shape != h_ii.shape:
        raise ShapeError(f"interface value shapes differ: {h_i.shape} vs {h_ii.shape}")
    if not 0.0 < theta <= 1.0:
        raise ValidationError("theta must be in (0, 1]")
    return (1.0 - theta) * h_i + theta * h_ii


def aitken_theta(r_prev, r_cur, theta_prev: float, theta_min=0.05, theta_max=1.0) -> float:
    """Secant relaxation factor from successive interface residuals.

    theta_new = -theta_prev * <r_prev, r_cur - r_prev> / ||r_cur - r_prev||^2,
    clamped to [theta_min, theta_max]. Falls back to theta_prev when the
    residual difference is numerically zero.
    """
    r_prev = np.asarray(r_prev, dtype=np.float64).ravel()
    r_cur = np.asarray(r_cur, dtype=np.float64).ravel()
    if r_prev.shape != r_cur.shape:
        raise ShapeError("residual shapes differ")
    diff = r_cur - r_prev
    denom = float(diff @ diff)
    if denom < 1e-14:
        return float(np.clip(theta_prev, theta_min, theta_max))
    theta = -theta_prev * float(r_prev @ diff) / denom
    return float(np.clip(theta, theta_min, theta_max))


def converged(u_i_new, u_i_old, u_ii_new, u_ii_old, eps, w_i=None, w_ii=None):
    """(metric, flag): weighted squared L2 norms of iterate differences.

    metric = ||du_I||^2 + ||du_II||^2 with the given nodal quadrature
    weights (unit weights if omitted); flag is metric < eps (strict).
    """
    di = np.asarray(u_i_new, dtype=np.float64) - np.asarray(u_i_old, dtype=np.float64)
    dii = np.asarray(u_ii_new, dtype=np.float64) - np.asarray(u_ii_old, dtype=np.float64)
    wi = np.ones_like(di) if w_i is None else np.asarray(w_i, dtype=np.float64)
    wii = np.ones_like(dii) if w_ii is None else np.asarray(w_ii, dtype=np.float64)
    metric = float(np.sum(wi * di * di) + np.sum(wii * dii * dii))
    return metric, metric < eps


@dataclass
class RelaxationPolicy:
    mode: str = "fixed"  # 'fixed' | 'aitken'
    theta: float = 0.5
    theta_min: float = 0.05
    theta_max: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "aitken"):
            raise ValidationError(f"unknown relaxation mode {self.mode!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValidationError("theta must be in (0, 1]")


@dataclass
class InterfaceCondition:
    """Data imposed on a model: kind 'dirichlet' | 'neumann' | 'robin'.

    values holds the combined quantity (u, T, or R1*u + R2*T). Vector-valued
    interfaces use arrays of shape (n_points, n_comp). u and T carry the
    sender's separate channels when it reported both, for receivers that
    split them (a surrogate pair routing values and tractions to different
    nets) instead of consuming the combination.
    """

    kind: str
    values: np.ndarray
    r1: float = 0.0
    r2: float = 0.0
    u: np.ndarray | None = None
    T: np.ndarray | None = None


@dataclass
class InterfaceResponse:
    """What a subdomain model reports after one solve.

    u and T are traces on the interface where the *other* side consumes them
    (values and derivative/traction channels; either may be None if unused).
    h_self is the model's own combined interface quantity on gamma1 (Model I
    only). field/weights feed the stopping criterion.
    """

    u: np.ndarray | None
    T: np.ndarray | None
    field: np.ndarray
    weights: np.ndarray
    h_self: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


class SubdomainModel:
    """Contract: solve(InterfaceCondition) -> InterfaceResponse."""

    def solve(self, ic: InterfaceCondition) -> InterfaceResponse:  # pragma: no cover
        raise NotImplementedError


def combine_channels(u, T, kind: str, r1: float, r2: float):
    if kind == "dirichlet":
        if u is None:
            raise ValidationError("dirichlet exchange needs a u channel")
        return np.asarray(u, dtype=np.float64)
    if kind == "neumann":
        if T is None:
            raise ValidationError("neumann exchange needs a T channel")
        return np.asarray(T, dtype=np.float64)
    if kind == "robin":
        if u is None or T is None:
            raise ValidationError("robin exchange needs both u and T channels")
        return r1 * np.asarray(u, dtype=np.float64) + r2 * np.asarray(T, dtype=np.float64)
    raise ValidationError(f"unknown interface kind {kind!r}")


@dataclass
class CouplingConfig:
    kind_i: str = "dirichlet"  # condition imposed on Model I at gamma1
    kind_ii: str = "dirichlet"  # condition imposed on Model II at gamma2
    r1: float = 1.0
    r2: float = 1.0
    eps: float = 1e-12
    n_max: int = 100
    h_shape: tuple = ()  # shape of the gamma1 exchange array


@dataclass
class CouplingRecord:
    """Per-iteration history of one coupling run."""

    theta: list = field(default_factory=list)
    h_i: list = field(default_factory=list)
    h_ii: list = field(default_factory=list)
    h_relaxed: list = field(default_factory=list)
    residual_norm: list = field(default_factory=list)
    conv_metric: list = field(default_factory=list)
    error_gamma1: list = field(default_factory=list)
    error_gamma2: list = field(default_factory=list)
    model_ii_seconds: list = field(default_factory=list)
    iter_seconds: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "theta": [float(t) for t in self.theta],
            "residual_norm": [float(r) for r in self.residual_norm],
            "conv_metric": [float(c) for c in self.conv_metric],
            "error_gamma1": [float(e) for e in self.error_gamma1],
            "error_gamma2": [float(e) for e in self.error_gamma2],
            "model_ii_seconds": [float(s) for s in self.model_ii_seconds],
            "iter_seconds": [float(s) for s in self.iter_seconds],
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def save_csv(self, path):
        cols = [
            "iteration",
            "theta",
            "residual_norm",
            "conv_metric",
            "error_gamma1",
            "error_gamma2",
            "model_ii_seconds",
            "iter_seconds",
        ]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.iterations):
                row = [
                    str(i + 1),
                    f"{self.theta[i]:.17g}",
                    f"{self.residual_norm[i]:.17g}",
                    f"{self.conv_metric[i]:.17g}",
                    f"{self.error_gamma1[i]:.17g}" if self.error_gamma1 else "",
                    f"{self.error_gamma2[i]:.17g}" if self.error_gamma2 else "",
                    f"{self.model_ii_seconds[i]:.17g}",
                    f"{self.iter_seconds[i]:.17g}",
                ]
                fh.write(",".join(row) + "\n")


@dataclass
class CouplingResult:
    u_i: np.ndarray
    u_ii: np.ndarray
    h: np.ndarray
    record: CouplingRecord
    converged: bool
    resp_i: InterfaceResponse | None = None
    resp_ii: InterfaceResponse | None = None


def _rms(x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(np.sqrt(np.mean(x * x)))


def _rel_err(values, truth) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    denom = np.linalg.norm(truth)
    return float(np.linalg.norm(values - truth) / denom) if denom > 0 else float("nan")


def schwarz_solve(
    model_i: SubdomainModel,
    model_ii: SubdomainModel,
    relax: RelaxationPolicy,
    config: CouplingConfig,
    reference: dict | None = None,
) -> CouplingResult:
    """Alternating subdomain iteration with relaxed interface updates.

    Starts from a zero interface guess. reference may carry truth values
    {'gamma1_u': ..., 'gamma2_u': ...} against which per-iteration relative
    errors of the exchanged u channels are recorded.
    """
    h = np.zeros(config.h_shape)
    theta = relax.theta
    rec = CouplingRecord()
    prev_field_i = prev_field_ii = None
    r_prev = None
    resp_i = resp_ii = None
    done = False
    for it in range(1, config.n_max + 1):
        t0 = time.perf_counter()
        resp_i = model_i.solve(InterfaceCondition(config.kind_i, h, config.r1, config.r2))
        ic_ii = InterfaceCondition(
            config.kind_ii,
            combine_channels(resp_i.u, resp_i.T, config.kind_ii, config.r1, config.r2),
            config.r1,
            config.r2,
            u=resp_i.u,
            T=resp_i.T,
        )
        t1 = time.perf_counter()
        resp_ii = model_ii.solve(ic_ii)
        t2 = time.perf_counter()
        h_i = resp_i.h_self if resp_i.h_self is not None else h
        h_ii = combine_channels(resp_ii.u, resp_ii.T, config.kind_i, config.r1, config.r2)
        r = h_ii - h_i
        if relax.mode == "aitken" and r_prev is not None:
            theta = aitken_theta(r_prev, r, theta, relax.theta_min, relax.theta_max)
        r_prev = r
        h = relax_update(h_i, h_ii, theta)

        rec.theta.append(theta)
        rec.h_i.append(np.array(h_i))
        rec.h_ii.append(np.array(h_ii))
        rec.h_relaxed.append(np.array(h))
        rec.residual_norm.append(_rms(r))
        rec.model_ii_seconds.append(t2 - t1)
        if reference:
            if "gamma1_u" in reference and resp_ii.u is not None:
                rec.error_gamma1.append(_rel_err(resp_ii.u, reference["gamma1_u"]))
            if "gamma2_u" in reference and resp_i.u is not None:
                rec.error_gamma2.append(_rel_err(resp_i.u, reference["gamma2_u"]))
        if prev_field_i is None:
            rec.conv_metric.append(float("inf"))
        else:
            metric, done = converged(
                resp_i.field,
                prev_field_i,
                resp_ii.field,
                prev_field_ii,
                config.eps,
                resp_i.weights,
                resp_ii.weights,
            )
            rec.conv_metric.append(metric)
        prev_field_i = resp_i.field
        prev_field_ii = resp_ii.field
        rec.iter_seconds.append(time.perf_counter() - t0)
        rec.iterations = it
        if done:
            rec.converged = True
            break
    return CouplingResult(
        u_i=resp_i.field,
        u_ii=resp_ii.field,
        h=h,
        record=rec,
        converged=rec.converged,
        resp_i=resp_i,
        resp_ii=resp_ii,
    )
