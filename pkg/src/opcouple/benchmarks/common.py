"""Shared helpers for benchmark wiring."""

from __future__ import annotations

import numpy as np


def square_boundary_normals(points, rect, outward_from_outside=True):
    """Unit normals on the boundary of an axis-aligned rectangle.

    rect = (x0, x1, y0, y1). By default normals point into the rectangle,
    which is the outward direction of a domain that surrounds it (interface
    convention: outward from the Model I subdomain). Corners get the
    normalized diagonal.
    """
    x0, x1, y0, y1 = rect
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    n = np.zeros_like(pts)
    n[np.abs(pts[:, 0] - x0) < tol, 0] += 1.0
    n[np.abs(pts[:, 0] - x1) < tol, 0] -= 1.0
    n[np.abs(pts[:, 1] - y0) < tol, 1] += 1.0
    n[np.abs(pts[:, 1] - y1) < tol, 1] -= 1.0
    if not outward_from_outside:
        n = -n
    lengths = np.linalg.norm(n, axis=1)
    if np.any(lengths == 0):
        raise ValueError("some points are not on the rectangle boundary")
    return n / lengths[:, None]


def loop_arc_weights(points) -> np.ndarray:
    """Trapezoid arc-length weights for points ordered around a closed loop."""
    pts = np.asarray(points, dtype=np.float64)
    nxt = np.roll(pts, -1, axis=0)
    prv = np.roll(pts, 1, axis=0)
    return 0.5 * (
        np.linalg.norm(pts - prv, axis=1) + np.linalg.norm(nxt - pts, axis=1)
    )


def rel_l2(values, truth, weights=None) -> float:
    """Relative weighted L2 distance; nan when the truth norm vanishes."""
    v = np.asarray(values, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    denom = np.sqrt(np.sum(w * t * t))
    if denom == 0:
        return float("nan")
    return float(np.sqrt(np.sum(w * (v - t) ** 2)) / denom)


def iterations_to_tolerance(errors, tol) -> int:
    """1-based index of the first error below tol; -1 if never reached."""
    for i, e in enumerate(errors):
        if e < tol:
            return i + 1
    return -1
