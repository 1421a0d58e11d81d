"""Triangle meshes for the benchmark geometries.

All generators are structured (grids, polar rings, circle-to-square mapped
blocks) so no external mesher is needed. Triangles are CCW; boundary edges
are oriented with the domain on the left, so the outward normal of edge
(a, b) is the edge tangent rotated by -90 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass
class Mesh2D:
    vertices: np.ndarray  # (Nv, 2)
    triangles: np.ndarray  # (Ne, 3) int, CCW
    boundary_edges: np.ndarray  # (Nb, 2) int, domain on the left
    boundary_tags: np.ndarray  # (Nb,) str

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ShapeError("vertices must be (Nv, 2)")
        areas = self.areas()
        if np.any(areas <= 0):
            raise ValidationError(f"{np.sum(areas <= 0)} non-positive triangle areas")

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @property
    def h(self) -> float:
        """Characteristic size: median boundary edge length."""
        p = self.vertices
        e = self.boundary_edges
        return float(np.median(np.linalg.norm(p[e[:, 1]] - p[e[:, 0]], axis=1)))

    def edges_of(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def tag_names(self):
        return sorted(set(self.boundary_tags.tolist()))


def _orient_ccw(vertices, triangles):
    p = vertices[triangles]
    areas = 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = areas < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def _boundary_edges_from_triangles(triangles):
    """Edges owned by exactly one triangle, ordered as they appear in it."""
    edges = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            if key in edges:
                edges[key] = None
            else:
                edges[key] = (a, b)
    out = [v for v in edges.values() if v is not None]
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def _prune_unused(vertices, triangles, edges):
    used = np.unique(triangles)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(used.size)
    return vertices[used], remap[triangles], remap[edges]


def rect_mesh(x0, x1, y0, y1, nx, ny, tags=None) -> Mesh2D:
    """Structured grid on a rectangle, alternating diagonals.

    tags maps side names ('left', 'right', 'bottom', 'top') to tag strings;
    sides default to their own names.
    """
    tags = {**{s: s for s in ("left", "right", "bottom", "top")}, **(tags or {})}
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xv, yv = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    triangles = _orient_ccw(vertices, np.asarray(tris, dtype=np.int64))
    edges = _boundary_edges_from_triangles(triangles)
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    tol = 1e-12 + 1e-9 * max(abs(x1 - x0), abs(y1 - y0))
    names = np.empty(len(edges), dtype=object)
    names[np.abs(mids[:, 0] - x0) < tol] = tags["left"]
    names[np.abs(mids[:, 0] - x1) < tol] = tags["right"]
    names[np.abs(mids[:, 1] - y0) < tol] = tags["bottom"]
    names[np.abs(mids[:, 1] - y1) < tol] = tags["top"]
    return Mesh2D(vertices, triangles, edges, names.astype(str))


def square_with_square_hole(x0, x1, y0, y1, hole, n, outer_tag="gamma0", hole_tag="gamma1"):
    """Rectangle grid with an axis-aligned rectangular hole removed.

    hole = (hx0, hx1, hy0, hy1) must sit on grid lines of the n x n grid.
    """
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    hx0, hx1, hy0, hy1 = hole
    for val, axis in ((hx0, xs), (hx1, xs), (hy0, ys), (hy1, ys)):
        if np.min(np.abs(axis - val)) > 1e-12:
            raise ValidationError("hole boundary must lie on grid lines")
    xv, yv = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            cx = 0.5 * (xs[i] + xs[i + 1])
            cy = 0.5 * (ys[j] + ys[j + 1])
            if hx0 < cx < hx1 and hy0 < cy < hy1:
                continue
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    triangles = _orient_ccw(vertices, np.asarray(tris, dtype=np.int64))
    edges = _boundary_edges_from_triangles(triangles)
    vertices, triangles, edges = _prune_unused(vertices, triangles, edges)
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    on_outer = (
        (np.abs(mids[:, 0] - x0) < 1e-12)
        | (np.abs(mids[:, 0] - x1) < 1e-12)
        | (np.abs(mids[:, 1] - y0) < 1e-12)
        | (np.abs(mids[:, 1] - y1) < 1e-12)
    )
    names = np.where(on_outer, outer_tag, hole_tag)
    return Mesh2D(vertices, triangles, edges, names.astype(str))


def _ring_block(inner_pts, outer_pts, nr, grading=1.0):
    """Transfinite block between two closed polylines with matching nodes.

    inner_pts/outer_pts are (ntheta, 2) arrays of corresponding nodes.
    Returns (vertices, triangles); ring k node index = k * ntheta + j.
    """
    ntheta = inner_pts.shape[0]
    t = np.linspace(0.0, 1.0, nr + 1)
    if grading != 1.0:
        t = (grading**t - 1.0) / (grading - 1.0)
    layers = [(1.0 - tk) * inner_pts + tk * outer_pts for tk in t]
    vertices = np.concatenate(layers, axis=0)
    tris = []
    for k in range(nr):
        base0, base1 = k * ntheta, (k + 1) * ntheta
        for j in range(ntheta):
            jn = (j + 1) % ntheta
            a, b = base0 + j, base0 + jn
            c, d = base1 + jn, base1 + j
            if (k + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return vertices, np.asarray(tris, dtype=np.int64)


def annulus_mesh(center, r_inner, r_outer, nr, ntheta, inner_tag="hole", outer_tag="interface"):
    """Polar-grid annulus. ntheta nodes around, nr rings across."""
    theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
    ring = np.column_stack([np.cos(theta), np.sin(theta)])
    c = np.asarray(center, dtype=np.float64)
    vertices, triangles = _ring_block(c + r_inner * ring, c + r_outer * ring, nr)
    triangles = _orient_ccw(vertices, triangles)
    edges = _boundary_edges_from_triangles(triangles)
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    r_mid = np.linalg.norm(mids - c, axis=1)
    names = np.where(r_mid < 0.5 * (r_inner + r_outer), inner_tag, outer_tag)
    return Mesh2D(vertices, triangles, edges, names.astype(str))


def square_ring_mesh(
    center,
    r_inner,
    half_width,
    nr,
    ntheta,
    inner_tag="interface",
    grading=1.0,
    side_tags=None,
):
    """Block between an inner circle and an outer square (transfinite map).

    ntheta must be a multiple of 8 so square corners land on mesh nodes.
    Outer sides are tagged bottom/top/left/right (overridable via side_tags).
    """
    if ntheta % 8:
        raise ValidationError("ntheta must be a multiple of 8")
    side_tags = {**{s: s for s in ("left", "right", "bottom", "top")}, **(side_tags or {})}
    c = np.asarray(center, dtype=np.float64)
    theta = 2.0 * np.pi * (np.arange(ntheta) + 0.5 * 0) / ntheta
    ray = np.column_stack([np.cos(theta), np.sin(theta)])
    scale = half_width / np.maximum(np.abs(ray[:, 0]), np.abs(ray[:, 1]))
    inner = c + r_inner * ray
    outer = c + scale[:, None] * ray
    vertices, triangles = _ring_block(inner, outer, nr, grading)
    triangles = _orient_ccw(vertices, triangles)
    edges = _boundary_edges_from_triangles(triangles)
    mids = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    names = np.empty(len(edges), dtype=object)
    tol = 1e-9 * half_width
    on_square = np.max(np.abs(mids - c), axis=1) > half_width - tol
    names[~on_square] = inner_tag
    sq = mids[on_square] - c
    side = np.empty(len(sq), dtype=object)
    side[np.abs(sq[:, 0] - half_width) < tol] = side_tags["right"]
    side[np.abs(sq[:, 0] + half_width) < tol] = side_tags["left"]
    side[np.abs(sq[:, 1] - half_width) < tol] = side_tags["top"]
    side[np.abs(sq[:, 1] + half_width) < tol] = side_tags["bottom"]
    names[on_square] = side
    return Mesh2D(vertices, triangles, edges, names.astype(str))


def glue_meshes(a: Mesh2D, b: Mesh2D, drop_tags=(), decimals=9) -> Mesh2D:
    """Merge two meshes, welding coincident vertices.

    Boundary edges that become interior after welding disappear; drop_tags
    names the tags expected to vanish (sanity-checked).
    """
    vertices = np.vstack([a.vertices, b.vertices])
    keys = [tuple(np.round(v, decimals)) for v in vertices]
    first = {}
    remap = np.empty(len(vertices), dtype=np.int64)
    keep = []
    for i, k in enumerate(keys):
        if k in first:
            remap[i] = first[k]
        else:
            first[k] = len(keep)
            remap[i] = len(keep)
            keep.append(i)
    verts = vertices[keep]
    off = len(a.vertices)
    tris = remap[np.vstack([a.triangles, b.triangles + off])]
    edges = remap[np.vstack([a.boundary_edges, b.boundary_edges + off])]
    tags = np.concatenate([a.boundary_tags, b.boundary_tags])

    counts = {}
    for tri in tris:
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(u, v), max(u, v))
            counts[key] = counts.get(key, 0) + 1
    keep_edge = np.array(
        [counts.get((min(u, v), max(u, v)), 0) == 1 for u, v in edges], dtype=bool
    )
    dropped = set(tags[~keep_edge].tolist())
    if not dropped.issubset(set(drop_tags)):
        raise ValidationError(f"unexpected tags vanished while gluing: {dropped}")
    return Mesh2D(verts, tris, edges[keep_edge], tags[keep_edge])


def boundary_loop_vertices(mesh: Mesh2D, tag: str) -> np.ndarray:
    """Vertex ids along a closed tagged boundary loop, in walk order."""
    edges = mesh.edges_of(tag)
    if len(edges) == 0:
        raise ValidationError(f"no edges tagged {tag!r}")
    nxt = {int(a): int(b) for a, b in edges}
    start = int(edges[0, 0])
    loop = [start]
    cur = nxt[start]
    while cur != start:
        loop.append(cur)
        cur = nxt[cur]
        if len(loop) > len(edges) + 1:
            raise ValidationError(f"boundary {tag!r} is not a single closed loop")
    return np.asarray(loop, dtype=np.int64)
