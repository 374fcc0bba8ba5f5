"""Triangulations of polygonal domains.

Two generators share one mesh type:

* ``triangulate`` builds an unstructured Delaunay mesh from scratch:
  boundary nodes spaced ~h along each side, a hexagonal interior lattice,
  and incremental Bowyer-Watson insertion.  Interior candidates are
  filtered out of every boundary segment's diametral disk, which makes
  each boundary segment a Gabriel (hence Delaunay) edge, so the polygon
  boundary is recovered by construction; triangles outside the polygon
  are trimmed afterwards.

* ``structured_mesh`` builds uniform right-isosceles lattices for the
  unit square and the L-shape.  All angles are <= 90 degrees, which is
  what the discrete maximum principle needs.

Corner grading with exponent mu < 1 is the radial map
r -> R_j (r / R_j)^(1/mu) applied to all generator points within R_j of
the flagged corner; local element diameter then scales like
h (r/R_j)^(1-mu).  Uniform (red) refinement quarters every triangle;
graded meshes instead re-triangulate at h/2 so the grading family is
preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import GeometryError, PolygonalDomain

MIN_ANGLE_DEG = 20.0


class MeshError(RuntimeError):
    """Triangulation failed its invariants (quality, conformity, reachable h)."""


@dataclass
class TriMesh:
    """Conforming triangle mesh of a polygonal domain.

    ``triangles`` are CCW index triples into ``nodes``.  ``boundary_edges``
    holds rows (a, b, side) with a->b oriented counterclockwise along the
    boundary.  ``corner_nodes`` maps polygon corner index -> node id.
    """

    domain: PolygonalDomain
    nodes: np.ndarray
    triangles: np.ndarray
    h_target: float
    grading: dict
    provenance: tuple
    boundary_edges: np.ndarray = field(default=None)
    corner_nodes: dict = field(default_factory=dict)
    h: float = 0.0
    min_angle: float = 0.0
    nonobtuse: bool = False
    _trace: object = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def boundary_node_ids(self) -> np.ndarray:
        return np.unique(self.boundary_edges[:, :2].ravel())

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))


# ---------------------------------------------------------------------
# Bowyer-Watson incremental Delaunay

class _Delaunay:
    """Incremental Delaunay triangulation with a super-triangle.

    Plain-float kernel: coordinates are pre-scaled to O(1), predicates
    use relative tolerances, cocircular ties count as "outside" which
    keeps the triangulation valid.
    """

    def __init__(self, pts: np.ndarray):
        self.n = len(pts)
        lo = pts.min(axis=0)
        span = float(max(np.ptp(pts, axis=0).max(), 1e-30))
        q = (pts - lo) / span
        self.px = q[:, 0].tolist() + [-50.0, 101.0, 0.5]
        self.py = q[:, 1].tolist() + [-50.0, -50.0, 150.0]
        self.tv = [(self.n, self.n + 1, self.n + 2)]
        self.tn = [[-1, -1, -1]]
        self.alive = [True]
        self.last = 0

    def _orient(self, a, b, c):
        px, py = self.px, self.py
        return ((px[b] - px[a]) * (py[c] - py[a])
                - (py[b] - py[a]) * (px[c] - px[a]))

    def _incircle(self, tri, d):
        a, b, c = tri
        px, py = self.px, self.py
        adx = px[a] - px[d]
        ady = py[a] - py[d]
        bdx = px[b] - px[d]
        bdy = py[b] - py[d]
        cdx = px[c] - px[d]
        cdy = py[c] - py[d]
        ad = adx * adx + ady * ady
        bd = bdx * bdx + bdy * bdy
        cd = cdx * cdx + cdy * cdy
        t1 = ad * (bdx * cdy - bdy * cdx)
        t2 = bd * (adx * cdy - ady * cdx)
        t3 = cd * (adx * bdy - ady * bdx)
        det = t1 - t2 + t3
        scale = abs(t1) + abs(t2) + abs(t3)
        return det > 1e-12 * scale

    def _locate(self, p):
        t = self.last
        if not self.alive[t]:
            t = next(i for i in range(len(self.tv) - 1, -1, -1) if self.alive[i])
        for _ in range(4 * len(self.tv) + 16):
            a, b, c = self.tv[t]
            moved = False
            for k, (u, v) in enumerate(((a, b), (b, c), (c, a))):
                if self._orient(u, v, p) < -1e-15:
                    nb = self.tn[t][(k + 2) % 3]
                    if nb >= 0:
                        t = nb
                        moved = True
                        break
            if not moved:
                return t
        # Degenerate walk; exhaustive fallback keeps determinism.
        for t in range(len(self.tv)):
            if not self.alive[t]:
                continue
            a, b, c = self.tv[t]
            if (self._orient(a, b, p) >= -1e-15
                    and self._orient(b, c, p) >= -1e-15
                    and self._orient(c, a, p) >= -1e-15):
                return t
        raise MeshError("point location failed")

    def insert(self, p: int) -> None:
        t0 = self._locate(p)
        cavity = {t0}
        stack = [t0]
        while stack:
            t = stack.pop()
            for nb in self.tn[t]:
                if nb >= 0 and nb not in cavity and self._incircle(self.tv[nb], p):
                    cavity.add(nb)
                    stack.append(nb)
        border = []  # (a, b, outer) with (a,b) CCW in its cavity triangle
        for t in cavity:
            a, b, c = self.tv[t]
            for k, (u, v) in enumerate(((a, b), (b, c), (c, a))):
                nb = self.tn[t][(k + 2) % 3]
                if nb not in cavity or nb < 0:
                    border.append((u, v, nb if nb is not None else -1))
        for t in cavity:
            self.alive[t] = False
        start_at = {}
        end_at = {}
        created = []
        for (u, v, outer) in border:
            idx = len(self.tv)
            self.tv.append((u, v, p))
            self.tn.append([-1, -1, outer])
            self.alive.append(True)
            created.append((idx, u, v, outer))
            start_at[u] = idx
            end_at[v] = idx
        for idx, u, v, outer in created:
            self.tn[idx][0] = start_at[v]   # edge (v, p)
            self.tn[idx][1] = end_at[u]     # edge (p, u)
            if outer >= 0:
                # the shared edge appears as (v, u) in the outer triangle
                ov = self.tv[outer]
                slots = self.tn[outer]
                for k in range(3):
                    if (ov[(k + 1) % 3], ov[(k + 2) % 3]) == (v, u):
                        slots[k] = idx
        self.last = created[-1][0]

    def triangles(self) -> np.ndarray:
        out = []
        for t, ok in enumerate(self.alive):
            if not ok:
                continue
            a, b, c = self.tv[t]
            if a < self.n and b < self.n and c < self.n:
                out.append((a, b, c))
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def _delaunay(points: np.ndarray, order: np.ndarray) -> np.ndarray:
    dt = _Delaunay(points)
    try:
        for p in order:
            dt.insert(int(p))
    except KeyError as exc:  # non-star cavity from a degenerate predicate
        raise MeshError(f"Delaunay insertion failed near point {exc}") from exc
    return dt.triangles()


# ---------------------------------------------------------------------
# point generation

def _graded_layers(R: float, h: float, mu: float) -> list[float]:
    """Descending layer radii from R toward the corner.

    The family R (k/K)^(1/mu), K ~ R/(mu h), realizes local spacing
    h (r/R)^(1-mu).  Layers below k = ceil(1/mu) are dropped: the
    innermost cell then has length ~ h^(1/mu) R^(1-1/mu) and the jump to
    its neighbor stays bounded (<= e - 1) for every mu.
    """
    K = max(2, math.ceil(R / (mu * h)))
    m = min(K - 1, max(1, math.ceil(1.0 / mu - 1e-12)))
    return [R * (k / K) ** (1.0 / mu) for k in range(K, m - 1, -1)]


def _side_points(domain: PolygonalDomain, h: float, grading: dict):
    """Boundary nodes: ~h per side, graded layers near flagged corners.

    Polygon vertex k is node k; side interiors follow.
    """
    verts = domain.vertices
    M = len(verts)
    pts = [tuple(v) for v in verts]
    for j in range(M):
        a, b = verts[j], verts[(j + 1) % M]
        L = float(np.linalg.norm(b - a))
        head = []  # distances from a, ascending, excluding 0
        tail = []  # distances from b, ascending, excluding 0
        mu_a = grading.get(j, 1.0)
        mu_b = grading.get((j + 1) % M, 1.0)
        if mu_a < 1.0:
            head = sorted(_graded_layers(domain.corners[j].radius, h, mu_a))
        if mu_b < 1.0:
            tail = sorted(_graded_layers(domain.corners[(j + 1) % M].radius, h, mu_b))
        lo = head[-1] if head else 0.0
        hi = L - (tail[-1] if tail else 0.0)
        n_mid = max(1, int(round((hi - lo) / h)))
        mids = [lo + (hi - lo) * k / n_mid for k in range(1, n_mid)]
        dists = sorted(set(head) | set(mids) | {L - t for t in tail})
        dists = [s for s in dists if 1e-12 * L < s < L * (1 - 1e-12)]
        for s in dists:
            pts.append(tuple(a + (s / L) * (b - a)))
    return np.array(pts, dtype=float)


def _ring_points(domain: PolygonalDomain, j: int, h: float, mu: float) -> np.ndarray:
    """Interior points on concentric arcs inside the graded zone of corner j,
    with angular spacing matching the radial layer gaps (isotropic cells)."""
    c = domain.corners[j]
    rs = _graded_layers(c.radius, h, mu)
    out = []
    for k in range(1, len(rs)):
        r = rs[k]
        pitch = h * (r / c.radius) ** (1.0 - mu)
        n = max(1, int(round(c.angle * r / pitch)))
        for i in range(1, n):
            ang = c.frame_angle + c.angle * i / n
            out.append((c.vertex[0] + r * math.cos(ang),
                        c.vertex[1] + r * math.sin(ang)))
    return np.array(out, dtype=float).reshape(-1, 2)


def _hex_lattice(domain: PolygonalDomain, h: float, angle: float) -> np.ndarray:
    """Triangular lattice over the domain, anchored at the global origin in
    the rotated frame (so a reflection axis through the origin along
    ``angle`` maps the lattice to itself)."""
    verts = domain.vertices
    lo = verts.min(axis=0) - h
    hi = verts.max(axis=0) + h
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    corners = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    rc = corners @ rot  # coordinates in the rotated frame
    rlo, rhi = rc.min(axis=0), rc.max(axis=0)
    dy = h * math.sqrt(3.0) / 2.0
    i0 = int(math.floor(rlo[1] / dy)) - 1
    i1 = int(math.ceil(rhi[1] / dy)) + 1
    k0 = int(math.floor(rlo[0] / h)) - 1
    k1 = int(math.ceil(rhi[0] / h)) + 1
    out = []
    for i in range(i0, i1 + 1):
        y = i * dy
        xs = h * (np.arange(k0, k1 + 1) + (0.5 if i % 2 else 0.0))
        out.append(np.column_stack([xs, np.full(len(xs), y)]))
    pts = np.vstack(out) @ rot.T
    return pts[domain.contains(pts)]


def _validate_grading(domain: PolygonalDomain, grading: dict) -> dict:
    out = {}
    for j, mu in grading.items():
        if not isinstance(j, int) or not 0 <= j < len(domain.vertices):
            raise MeshError(f"grading refers to nonexistent corner {j}")
        if not 0.0 < mu <= 1.0:
            raise MeshError(f"grading exponent at corner {j} must lie in (0, 1]")
        if mu < 1.0:
            out[j] = float(mu)
    return out


def _filter_interior(domain, interior, bpts, bsegs):
    """Drop interior candidates that sit inside an (inflated) diametral
    disk of a boundary segment or too close to a boundary node."""
    keep = np.ones(len(interior), dtype=bool)
    for (ia, ib) in bsegs:
        a, b = bpts[ia], bpts[ib]
        mid = 0.5 * (a + b)
        rad = 0.525 * float(np.linalg.norm(b - a))
        d = interior - mid
        keep &= (d[:, 0] ** 2 + d[:, 1] ** 2) > rad * rad
    # node exclusion: radius 0.45 * longest adjacent segment
    ln = np.zeros(len(bpts))
    for (ia, ib) in bsegs:
        L = float(np.linalg.norm(bpts[ib] - bpts[ia]))
        ln[ia] = max(ln[ia], L)
        ln[ib] = max(ln[ib], L)
    for i, p in enumerate(bpts):
        d = interior - p
        rad = 0.45 * ln[i]
        keep &= (d[:, 0] ** 2 + d[:, 1] ** 2) > rad * rad
    return interior[keep]


def _boundary_segments(domain: PolygonalDomain, bpts: np.ndarray):
    """Consecutive-node segments along each side, as index pairs into bpts."""
    M = len(domain.vertices)
    segs = []
    for j in range(M):
        a, b = domain.side(j)
        ab = b - a
        L2 = float(np.dot(ab, ab))
        t = ((bpts - a) @ ab) / L2
        d = bpts - (a + np.clip(t, 0, 1)[:, None] * ab)
        on = (np.hypot(d[:, 0], d[:, 1]) <= 1e-9 * math.sqrt(L2)) \
            & (t >= -1e-12) & (t <= 1 + 1e-12)
        ids = np.where(on)[0]
        ids = ids[np.argsort(t[ids])]
        for k in range(len(ids) - 1):
            segs.append((int(ids[k]), int(ids[k + 1])))
    return segs


def triangulate(domain: PolygonalDomain, h: float, grading: dict | None = None,
                lattice_angle: float = 0.0) -> TriMesh:
    """Unstructured Delaunay mesh with target diameter h.

    ``grading`` maps corner index -> exponent mu in (0, 1]; mu < 1 grades
    the mesh toward that corner (boundary layers spaced by h (r/R)^(1-mu),
    interior rings with matching angular pitch, so cells stay isotropic).
    ``lattice_angle`` rotates the interior point lattice (useful to align
    it with a symmetry axis).
    """
    if h <= 0:
        raise MeshError("h must be positive")
    grading = _validate_grading(domain, grading or {})
    bpts_g = _side_points(domain, h, grading)
    interior_g = _hex_lattice(domain, h, lattice_angle)
    for j, mu in grading.items():
        c = domain.corners[j]
        d = interior_g - np.asarray(c.vertex)
        outside = np.hypot(d[:, 0], d[:, 1]) > 1.05 * c.radius
        interior_g = np.vstack([interior_g[outside],
                                _ring_points(domain, j, h, mu)])
    segs = _boundary_segments(domain, bpts_g)
    if len(segs) != len(bpts_g):
        raise MeshError("boundary subdivision failed; h unreachable for geometry")
    interior_g = _filter_interior(domain, interior_g, bpts_g, segs)

    for attempt in range(3):
        pts = np.vstack([bpts_g, interior_g])
        tris = _build_trimmed(domain, pts, h)
        mesh = _finalize(domain, pts, tris, h, grading,
                         ("cdt", domain, h, grading, lattice_angle))
        if mesh.min_angle >= MIN_ANGLE_DEG or len(interior_g) == 0:
            return mesh
        interior_g = _smooth_interior(domain, mesh, len(bpts_g), grading)
    if mesh.min_angle < MIN_ANGLE_DEG:
        raise MeshError(
            f"min angle {mesh.min_angle:.2f} deg below {MIN_ANGLE_DEG}; "
            "h unreachable for this geometry")
    return mesh


def _build_trimmed(domain, pts, h):
    order = np.lexsort((pts[:, 0], np.round(pts[:, 1] / max(h, 1e-12))))
    tris = _delaunay(pts, order)
    if len(tris) == 0:
        raise MeshError("empty triangulation")
    cent = pts[tris].mean(axis=1)
    tris = tris[domain.contains(cent)]
    if len(tris) == 0:
        raise MeshError("all triangles trimmed; h unreachable")
    return tris


def _smooth_interior(domain, mesh, n_bnd, grading):
    """One Laplacian pass on interior nodes outside graded zones."""
    pts = mesh.nodes.copy()
    nbr_sum = np.zeros_like(pts)
    nbr_cnt = np.zeros(len(pts))
    for (a, b) in _all_edges(mesh.triangles):
        nbr_sum[a] += pts[b]
        nbr_sum[b] += pts[a]
        nbr_cnt[a] += 1
        nbr_cnt[b] += 1
    movable = np.zeros(len(pts), dtype=bool)
    movable[n_bnd:] = True
    for j, mu in grading.items():
        if mu < 1.0:
            c = mesh.domain.corners[j]
            d = pts - np.asarray(c.vertex)
            movable &= np.hypot(d[:, 0], d[:, 1]) > c.radius
    target = nbr_sum[movable] / np.maximum(nbr_cnt[movable], 1)[:, None]
    pts[movable] += 0.6 * (target - pts[movable])
    inside = np.ones(len(pts), dtype=bool)
    inside[n_bnd:] = domain.contains(pts[n_bnd:])
    return pts[n_bnd:][inside[n_bnd:]]


def _all_edges(tris: np.ndarray) -> np.ndarray:
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


# ---------------------------------------------------------------------
# structured right-isosceles meshes

def structured_mesh(domain: PolygonalDomain, h: float) -> TriMesh:
    """Uniform right-triangle lattice for the unit square or the L-shape.

    Every angle is 45 or 90 degrees (non-obtuse).  For graded meshes use
    ``triangulate``; a radial map applied to this lattice would wreck its
    angles.
    """
    name = domain.name
    n = max(1, int(round(1.0 / h)))
    if abs(n * h - 1.0) > 1e-9:
        raise MeshError("structured meshes need h dividing 1")
    if name == "unit-square":
        iis, jjs = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        idx = {(i, j): k for k, (i, j) in enumerate(zip(iis.ravel(), jjs.ravel()))}
        nodes = np.array([(i / n, j / n) for (i, j) in idx], dtype=float)
        cells = [(i, j) for i in range(n) for j in range(n)]
    elif name == "l-shape":
        keep_node = lambda i, j: not (i > 0 and j < 0)
        idx = {}
        nodes_list = []
        for i in range(-n, n + 1):
            for j in range(-n, n + 1):
                if keep_node(i, j):
                    idx[(i, j)] = len(nodes_list)
                    nodes_list.append((i / n, j / n))
        nodes = np.array(nodes_list, dtype=float)
        cells = [(i, j) for i in range(-n, n) for j in range(-n, n)
                 if not (i >= 0 and j <= -1)]
    else:
        raise MeshError(f"no structured mesh for domain {name!r}")
    tris = []
    for (i, j) in cells:
        v00, v10 = idx[(i, j)], idx[(i + 1, j)]
        v01, v11 = idx[(i, j + 1)], idx[(i + 1, j + 1)]
        tris.append((v00, v10, v11))
        tris.append((v00, v11, v01))
    tris = np.array(tris, dtype=np.int64)
    return _finalize(domain, nodes, tris, h, {},
                     ("structured", domain, h, {}, 0.0))


# ---------------------------------------------------------------------
# finalize: tags, invariants

def _finalize(domain, nodes, tris, h_target, grading, provenance) -> TriMesh:
    u = nodes[tris[:, 1]] - nodes[tris[:, 0]]
    v = nodes[tris[:, 2]] - nodes[tris[:, 0]]
    areas = 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    if np.any(areas <= 0):
        raise MeshError("non-positively-oriented triangle")
    if abs(areas.sum() - domain.area) > 1e-12 * domain.area:
        raise MeshError(
            f"triangle areas sum to {areas.sum()!r}, domain area {domain.area!r}")

    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    skey = np.sort(edges, axis=1)
    uniq, counts = np.unique(skey, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: edge shared by >2 triangles")
    used = np.zeros(len(nodes), dtype=bool)
    used[tris.ravel()] = True
    if not used.all():
        # drop unreferenced points (filtered lattice leftovers)
        remap = -np.ones(len(nodes), dtype=np.int64)
        remap[used] = np.arange(used.sum())
        nodes = nodes[used]
        tris = remap[tris]
        edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        skey = np.sort(edges, axis=1)
        uniq, counts = np.unique(skey, axis=0, return_counts=True)

    # boundary edges: appear in exactly one triangle, oriented as stored
    once = {tuple(e) for e, c in zip(uniq, counts) if c == 1}
    bedges = [tuple(e) for e in edges if (min(e), max(e)) in once]
    bed = _tag_sides(domain, nodes, bedges)

    corner_nodes = {}
    for j, c in enumerate(domain.corners):
        d = nodes - np.asarray(c.vertex)
        k = int(np.argmin(np.hypot(d[:, 0], d[:, 1])))
        if np.hypot(*(nodes[k] - np.asarray(c.vertex))) > 1e-9:
            raise MeshError(f"polygon corner {j} is not a mesh node")
        corner_nodes[j] = k

    p = nodes[tris]
    lens = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                     np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                     np.linalg.norm(p[:, 0] - p[:, 2], axis=1)])
    h = float(lens.max())
    min_ang = _min_angle_deg(p)
    max_ang = _max_angle_deg(p)

    mesh = TriMesh(domain=domain, nodes=nodes, triangles=tris,
                   h_target=h_target, grading=grading, provenance=provenance,
                   boundary_edges=bed, corner_nodes=corner_nodes, h=h,
                   min_angle=min_ang, nonobtuse=bool(max_ang <= 90.0 + 1e-9))
    _check_closed_boundary(mesh)
    return mesh


def _tag_sides(domain, nodes, bedges) -> np.ndarray:
    verts = domain.vertices
    M = len(verts)
    out = []
    for (a, b) in bedges:
        mid = 0.5 * (nodes[a] + nodes[b])
        side = -1
        for j in range(M):
            p, q = verts[j], verts[(j + 1) % M]
            L = np.linalg.norm(q - p)
            if (_seg_dist(mid, p, q) <= 1e-9 * L
                    and _seg_dist(nodes[a], p, q) <= 1e-9 * L
                    and _seg_dist(nodes[b], p, q) <= 1e-9 * L):
                side = j
                break
        if side < 0:
            raise MeshError("boundary edge not on any polygon side")
        out.append((a, b, side))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def _seg_dist(p, a, b) -> float:
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(p - (a + t * ab)))


def _min_angle_deg(p: np.ndarray) -> float:
    return float(_angles_deg(p).min())


def _max_angle_deg(p: np.ndarray) -> float:
    return float(_angles_deg(p).max())


def _angles_deg(p: np.ndarray) -> np.ndarray:
    angs = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        dot = (u * v).sum(axis=1)
        den = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        angs.append(np.degrees(np.arccos(np.clip(dot / den, -1.0, 1.0))))
    return np.stack(angs)


def _check_closed_boundary(mesh: TriMesh) -> None:
    """Boundary edges must chain into one closed CCW loop through all corners."""
    nxt = {}
    for (a, b, _s) in mesh.boundary_edges:
        if a in nxt:
            raise MeshError("boundary is not a simple loop")
        nxt[int(a)] = int(b)
    start = mesh.corner_nodes[0]
    seen = [start]
    cur = nxt.get(start)
    while cur is not None and cur != start and len(seen) <= len(nxt):
        seen.append(cur)
        cur = nxt.get(cur)
    if cur != start or len(seen) != len(nxt):
        raise MeshError("boundary loop is broken or disconnected")


# ---------------------------------------------------------------------
# refinement

def refine_uniform(mesh: TriMesh) -> TriMesh:
    """One refinement level.

    Ungraded meshes are red-refined (each triangle into four via edge
    midpoints; boundary midpoints stay on the polygon).  Graded meshes
    are re-triangulated at h/2 within the same grading family.
    """
    if any(mu < 1.0 for mu in mesh.grading.values()):
        kind, domain, h, grading, angle = mesh.provenance
        return triangulate(domain, h / 2.0, grading, angle)

    nodes = mesh.nodes
    tris = mesh.triangles
    edges = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    skey = np.sort(edges, axis=1)
    uniq, inv = np.unique(skey, axis=0, return_inverse=True)
    mid = 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])
    new_nodes = np.vstack([nodes, mid])
    mid_id = len(nodes) + np.arange(len(uniq))
    e01 = mid_id[inv[:len(tris)]]
    e12 = mid_id[inv[len(tris):2 * len(tris)]]
    e20 = mid_id[inv[2 * len(tris):]]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new_tris = np.vstack([
        np.column_stack([a, e01, e20]),
        np.column_stack([e01, b, e12]),
        np.column_stack([e20, e12, c]),
        np.column_stack([e01, e12, e20]),
    ])
    kind, domain, h, grading, angle = mesh.provenance
    return _finalize(mesh.domain, new_nodes, new_tris, mesh.h_target / 2.0,
                     mesh.grading, (kind, domain, h / 2.0, grading, angle))


def mesh_ladder(mesh0: TriMesh, levels: int) -> list[TriMesh]:
    """mesh0 plus ``levels - 1`` successive refinements."""
    out = [mesh0]
    for _ in range(levels - 1):
        out.append(refine_uniform(out[-1]))
    return out


# ---------------------------------------------------------------------
# boundary trace space

@dataclass
class BoundaryTrace:
    """Ordered boundary-node structure of a mesh.

    Nodes are listed counterclockwise starting at polygon corner 0.
    ``mass`` is the cyclic piecewise-linear boundary mass matrix,
    ``lumped`` its row sums.  ``side_of_segment[i]`` tags the segment
    from node i to node i+1; ``arc[i]`` is the cumulative arclength.
    """

    node_ids: np.ndarray
    points: np.ndarray
    seg_lengths: np.ndarray
    side_of_segment: np.ndarray
    arc: np.ndarray
    corner_pos: dict
    mass: sp.csr_matrix
    lumped: np.ndarray
    full_to_trace: np.ndarray

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def side_positions(self, j: int) -> np.ndarray:
        """Trace positions of side j's nodes, corner j through corner j+1."""
        M = len(self.corner_pos)
        a = self.corner_pos[j]
        b = self.corner_pos[(j + 1) % M]
        if b <= a:
            b += self.n
        return np.arange(a, b + 1) % self.n

    def perimeter(self) -> float:
        return float(self.seg_lengths.sum())


def boundary_trace_space(mesh: TriMesh) -> BoundaryTrace:
    if mesh._trace is not None:
        return mesh._trace
    nxt = {}
    side_of = {}
    for (a, b, s) in mesh.boundary_edges:
        nxt[int(a)] = int(b)
        side_of[int(a)] = int(s)
    start = mesh.corner_nodes[0]
    order = [start]
    cur = nxt[start]
    while cur != start:
        order.append(cur)
        cur = nxt[cur]
    ids = np.array(order, dtype=np.int64)
    pts = mesh.nodes[ids]
    nb = len(ids)
    seg = np.linalg.norm(mesh.nodes[[nxt[i] for i in order]] - pts, axis=1)
    sides = np.array([side_of[i] for i in order], dtype=np.int64)
    arc = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    pos_of = {nid: k for k, nid in enumerate(order)}
    corner_pos = {j: pos_of[nid] for j, nid in mesh.corner_nodes.items()}

    rows, cols, vals = [], [], []
    for i in range(nb):
        k = (i + 1) % nb
        L = seg[i]
        rows += [i, i, k, k]
        cols += [i, k, i, k]
        vals += [L / 3.0, L / 6.0, L / 6.0, L / 3.0]
    mass = sp.csr_matrix((vals, (rows, cols)), shape=(nb, nb))
    lumped = np.asarray(mass.sum(axis=1)).ravel()
    full_to_trace = -np.ones(mesh.n_nodes, dtype=np.int64)
    full_to_trace[ids] = np.arange(nb)
    trace = BoundaryTrace(node_ids=ids, points=pts, seg_lengths=seg,
                          side_of_segment=sides, arc=arc,
                          corner_pos=corner_pos, mass=mass, lumped=lumped,
                          full_to_trace=full_to_trace)
    mesh._trace = trace
    return trace
