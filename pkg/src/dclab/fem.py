"""P1 finite elements on triangular meshes.

Assembly of stiffness/mass matrices, Dirichlet solves with a cached
interior factorization, variational normal-derivative (flux) recovery on
the boundary trace, triangle quadrature with optional subdivision along a
discontinuity line, error norms, and a discrete maximum-principle check.

The variational flux is the discrete outward normal derivative d solving

    M_Gamma d = (A z - ell) restricted to boundary nodes,

which is the exact distributional normal derivative of the finite element
function z with volume load ell.  With ``lumped=True`` the boundary mass
M_Gamma is replaced by its row sums; this keeps the recovery strictly
local and makes the discrete optimality system close exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshing import TriMesh, boundary_trace_space


class FemError(RuntimeError):
    pass


# ---------------------------------------------------------------------
# quadrature

#: barycentric points and weights, exact for polynomials of degree 2
TRI_QUAD_3 = (
    np.array([
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]),
    np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
)

_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
#: degree-5 rule (7 points)
TRI_QUAD_7 = (
    np.array([
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
        [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
    ]),
    np.array([0.225,
              0.132394152788506, 0.132394152788506, 0.132394152788506,
              0.125939180544827, 0.125939180544827, 0.125939180544827]),
)


def tri_quadrature(order: int):
    """Barycentric quadrature rule exact to the given polynomial degree."""
    if order <= 2:
        return TRI_QUAD_3
    if order <= 5:
        return TRI_QUAD_7
    raise FemError("quadrature orders above 5 are not provided")


# ---------------------------------------------------------------------
# assembly

def assemble_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    """P1 stiffness matrix; K_ij = (e_i . e_j) / (4 |T|) elementwise."""
    p, t = mesh.nodes, mesh.triangles
    p0, p1, p2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    # edge vectors opposite each vertex
    E = np.stack([p2 - p1, p0 - p2, p1 - p0], axis=1)
    u, v = p1 - p0, p2 - p0
    area = 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
    ke = np.einsum("tid,tjd->tij", E, E) / (4.0 * area)[:, None, None]
    ii = t[:, [0, 0, 0, 1, 1, 1, 2, 2, 2]].ravel()
    jj = t[:, [0, 1, 2, 0, 1, 2, 0, 1, 2]].ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((ke.ravel(), (ii, jj)), shape=(n, n)).tocsr()


def assemble_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix (exact)."""
    t = mesh.triangles
    area = mesh.triangle_areas()
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = area[:, None, None] * base[None, :, :]
    ii = t[:, [0, 0, 0, 1, 1, 1, 2, 2, 2]].ravel()
    jj = t[:, [0, 1, 2, 0, 1, 2, 0, 1, 2]].ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((me.ravel(), (ii, jj)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class DiscontinuityLine:
    """A straight line p . normal = point . normal across which integrands
    may jump; triangles crossed by it are subdivided before quadrature."""

    point: tuple
    normal: tuple

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        nrm = np.asarray(self.normal, dtype=float)
        nrm = nrm / np.linalg.norm(nrm)
        return (np.atleast_2d(pts) - np.asarray(self.point)) @ nrm


def _clip_triangle(tri: np.ndarray, line: DiscontinuityLine):
    """Split a 3x2 triangle along the line into sub-triangles (1 to 3)."""
    d = line.signed_distance(tri)
    if np.all(d >= -1e-14) or np.all(d <= 1e-14):
        return [tri]
    polys = {1: [], -1: []}
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        da, db = d[k], d[(k + 1) % 3]
        sa = 1 if da >= 0 else -1
        polys[sa].append(a)
        if (da > 0 > db) or (da < 0 < db):
            cut = a + (da / (da - db)) * (b - a)
            polys[1].append(cut)
            polys[-1].append(cut)
    out = []
    for side in (1, -1):
        poly = polys[side]
        for k in range(1, len(poly) - 1):
            out.append(np.array([poly[0], poly[k], poly[k + 1]]))
    return out


def assemble_load(mesh: TriMesh, f, order: int = 2,
                  discontinuity: DiscontinuityLine | None = None) -> np.ndarray:
    """Load vector ell_i = int f phi_i via triangle quadrature.

    ``f`` maps (x, y) arrays to values.  With a discontinuity line the
    crossed triangles are clipped so the rule never straddles the jump.
    """
    bary, w = tri_quadrature(order)
    p, t = mesh.nodes, mesh.triangles
    out = np.zeros(mesh.n_nodes)

    crossed = np.zeros(len(t), dtype=bool)
    if discontinuity is not None:
        d = discontinuity.signed_distance(p)[t]
        crossed = (d.max(axis=1) > 1e-14) & (d.min(axis=1) < -1e-14)

    def accumulate(tsel):
        corners = p[tsel]  # (nt, 3, 2)
        u = corners[:, 1] - corners[:, 0]
        v = corners[:, 2] - corners[:, 0]
        area = 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        for lam, wq in zip(bary, w):
            xq = np.einsum("k,tkd->td", lam, corners)
            fv = np.asarray(f(xq[:, 0], xq[:, 1]), dtype=float)
            for k in range(3):
                np.add.at(out, tsel[:, k], wq * area * fv * lam[k])

    if np.any(~crossed):
        accumulate(t[~crossed])
    for ti in np.where(crossed)[0]:
        tri = p[t[ti]]
        vids = t[ti]
        for sub in _clip_triangle(tri, discontinuity):
            u, v = sub[1] - sub[0], sub[2] - sub[0]
            area = 0.5 * (u[0] * v[1] - u[1] * v[0])
            if area <= 0:
                sub = sub[[0, 2, 1]]
                area = -area
            if area < 1e-30:
                continue
            for lam, wq in zip(bary, w):
                xq = lam @ sub
                fv = float(np.asarray(
                    f(np.array([xq[0]]), np.array([xq[1]]))).ravel()[0])
                # P1 hats of the parent triangle evaluated at xq
                lam_par = _barycentric(tri, xq)
                out[vids] += wq * area * fv * lam_par
    return out


def _barycentric(tri: np.ndarray, x: np.ndarray) -> np.ndarray:
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    ab = np.linalg.solve(T, x - tri[0])
    return np.array([1.0 - ab[0] - ab[1], ab[0], ab[1]])


# ---------------------------------------------------------------------
# fields and systems

@dataclass
class ScalarField:
    """Nodal P1 function."""

    mesh: TriMesh
    values: np.ndarray

    def boundary_values(self) -> np.ndarray:
        tr = boundary_trace_space(self.mesh)
        return self.values[tr.node_ids]


class FemSystem:
    """Assembled operators of a mesh plus a cached interior factorization.

    Attributes: A (stiffness), M (mass), trace (boundary structure),
    interior/boundary index arrays.  The LU factorization of the interior
    block A_II is computed on first use and reused by every solve.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.trace = boundary_trace_space(mesh)
        self.A = assemble_stiffness(mesh)
        self.M = assemble_mass(mesh)
        self.bnd = self.trace.node_ids
        mask = np.ones(mesh.n_nodes, dtype=bool)
        mask[self.bnd] = False
        self.itr = np.where(mask)[0]
        self._aii = self.A[self.itr][:, self.itr].tocsc()
        self._aib = self.A[self.itr][:, self.bnd].tocsr()
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self._aii)
        return self._lu

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


def _boundary_values_from(system: FemSystem, g, bc_mode: str) -> np.ndarray:
    tr = system.trace
    if callable(g):
        pts = tr.points
        vals = np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float)
        if bc_mode == "interpolate":
            return vals
        if bc_mode == "l2project":
            # 2-point Gauss per segment against the trace hat functions
            n = tr.n
            rhs = np.zeros(n)
            s3 = 1.0 / math.sqrt(3.0)
            for i in range(n):
                k = (i + 1) % n
                a, b = pts[i], pts[k]
                L = tr.seg_lengths[i]
                for xi in (-s3, s3):
                    lam = 0.5 * (1.0 + xi)
                    q = a + lam * (b - a)
                    gv = float(np.asarray(g(np.array([q[0]]),
                                            np.array([q[1]]))).ravel()[0])
                    rhs[i] += 0.5 * L * gv * (1.0 - lam)
                    rhs[k] += 0.5 * L * gv * lam
            return spla.spsolve(tr.mass.tocsc(), rhs)
        raise FemError(f"unknown bc_mode {bc_mode!r}")
    vals = np.asarray(g, dtype=float)
    if vals.shape != (tr.n,):
        raise FemError(f"boundary data must have length {tr.n}")
    return vals


def solve_dirichlet(system: FemSystem, g, f=None, load: np.ndarray | None = None,
                    bc_mode: str = "interpolate") -> ScalarField:
    """Solve -Lap y = f with y = g on the boundary.

    ``g`` is a callable or an array over trace nodes (counterclockwise
    trace order).  The volume load may be given as a callable ``f`` or a
    preassembled vector ``load``.
    """
    gb = _boundary_values_from(system, g, bc_mode)
    if load is None:
        if f is None:
            ell = np.zeros(system.mesh.n_nodes)
        else:
            ell = assemble_load(system.mesh, f)
    else:
        ell = np.asarray(load, dtype=float)
    rhs = ell[system.itr] - system._aib @ gb
    yi = system.solve_interior(rhs)
    vals = np.empty(system.mesh.n_nodes)
    vals[system.itr] = yi
    vals[system.bnd] = gb
    return ScalarField(system.mesh, vals)


def variational_normal_derivative(system: FemSystem, z, load=None,
                                  lumped: bool = True) -> np.ndarray:
    """Discrete outward normal derivative of z on the boundary trace.

    ``z`` is a ScalarField or nodal array solving -Lap z = load (weakly
    against interior hats).  Returns the flux in trace order.
    """
    vals = z.values if isinstance(z, ScalarField) else np.asarray(z, dtype=float)
    res = system.A @ vals
    if load is not None:
        res = res - np.asarray(load, dtype=float)
    res_b = res[system.bnd]
    if lumped:
        return res_b / system.trace.lumped
    return spla.spsolve(system.trace.mass.tocsc(), res_b)


# ---------------------------------------------------------------------
# norms and checks

def l2_norm(mesh: TriMesh, vals, exact=None, order: int = 5) -> float:
    """L2 norm of the P1 function, or of its error against ``exact``."""
    bary, w = tri_quadrature(order)
    p, t = mesh.nodes, mesh.triangles
    corners = p[t]
    area = mesh.triangle_areas()
    v = np.asarray(vals, dtype=float)[t]  # (nt, 3)
    total = 0.0
    for lam, wq in zip(bary, w):
        uh = v @ lam
        if exact is not None:
            xq = np.einsum("k,tkd->td", lam, corners)
            uh = uh - np.asarray(exact(xq[:, 0], xq[:, 1]), dtype=float)
        total += wq * float(np.sum(area * uh * uh))
    return math.sqrt(total)


def h1_seminorm(mesh: TriMesh, vals, grad_exact=None, order: int = 5) -> float:
    """H1 seminorm of the P1 function, or of its error against an exact
    gradient ``grad_exact(x, y) -> (gx, gy)``."""
    p, t = mesh.nodes, mesh.triangles
    p0, p1, p2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    area = mesh.triangle_areas()
    v = np.asarray(vals, dtype=float)
    # gradient of P1: sum_i v_i grad lam_i, constant per triangle
    E = np.stack([p2 - p1, p0 - p2, p1 - p0], axis=1)
    perp = np.stack([-E[:, :, 1], E[:, :, 0]], axis=2)  # rotate edges by 90 deg
    gh = np.einsum("tk,tkd->td", v[t], perp) / (2.0 * area)[:, None]
    if grad_exact is None:
        return math.sqrt(float(np.sum(area * (gh * gh).sum(axis=1))))
    bary, w = tri_quadrature(order)
    corners = p[t]
    total = 0.0
    for lam, wq in zip(bary, w):
        xq = np.einsum("k,tkd->td", lam, corners)
        gx, gy = grad_exact(xq[:, 0], xq[:, 1])
        ex = gh[:, 0] - np.asarray(gx, dtype=float)
        ey = gh[:, 1] - np.asarray(gy, dtype=float)
        total += wq * float(np.sum(area * (ex * ex + ey * ey)))
    return math.sqrt(total)


def boundary_l2(trace, vals) -> float:
    """L2(Gamma) norm of a trace-order nodal function."""
    v = np.asarray(vals, dtype=float)
    return math.sqrt(float(v @ (trace.mass @ v)))


@dataclass(frozen=True)
class MaxPrincipleReport:
    interior_min: float
    interior_max: float
    boundary_min: float
    boundary_max: float
    violation: float
    satisfied: bool


def check_max_principle(system: FemSystem, field, tol: float = 1e-10) -> MaxPrincipleReport:
    """Discrete maximum principle: interior range within boundary range."""
    vals = field.values if isinstance(field, ScalarField) else np.asarray(field)
    vi = vals[system.itr]
    vb = vals[system.bnd]
    if len(vi) == 0:
        vi = vb
    bmin, bmax = float(vb.min()), float(vb.max())
    imin, imax = float(vi.min()), float(vi.max())
    viol = max(0.0, bmin - imin, imax - bmax)
    return MaxPrincipleReport(interior_min=imin, interior_max=imax,
                              boundary_min=bmin, boundary_max=bmax,
                              violation=viol, satisfied=bool(viol <= tol))
