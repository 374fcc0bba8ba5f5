"""Mesh generation: structured lattices, Delaunay, grading, boundary traces."""

import math

import numpy as np
import pytest

from dclab.geometry import (
    L_SHAPE_REENTRANT_CORNER,
    build_domain,
    l_shape,
    unit_square,
)
from dclab.meshing import (
    MIN_ANGLE_DEG,
    MeshError,
    boundary_trace_space,
    mesh_ladder,
    refine_uniform,
    structured_mesh,
    triangulate,
)


def _check_invariants(mesh):
    areas = mesh.triangle_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(mesh.domain.area, rel=1e-12)
    assert mesh.min_angle >= MIN_ANGLE_DEG - 1e-9
    # every polygon vertex is a mesh node
    for j, nid in mesh.corner_nodes.items():
        assert np.allclose(mesh.nodes[nid], mesh.domain.vertices[j])


# ---------------------------------------------------------------------
# structured lattices

def test_structured_square():
    mesh = structured_mesh(unit_square(), 0.5)
    assert mesh.n_nodes == 9
    assert mesh.n_triangles == 8
    assert mesh.nonobtuse
    assert mesh.min_angle == pytest.approx(45.0)
    _check_invariants(mesh)


def test_structured_l_shape():
    mesh = structured_mesh(l_shape(), 0.125)
    assert mesh.n_nodes == 225
    assert mesh.nonobtuse
    _check_invariants(mesh)


def test_structured_needs_dividing_h():
    with pytest.raises(MeshError):
        structured_mesh(unit_square(), 0.3)
    with pytest.raises(MeshError):
        structured_mesh(build_domain("sector(3pi/2, 16)"), 0.25)


# ---------------------------------------------------------------------
# unstructured Delaunay

@pytest.mark.parametrize("name,h", [("unit-square", 0.11), ("l-shape", 0.13)])
def test_triangulate_quality(name, h):
    dom = build_domain(name)
    mesh = triangulate(dom, h)
    _check_invariants(mesh)
    # actual max edge length stays near the target
    assert mesh.h <= 2.0 * h


def test_triangulate_sector():
    dom = build_domain("sector(3pi/2, 32)")
    mesh = triangulate(dom, 0.1)
    _check_invariants(mesh)


def test_sector_mesh_symmetric_about_bisector():
    dom = build_domain("sector(3pi/2, 64)")
    bis = 0.75 * math.pi
    mesh = triangulate(dom, 0.08, lattice_angle=bis)
    c, s = math.cos(bis), math.sin(bis)
    pts = mesh.nodes
    refl = np.column_stack([
        (c * c - s * s) * pts[:, 0] + 2 * c * s * pts[:, 1],
        2 * c * s * pts[:, 0] - (c * c - s * s) * pts[:, 1],
    ])
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(pts).query(refl)
    assert dist.max() < 1e-9


def test_triangulate_rejects_bad_input():
    with pytest.raises(MeshError):
        triangulate(unit_square(), -0.1)
    with pytest.raises(MeshError):
        triangulate(l_shape(), 0.25, grading={2: 1.5})
    with pytest.raises(MeshError):
        triangulate(l_shape(), 0.25, grading={17: 0.5})


# ---------------------------------------------------------------------
# refinement

def test_red_refinement_counts():
    mesh = structured_mesh(unit_square(), 0.25)
    fine = refine_uniform(mesh)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.h == pytest.approx(0.5 * mesh.h)
    assert fine.nonobtuse
    _check_invariants(fine)


def test_red_refinement_keeps_boundary_on_polygon():
    mesh = triangulate(l_shape(), 0.23)
    fine = refine_uniform(mesh)
    _check_invariants(fine)
    bn = fine.nodes[fine.boundary_node_ids()]
    dom = fine.domain
    for p in bn:
        d = min(_seg_dist(p, *dom.side(j)) for j in range(len(dom)))
        assert d < 1e-12


def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def test_mesh_ladder():
    ladder = mesh_ladder(structured_mesh(unit_square(), 0.5), 3)
    assert len(ladder) == 3
    assert [m.h_target for m in ladder] == pytest.approx(
        [0.5 * 2.0**-k for k in range(3)])
    # actual mesh size halves too
    assert [m.h for m in ladder] == pytest.approx(
        [ladder[0].h * 2.0**-k for k in range(3)])


# ---------------------------------------------------------------------
# grading

@pytest.mark.parametrize("mu", [2.0 / 3.0, 0.5, 1.0 / 3.0])
def test_graded_first_layer_law(mu):
    dom = l_shape()
    j = L_SHAPE_REENTRANT_CORNER
    R = dom.corners[j].radius
    h = 1.0 / 16.0
    mesh = triangulate(dom, h, grading={j: mu})
    _check_invariants(mesh)
    d = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1])
    bn = mesh.boundary_node_ids()
    onx = bn[(np.abs(mesh.nodes[bn, 1]) < 1e-12) & (mesh.nodes[bn, 0] > 1e-12)]
    r1 = d[onx].min()
    law = h ** (1.0 / mu) * R ** (1.0 - 1.0 / mu)
    # the innermost layer obeys the law up to the bounded truncation factor
    assert law * 0.99 <= r1 <= math.e * law


def test_graded_layer_spacing_follows_power_law():
    # boundary spacing ~ h (r/R)^(1-mu) away from the innermost cell
    dom = l_shape()
    j = L_SHAPE_REENTRANT_CORNER
    R = dom.corners[j].radius
    h, mu = 1.0 / 32.0, 0.5
    mesh = triangulate(dom, h, grading={j: mu})
    bn = mesh.boundary_node_ids()
    onx = bn[(np.abs(mesh.nodes[bn, 1]) < 1e-12) & (mesh.nodes[bn, 0] > 1e-12)]
    rr = np.sort(np.hypot(*mesh.nodes[onx].T))
    rr = rr[rr < R - 1e-12]
    gaps = np.diff(rr)
    mids = 0.5 * (rr[1:] + rr[:-1])
    want = h * (mids / R) ** (1.0 - mu)
    assert np.all(gaps < 1.3 * want) and np.all(gaps > 0.7 * want)


def test_graded_refinement_stays_graded():
    dom = l_shape()
    j = L_SHAPE_REENTRANT_CORNER
    mesh = triangulate(dom, 1.0 / 16.0, grading={j: 0.5})
    fine = refine_uniform(mesh)
    _check_invariants(fine)
    assert fine.h_target == pytest.approx(1.0 / 32.0)
    d = np.hypot(fine.nodes[:, 0], fine.nodes[:, 1])
    bn = fine.boundary_node_ids()
    onx = bn[(np.abs(fine.nodes[bn, 1]) < 1e-12) & (fine.nodes[bn, 0] > 1e-12)]
    R = dom.corners[j].radius
    law = (1.0 / 32.0) ** 2 * R ** (-1.0)
    assert d[onx].min() == pytest.approx(law, rel=1e-9)


# ---------------------------------------------------------------------
# boundary trace

def test_trace_square():
    mesh = structured_mesh(unit_square(), 0.25)
    tr = boundary_trace_space(mesh)
    assert tr.perimeter() == pytest.approx(4.0)
    assert tr.n == 16
    # starts at corner 0 and walks counterclockwise
    assert np.allclose(tr.points[0], (0.0, 0.0))
    assert tr.corner_pos[0] == 0
    assert np.all(np.diff(tr.arc) > 0)
    # mass matrix: total mass is the perimeter, rows sum to the lumped mass
    assert tr.mass.sum() == pytest.approx(4.0)
    assert np.allclose(np.asarray(tr.mass.sum(axis=1)).ravel(), tr.lumped)


def test_trace_side_positions():
    mesh = structured_mesh(unit_square(), 0.25)
    tr = boundary_trace_space(mesh)
    pos = tr.side_positions(0)
    assert len(pos) == 5  # both corners included
    pts = tr.points[pos]
    assert np.allclose(pts[:, 1], 0.0)
    assert np.all(np.diff(pts[:, 0]) > 0)
    # segment side tags partition the loop
    assert set(tr.side_of_segment.tolist()) == {0, 1, 2, 3}


def test_trace_l_shape_perimeter():
    mesh = triangulate(l_shape(), 0.2)
    tr = boundary_trace_space(mesh)
    assert tr.perimeter() == pytest.approx(8.0)
    # full_to_trace inverts node_ids
    assert np.all(tr.full_to_trace[tr.node_ids] == np.arange(tr.n))
