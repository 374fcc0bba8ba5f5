"""Boundary-control solver: objective, gradient, PDAS, optimality."""

import numpy as np
import pytest
from scipy.spatial import cKDTree

from dclab.geometry import UNBOUNDED, l_shape, unit_square
from dclab.meshing import structured_mesh, triangulate
from dclab.fem import FemSystem, check_max_principle
from dclab.control import (
    CallableTarget,
    ConstantTarget,
    ControlError,
    ControlProblem,
    KKT_TOL,
    NodalTarget,
    solve_constrained,
    solve_unconstrained,
    _projected_gradient,
)


@pytest.fixture(scope="module")
def square_system():
    return FemSystem(structured_mesh(unit_square(), 1.0 / 16.0))


@pytest.fixture(scope="module")
def wavy_problem(square_system):
    target = CallableTarget(lambda x, y: np.exp(x) * np.sin(2.0 * y))
    return ControlProblem(square_system, nu=0.1, target=target)


# ---------------------------------------------------------------------
# objective and gradient

def test_objective_trivial_values(square_system):
    nb = square_system.trace.n
    p = ControlProblem(square_system, nu=0.5, target=ConstantTarget(0.0))
    assert p.objective(np.zeros(nb)) == 0.0
    # u = 1 gives the harmonic state y = 1: J = 1/2 |Omega| + nu/2 |Gamma|
    assert p.objective(np.ones(nb)) == pytest.approx(0.5 + 0.25 * 4.0, rel=1e-12)


def test_objective_constant_target(square_system):
    nb = square_system.trace.n
    p = ControlProblem(square_system, nu=1.0, target=ConstantTarget(2.0))
    # u = 0: y = 0, J = 1/2 * 4 * |Omega|
    assert p.objective(np.zeros(nb)) == pytest.approx(2.0, rel=1e-12)
    # u = 2: y = 2 matches the target exactly, only the penalty remains
    assert p.objective(2.0 * np.ones(nb)) == pytest.approx(0.5 * 4.0 * 4.0, rel=1e-12)


def test_gradient_matches_central_differences(wavy_problem):
    # J is quadratic, so central differences are exact up to roundoff
    p = wavy_problem
    nb = p.system.trace.n
    rng = np.random.default_rng(7)
    u = rng.normal(size=nb)
    g, _, _, _ = p.gradient(u)
    eps = 1e-5
    for i in rng.choice(nb, 10, replace=False):
        up, um = u.copy(), u.copy()
        up[i] += eps
        um[i] -= eps
        fd = (p.objective(up) - p.objective(um)) / (2.0 * eps)
        assert abs(fd - g[i]) < 1e-9


def test_hessian_apply_consistent_with_gradient(wavy_problem):
    # grad J(u) - grad J(0) = H u for a quadratic
    p = wavy_problem
    nb = p.system.trace.n
    rng = np.random.default_rng(3)
    u = rng.normal(size=nb)
    g_u, _, _, _ = p.gradient(u)
    g_0, _, _, _ = p.gradient(np.zeros(nb))
    hu = p.hessian_apply(u)
    assert np.abs(g_u - g_0 - hu).max() < 1e-12 * np.abs(g_u).max()


def test_problem_validation(square_system):
    with pytest.raises(ControlError):
        ControlProblem(square_system, nu=0.0, target=ConstantTarget(0.0))
    with pytest.raises(ControlError):
        ControlProblem(square_system, nu=1.0, target=ConstantTarget(0.0),
                       lower=1.0, upper=-1.0)
    with pytest.raises(ControlError):
        ControlProblem(square_system, nu=1.0, target=NodalTarget(np.zeros(3)))
    with pytest.raises(ControlError):
        ControlProblem(square_system, nu=1.0, target="flat")


# ---------------------------------------------------------------------
# unconstrained solves

def test_unconstrained_nodewise_optimality(wavy_problem):
    sol = solve_unconstrained(wavy_problem)
    assert sol.converged
    # the discrete optimality system closes exactly: u = d/nu nodewise
    assert np.abs(sol.u - sol.flux / wavy_problem.nu).max() < KKT_TOL
    assert sol.kkt.satisfied


def test_infinite_bounds_dispatch_to_unconstrained(square_system):
    target = CallableTarget(lambda x, y: np.exp(x) * np.sin(2.0 * y))
    p_free = ControlProblem(square_system, nu=0.1, target=target)
    p_inf = ControlProblem(square_system, nu=0.1, target=target,
                           lower=-UNBOUNDED, upper=UNBOUNDED)
    assert np.allclose(solve_unconstrained(p_free).u,
                       solve_constrained(p_inf).u, atol=1e-12)


def test_wide_bounds_match_unconstrained(square_system):
    target = CallableTarget(lambda x, y: np.exp(x) * np.sin(2.0 * y))
    free = solve_unconstrained(
        ControlProblem(square_system, nu=0.1, target=target))
    wide = solve_constrained(
        ControlProblem(square_system, nu=0.1, target=target,
                       lower=-1e6, upper=1e6))
    assert np.abs(free.u - wide.u).max() < 1e-8
    assert not wide.active_lower.any() and not wide.active_upper.any()


# ---------------------------------------------------------------------
# constrained solves

@pytest.fixture(scope="module")
def boxed_problem(square_system):
    target = CallableTarget(lambda x, y: np.exp(x) * np.sin(2.0 * y))
    return ControlProblem(square_system, nu=0.08, target=target,
                          lower=-0.2, upper=0.25)


def test_pdas_converges_fast(boxed_problem):
    sol = solve_constrained(boxed_problem)
    assert sol.converged and sol.method == "pdas"
    assert sol.iterations <= 30
    assert sol.kkt.satisfied
    # constraints genuinely bite here
    assert sol.active_upper.sum() > 0


def test_pdas_independent_of_start(boxed_problem):
    rng = np.random.default_rng(11)
    s1 = solve_constrained(boxed_problem)
    s2 = solve_constrained(boxed_problem,
                           u0=rng.normal(size=boxed_problem.system.trace.n))
    assert np.abs(s1.u - s2.u).max() < 1e-8


def test_constrained_solution_is_projection_of_flux(boxed_problem):
    sol = solve_constrained(boxed_problem)
    proj = np.clip(sol.flux / boxed_problem.nu,
                   boxed_problem.lower, boxed_problem.upper)
    assert np.abs(sol.u - proj).max() < KKT_TOL
    assert np.all(sol.u >= boxed_problem.lower - 1e-14)
    assert np.all(sol.u <= boxed_problem.upper + 1e-14)


def test_active_bounds_have_correct_multiplier_sign(boxed_problem):
    sol = solve_constrained(boxed_problem)
    cand = sol.flux / boxed_problem.nu
    act = sol.active_upper
    assert np.all(cand[act] >= boxed_problem.upper[act] - 1e-10)
    inact = ~(sol.active_lower | sol.active_upper)
    assert np.abs(sol.u[inact] - cand[inact]).max() < KKT_TOL


def test_projected_gradient_is_monotone(boxed_problem):
    hist = []
    nb = boxed_problem.system.trace.n
    sol = _projected_gradient(boxed_problem, np.zeros(nb), hist, max_iter=150)
    Js = [h["pg_objective"] for h in hist if "pg_objective" in h]
    assert all(Js[i + 1] <= Js[i] + 1e-14 for i in range(len(Js) - 1))
    # reaches the PDAS optimum from above
    ref = solve_constrained(boxed_problem)
    assert sol.objective >= ref.objective - 1e-12
    assert sol.objective - ref.objective < 1e-6


def test_equivariance_under_lattice_symmetry(square_system):
    # the diagonal lattice is invariant under 180-degree rotation about
    # the center, so a symmetric target yields a symmetric control
    target = CallableTarget(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    p = ControlProblem(square_system, nu=0.2, target=target,
                       lower=-0.1, upper=0.3)
    sol = solve_constrained(p)
    pts = square_system.trace.points
    _, rot = cKDTree(pts).query(np.column_stack([1.0 - pts[:, 0],
                                                 1.0 - pts[:, 1]]))
    assert np.abs(sol.u - sol.u[rot]).max() < 1e-12
    assert sol.active_upper.sum() > 0


def test_optimal_state_satisfies_max_principle(square_system):
    target = CallableTarget(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    p = ControlProblem(square_system, nu=0.2, target=target,
                       lower=-0.1, upper=0.3)
    sol = solve_constrained(p)
    rep = check_max_principle(square_system, sol.y)
    assert rep.satisfied


def test_constrained_on_graded_l_shape():
    sysm = FemSystem(triangulate(l_shape(), 1.0 / 16.0, grading={2: 1.0 / 3.0}))
    p = ControlProblem(sysm, nu=0.05, target=ConstantTarget(1.0),
                       lower=-0.3, upper=0.4)
    sol = solve_constrained(p)
    assert sol.converged and sol.kkt.satisfied
    assert sol.active_upper.sum() > 0
    assert check_max_principle(sysm, sol.y).satisfied
    # the state cannot exceed the largest admissible boundary value
    assert sol.y.values.max() <= 0.4 + 1e-12


def test_source_term_lifting(square_system):
    # with a volume source and u = 0 the objective is the misfit of the
    # lifted state; gradient machinery must account for the source
    p = ControlProblem(square_system, nu=0.1, target=ConstantTarget(0.0),
                       source=lambda x, y: np.ones_like(x))
    nb = square_system.trace.n
    g, y, phi, d = p.gradient(np.zeros(nb))
    assert y.values.max() > 0.05  # roughly the torsion-like profile
    sol = solve_unconstrained(p)
    assert sol.kkt.satisfied
    # optimal u pulls the boundary down against the interior bump
    assert sol.u.mean() < 0.0
