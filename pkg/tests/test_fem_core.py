"""
=============================================================================
BUBBLEFEM - P1 CORE TEST SUITE
=============================================================================
Quadrature exactness, assembly identities, linear solves and norms.
=============================================================================
"""

import logging
import math

import numpy as np
import pytest

from bubblefem.errors import CoefficientBoundsError, LinearSolverError, MeshError
from bubblefem.fem_core import (
    DiscreteFunction,
    SolverMethod,
    assemble_load,
    assemble_mass,
    assemble_system,
    assemble_weighted_stiffness,
    choose_quad_order,
    error_norms,
    h1_seminorm,
    kappa_at_quadrature,
    l2_norm,
    quad_rule,
    solve_spd,
)
from bubblefem.mesh import CoarseMesh, generate_structured


# =============================================================================
# TEST DATA
# =============================================================================

REFERENCE = CoarseMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def _monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle"""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


# =============================================================================
# QUADRATURE
# =============================================================================

@pytest.mark.parametrize("order", [1, 2, 4])
def test_rule_integrates_polynomials_of_its_degree(order):
    rule = quad_rule(order)
    assert rule.weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(rule.points.sum(axis=1), 1.0)
    pts = REFERENCE.quadrature_points(rule.points)[0]
    for a in range(order + 1):
        for b in range(order + 1 - a):
            approx = 0.5 * np.sum(rule.weights * pts[:, 0] ** a * pts[:, 1] ** b)
            assert approx == pytest.approx(_monomial_integral(a, b), rel=1e-12)


def test_unsupported_order():
    with pytest.raises(ValueError):
        quad_rule(3)


def test_quad_order_for_smooth_fields():
    assert choose_quad_order(math.inf, 0.5) == 2
    assert choose_quad_order(math.inf, 0.5, default=1) == 1


def test_quad_order_raised_for_fast_oscillation(caplog):
    with caplog.at_level(logging.WARNING, logger="bubblefem.fem_core"):
        assert choose_quad_order(0.1, 0.2) == 4
    assert "under-resolved" in caplog.text


def test_quad_order_quiet_when_asked(caplog):
    with caplog.at_level(logging.WARNING, logger="bubblefem.fem_core"):
        assert choose_quad_order(0.1, 0.2, warn=False) == 4
    assert caplog.text == ""


def test_quad_order_resolved_mesh(caplog):
    with caplog.at_level(logging.WARNING, logger="bubblefem.fem_core"):
        assert choose_quad_order(0.1, 0.01) == 2
    assert caplog.text == ""


# =============================================================================
# DISCRETE FUNCTIONS
# =============================================================================

def test_discrete_function_checks_size(mesh2):
    with pytest.raises(MeshError):
        DiscreteFunction(mesh2, np.zeros(3))


def test_linear_function_gradients_and_evaluation(mesh4):
    u = DiscreteFunction(mesh4, 3.0 * mesh4.nodes[:, 0] - mesh4.nodes[:, 1])
    np.testing.assert_allclose(u.gradients(), np.tile([3.0, -1.0], (mesh4.n_triangles, 1)), atol=1e-12)
    values = u.evaluate(np.array([[0.2, 0.7], [1.5, 0.5]]))
    assert values[0] == pytest.approx(3.0 * 0.2 - 0.7)
    assert np.isnan(values[1])


# =============================================================================
# ASSEMBLY
# =============================================================================

def test_stiffness_is_symmetric_and_annihilates_constants(mesh4, wavy_alpha):
    A = assemble_weighted_stiffness(mesh4, wavy_alpha)
    assert abs(A - A.T).max() < 1e-14
    np.testing.assert_allclose(A @ np.ones(mesh4.n_nodes), 0.0, atol=1e-13)
    assert (A.diagonal() > 0).all()


def test_stiffness_energy_of_linear_function(mesh4):
    x = mesh4.nodes[:, 0]
    A = assemble_weighted_stiffness(mesh4, 2.0)
    assert x @ (A @ x) == pytest.approx(2.0)


def test_five_point_stencil_on_structured_mesh(mesh2):
    A = assemble_weighted_stiffness(mesh2, 1.0).toarray()
    center = 4
    assert A[center, center] == pytest.approx(4.0)
    assert sorted(np.round(A[center], 12)) == [-1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 4.0]


def test_mass_and_load_integrate_area(mesh4):
    M = assemble_mass(mesh4)
    assert M.sum() == pytest.approx(1.0)
    assert assemble_load(mesh4, 1.0).sum() == pytest.approx(1.0)
    x = mesh4.nodes[:, 0]
    assert assemble_load(mesh4, lambda px, py: px).sum() == pytest.approx(0.5)
    assert np.ones(mesh4.n_nodes) @ (M @ x) == pytest.approx(0.5)


def test_non_positive_coefficient_is_fatal(mesh2):
    with pytest.raises(CoefficientBoundsError, match="coercivity"):
        assemble_weighted_stiffness(mesh2, lambda x, y: x - 0.5)


def test_kappa_shape_is_checked(mesh2):
    with pytest.raises(ValueError):
        kappa_at_quadrature(mesh2, np.ones((3, 3)), quad_rule(2))


def test_dirichlet_elimination(mesh4):
    system = assemble_system(mesh4, 1.0, 1.0)
    assert system.matrix.shape == (9, 9)
    assert len(system.rhs) == 9
    full = system.expand(np.arange(9.0))
    assert (full[mesh4.boundary_nodes] == 0).all()
    np.testing.assert_array_equal(full[mesh4.free_nodes], np.arange(9.0))


def test_reduced_matrix_is_coercive(mesh4, sharp_alpha):
    system = assemble_system(mesh4, sharp_alpha, 1.0)
    rng = np.random.default_rng(7)
    for _ in range(20):
        v = rng.standard_normal(system.matrix.shape[0])
        assert v @ (system.matrix @ v) > 0


# =============================================================================
# LINEAR SOLVES
# =============================================================================

@pytest.mark.parametrize("method", ["cg", "direct", "dense"])
def test_single_free_node_solution(mesh2, method):
    # 5-point stencil: 4 u_c = (1, phi_c) = 1/4
    system = assemble_system(mesh2, 1.0, 1.0)
    x = solve_spd(system, method=method)
    assert x.shape == (1,)
    assert x[0] == pytest.approx(1.0 / 16.0)


def test_solvers_agree(wavy_alpha):
    mesh = generate_structured(12)
    system = assemble_system(mesh, wavy_alpha, lambda x, y: np.sin(3 * x) + y)
    x_cg = solve_spd(system, tol=1e-12, method="cg")
    x_lu = solve_spd(system, method="direct")
    x_ch = solve_spd(system, method="dense")
    np.testing.assert_allclose(x_cg, x_lu, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(x_ch, x_lu, rtol=1e-10, atol=1e-14)


def test_zero_rhs_short_circuits(mesh4):
    system = assemble_system(mesh4, 1.0, 0.0)
    np.testing.assert_array_equal(solve_spd(system), np.zeros(9))


def test_cg_failure_is_reported():
    system = assemble_system(generate_structured(16), 1.0, 1.0)
    with pytest.raises(LinearSolverError) as info:
        solve_spd(system, tol=1e-14, max_iter=1, method="cg")
    assert info.value.residual > 1e-14


def test_unknown_method(mesh4):
    with pytest.raises(ValueError, match="unknown solver method"):
        solve_spd(assemble_system(mesh4, 1.0, 1.0), method="gmres")


def test_method_accepts_enum_members(mesh2):
    system = assemble_system(mesh2, 1.0, 1.0)
    for method in SolverMethod:
        assert solve_spd(system, method=method)[0] == pytest.approx(1.0 / 16.0)
    assert SolverMethod("direct") is SolverMethod.DIRECT


# =============================================================================
# NORMS
# =============================================================================

def test_norms_of_simple_functions(mesh4):
    assert h1_seminorm(DiscreteFunction(mesh4, mesh4.nodes[:, 0])) == pytest.approx(1.0)
    assert l2_norm(DiscreteFunction(mesh4, np.ones(mesh4.n_nodes))) == pytest.approx(1.0)
    assert l2_norm(DiscreteFunction(mesh4, mesh4.nodes[:, 1])) == pytest.approx(1.0 / math.sqrt(3.0))


def test_error_norms_vanish_for_exactly_represented_function(mesh4):
    u = DiscreteFunction(mesh4, mesh4.nodes[:, 0] + mesh4.nodes[:, 1])
    exact = lambda x, y: x + y
    grad = lambda x, y: np.stack(np.broadcast_arrays(np.ones_like(x), np.ones_like(y)), axis=-1)
    l2, h1 = error_norms(u, exact, grad)
    assert l2 < 1e-14
    assert h1 < 1e-12


def test_error_norms_need_degree_two():
    u = DiscreteFunction.zero(REFERENCE)
    with pytest.raises(ValueError):
        error_norms(u, lambda x, y: x, lambda x, y: x, rule=quad_rule(1))


def test_galerkin_poisson_converges():
    exact = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    grad = lambda x, y: np.pi * np.stack(
        [np.cos(np.pi * x) * np.sin(np.pi * y), np.sin(np.pi * x) * np.cos(np.pi * y)], axis=-1
    )
    f = lambda x, y: 2 * np.pi ** 2 * exact(x, y)
    errors = []
    for n in (8, 16):
        mesh = generate_structured(n)
        system = assemble_system(mesh, 1.0, f)
        u = DiscreteFunction(mesh, system.expand(solve_spd(system, method="direct")))
        errors.append(error_norms(u, exact, grad))
    assert errors[0][0] / errors[1][0] > 3.5
    assert errors[0][1] / errors[1][1] > 1.8
