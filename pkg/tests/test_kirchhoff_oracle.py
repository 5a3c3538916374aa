"""
=============================================================================
BUBBLEFEM - KIRCHHOFF ORACLE TEST SUITE
=============================================================================
Manufactured right-hand sides and the independent U = btilde(u) solution
path.
=============================================================================
"""

import numpy as np
import pytest

from bubblefem.coefficients import CoefficientField, make_constant_alpha, make_nonlinearity_constant
from bubblefem.fem_core import DiscreteFunction, error_norms, l2_norm
from bubblefem.kirchhoff_oracle import (
    manufacture_f,
    sinsin_solution,
    solve_kirchhoff,
    solve_transformed,
    zero_solution,
)
from bubblefem.mesh import generate_structured
from bubblefem.solvers import solve_fine_reference, solve_galerkin


# =============================================================================
# TEST DATA
# =============================================================================

POINTS = np.array([[0.1, 0.2], [0.5, 0.5], [0.33, 0.9], [0.77, 0.41]])
X, Y = POINTS[:, 0], POINTS[:, 1]


# =============================================================================
# MANUFACTURED LOADS
# =============================================================================

def test_laplacian_case_gives_the_classic_load(unit_alpha):
    b = make_nonlinearity_constant(1.0)
    f = sinsin_solution().rhs(unit_alpha, b)
    np.testing.assert_allclose(f(X, Y), 2 * np.pi ** 2 * np.sin(np.pi * X) * np.sin(np.pi * Y), rtol=1e-12)


def test_manufactured_load_matches_finite_differences(sharp_alpha, b_sin):
    exact = sinsin_solution(0.7)
    f = exact.rhs(sharp_alpha, b_sin)
    d = 1e-5

    def flux(x, y):
        kappa = sharp_alpha(x, y) * b_sin(exact.u(x, y))
        return kappa[..., None] * exact.grad(x, y)

    div = (
        (flux(X + d, Y)[:, 0] - flux(X - d, Y)[:, 0]) / (2 * d)
        + (flux(X, Y + d)[:, 1] - flux(X, Y - d)[:, 1]) / (2 * d)
    )
    np.testing.assert_allclose(f(X, Y), -div, rtol=1e-5, atol=1e-5)


def test_zero_solution_has_zero_load(sharp_alpha, b_sin):
    f = zero_solution().rhs(sharp_alpha, b_sin)
    np.testing.assert_array_equal(f(X, Y), 0.0)


def test_manufacturing_needs_a_gradient(b_sin):
    alpha = CoefficientField(evaluate=lambda x, y: 1.0 + 0 * x, alpha0=1.0, alpha1=1.0)
    with pytest.raises(ValueError, match="gradient"):
        sinsin_solution().rhs(alpha, b_sin)


# =============================================================================
# ORACLE SOLVES
# =============================================================================

def test_linear_case_matches_galerkin(wavy_alpha, tight):
    mesh = generate_structured(8)
    b = make_nonlinearity_constant(2.0)
    u_gal, _ = solve_galerkin(mesh, wavy_alpha, b, 1.0, tight)
    u_kir = solve_kirchhoff(mesh, wavy_alpha, b, 1.0, method="direct")
    np.testing.assert_allclose(u_kir.values, u_gal.values, atol=1e-13)


def test_transformed_problem_is_linear(wavy_alpha):
    mesh = generate_structured(6)
    U1 = solve_transformed(mesh, wavy_alpha, 1.0, method="direct")
    U3 = solve_transformed(mesh, wavy_alpha, 3.0, method="direct")
    np.testing.assert_allclose(U3.values, 3.0 * U1.values, rtol=1e-12, atol=1e-15)


def test_oracle_and_picard_approach_each_other(b_sin, tight):
    alpha = make_constant_alpha(1.0)
    exact = sinsin_solution()
    f = exact.rhs(alpha, b_sin)
    gaps, errors = [], []
    for n in (8, 16):
        mesh = generate_structured(n)
        u_ref, report = solve_fine_reference(mesh, alpha, b_sin, f, tight)
        u_kir = solve_kirchhoff(mesh, alpha, b_sin, f, method="direct")
        assert report.converged
        gaps.append(l2_norm(DiscreteFunction(mesh, u_ref.values - u_kir.values)))
        errors.append(error_norms(u_kir, exact.u, exact.grad)[0])
    assert gaps[1] < gaps[0] / 2.5
    assert errors[1] < errors[0] / 3.0
    assert errors[1] < 1e-2
