"""
=============================================================================
BUBBLEFEM - COEFFICIENT TEST SUITE
=============================================================================
Diffusion fields (bounds, gradients) and nonlinearities (Kirchhoff
transform and its inverse).
=============================================================================
"""

import math

import numpy as np
import pytest

from bubblefem.coefficients import (
    CoefficientField,
    invert_monotone,
    make_constant_alpha,
    make_layered_alpha,
    make_nonlinearity,
    make_nonlinearity_constant,
    make_nonlinearity_sin,
    make_periodic_alpha,
)
from bubblefem.errors import CoefficientBoundsError


# =============================================================================
# TEST DATA
# =============================================================================

GRID = np.linspace(0.0, 1.0, 41)
XX, YY = np.meshgrid(GRID, GRID)

ARGUMENTS = np.array([-7.3, -2.0, -0.4, 0.0, 1e-9, 0.25, 1.7, 3.1, 12.0])

FIELDS = {
    "periodic": lambda: make_periodic_alpha(2.0, 0.9, 0.125),
    "layered": lambda: make_layered_alpha(1.5, 0.1),
    "constant": lambda: make_constant_alpha(3.0),
}


# =============================================================================
# DIFFUSION FIELDS
# =============================================================================

@pytest.mark.parametrize("name", sorted(FIELDS))
def test_sampled_values_respect_bounds(name):
    alpha = FIELDS[name]()
    values = alpha(XX, YY)
    assert values.shape == XX.shape
    assert values.min() >= alpha.alpha0 - 1e-12
    assert values.max() <= alpha.alpha1 + 1e-12
    alpha.check_bounds(values)


def test_periodic_bounds_and_scale():
    alpha = make_periodic_alpha(2.0, 0.5, 0.25)
    assert alpha.alpha0 == pytest.approx(1.0)
    assert alpha.alpha1 == pytest.approx(3.0)
    assert alpha.epsilon == 0.25
    assert alpha.is_oscillatory
    assert float(alpha(0.0625, 0.0625)) == pytest.approx(3.0)


def test_zero_amplitude_does_not_oscillate():
    alpha = make_periodic_alpha(1.0, 0.0, 0.25)
    assert not alpha.is_oscillatory
    assert math.isinf(alpha.epsilon)


def test_layered_bounds():
    alpha = make_layered_alpha(1.0, 0.5)
    assert alpha.alpha0 == pytest.approx(1.0 / 3.0)
    assert alpha.alpha1 == pytest.approx(1.0)
    np.testing.assert_allclose(alpha(0.3, np.array([0.0, 0.4, 0.9])), alpha(0.3, 0.0))


@pytest.mark.parametrize("name", ["periodic", "layered"])
def test_gradient_matches_finite_differences(name):
    alpha = FIELDS[name]()
    x, y, d = 0.37, 0.61, 1e-6
    fd = np.array([
        (alpha(x + d, y) - alpha(x - d, y)) / (2 * d),
        (alpha(x, y + d) - alpha(x, y - d)) / (2 * d),
    ])
    np.testing.assert_allclose(alpha.gradient(x, y), fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: make_periodic_alpha(1.0, 1.0, 0.1),
        lambda: make_periodic_alpha(0.0, 0.5, 0.1),
        lambda: make_periodic_alpha(1.0, 0.5, 0.0),
        lambda: make_layered_alpha(2.0, 0.1),
        lambda: make_constant_alpha(-1.0),
    ],
)
def test_inadmissible_fields_rejected(factory):
    with pytest.raises(CoefficientBoundsError):
        factory()


def test_check_bounds_names_the_point():
    alpha = CoefficientField(evaluate=lambda x, y: 1.0 + 0 * x, alpha0=1.0, alpha1=2.0)
    points = np.array([[0.1, 0.2], [0.7, 0.3]])
    with pytest.raises(CoefficientBoundsError) as info:
        alpha.check_bounds(np.array([1.5, 2.5]), points)
    assert info.value.value == pytest.approx(2.5)
    np.testing.assert_allclose(info.value.point, [0.7, 0.3])


# =============================================================================
# NONLINEARITIES
# =============================================================================

def test_sin_kirchhoff_transform():
    b = make_nonlinearity_sin()
    assert b.b0 == 1.0
    assert float(b.btilde(0.0)) == 0.0
    t = ARGUMENTS
    np.testing.assert_allclose(b.btilde(t), 2 * t + 1 - np.cos(t))
    assert (b(t) >= b.b0).all()


def test_sin_inverse_round_trip():
    b = make_nonlinearity_sin()
    recovered = b.btilde_inv(b.btilde(ARGUMENTS))
    np.testing.assert_allclose(recovered, ARGUMENTS, atol=1e-12)


def test_scalar_inverse():
    b = make_nonlinearity_sin()
    assert float(b.btilde_inv(b.btilde(1.7))) == pytest.approx(1.7, abs=1e-12)
    assert float(b.btilde_inv(0.0)) == 0.0


def test_inverse_keeps_shape():
    b = make_nonlinearity_sin()
    s = b.btilde(ARGUMENTS.reshape(3, 3))
    assert b.btilde_inv(s).shape == (3, 3)


def test_constant_nonlinearity_is_linear():
    b = make_nonlinearity_constant(2.5)
    assert b.is_constant
    np.testing.assert_allclose(b(ARGUMENTS), 2.5)
    np.testing.assert_allclose(b.db(ARGUMENTS), 0.0)
    np.testing.assert_allclose(b.btilde_inv(b.btilde(ARGUMENTS)), ARGUMENTS)


def test_constant_nonlinearity_needs_positive_value():
    with pytest.raises(CoefficientBoundsError):
        make_nonlinearity_constant(0.0)


def test_generic_nonlinearity_integrates_btilde():
    b = make_nonlinearity(lambda t: 2.0 + np.sin(t), lambda t: np.cos(t), 1.0, name="sin-quad")
    t = ARGUMENTS
    np.testing.assert_allclose(b.btilde(t), 2 * t + 1 - np.cos(t), atol=1e-10)
    np.testing.assert_allclose(b.btilde_inv(b.btilde(t)), t, atol=1e-9)


NONLINEARITIES = {
    "sin": make_nonlinearity_sin,
    "constant": lambda: make_nonlinearity_constant(2.0),
    "quadrature": lambda: make_nonlinearity(lambda t: 2.0 + np.sin(t), np.cos, 1.0, name="sin-quad"),
}

FD_POINTS = np.linspace(-5.0, 5.0, 100)


@pytest.mark.parametrize("name", sorted(NONLINEARITIES))
def test_btilde_derivative_is_b(name):
    b = NONLINEARITIES[name]()
    # quadrature btilde carries ~1e-12 absolute error, so it needs a wider step
    h = 1e-4 if name == "quadrature" else 1e-6
    t = FD_POINTS
    slope = (b.btilde(t + h) - b.btilde(t - h)) / (2 * h)
    np.testing.assert_allclose(slope, b(t), rtol=0, atol=1e-6)


@pytest.mark.parametrize("name", sorted(NONLINEARITIES))
def test_db_matches_finite_differences(name):
    b = NONLINEARITIES[name]()
    h = 1e-6
    t = FD_POINTS
    slope = (b(t + h) - b(t - h)) / (2 * h)
    np.testing.assert_allclose(slope, b.db(t), rtol=0, atol=1e-6)


def test_lower_bound_violation_reported():
    b = make_nonlinearity(lambda t: 1.0 + 0 * np.asarray(t), lambda t: 0 * np.asarray(t), 2.0)
    with pytest.raises(CoefficientBoundsError) as info:
        b.check_lower_bound(b(np.array([0.0, 1.0])), np.array([0.0, 1.0]))
    assert info.value.point == 0.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_invert_monotone_falls_back_to_brent():
    # zero derivative stops Newton at once; the bracket search recovers
    func = lambda t: np.asarray(t, dtype=float) ** 3 + np.asarray(t, dtype=float)
    bad_deriv = lambda t: np.zeros_like(np.asarray(t, dtype=float))
    root = invert_monotone(func, bad_deriv, 1.0, 10.0)
    assert float(root) == pytest.approx(2.0, abs=1e-10)
