"""
Shared fixtures for the bubblefem test suite.

Run with: pytest            (fast tests)
          pytest -m slow    (the quick acceptance suite)
"""

import sys
from pathlib import Path

import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from bubblefem.coefficients import (
    make_constant_alpha,
    make_nonlinearity_constant,
    make_nonlinearity_sin,
    make_periodic_alpha,
)
from bubblefem.mesh import generate_structured
from bubblefem.solvers import PicardConfig


@pytest.fixture
def unit_alpha():
    return make_constant_alpha(1.0)


@pytest.fixture
def wavy_alpha():
    """Mild oscillation, resolved by every sub-mesh used in the tests"""
    return make_periodic_alpha(1.0, 0.3, 1.0)


@pytest.fixture
def sharp_alpha():
    return make_periodic_alpha(1.0, 0.5, 0.25)


@pytest.fixture
def b_sin():
    return make_nonlinearity_sin()


@pytest.fixture
def b_two():
    return make_nonlinearity_constant(2.0)


@pytest.fixture
def mesh2():
    return generate_structured(2)


@pytest.fixture
def mesh4():
    return generate_structured(4)


@pytest.fixture
def tight():
    """Direct solves and a tight Picard tolerance"""
    return PicardConfig(tol=1e-10, max_iter=100, linear_solver="direct")
