"""
=============================================================================
KIRCHHOFF ORACLE - Independent solution path through U = btilde(u)
=============================================================================

With kappa = alpha(x) b(u), the substitution U = btilde(u) turns
    -div(alpha b(u) grad u) = f
into the LINEAR problem
    -div(alpha grad U) = f,    U = 0 on the boundary (btilde(0) = 0).

One linear solve gives U_h; the oracle returns the P1 function whose
nodal values are btilde^-1(U_h(node)). The transform is exact for the
continuous problem only, so the nodal inversion differs from the Picard
solution on the same mesh by O(h^2).

MANUFACTURED SOLUTIONS:
    f = -grad(alpha) . (b(u) grad u) - alpha (b'(u) |grad u|^2 + b(u) lap u)
=============================================================================
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coefficients import CoefficientField, Nonlinearity
from .fem_core import (
    DEFAULT_SOLVER_MAX_ITER,
    DEFAULT_SOLVER_TOL,
    DiscreteFunction,
    assemble_system,
    choose_quad_order,
    quad_rule,
    solve_spd,
)
from .mesh import CoarseMesh

logger = logging.getLogger(__name__)


def solve_transformed(
    fine: CoarseMesh,
    alpha: CoefficientField,
    f,
    quad_order: int = 2,
    method: str = "cg",
    tol: float = DEFAULT_SOLVER_TOL,
    max_iter: int = DEFAULT_SOLVER_MAX_ITER,
) -> DiscreteFunction:
    """The linear problem -div(alpha grad U) = f on `fine`"""
    rule = quad_rule(choose_quad_order(alpha.epsilon, fine.h, quad_order))
    pts = fine.quadrature_points(rule.points)
    alpha_q = alpha(pts[..., 0], pts[..., 1])
    alpha.check_bounds(alpha_q, pts)
    system = assemble_system(fine, alpha_q, f, rule)
    return DiscreteFunction(fine, system.expand(solve_spd(system, tol, max_iter, method)))


def solve_kirchhoff(
    fine: CoarseMesh,
    alpha: CoefficientField,
    b: Nonlinearity,
    f,
    quad_order: int = 2,
    method: str = "cg",
    tol: float = DEFAULT_SOLVER_TOL,
    max_iter: int = DEFAULT_SOLVER_MAX_ITER,
) -> DiscreteFunction:
    """
    One linear solve for U_h, then nodewise u = btilde^-1(U_h).

    Raises:
        LinearSolverError: the linear solve failed
        InversionError: the inverse transform safeguards tripped
    """
    U = solve_transformed(fine, alpha, f, quad_order, method, tol, max_iter)
    u = b.btilde_inv(U.values)
    logger.debug("kirchhoff oracle: %d nodes inverted, max |U| = %.3e", fine.n_nodes, np.abs(U.values).max())
    return DiscreteFunction(fine, u)


# =============================================================================
# MANUFACTURED RIGHT-HAND SIDES
# =============================================================================

def manufacture_f(
    u: Callable,
    grad_u: Callable,
    hess_u: Callable,
    alpha: CoefficientField,
    b: Nonlinearity,
) -> Callable:
    """
    Right-hand side for which `u` solves the nonlinear problem exactly.

    grad_u returns a trailing axis of size 2, hess_u trailing axes (2, 2).

    Raises:
        ValueError: alpha carries no analytic gradient
    """
    if alpha.gradient is None:
        raise ValueError(f"coefficient {alpha.name!r} has no analytic gradient")

    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        uu = u(x, y)
        g = grad_u(x, y)
        lap = np.trace(hess_u(x, y), axis1=-2, axis2=-1)
        bu = b(uu)
        flux_div = np.sum(alpha.gradient(x, y) * g, axis=-1) * bu
        return -flux_div - alpha(x, y) * (b.db(uu) * np.sum(g * g, axis=-1) + bu * lap)

    return f


@dataclass(frozen=True)
class ManufacturedSolution:
    """An exact solution with the derivatives needed to manufacture f"""
    u: Callable
    grad: Callable
    hess: Callable
    name: str = "custom"

    def rhs(self, alpha: CoefficientField, b: Nonlinearity) -> Callable:
        return manufacture_f(self.u, self.grad, self.hess, alpha, b)


def sinsin_solution(scale: float = 1.0) -> ManufacturedSolution:
    """u = scale sin(pi x) sin(pi y), zero on the boundary of the unit square"""
    pi = np.pi

    def u(x, y):
        return scale * np.sin(pi * x) * np.sin(pi * y)

    def grad(x, y):
        gx = scale * pi * np.cos(pi * x) * np.sin(pi * y)
        gy = scale * pi * np.sin(pi * x) * np.cos(pi * y)
        return np.stack(np.broadcast_arrays(gx, gy), axis=-1)

    def hess(x, y):
        s = scale * pi * pi
        hxx = -s * np.sin(pi * x) * np.sin(pi * y)
        hxy = s * np.cos(pi * x) * np.cos(pi * y)
        hxx, hxy = np.broadcast_arrays(hxx, hxy)
        row0 = np.stack([hxx, hxy], axis=-1)
        row1 = np.stack([hxy, hxx], axis=-1)
        return np.stack([row0, row1], axis=-2)

    return ManufacturedSolution(u=u, grad=grad, hess=hess, name="sinsin")


def zero_solution() -> ManufacturedSolution:
    def zero(x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    return ManufacturedSolution(
        u=zero,
        grad=lambda x, y: zero(x, y)[..., None].repeat(2, axis=-1),
        hess=lambda x, y: zero(x, y)[..., None, None].repeat(2, axis=-1).repeat(2, axis=-2),
        name="zero",
    )
