"""
=============================================================================
FEM CORE - P1 machinery on triangles
=============================================================================

WHAT THIS FILE DOES:
    quadrature rules, weighted stiffness / mass / load assembly into
    scipy.sparse matrices, Dirichlet elimination, SPD solves and norms.

STIFFNESS WITH A VARIABLE COEFFICIENT:
    A_ij = sum_K  integral_K  kappa grad(phi_j) . grad(phi_i)

    P1 gradients are constant per triangle, so only the quadrature mean of
    kappa over each triangle enters:
        A_K = |K| * kbar_K * G_K G_K^T,   kbar_K = sum_q w_q kappa(x_q)

DIRICHLET CONDITIONS:
    Homogeneous, by elimination: the reduced system lives on the free
    (non-boundary) nodes only and stays symmetric positive definite.
=============================================================================
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CoefficientBoundsError, LinearSolverError, MeshError
from .mesh import CoarseMesh, TriangleMesh

logger = logging.getLogger(__name__)

# Default linear solver settings
DEFAULT_SOLVER_TOL = 1e-10
DEFAULT_SOLVER_MAX_ITER = 20000
DENSE_DOF_LIMIT = 2000


class SolverMethod(str, Enum):
    """Linear solver for the reduced SPD systems"""
    CG = "cg"
    DIRECT = "direct"
    DENSE = "dense"


SOLVER_METHODS = tuple(m.value for m in SolverMethod)

KappaLike = Union[Callable, np.ndarray, float]


# =============================================================================
# QUADRATURE
# =============================================================================

@dataclass(frozen=True)
class QuadRule:
    """
    Quadrature on a triangle in barycentric form.

    points:  (q, 3) barycentric coordinates
    weights: (q,) positive, summing to 1 (multiply by the element area)
    degree:  total polynomial degree integrated exactly
    """
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def size(self) -> int:
        return len(self.weights)


def _symmetric_orbit(a: float) -> np.ndarray:
    c = 1.0 - 2.0 * a
    return np.array([[c, a, a], [a, c, a], [a, a, c]])


@lru_cache(maxsize=None)
def quad_rule(order: int) -> QuadRule:
    """
    Quadrature rule exact for polynomials of total degree `order`.

    order 1: centroid
    order 2: three interior points (1/6, 1/6, 2/3)
    order 4: six-point symmetric rule
    """
    if order == 1:
        return QuadRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)
    if order == 2:
        return QuadRule(_symmetric_orbit(1.0 / 6.0), np.full(3, 1.0 / 3.0), 2)
    if order == 4:
        s10 = np.sqrt(10.0)
        r = np.sqrt(38.0 - 44.0 * np.sqrt(0.4))
        a = (8.0 - s10 + r) / 18.0
        b = (8.0 - s10 - r) / 18.0
        q = np.sqrt(213125.0 - 53320.0 * s10)
        wa = (620.0 + q) / 3720.0
        wb = (620.0 - q) / 3720.0
        points = np.vstack([_symmetric_orbit(a), _symmetric_orbit(b)])
        weights = np.array([wa, wa, wa, wb, wb, wb])
        return QuadRule(points, weights, 4)
    raise ValueError(f"unsupported quadrature order {order}; choose 1, 2 or 4")


def choose_quad_order(epsilon: float, fine_h: float, default: int = 2, warn: bool = True) -> int:
    """
    Quadrature order for integrating an oscillatory coefficient on a mesh.

    Order 4 once eps < 2 h; a warning is logged whenever h > eps/4 since
    the oscillation is then under-resolved (unless warn is False, as for
    coarse meshes that are meant to be under-resolved).
    """
    if not np.isfinite(epsilon):
        return default
    if warn and fine_h > epsilon / 4.0:
        logger.warning(
            "⚠️ mesh size h=%.4g exceeds eps/4=%.4g: oscillations are under-resolved",
            fine_h, epsilon / 4.0,
        )
    if epsilon < 2.0 * fine_h and default < 4:
        logger.info("quadrature raised to order 4 (eps=%.4g < 2h=%.4g)", epsilon, 2.0 * fine_h)
        return 4
    return default


# =============================================================================
# DISCRETE FUNCTIONS
# =============================================================================

@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """A P1 function: one value per mesh node"""
    mesh: TriangleMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_nodes,):
            raise MeshError(
                f"discrete function needs {self.mesh.n_nodes} nodal values, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, mesh: TriangleMesh) -> "DiscreteFunction":
        return cls(mesh, np.zeros(mesh.n_nodes))

    def at_quadrature(self, rule: QuadRule) -> np.ndarray:
        """Values at the quadrature points of every triangle, (T, q)"""
        return self.values[self.mesh.triangles] @ rule.points.T

    def gradients(self) -> np.ndarray:
        """Constant gradient per triangle, (T, 2)"""
        return np.einsum("tk,tkd->td", self.values[self.mesh.triangles], self.mesh.gradients)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Point evaluation (nan outside the mesh)"""
        owner, bary = self.mesh.locate(points)
        out = np.full(len(owner), np.nan)
        ok = owner >= 0
        out[ok] = np.einsum("pk,pk->p", bary[ok], self.values[self.mesh.triangles[owner[ok]]])
        return out


# =============================================================================
# ASSEMBLY
# =============================================================================

@dataclass
class SparseSystem:
    """
    Linear system over the free DOFs.

    dof_map[k] is the mesh node of free DOF k; expand() scatters a free
    vector back to a full nodal vector with zeros on the boundary.
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray
    n_nodes: int

    def expand(self, x: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_nodes)
        full[self.dof_map] = x
        return full


def kappa_at_quadrature(mesh: TriangleMesh, kappa: KappaLike, rule: QuadRule) -> np.ndarray:
    """
    Coefficient values at quadrature points, shape (T, q).

    kappa may be a callable (x, y) -> values, an array already of shape
    (T, q), or a scalar.
    """
    shape = (mesh.n_triangles, rule.size)
    if callable(kappa):
        pts = mesh.quadrature_points(rule.points)
        values = np.asarray(kappa(pts[..., 0], pts[..., 1]), dtype=float)
        return np.broadcast_to(values, shape)
    values = np.asarray(kappa, dtype=float)
    if values.ndim == 0:
        return np.full(shape, float(values))
    if values.shape != shape:
        raise ValueError(f"kappa values must have shape {shape}, got {values.shape}")
    return values


def check_positive(mesh: TriangleMesh, values: np.ndarray, rule: QuadRule) -> None:
    """Hard failure naming the first quadrature point where kappa <= 0"""
    bad = ~(values > 0)
    if bad.any():
        t, q = np.argwhere(bad)[0]
        point = mesh.quadrature_points(rule.points)[t, q]
        raise CoefficientBoundsError(
            f"coefficient {values[t, q]:.6g} <= 0 at quadrature point ({point[0]:.6g}, {point[1]:.6g}) "
            f"of triangle {t}: coercivity hypothesis violated",
            point=point,
            value=float(values[t, q]),
        )


def element_means(mesh: TriangleMesh, kappa: KappaLike, rule: QuadRule) -> np.ndarray:
    """Quadrature mean of kappa over each triangle, after the positivity check"""
    values = kappa_at_quadrature(mesh, kappa, rule)
    check_positive(mesh, values, rule)
    return values @ rule.weights


def assemble_from_local(mesh: TriangleMesh, local: np.ndarray, n: Optional[int] = None) -> sp.csr_matrix:
    """Sum element matrices (T, 3, 3) into a global sparse matrix"""
    tri = mesh.triangles
    rows = np.broadcast_to(tri[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(tri[:, None, :], local.shape).ravel()
    n = mesh.n_nodes if n is None else n
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def element_stiffness(mesh: TriangleMesh, kbar: Optional[np.ndarray] = None) -> np.ndarray:
    """Element matrices |K| kbar_K G_K G_K^T, shape (T, 3, 3)"""
    G = mesh.gradients
    local = np.einsum("tid,tjd->tij", G, G) * mesh.areas[:, None, None]
    if kbar is not None:
        local = local * kbar[:, None, None]
    return local


def assemble_weighted_stiffness(mesh: TriangleMesh, kappa: KappaLike, rule: Optional[QuadRule] = None) -> sp.csr_matrix:
    """
    Global stiffness matrix over all nodes (no elimination).

    Raises:
        CoefficientBoundsError: kappa <= 0 at some quadrature point
    """
    rule = rule or quad_rule(2)
    kbar = element_means(mesh, kappa, rule)
    return assemble_from_local(mesh, element_stiffness(mesh, kbar))


def assemble_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix"""
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref[None]
    return assemble_from_local(mesh, local)


def assemble_load(mesh: TriangleMesh, f: KappaLike, rule: Optional[QuadRule] = None) -> np.ndarray:
    """b_i = sum_K integral_K f phi_i, by quadrature"""
    rule = rule or quad_rule(2)
    fq = kappa_at_quadrature(mesh, f, rule)
    local = (fq * rule.weights) @ rule.points * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def eliminate_dirichlet(mesh: CoarseMesh, matrix: sp.spmatrix, rhs: np.ndarray) -> SparseSystem:
    """Restrict to the free nodes (homogeneous Dirichlet data)"""
    free = mesh.free_nodes
    A = sp.csr_matrix(matrix)[free][:, free].tocsr()
    return SparseSystem(matrix=A, rhs=np.asarray(rhs, dtype=float)[free], dof_map=free, n_nodes=mesh.n_nodes)


def assemble_system(mesh: CoarseMesh, kappa: KappaLike, f: KappaLike, rule: Optional[QuadRule] = None) -> SparseSystem:
    rule = rule or quad_rule(2)
    return eliminate_dirichlet(
        mesh, assemble_weighted_stiffness(mesh, kappa, rule), assemble_load(mesh, f, rule)
    )


# =============================================================================
# LINEAR SOLVES
# =============================================================================

def solve_spd(
    system: SparseSystem,
    tol: float = DEFAULT_SOLVER_TOL,
    max_iter: int = DEFAULT_SOLVER_MAX_ITER,
    method: str = "cg",
) -> np.ndarray:
    """
    Solve the SPD system to relative residual tol.

    Methods:
        cg:     conjugate gradients with a diagonal (Jacobi) preconditioner
        direct: sparse LU
        dense:  Cholesky on the dense matrix (oracle path for small systems)

    Raises:
        ValueError: unknown method
        LinearSolverError: no convergence, or matrix not positive definite
    """
    try:
        method = SolverMethod(method).value
    except ValueError:
        raise ValueError(f"unknown solver method {method!r}; choose one of {SOLVER_METHODS}") from None
    A = sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = len(b)
    if n == 0:
        return np.zeros(0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)

    diag = A.diagonal()
    if (diag <= 0).any():
        raise LinearSolverError("matrix has a non-positive diagonal entry (not SPD)", residual=np.inf, iterations=0)

    iterations = 0
    if method == "dense":
        if n > DENSE_DOF_LIMIT:
            logger.debug("dense solve requested for %d DOFs", n)
        try:
            factor = scipy.linalg.cho_factor(A.toarray())
        except np.linalg.LinAlgError as e:
            raise LinearSolverError(f"Cholesky failed: {e}", residual=np.inf, iterations=0) from e
        x = scipy.linalg.cho_solve(factor, b)
    elif method == "direct":
        x = spla.spsolve(A.tocsc(), b)
    else:
        precond = sp.diags(1.0 / diag)
        x = np.zeros(n)
        counter = {"k": 0}

        def _count(_):
            counter["k"] += 1

        # a restart recovers the drift between recursive and true residual
        for _ in range(3):
            x, info = spla.cg(A, b, x0=x, rtol=tol, atol=0.0, maxiter=max_iter, M=precond, callback=_count)
            if np.linalg.norm(A @ x - b) <= tol * bnorm or info != 0:
                break
        iterations = counter["k"]

    residual = float(np.linalg.norm(A @ x - b) / bnorm)
    if method == "cg" and residual > tol:
        raise LinearSolverError(
            f"CG did not reach rtol={tol:g} in {iterations} iterations (residual {residual:.3e})",
            residual=residual,
            iterations=iterations,
        )
    logger.debug("%s solve: n=%d residual=%.3e iterations=%d", method, n, residual, iterations)
    return x


# =============================================================================
# NORMS
# =============================================================================

def h1_seminorm(u: DiscreteFunction) -> float:
    grads = u.gradients()
    return float(np.sqrt(np.sum(u.mesh.areas * np.sum(grads ** 2, axis=1))))


def l2_norm(u: DiscreteFunction, rule: Optional[QuadRule] = None) -> float:
    rule = rule or quad_rule(4)
    uq = u.at_quadrature(rule)
    return float(np.sqrt(np.sum(u.mesh.areas * ((uq ** 2) @ rule.weights))))


def error_norms(
    u: DiscreteFunction,
    exact: Callable,
    exact_grad: Callable,
    rule: Optional[QuadRule] = None,
) -> Tuple[float, float]:
    """
    (L2 error, H1-seminorm error) of u against an exact solution.

    exact(x, y) returns values, exact_grad(x, y) values with a trailing
    axis of size 2.
    """
    rule = rule or quad_rule(4)
    if rule.degree < 2:
        raise ValueError("error norms need a quadrature rule of degree >= 2")
    mesh = u.mesh
    pts = mesh.quadrature_points(rule.points)
    diff = u.at_quadrature(rule) - exact(pts[..., 0], pts[..., 1])
    gdiff = u.gradients()[:, None, :] - exact_grad(pts[..., 0], pts[..., 1])
    l2 = np.sum(mesh.areas * ((diff ** 2) @ rule.weights))
    h1 = np.sum(mesh.areas * (np.sum(gdiff ** 2, axis=2) @ rule.weights))
    return float(np.sqrt(l2)), float(np.sqrt(h1))
