"""
=============================================================================
BUBBLE - Element-local problems and static condensation
=============================================================================

LOCAL PROBLEMS (one coarse element K, coefficient kappa frozen):
    B_f  in V_b(K):  a_K(B_f, v)  = (f, v)_K              for all v in V_b(K)
    B_i  in V_b(K):  a_K(B_i, v)  = -a_K(phi_i, v)        i = 1, 2, 3

    phi_i + B_i is the locally kappa-harmonic lift of the coarse hat phi_i,
    and the bubble part of the composite solution is
        u_b|K = B_f + sum_i u_h,i B_i

STATIC CONDENSATION:
    Writing the fine stiffness of K in blocks (C = A_IK Phi couples bubbles
    to coarse hats), eliminating the bubbles leaves on the coarse hats
        M = C^T B        = -C^T A_II^-1 C        (3 x 3 correction)
        r = -C^T B_f     = -C^T A_II^-1 F_I      (3-vector correction)
    added to the standard element matrix Phi^T A Phi and load (f, phi_i).
    This is exactly the Schur complement of the [coarse, bubble] system.

SNAPSHOTS:
    Every LocalOperator carries the id of the coefficient snapshot it was
    frozen at; lifts inherit it and condense() refuses to mix snapshots.
=============================================================================
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolverError, LocalSolveError, MeshError, SnapshotMismatchError
from .fem_core import (
    QuadRule,
    SparseSystem,
    assemble_load,
    assemble_weighted_stiffness,
    element_stiffness,
    quad_rule,
    solve_spd,
)
from .mesh import CoarseMesh, SubMesh, TriangleMesh, barycentric_grid

logger = logging.getLogger(__name__)

# Target accuracy of the local solves
LOCAL_TOL = 1e-10

# Above this many interior DOFs the local solve switches from Cholesky to CG
DENSE_LOCAL_LIMIT = 500

_snapshots = itertools.count(1)


def new_snapshot() -> int:
    """Fresh coefficient snapshot id"""
    return next(_snapshots)


# =============================================================================
# FROZEN LOCAL OPERATOR
# =============================================================================

@dataclass(frozen=True, eq=False)
class LocalOperator:
    """
    The linear problem on one sub-mesh with the coefficient frozen.

    stiffness:    dense fine stiffness over all sub-mesh nodes
    load:         fine load vector (f, phi_k)_K
    coarse_load:  (f, phi_i)_K for the three coarse hats
    coarse_basis: values of the coarse hats at the fine nodes, (N, 3)
    """
    submesh: SubMesh
    stiffness: np.ndarray
    load: np.ndarray
    coarse_load: np.ndarray
    coarse_basis: np.ndarray
    snapshot: int

    @property
    def interior(self) -> np.ndarray:
        return self.submesh.interior_nodes

    @cached_property
    def interior_block(self) -> np.ndarray:
        idx = self.interior
        return self.stiffness[np.ix_(idx, idx)]

    @cached_property
    def coupling(self) -> np.ndarray:
        """A[I, :] Phi, shape (n_interior, 3)"""
        return self.stiffness[self.interior] @ self.coarse_basis

    @cached_property
    def coarse_matrix(self) -> np.ndarray:
        """Standard element matrix Phi^T A Phi"""
        Phi = self.coarse_basis
        return Phi.T @ self.stiffness @ Phi


def _parent_triangle(submesh: SubMesh) -> TriangleMesh:
    grid = barycentric_grid(submesh.m)
    m = submesh.m
    corners = grid.index[[0, m, 0], [0, 0, m]]
    return TriangleMesh(submesh.nodes[corners], np.array([[0, 1, 2]]))


def coarse_element_load(submesh: SubMesh, f: Union[Callable, float], rule: QuadRule) -> np.ndarray:
    """(f, phi_i)_K integrated with the coarse-level rule on the parent triangle"""
    return assemble_load(_parent_triangle(submesh), f, rule)


def freeze_local_operator(
    submesh: SubMesh,
    kappa,
    f=None,
    rule: Optional[QuadRule] = None,
    *,
    load: Optional[np.ndarray] = None,
    coarse_load: Optional[np.ndarray] = None,
    coarse_rule: Optional[QuadRule] = None,
    coarse_basis: Optional[np.ndarray] = None,
    snapshot: Optional[int] = None,
) -> LocalOperator:
    """
    Assemble the local operator on a sub-mesh.

    Args:
        submesh: fine triangulation of K
        kappa: callable (x, y), values at the fine quadrature points, or scalar
        f: load as callable / quadrature values / scalar (ignored when both
           `load` and `coarse_load` are given)
        rule: fine quadrature rule (default order 2)
        load, coarse_load: precomputed load vectors
        coarse_rule: rule for (f, phi_i)_K on the parent triangle
        coarse_basis: (N, 3) coarse hats at the fine nodes (default: the
                      barycentric coordinates of K)
        snapshot: coefficient snapshot id (fresh one if omitted)
    """
    rule = rule or quad_rule(2)
    stiffness = assemble_weighted_stiffness(submesh, kappa, rule).toarray()
    if load is None:
        load = assemble_load(submesh, 0.0 if f is None else f, rule)
    if coarse_load is None:
        coarse_load = coarse_element_load(submesh, 0.0 if f is None else f, coarse_rule or rule)
    return LocalOperator(
        submesh=submesh,
        stiffness=stiffness,
        load=np.asarray(load, dtype=float),
        coarse_load=np.asarray(coarse_load, dtype=float),
        coarse_basis=submesh.coarse_basis if coarse_basis is None else np.asarray(coarse_basis),
        snapshot=new_snapshot() if snapshot is None else int(snapshot),
    )


# =============================================================================
# LIFTS
# =============================================================================

@dataclass(frozen=True, eq=False)
class BubbleLifts:
    """
    Bubble responses on one element, stored on the interior DOFs only
    (boundary values are identically zero by construction).

    load_lift:   B_f, shape (n_interior,)
    basis_lifts: B_1..B_3 as columns, shape (n_interior, 3)
    """
    element: int
    load_lift: np.ndarray
    basis_lifts: np.ndarray
    snapshot: int


def compute_lifts(operator: LocalOperator) -> BubbleLifts:
    """
    Solve the four local problems of one frozen operator.

    Cholesky for fewer than DENSE_LOCAL_LIMIT interior DOFs, Jacobi-PCG
    otherwise.

    Raises:
        MeshError: empty bubble space
        LocalSolveError: the local solve failed (carries the element id)
    """
    sub = operator.submesh
    n_int = sub.n_interior
    if n_int == 0:
        raise MeshError(f"element {sub.parent}: empty bubble space (no interior sub-mesh node)")

    rhs = np.column_stack([operator.load[operator.interior], -operator.coupling])
    A = operator.interior_block
    try:
        if n_int < DENSE_LOCAL_LIMIT:
            factor = scipy.linalg.cho_factor(A)
            X = scipy.linalg.cho_solve(factor, rhs)
        else:
            Asp = sp.csr_matrix(A)
            X = np.column_stack([
                solve_spd(
                    SparseSystem(Asp, rhs[:, k], np.arange(n_int), n_int),
                    tol=LOCAL_TOL,
                    method="cg",
                )
                for k in range(rhs.shape[1])
            ])
    except (np.linalg.LinAlgError, LinearSolverError) as e:
        raise LocalSolveError(f"local solve failed on element {sub.parent}: {e}", element=sub.parent) from e

    logger.debug("element %d: lifts solved (%d interior DOFs)", sub.parent, n_int)
    return BubbleLifts(
        element=sub.parent,
        load_lift=X[:, 0],
        basis_lifts=X[:, 1:],
        snapshot=operator.snapshot,
    )


def solve_local_lifts(
    submesh: SubMesh,
    kappa,
    f,
    coarse_basis: Optional[np.ndarray] = None,
    rule: Optional[QuadRule] = None,
) -> BubbleLifts:
    """Freeze kappa on the sub-mesh and compute B_f and B_1..B_3"""
    operator = freeze_local_operator(submesh, kappa, f, rule, coarse_basis=coarse_basis)
    return compute_lifts(operator)


# =============================================================================
# CONDENSATION
# =============================================================================

@dataclass(frozen=True)
class CondensedContribution:
    """Corrections added to the standard 3x3 element matrix and load"""
    matrix: np.ndarray
    rhs: np.ndarray


def couple(lifts: BubbleLifts, operator: LocalOperator) -> CondensedContribution:
    """
    Test lifts against the coarse hats with the operator's coefficient.

    No snapshot check: the reduced scheme deliberately pairs lifts frozen
    at one coefficient with a global operator frozen at another, which
    gives a non-symmetric correction.
    """
    C = operator.coupling
    return CondensedContribution(
        matrix=C.T @ lifts.basis_lifts,
        rhs=-C.T @ lifts.load_lift,
    )


def condense(lifts: BubbleLifts, operator: LocalOperator) -> CondensedContribution:
    """
    Schur-complement corrections of one element.

    Raises:
        SnapshotMismatchError: lifts were computed with another coefficient
    """
    if lifts.snapshot != operator.snapshot:
        raise SnapshotMismatchError(
            f"element {lifts.element}: lifts from snapshot {lifts.snapshot} "
            f"used with operator snapshot {operator.snapshot}"
        )
    raw = couple(lifts, operator)
    return CondensedContribution(matrix=0.5 * (raw.matrix + raw.matrix.T), rhs=raw.rhs)


def recover_bubble(lifts: BubbleLifts, uh_local: np.ndarray) -> np.ndarray:
    """u_b|K = B_f + sum_i uh_i B_i on the interior DOFs"""
    return lifts.load_lift + lifts.basis_lifts @ np.asarray(uh_local, dtype=float)


def unit_gradient_norms(submesh: SubMesh) -> np.ndarray:
    """H1 seminorm of every fine hat function, per sub-mesh node"""
    local = element_stiffness(submesh)
    diag = np.bincount(
        submesh.triangles.ravel(),
        weights=np.einsum("tii->ti", local).ravel(),
        minlength=submesh.n_nodes,
    )
    return np.sqrt(diag)


def residual_free_check(operator: LocalOperator, uh_local: np.ndarray, bubble: np.ndarray) -> float:
    """
    Size of the local residual of a composite solution on K.

    max over interior fine hats v of |a_K(u_h + u_b, v) - (f, v)_K| / |v|_H1.
    For a solution produced by the lifts of the same operator this sits at
    rounding level.
    """
    sub = operator.submesh
    u = operator.coarse_basis @ np.asarray(uh_local, dtype=float)
    u[sub.interior_nodes] += bubble
    idx = sub.interior_nodes
    residual = operator.stiffness[idx] @ u - operator.load[idx]
    return float(np.max(np.abs(residual) / unit_gradient_norms(sub)[idx]))


# =============================================================================
# MONOLITHIC TWO-LEVEL SYSTEM (verification path)
# =============================================================================

def solve_two_level_monolithic(
    coarse: CoarseMesh,
    operators: Sequence[LocalOperator],
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Solve the full [coarse, bubble] linear system without condensation.

    Unknowns are the free coarse nodes followed by every element's interior
    sub-mesh nodes. Used to verify that condensation reproduces it.

    Returns:
        (coarse nodal values, list of interior bubble vectors per element)
    """
    free = coarse.free_nodes
    coarse_dof = np.full(coarse.n_nodes, -1, dtype=np.int64)
    coarse_dof[free] = np.arange(len(free))

    offsets = np.cumsum([len(free)] + [op.submesh.n_interior for op in operators])
    n_total = int(offsets[-1])

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_total)
    for K, op in enumerate(operators):
        idx = op.interior
        Phi = op.coarse_basis
        A = op.stiffness
        block = np.block([
            [op.coarse_matrix, Phi.T @ A[:, idx]],
            [A[idx] @ Phi, op.interior_block],
        ])
        local_rhs = np.concatenate([op.coarse_load, op.load[idx]])
        dofs = np.concatenate([
            coarse_dof[coarse.triangles[K]],
            offsets[K] + np.arange(len(idx)),
        ])
        keep = dofs >= 0
        d = dofs[keep]
        sub_block = block[np.ix_(keep, keep)]
        rows.append(np.repeat(d, len(d)))
        cols.append(np.tile(d, len(d)))
        vals.append(sub_block.ravel())
        np.add.at(rhs, d, local_rhs[keep])

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_total, n_total),
    ).tocsr()
    x = spla.spsolve(matrix.tocsc(), rhs) if n_total else np.zeros(0)

    uh = np.zeros(coarse.n_nodes)
    uh[free] = x[:len(free)]
    bubbles = [x[offsets[K]:offsets[K + 1]] for K in range(len(operators))]
    return uh, bubbles
