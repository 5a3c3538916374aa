"""
=============================================================================
MESH - Coarse triangulations and per-element bubble sub-meshes
=============================================================================

WHAT THIS FILE DOES:
    1. Builds conforming triangulations of the unit square (structured n x n)
    2. Refines them uniformly (every triangle split into 4 by edge midpoints)
    3. Builds a fine sub-mesh inside each coarse triangle K; the nodes strictly
       inside K carry the bubble degrees of freedom
    4. Moves P1 functions from a coarse mesh to a nested fine mesh
    5. Reads / writes the plain-text mesh format

PLAIN-TEXT FORMAT:
    nodes <N> triangles <T>
    x y                      (N lines)
    i j k                    (T lines, 0-based)
    b0 b1 b2 ...             (one line, boundary node indices)

SUB-MESH LAYOUT:
    A sub-mesh of level m is the barycentric grid of K: node (i, j) sits at
    barycentric coordinates (1 - (i+j)/m, i/m, j/m) for i + j <= m. With m a
    power of two it coincides with refine_uniform(mesh, log2(m)) on K, so a
    composite solution is exactly representable on the refined global mesh.
=============================================================================
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import MeshError

logger = logging.getLogger(__name__)

# Relative tolerance used for point-in-triangle tests
LOCATE_TOL = 1e-10


# =============================================================================
# BASE TRIANGLE MESH
# =============================================================================

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Nodes plus counter-clockwise triangles.

    Geometric quantities (areas, barycentric gradients) are computed once and
    cached on the instance; meshes are immutable after construction.
    """
    nodes: np.ndarray
    triangles: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric functions, shape (T, 3, 2)"""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_area = 2.0 * self.signed_areas
        grads = np.empty((self.n_triangles, 3, 2))
        grads[:, 0, 0] = y[:, 1] - y[:, 2]
        grads[:, 0, 1] = x[:, 2] - x[:, 1]
        grads[:, 1, 0] = y[:, 2] - y[:, 0]
        grads[:, 1, 1] = x[:, 0] - x[:, 2]
        grads[:, 2, 0] = y[:, 0] - y[:, 1]
        grads[:, 2, 1] = x[:, 1] - x[:, 0]
        return grads / two_area[:, None, None]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (E, 2), each row sorted"""
        return self._edge_table[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """Edge ids of (v0v1, v1v2, v2v0) per triangle, shape (T, 3)"""
        return self._edge_table[1]

    @cached_property
    def edge_counts(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        local = self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        local = np.sort(local, axis=1)
        edges, inverse, counts = np.unique(
            local, axis=0, return_inverse=True, return_counts=True
        )
        return edges, inverse.reshape(-1, 3), counts

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        """Maximum element diameter"""
        return float(self.diameters.max())

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def quadrature_points(self, barycentric: np.ndarray) -> np.ndarray:
        """Physical coordinates of barycentric points in every triangle, (T, q, 2)"""
        return np.einsum("qk,tkd->tqd", barycentric, self.nodes[self.triangles])

    def locate(self, points: np.ndarray, tol: float = LOCATE_TOL) -> Tuple[np.ndarray, np.ndarray]:
        """
        Find a triangle containing each point.

        Args:
            points: array of shape (P, 2)
            tol: slack on barycentric coordinates (points on edges belong
                 to the first triangle found)

        Returns:
            (owner, bary): owner[p] is the triangle index (-1 if outside),
            bary[p] the barycentric coordinates of the point in that triangle
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        owner = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        origin = self.nodes[self.triangles[:, 0]]
        lo = self.nodes[self.triangles].min(axis=1) - tol
        hi = self.nodes[self.triangles].max(axis=1) + tol

        for t in range(self.n_triangles):
            pending = np.flatnonzero(owner < 0)
            if pending.size == 0:
                break
            cand = pts[pending]
            inside_box = np.all((cand >= lo[t]) & (cand <= hi[t]), axis=1)
            if not inside_box.any():
                continue
            cand_idx = pending[inside_box]
            lam = self.gradients[t] @ (pts[cand_idx] - origin[t]).T
            lam = lam.T
            lam[:, 0] += 1.0
            hit = np.all(lam >= -tol, axis=1)
            owner[cand_idx[hit]] = t
            bary[cand_idx[hit]] = lam[hit]
        return owner, bary


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


# =============================================================================
# COARSE MESH
# =============================================================================

@dataclass(frozen=True, eq=False)
class CoarseMesh(TriangleMesh):
    """
    A conforming triangulation of the domain.

    Construction normalises every triangle to counter-clockwise order,
    rejects degenerate triangles and non-manifold edges, and derives the
    boundary node set from the edges used by exactly one triangle. When
    boundary_nodes is passed explicitly it must match that set.

    USAGE:
        mesh = generate_structured(8)
        fine = refine_uniform(mesh, 2)
        print(mesh.h, fine.h)          # h halves per level
    """
    boundary_nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)

        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must have shape (N, 2), got {nodes.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {triangles.shape}")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(nodes)):
            raise MeshError("triangle references a node index out of range")

        areas = _signed_areas(nodes, triangles)
        scale = max(float(np.ptp(nodes, axis=0).max()) ** 2, 1e-300) if len(nodes) else 1.0
        degenerate = np.flatnonzero(np.abs(areas) <= 1e-14 * scale)
        if degenerate.size:
            raise MeshError(f"degenerate (zero-area) triangle {int(degenerate[0])}")

        flipped = areas < 0
        if flipped.any():
            triangles = triangles.copy()
            triangles[flipped] = triangles[flipped][:, [0, 2, 1]]

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", triangles)

        if self.edge_counts.size and self.edge_counts.max() > 2:
            bad = self.edges[np.argmax(self.edge_counts)]
            raise MeshError(f"edge {tuple(int(v) for v in bad)} is shared by more than 2 triangles")

        derived = np.unique(self.edges[self.edge_counts == 1])
        if self.boundary_nodes is None:
            object.__setattr__(self, "boundary_nodes", derived)
        else:
            given = np.unique(np.asarray(self.boundary_nodes, dtype=np.int64))
            if not np.array_equal(given, derived):
                raise MeshError(
                    "boundary node list does not match the nodes incident to boundary edges"
                )
            object.__setattr__(self, "boundary_nodes", given)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        """Nodes not on the boundary (the Dirichlet-free DOFs)"""
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @property
    def interior_node_count(self) -> int:
        return len(self.free_nodes)


def generate_structured(n: int) -> CoarseMesh:
    """
    Uniform n x n grid of the unit square, each cell cut along its
    (0,0)-(1,1) diagonal into two triangles.

    (n+1)^2 nodes, 2 n^2 triangles, h = sqrt(2)/n.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"structured mesh needs n >= 1, got {n}")
    n = int(n)
    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    sw = j * (n + 1) + i
    se = sw + 1
    nw = sw + (n + 1)
    ne = nw + 1
    lower = np.column_stack([sw, se, ne])
    upper = np.column_stack([sw, ne, nw])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return CoarseMesh(nodes, triangles)


def refine_uniform(mesh: CoarseMesh, levels: int) -> CoarseMesh:
    """Split every triangle into 4 by its edge midpoints, `levels` times"""
    if levels < 0:
        raise MeshError(f"refinement levels must be >= 0, got {levels}")
    current = mesh
    for _ in range(int(levels)):
        edges = current.edges
        mids = 0.5 * (current.nodes[edges[:, 0]] + current.nodes[edges[:, 1]])
        nodes = np.vstack([current.nodes, mids])
        m = current.triangle_edges + current.n_nodes
        v = current.triangles
        m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
        children = np.stack(
            [
                np.column_stack([v[:, 0], m01, m20]),
                np.column_stack([m01, v[:, 1], m12]),
                np.column_stack([m20, m12, v[:, 2]]),
                np.column_stack([m01, m12, m20]),
            ],
            axis=1,
        ).reshape(-1, 3)
        current = CoarseMesh(nodes, children)
    return current


# =============================================================================
# SUB-MESHES (bubble spaces)
# =============================================================================

@dataclass(frozen=True)
class BarycentricGrid:
    """Topology of the level-m barycentric grid shared by every sub-mesh"""
    m: int
    bary: np.ndarray          # (N, 3) barycentric coordinates of each node
    triangles: np.ndarray     # (m^2, 3)
    index: np.ndarray         # (m+1, m+1) node id of (i, j), -1 where i+j > m
    interior: np.ndarray      # node ids strictly inside K
    boundary: np.ndarray      # node ids on the boundary of K


@lru_cache(maxsize=None)
def barycentric_grid(m: int) -> BarycentricGrid:
    """
    Level-m grid: (m+1)(m+2)/2 nodes, m^2 triangles and
    (m-1)(m-2)/2 interior nodes.
    """
    if m < 1:
        raise MeshError(f"sub-mesh level must be >= 1, got {m}")
    index = np.full((m + 1, m + 1), -1, dtype=np.int64)
    coords = []
    for j in range(m + 1):
        for i in range(m + 1 - j):
            index[i, j] = len(coords)
            coords.append((i, j))
    ij = np.array(coords, dtype=float)
    bary = np.column_stack([1.0 - (ij[:, 0] + ij[:, 1]) / m, ij[:, 0] / m, ij[:, 1] / m])

    triangles = []
    for j in range(m):
        for i in range(m - j):
            triangles.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j <= m - 2:
                triangles.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))

    ii, jj = ij[:, 0], ij[:, 1]
    inner = (ii >= 1) & (jj >= 1) & (ii + jj <= m - 1)
    return BarycentricGrid(
        m=m,
        bary=bary,
        triangles=np.array(triangles, dtype=np.int64),
        index=index,
        interior=np.flatnonzero(inner),
        boundary=np.flatnonzero(~inner),
    )


@dataclass(frozen=True, eq=False)
class SubMesh(TriangleMesh):
    """
    Fine triangulation of one coarse triangle K.

    interior_nodes are the bubble DOFs; boundary_nodes lie on the boundary
    of K. coarse_basis[k, i] is the value of the i-th local coarse hat
    function (barycentric coordinate of K) at fine node k.
    """
    parent: int = -1
    m: int = 0
    interior_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    boundary_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    coarse_basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def n_interior(self) -> int:
        return len(self.interior_nodes)

    def locate(self, bary: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Fine P1 stencil of points given by their barycentric coordinates in K.

        Returns:
            (node_ids, weights), both of shape (P, 3): the value of a fine P1
            function at point p is sum(weights[p] * values[node_ids[p]]).
        """
        grid = barycentric_grid(self.m)
        m = self.m
        lam = np.clip(np.atleast_2d(bary), 0.0, 1.0)
        s = lam[:, 1] * m
        t = lam[:, 2] * m
        i = np.clip(np.floor(s).astype(np.int64), 0, m - 1)
        j = np.clip(np.floor(t).astype(np.int64), 0, m - 1 - i)
        a = s - i
        b = t - j
        upper = (a + b > 1.0 + 1e-12) & (i + j <= m - 2)

        ids = np.empty((len(lam), 3), dtype=np.int64)
        w = np.empty((len(lam), 3))

        lo = ~upper
        ids[lo, 0] = grid.index[i[lo], j[lo]]
        ids[lo, 1] = grid.index[i[lo] + 1, j[lo]]
        ids[lo, 2] = grid.index[i[lo], j[lo] + 1]
        w[lo, 0] = 1.0 - a[lo] - b[lo]
        w[lo, 1] = a[lo]
        w[lo, 2] = b[lo]

        ids[upper, 0] = grid.index[i[upper] + 1, j[upper]]
        ids[upper, 1] = grid.index[i[upper] + 1, j[upper] + 1]
        ids[upper, 2] = grid.index[i[upper], j[upper] + 1]
        w[upper, 0] = 1.0 - b[upper]
        w[upper, 1] = a[upper] + b[upper] - 1.0
        w[upper, 2] = 1.0 - a[upper]
        return ids, w


def build_submesh(mesh: CoarseMesh, K: int, m: int) -> SubMesh:
    """
    Regular level-m refinement of coarse triangle K (m^2 fine triangles).

    Raises:
        MeshError: K out of range, or m too small to leave an interior node
                   (the bubble space on K would be empty)
    """
    if not 0 <= K < mesh.n_triangles:
        raise MeshError(f"triangle index {K} out of range [0, {mesh.n_triangles})")
    if m < 3:
        raise MeshError(
            f"sub-mesh level m={m} leaves no interior node: the bubble space on "
            f"element {K} would be empty (need m >= 3)"
        )
    grid = barycentric_grid(m)
    vertices = mesh.nodes[mesh.triangles[K]]
    return SubMesh(
        nodes=grid.bary @ vertices,
        triangles=grid.triangles,
        parent=int(K),
        m=int(m),
        interior_nodes=grid.interior,
        boundary_nodes=grid.boundary,
        coarse_basis=grid.bary,
    )


def build_all_submeshes(mesh: CoarseMesh, m: int) -> List[SubMesh]:
    return [build_submesh(mesh, K, m) for K in range(mesh.n_triangles)]


def merge_submeshes(mesh: CoarseMesh, submeshes: Sequence[SubMesh]) -> Tuple[CoarseMesh, List[np.ndarray]]:
    """
    Glue all sub-meshes into one global fine mesh.

    Returns:
        (fine_mesh, local_to_global) where local_to_global[K][k] is the
        global node of sub-mesh node k of element K
    """
    offsets = np.cumsum([0] + [s.n_nodes for s in submeshes])
    stacked = np.vstack([s.nodes for s in submeshes])
    scale = max(float(np.ptp(mesh.nodes, axis=0).max()), 1.0)
    keys = np.round(stacked / scale, 11)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    nodes = stacked[first]
    triangles = np.vstack(
        [inverse[offsets[k] + s.triangles] for k, s in enumerate(submeshes)]
    )
    local_to_global = [inverse[offsets[k]:offsets[k + 1]] for k in range(len(submeshes))]
    return CoarseMesh(nodes, triangles), local_to_global


# =============================================================================
# COARSE -> FINE TRANSFER
# =============================================================================

def nested_parents(coarse: CoarseMesh, fine: TriangleMesh) -> np.ndarray:
    """
    Coarse triangle containing each fine triangle.

    Raises:
        MeshError: some fine triangle is not contained in a single coarse one
    """
    centroids = fine.nodes[fine.triangles].mean(axis=1)
    owner, _ = coarse.locate(centroids)
    if (owner < 0).any():
        raise MeshError("fine mesh is not nested in the coarse mesh (triangle outside)")

    origin = coarse.nodes[coarse.triangles[owner, 0]]
    grads = coarse.gradients[owner]
    corners = fine.nodes[fine.triangles]
    lam = np.einsum("tkd,tvd->tvk", grads, corners - origin[:, None, :])
    lam[..., 0] += 1.0
    if (lam < -1e-9).any():
        bad = int(np.flatnonzero((lam < -1e-9).any(axis=(1, 2)))[0])
        raise MeshError(f"fine mesh is not nested in the coarse mesh (fine triangle {bad} straddles)")
    return owner


def interpolate_coarse_on_fine(coarse_values: np.ndarray, coarse: CoarseMesh, fine: CoarseMesh) -> np.ndarray:
    """Exact transfer of a coarse P1 function to the nodes of a nested fine mesh"""
    values = np.asarray(coarse_values, dtype=float)
    if values.shape != (coarse.n_nodes,):
        raise MeshError(f"expected {coarse.n_nodes} coarse values, got {values.shape}")
    parents = nested_parents(coarse, fine)

    node_parent = np.empty(fine.n_nodes, dtype=np.int64)
    node_parent[fine.triangles.ravel()] = np.repeat(parents, 3)

    origin = coarse.nodes[coarse.triangles[node_parent, 0]]
    lam = np.einsum("pkd,pd->pk", coarse.gradients[node_parent], fine.nodes - origin)
    lam[:, 0] += 1.0
    return np.einsum("pk,pk->p", lam, values[coarse.triangles[node_parent]])


# =============================================================================
# PLAIN-TEXT I/O
# =============================================================================

def write_mesh(mesh: CoarseMesh, path: Union[str, Path], values: Optional[np.ndarray] = None) -> None:
    """Write the mesh (and optionally one nodal value per line after it)"""
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(" ".join(str(i) for i in mesh.boundary_nodes.tolist()))
    if values is not None:
        if len(values) != mesh.n_nodes:
            raise MeshError(f"expected {mesh.n_nodes} nodal values, got {len(values)}")
        lines += [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_mesh(path: Union[str, Path], with_values: bool = False):
    """
    Read the plain-text mesh format.

    Returns:
        CoarseMesh, or (CoarseMesh, values) when with_values is True
    """
    raw = [ln.strip() for ln in Path(path).read_text(encoding="ascii").splitlines()]
    rows = [ln for ln in raw if ln]
    if not rows:
        raise MeshError(f"{path}: empty mesh file")
    head = rows[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
        raise MeshError(f"{path}: bad header {rows[0]!r}")
    try:
        n_nodes, n_tris = int(head[1]), int(head[3])
        nodes = np.array([[float(v) for v in r.split()] for r in rows[1:1 + n_nodes]])
        tris = np.array(
            [[int(v) for v in r.split()] for r in rows[1 + n_nodes:1 + n_nodes + n_tris]],
            dtype=np.int64,
        )
        boundary_line = rows[1 + n_nodes + n_tris] if len(rows) > 1 + n_nodes + n_tris else ""
        boundary = np.array([int(v) for v in boundary_line.split()], dtype=np.int64)
    except (ValueError, IndexError) as e:
        raise MeshError(f"{path}: malformed mesh file ({e})") from e

    if nodes.shape != (n_nodes, 2) or tris.shape != (n_tris, 3):
        raise MeshError(f"{path}: node/triangle counts do not match the header")

    mesh = CoarseMesh(nodes, tris, boundary)
    if not with_values:
        return mesh
    tail = rows[2 + n_nodes + n_tris:]
    if len(tail) != n_nodes:
        raise MeshError(f"{path}: expected {n_nodes} nodal values, found {len(tail)}")
    return mesh, np.array([float(v) for v in tail])
