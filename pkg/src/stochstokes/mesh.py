"""Structured triangulations of the unit square.

Every mesh is an m-by-m grid of square cells, each cell split along the
same diagonal (bottom-left to top-right direction, a "/" cut), so that any
mesh with m a multiple of a coarser m' is nested inside it.  Vertices are
numbered row-major from the bottom-left corner; triangles are numbered
cell-by-cell, lower triangle first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

BcMode = Literal["dirichlet", "periodic"]


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangulation of D = (0,1)^2.

    Attributes:
        m: grid resolution; the mesh has 2*m^2 triangles and h = 1/m.
        bc_mode: "dirichlet" or "periodic" (controls vertex identification).
        vertices: (n_v, 2) coordinates.
        triangles: (n_t, 3) vertex indices, counterclockwise.
        edges: (n_e, 2) vertex index pairs, each sorted, lexicographic order.
        tri_edges: (n_t, 3) edge indices for the local edges
            (v0,v1), (v1,v2), (v2,v0) of each triangle.
    """

    m: int
    bc_mode: BcMode
    vertices: FloatArray
    triangles: IntArray
    edges: IntArray
    tri_edges: IntArray
    # Integer lattice coordinates of each vertex; kept so boundary and
    # periodicity logic never has to compare floats.
    vertex_ij: IntArray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_midpoints(self) -> FloatArray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def boundary_vertex_mask(self) -> NDArray[np.bool_]:
        ij = self.vertex_ij
        return (ij[:, 0] == 0) | (ij[:, 0] == self.m) | (ij[:, 1] == 0) | (ij[:, 1] == self.m)

    def boundary_side_masks(self) -> dict[str, NDArray[np.bool_]]:
        """Per-vertex flags for each side of the square (corners on two sides)."""
        ij = self.vertex_ij
        return {
            "left": ij[:, 0] == 0,
            "right": ij[:, 0] == self.m,
            "bottom": ij[:, 1] == 0,
            "top": ij[:, 1] == self.m,
        }

    @property
    def boundary_edge_mask(self) -> NDArray[np.bool_]:
        """Edges lying in the boundary: both endpoints on one common side."""
        ij = self.vertex_ij
        a, b = self.edges[:, 0], self.edges[:, 1]
        same_side = np.zeros(self.n_edges, dtype=bool)
        for axis in (0, 1):
            for val in (0, self.m):
                same_side |= (ij[a, axis] == val) & (ij[b, axis] == val)
        return same_side

    def signed_areas(self) -> FloatArray:
        p0 = self.vertices[self.triangles[:, 0]]
        p1 = self.vertices[self.triangles[:, 1]]
        p2 = self.vertices[self.triangles[:, 2]]
        d1 = p1 - p0
        d2 = p2 - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_uniform(m: int, bc_mode: BcMode = "dirichlet") -> TriMesh:
    """Build the structured uniform mesh with 2*m^2 triangles on (0,1)^2.

    Args:
        m: number of cells per side, at least 2 (coarser grids cannot carry
            quadratic elements in a useful way).
        bc_mode: which identification the mesh supports downstream.

    Raises:
        ValueError: if m < 2 or bc_mode is unknown.
    """
    if m < 2:
        raise ValueError(f"mesh resolution m={m} is too coarse; need m >= 2")
    if bc_mode not in ("dirichlet", "periodic"):
        raise ValueError(f"unknown bc_mode {bc_mode!r}")

    n_side = m + 1
    jj, ii = np.meshgrid(np.arange(n_side), np.arange(n_side), indexing="ij")
    # Row-major: vertex index = iy*(m+1) + ix, coordinates (ix, iy)/m.
    vertex_ij = np.column_stack([ii.ravel(), jj.ravel()]).astype(np.int64)
    vertices = vertex_ij.astype(np.float64) / m

    cy, cx = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    cx = cx.ravel()
    cy = cy.ravel()
    va = cy * n_side + cx          # bottom-left of each cell
    vb = va + 1                    # bottom-right
    vc = va + n_side + 1           # top-right
    vd = va + n_side               # top-left
    lower = np.column_stack([va, vb, vd])
    upper = np.column_stack([vb, vc, vd])
    # Interleave so cell (cx, cy) owns triangles 2*(cy*m+cx) and 2*(cy*m+cx)+1.
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    pair_local = triangles[:, [[0, 1], [1, 2], [2, 0]]]
    pairs = np.sort(pair_local.reshape(-1, 2), axis=1)
    keys = pairs[:, 0] * (n_side * n_side) + pairs[:, 1]
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    edges = np.column_stack([unique_keys // (n_side * n_side), unique_keys % (n_side * n_side)])
    tri_edges = inverse.reshape(-1, 3)

    return TriMesh(
        m=m,
        bc_mode=bc_mode,
        vertices=vertices,
        triangles=triangles,
        edges=edges.astype(np.int64),
        tri_edges=tri_edges.astype(np.int64),
        vertex_ij=vertex_ij,
    )


def periodic_vertex_map(mesh: TriMesh) -> IntArray:
    """Map each vertex to its representative under period-1 identification.

    Right-boundary vertices map to the left at equal height, top to bottom at
    equal abscissa, and all four corners to the origin.  Idempotent.

    Raises:
        ValueError: if the mesh was not built in periodic mode.
    """
    if mesh.bc_mode != "periodic":
        raise ValueError("periodic_vertex_map requires a periodic-mode mesh")
    ij = mesh.vertex_ij
    rep_ix = ij[:, 0] % mesh.m
    rep_iy = ij[:, 1] % mesh.m
    return (rep_iy * (mesh.m + 1) + rep_ix).astype(np.int64)


def periodic_edge_map(mesh: TriMesh) -> IntArray:
    """Map each edge to its representative edge under periodic identification.

    Identification wraps the edge midpoint; this handles the edges touching
    the far corner, where identifying endpoints separately would not produce
    a mesh edge.
    """
    if mesh.bc_mode != "periodic":
        raise ValueError("periodic_edge_map requires a periodic-mode mesh")
    ij = mesh.vertex_ij
    # Midpoints on the doubled lattice (units of h/2) stay integral.
    mid2 = ij[mesh.edges[:, 0]] + ij[mesh.edges[:, 1]]
    mid2_wrapped = mid2 % (2 * mesh.m)
    key_of = {}
    for e, (kx, ky) in enumerate(mid2_wrapped):
        key_of.setdefault((kx, ky), e)
    # First edge (lexicographic order) with a given wrapped midpoint wins;
    # interior edges map to themselves because their midpoint does not move.
    mid2_self = mid2
    rep = np.empty(mesh.n_edges, dtype=np.int64)
    for e in range(mesh.n_edges):
        kx, ky = mid2_self[e] % (2 * mesh.m)
        rep[e] = key_of[(kx, ky)]
    return rep


def locate_points(mesh: TriMesh, points: FloatArray) -> tuple[IntArray, FloatArray]:
    """Find the containing triangle and barycentric coordinates of each point.

    Points must lie in the closed unit square; points on a cell diagonal are
    assigned to the lower triangle.  Returns (tri_index, bary) with bary of
    shape (n_pts, 3) ordered like the triangle's vertices.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = mesh.m
    scaled = np.clip(pts * m, 0.0, float(m))
    cell = np.minimum(scaled.astype(np.int64), m - 1)
    local = scaled - cell
    lx, ly = local[:, 0], local[:, 1]

    in_lower = lx + ly <= 1.0 + 1e-12
    tri = 2 * (cell[:, 1] * m + cell[:, 0]) + (~in_lower).astype(np.int64)

    bary = np.empty((len(pts), 3), dtype=np.float64)
    # Lower triangle (a, b, d): local vertices (0,0), (1,0), (0,1).
    bary[in_lower, 0] = 1.0 - lx[in_lower] - ly[in_lower]
    bary[in_lower, 1] = lx[in_lower]
    bary[in_lower, 2] = ly[in_lower]
    # Upper triangle (b, c, d): local vertices (1,0), (1,1), (0,1).
    up = ~in_lower
    bary[up, 0] = 1.0 - ly[up]
    bary[up, 1] = lx[up] + ly[up] - 1.0
    bary[up, 2] = 1.0 - lx[up]
    return tri, bary


def write_text(mesh: TriMesh, nodes_path: str, elements_path: str) -> None:
    """Dump the mesh as plain-text node and element lists (debugging aid)."""
    with open(nodes_path, "w", encoding="ascii") as fh:
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
    with open(elements_path, "w", encoding="ascii") as fh:
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
