"""Lagrange finite element spaces on structured triangle meshes.

Provides scalar P1/P2 and their vector-valued (2D) variants, a fixed
degree-4 quadrature rule, nodal interpolation, L2 projection and the
constraint handling (homogeneous Dirichlet elimination, periodic folding,
zero-mean bookkeeping) used by the time-stepping schemes.

Vector spaces stack components: coefficients are [all x-components;
all y-components], each block ordered like the scalar space's nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from . import mesh as meshmod
from .mesh import FloatArray, IntArray, TriMesh

SpaceKind = Literal["scalar_p1", "scalar_p2", "vector_p1", "vector_p2"]
Constraint = Literal["free", "zero_mean", "dirichlet0", "periodic"]
Deriv = Literal["value", "dx", "dy"]

_SCALAR_OF = {
    "scalar_p1": "scalar_p1",
    "scalar_p2": "scalar_p2",
    "vector_p1": "scalar_p1",
    "vector_p2": "scalar_p2",
}


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference triangle.

    Weights sum to the reference area 1/2; integrals over a physical
    triangle T are 2*|T| * sum_q w_q f(x_q).
    """

    points: FloatArray
    weights: FloatArray

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _dunavant_degree4() -> QuadratureRule:
    # Two orbits of three symmetric points; exact for polynomials of
    # degree 4, which covers every product of P2 shape functions under
    # affine maps.
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = []
    for a in (a1, a2):
        b = 1.0 - 2.0 * a
        pts.extend([(b, a, a), (a, b, a), (a, a, b)])
    weights = np.array([w1] * 3 + [w2] * 3) * 0.5
    return QuadratureRule(points=np.array(pts), weights=weights)


DEFAULT_QUADRATURE = _dunavant_degree4()


def p1_shape_values(bary: FloatArray) -> FloatArray:
    """P1 shape values at barycentric points; shape (n_pts, 3)."""
    return np.asarray(bary, dtype=np.float64)


def p2_shape_values(bary: FloatArray) -> FloatArray:
    """P2 shape values; vertex functions first, then edge bubbles (n_pts, 6)."""
    lam = np.asarray(bary, dtype=np.float64)
    vert = lam * (2.0 * lam - 1.0)
    edge = 4.0 * np.stack(
        [lam[:, 0] * lam[:, 1], lam[:, 1] * lam[:, 2], lam[:, 2] * lam[:, 0]], axis=1
    )
    return np.hstack([vert, edge])


def p1_shape_dlambda(bary: FloatArray) -> FloatArray:
    """d(shape)/d(lambda_j); shape (n_pts, 3, 3)."""
    n = len(bary)
    return np.broadcast_to(np.eye(3), (n, 3, 3)).copy()


def p2_shape_dlambda(bary: FloatArray) -> FloatArray:
    lam = np.asarray(bary, dtype=np.float64)
    n = len(lam)
    d = np.zeros((n, 6, 3))
    for i in range(3):
        d[:, i, i] = 4.0 * lam[:, i] - 1.0
    for e, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        d[:, 3 + e, a] = 4.0 * lam[:, b]
        d[:, 3 + e, b] = 4.0 * lam[:, a]
    return d


def shape_values(scalar_kind: str, bary: FloatArray) -> FloatArray:
    if scalar_kind == "scalar_p1":
        return p1_shape_values(bary)
    return p2_shape_values(bary)


def shape_dlambda(scalar_kind: str, bary: FloatArray) -> FloatArray:
    if scalar_kind == "scalar_p1":
        return p1_shape_dlambda(bary)
    return p2_shape_dlambda(bary)


def barycentric_gradients(mesh: TriMesh) -> FloatArray:
    """Constant gradients of the barycentric coordinates; shape (n_t, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    area2 = 2.0 * mesh.signed_areas()
    grads = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        grads[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    grads /= area2[:, None, None]
    return grads


@dataclass(frozen=True, eq=False)
class FeSpace:
    """A (possibly constrained) finite element space.

    ``n_dofs`` counts unknowns after constraint elimination; ``gather`` is
    the (n_nodes, n_dofs) matrix with u_full = gather @ u_reduced.  For the
    "free" and "zero_mean" constraints gather is the identity: the
    zero-mean condition is enforced by the solvers (rank-one multiplier),
    not by elimination.
    """

    mesh: TriMesh
    kind: SpaceKind
    constraint: Constraint
    node_coords: FloatArray
    element_dofs: IntArray
    gather: sp.csr_matrix = field(repr=False)
    constrained_scalar_nodes: IntArray = field(repr=False)

    @property
    def is_vector(self) -> bool:
        return self.kind.startswith("vector")

    @property
    def scalar_kind(self) -> str:
        return _SCALAR_OF[self.kind]

    @property
    def n_scalar_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_nodes(self) -> int:
        return self.n_scalar_nodes * (2 if self.is_vector else 1)

    @property
    def n_dofs(self) -> int:
        return self.gather.shape[1]

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    @property
    def dof_coords(self) -> FloatArray:
        """Coordinate of each reduced DOF (vector spaces repeat per component)."""
        scalar_keep = self._scalar_keep_indices()
        coords = self.node_coords[scalar_keep]
        if self.is_vector:
            return np.vstack([coords, coords])
        return coords

    def _scalar_keep_indices(self) -> IntArray:
        mask = np.ones(self.n_scalar_nodes, dtype=bool)
        mask[self.constrained_scalar_nodes] = False
        if self.constraint == "periodic":
            # Representatives only.
            return np.flatnonzero(mask)
        if self.constraint == "dirichlet0":
            return np.flatnonzero(mask)
        return np.arange(self.n_scalar_nodes)

    def expand(self, u_reduced: FloatArray) -> FloatArray:
        return self.gather @ u_reduced

    def reduce_load(self, b_full: FloatArray) -> FloatArray:
        return self.gather.T @ b_full

    def reduce_matrix(self, a_full: sp.spmatrix) -> sp.csr_matrix:
        return (self.gather.T @ a_full @ self.gather).tocsr()


def _scalar_node_layout(mesh: TriMesh, scalar_kind: str) -> tuple[FloatArray, IntArray]:
    if scalar_kind == "scalar_p1":
        return mesh.vertices.copy(), mesh.triangles.copy()
    coords = np.vstack([mesh.vertices, mesh.edge_midpoints])
    dofs = np.hstack([mesh.triangles, mesh.n_vertices + mesh.tri_edges])
    return coords, dofs


def _scalar_constrained_nodes(mesh: TriMesh, scalar_kind: str, constraint: Constraint) -> IntArray:
    if constraint == "dirichlet0":
        nodes = [np.flatnonzero(mesh.boundary_vertex_mask)]
        if scalar_kind == "scalar_p2":
            nodes.append(mesh.n_vertices + np.flatnonzero(mesh.boundary_edge_mask))
        return np.concatenate(nodes).astype(np.int64)
    if constraint == "periodic":
        vrep = meshmod.periodic_vertex_map(mesh)
        nodes = [np.flatnonzero(vrep != np.arange(mesh.n_vertices))]
        if scalar_kind == "scalar_p2":
            erep = meshmod.periodic_edge_map(mesh)
            nodes.append(mesh.n_vertices + np.flatnonzero(erep != np.arange(mesh.n_edges)))
        return np.concatenate(nodes).astype(np.int64)
    return np.empty(0, dtype=np.int64)


def _scalar_gather(mesh: TriMesh, scalar_kind: str, constraint: Constraint,
                   n_scalar: int) -> sp.csr_matrix:
    if constraint in ("free", "zero_mean"):
        return sp.identity(n_scalar, format="csr")
    if constraint == "dirichlet0":
        keep = np.ones(n_scalar, dtype=bool)
        keep[_scalar_constrained_nodes(mesh, scalar_kind, constraint)] = False
        cols = np.flatnonzero(keep)
        g = sp.csr_matrix(
            (np.ones(len(cols)), (cols, np.arange(len(cols)))), shape=(n_scalar, len(cols))
        )
        return g
    # Periodic: every node points at its representative's reduced index.
    rep = np.arange(n_scalar)
    vrep = meshmod.periodic_vertex_map(mesh)
    rep[: mesh.n_vertices] = vrep
    if scalar_kind == "scalar_p2":
        rep[mesh.n_vertices:] = mesh.n_vertices + meshmod.periodic_edge_map(mesh)
    is_rep = rep == np.arange(n_scalar)
    reduced_index = np.cumsum(is_rep) - 1
    cols = reduced_index[rep]
    g = sp.csr_matrix(
        (np.ones(n_scalar), (np.arange(n_scalar), cols)), shape=(n_scalar, int(is_rep.sum()))
    )
    return g


def make_space(mesh: TriMesh, kind: SpaceKind, constraint: Constraint = "free") -> FeSpace:
    """Construct a finite element space with the given constraint.

    Raises:
        ValueError: for a periodic constraint on a Dirichlet-mode mesh or
            an unknown kind/constraint combination.
    """
    if kind not in _SCALAR_OF:
        raise ValueError(f"unknown space kind {kind!r}")
    if constraint not in ("free", "zero_mean", "dirichlet0", "periodic"):
        raise ValueError(f"unknown constraint {constraint!r}")
    if constraint == "periodic" and mesh.bc_mode != "periodic":
        raise ValueError("periodic constraint requires a periodic-mode mesh")

    scalar_kind = _SCALAR_OF[kind]
    node_coords, element_dofs = _scalar_node_layout(mesh, scalar_kind)
    n_scalar = len(node_coords)
    constrained = _scalar_constrained_nodes(mesh, scalar_kind, constraint)
    g_scalar = _scalar_gather(mesh, scalar_kind, constraint, n_scalar)
    gather = sp.block_diag([g_scalar, g_scalar], format="csr") if kind.startswith("vector") else g_scalar
    return FeSpace(
        mesh=mesh,
        kind=kind,
        constraint=constraint,
        node_coords=node_coords,
        element_dofs=element_dofs,
        gather=gather,
        constrained_scalar_nodes=constrained,
    )


def eval_basis(space: FeSpace, triangle: int, bary: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Values and gradients of the local scalar shape functions at one point.

    Returns (values, grads) with shapes (n_loc,) and (n_loc, 2).  Vector
    spaces report their scalar component basis.
    """
    b = np.asarray(bary, dtype=np.float64).reshape(1, 3)
    vals = shape_values(space.scalar_kind, b)[0]
    dlam = shape_dlambda(space.scalar_kind, b)[0]
    glam = barycentric_gradients(space.mesh)[triangle]
    return vals, dlam @ glam


def point_eval_matrix(space: FeSpace, points: FloatArray, deriv: Deriv = "value") -> sp.csr_matrix:
    """Sparse evaluation operator for the unconstrained scalar nodal basis.

    Row q of the result applied to full scalar coefficients gives the value
    (or x/y-derivative) of the FE function at points[q].  Vector fields are
    handled by applying the same matrix to each component block.
    """
    tri, bary = meshmod.locate_points(space.mesh, points)
    if deriv == "value":
        vals = shape_values(space.scalar_kind, bary)
    else:
        dlam = shape_dlambda(space.scalar_kind, bary)
        glam = barycentric_gradients(space.mesh)[tri]
        comp = 0 if deriv == "dx" else 1
        vals = np.einsum("qlj,qj->ql", dlam, glam[:, :, comp])
    cols = space.element_dofs[tri]
    rows = np.repeat(np.arange(len(points)), space.n_local)
    mat = sp.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(len(points), space.n_scalar_nodes)
    )
    return mat


def integral_weights(space: FeSpace) -> FloatArray:
    """Vector c with c_i = integral of scalar basis function i over D."""
    rule = DEFAULT_QUADRATURE
    vals = shape_values(space.scalar_kind, rule.points)
    areas2 = 2.0 * space.mesh.signed_areas()
    per_elem = np.outer(areas2, rule.weights @ vals)
    c = np.zeros(space.n_scalar_nodes)
    np.add.at(c, space.element_dofs.ravel(), per_elem.ravel())
    return c


def zero_mean(space: FeSpace, coeffs: FloatArray) -> FloatArray:
    """Shift nodal coefficients so the represented function has zero mean.

    For Lagrange bases subtracting the mean value from every coefficient
    subtracts the constant from the function; |D| = 1 so the mean is just
    the integral.  Idempotent up to roundoff.
    """
    if space.is_vector:
        raise ValueError("zero_mean applies to scalar spaces")
    c = integral_weights(space)
    if space.constraint in ("dirichlet0", "periodic"):
        c = space.gather.T @ c
        total = c.sum()
    else:
        total = 1.0
    return coeffs - (c @ coeffs) / total


def interpolate(space: FeSpace, f: Callable[[FloatArray], NDArray]) -> FloatArray:
    """Nodal interpolation; returns reduced coefficients.

    ``f`` maps an (n, 2) coordinate array to (n,) values for scalar spaces
    or (n, 2) for vector spaces.  Constrained nodes are dropped after
    evaluation (Dirichlet data is handled separately by the schemes).
    """
    keep = space._scalar_keep_indices()
    coords = space.node_coords[keep]
    vals = np.asarray(f(coords), dtype=np.float64)
    if space.is_vector:
        if vals.shape != (len(coords), 2):
            raise ValueError("vector interpolation needs f returning (n, 2)")
        return np.concatenate([vals[:, 0], vals[:, 1]])
    if vals.shape != (len(coords),):
        raise ValueError("scalar interpolation needs f returning (n,)")
    return vals


def l2_project(space: FeSpace, f: Callable[[FloatArray], NDArray]) -> FloatArray:
    """L2 projection onto the (reduced) space via a mass-matrix solve."""
    from . import assembly, linsolve

    mass = assembly.assemble_mass(space)
    load = assembly.assemble_load(space, f)
    return linsolve.solve_spd(mass, load)
