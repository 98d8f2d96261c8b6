"""Sparse operator and load assembly.

All bilinear forms are integrated with the fixed degree-4 rule, which is
exact for every product of P2 shape functions on affine triangles.  Matrices
come back reduced by the space's constraint (gather) matrices; load helpers
expose both full-node and reduced variants because the schemes mix the two.

Per-space quadrature data (physical quadrature points, weighted load
operators, pointwise evaluation operators) is cached by space identity and
reused across every time step and realization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from . import fem
from .fem import FeSpace, FloatArray


@dataclass(frozen=True, eq=False)
class QuadData:
    """Quadrature-point operators for one space (unconstrained scalar nodes).

    value_op / grad_x_op / grad_y_op evaluate a scalar FE function at all
    physical quadrature points; load_op maps point values of an integrand
    to the load vector (weights folded in), i.e. load = load_op @ f(points).
    """

    points: FloatArray
    weights: FloatArray
    value_op: sp.csr_matrix
    grad_x_op: sp.csr_matrix
    grad_y_op: sp.csr_matrix
    load_op: sp.csr_matrix


@lru_cache(maxsize=None)
def quad_data(space: FeSpace) -> QuadData:
    rule = fem.DEFAULT_QUADRATURE
    mesh = space.mesh
    nq = rule.n_points
    n_t = mesh.n_triangles
    n_pts = n_t * nq

    tri_coords = mesh.vertices[mesh.triangles]
    points = np.einsum("qj,tjd->tqd", rule.points, tri_coords).reshape(n_pts, 2)
    areas2 = 2.0 * mesh.signed_areas()
    weights = np.repeat(areas2, nq) * np.tile(rule.weights, n_t)

    vals = fem.shape_values(space.scalar_kind, rule.points)
    dlam = fem.shape_dlambda(space.scalar_kind, rule.points)
    glam = fem.barycentric_gradients(mesh)
    grads = np.einsum("qlj,tjd->tqld", dlam, glam)

    rows = np.repeat(np.arange(n_pts), space.n_local)
    cols = np.broadcast_to(
        space.element_dofs[:, None, :], (n_t, nq, space.n_local)
    ).ravel()
    shape = (n_pts, space.n_scalar_nodes)
    value_op = sp.csr_matrix(
        (np.broadcast_to(vals, (n_t, nq, space.n_local)).ravel(), (rows, cols)), shape=shape
    )
    grad_x_op = sp.csr_matrix((grads[:, :, :, 0].ravel(), (rows, cols)), shape=shape)
    grad_y_op = sp.csr_matrix((grads[:, :, :, 1].ravel(), (rows, cols)), shape=shape)
    load_op = (value_op.T @ sp.diags(weights)).tocsr()
    return QuadData(
        points=points,
        weights=weights,
        value_op=value_op,
        grad_x_op=grad_x_op,
        grad_y_op=grad_y_op,
        load_op=load_op,
    )


def _scatter(element_mats: FloatArray, dofs: NDArray, n: int) -> sp.csr_matrix:
    n_loc = dofs.shape[1]
    rows = np.repeat(dofs, n_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, n_loc)).ravel()
    return sp.csr_matrix((element_mats.ravel(), (rows, cols)), shape=(n, n))


def _scalar_mass(space: FeSpace) -> sp.csr_matrix:
    rule = fem.DEFAULT_QUADRATURE
    vals = fem.shape_values(space.scalar_kind, rule.points)
    base = np.einsum("q,ql,qk->lk", rule.weights, vals, vals)
    areas2 = 2.0 * space.mesh.signed_areas()
    elem = areas2[:, None, None] * base
    return _scatter(elem, space.element_dofs, space.n_scalar_nodes)


def _scalar_stiffness(space: FeSpace) -> sp.csr_matrix:
    rule = fem.DEFAULT_QUADRATURE
    dlam = fem.shape_dlambda(space.scalar_kind, rule.points)
    glam = fem.barycentric_gradients(space.mesh)
    grads = np.einsum("qlj,tjd->tqld", dlam, glam)
    areas2 = 2.0 * space.mesh.signed_areas()
    elem = np.einsum("q,tqld,tqkd->tlk", rule.weights, grads, grads) * areas2[:, None, None]
    return _scatter(elem, space.element_dofs, space.n_scalar_nodes)


def assemble_mass(space: FeSpace, reduced: bool = True) -> sp.csr_matrix:
    """Mass matrix; vector spaces get the block-diagonal two-component form."""
    m = _scalar_mass(space)
    if space.is_vector:
        m = sp.block_diag([m, m], format="csr")
    return space.reduce_matrix(m) if reduced else m


def assemble_stiffness(space: FeSpace, reduced: bool = True) -> sp.csr_matrix:
    """Stiffness (Dirichlet form) matrix; vector spaces component-block-diagonal."""
    a = _scalar_stiffness(space)
    if space.is_vector:
        a = sp.block_diag([a, a], format="csr")
    return space.reduce_matrix(a) if reduced else a


def assemble_divergence(vel_space: FeSpace, pres_space: FeSpace,
                        reduced: bool = True) -> sp.csr_matrix:
    """Divergence coupling with entries (i, j) = integral q_i * div(v_j).

    Rows follow the pressure space, columns the stacked vector velocity
    space.  Both sides are reduced by their own constraints unless
    ``reduced`` is False.
    """
    if not vel_space.is_vector or pres_space.is_vector:
        raise ValueError("expected a vector velocity space and a scalar pressure space")
    if vel_space.mesh is not pres_space.mesh:
        raise ValueError("velocity and pressure spaces must share a mesh")

    rule = fem.DEFAULT_QUADRATURE
    pvals = fem.shape_values(pres_space.scalar_kind, rule.points)
    dlam = fem.shape_dlambda(vel_space.scalar_kind, rule.points)
    glam = fem.barycentric_gradients(vel_space.mesh)
    grads = np.einsum("qlj,tjd->tqld", dlam, glam)
    areas2 = 2.0 * vel_space.mesh.signed_areas()

    n_p = pres_space.n_scalar_nodes
    n_v = vel_space.n_scalar_nodes
    blocks = []
    for comp in range(2):
        elem = np.einsum("q,qi,tqj->tij", rule.weights, pvals, grads[:, :, :, comp])
        elem *= areas2[:, None, None]
        rows = np.repeat(pres_space.element_dofs, vel_space.n_local, axis=1).ravel()
        cols = np.tile(vel_space.element_dofs, (1, pres_space.n_local)).ravel()
        blocks.append(sp.csr_matrix((elem.ravel(), (rows, cols)), shape=(n_p, n_v)))
    b_full = sp.hstack(blocks, format="csr")
    if not reduced:
        return b_full
    return (pres_space.gather.T @ b_full @ vel_space.gather).tocsr()


def assemble_load(space: FeSpace, f: Callable[[FloatArray], NDArray],
                  reduced: bool = True) -> FloatArray:
    """Load vector of a pointwise function f (scalar or 2-vector valued)."""
    qd = quad_data(space)
    vals = np.asarray(f(qd.points), dtype=np.float64)
    if space.is_vector:
        b = np.concatenate([qd.load_op @ vals[:, 0], qd.load_op @ vals[:, 1]])
    else:
        b = qd.load_op @ vals
    return space.reduce_load(b) if reduced else b


def noise_load(vel_space: FeSpace, B_fn: Callable[[FloatArray], FloatArray],
               u_coeffs: FloatArray, dW: float, reduced: bool = True) -> FloatArray:
    """Load b_i = dW * integral B(u_h) . v_i for a spatially constant increment.

    ``u_coeffs`` are full (unconstrained) stacked nodal coefficients; B_fn
    maps pointwise velocity values (n, 2) to field values (n, 2).  Any
    gradient-part subtraction of the field happens in the caller.
    """
    qd = quad_data(vel_space)
    n = vel_space.n_scalar_nodes
    u_q = np.column_stack([qd.value_op @ u_coeffs[:n], qd.value_op @ u_coeffs[n:]])
    field = np.asarray(B_fn(u_q), dtype=np.float64)
    b = dW * np.concatenate([qd.load_op @ field[:, 0], qd.load_op @ field[:, 1]])
    return vel_space.reduce_load(b) if reduced else b


def l2_norm(space: FeSpace, coeffs_full: FloatArray) -> float:
    """L2 norm of an FE function given full nodal coefficients."""
    qd = quad_data(space)
    if space.is_vector:
        n = space.n_scalar_nodes
        vx = qd.value_op @ coeffs_full[:n]
        vy = qd.value_op @ coeffs_full[n:]
        return float(np.sqrt(qd.weights @ (vx * vx + vy * vy)))
    v = qd.value_op @ coeffs_full
    return float(np.sqrt(qd.weights @ (v * v)))


def h1_seminorm(space: FeSpace, coeffs_full: FloatArray) -> float:
    """H1 seminorm (L2 norm of the gradient) from full nodal coefficients."""
    qd = quad_data(space)
    comps = []
    if space.is_vector:
        n = space.n_scalar_nodes
        comps = [coeffs_full[:n], coeffs_full[n:]]
    else:
        comps = [coeffs_full]
    acc = 0.0
    for c in comps:
        gx = qd.grad_x_op @ c
        gy = qd.grad_y_op @ c
        acc += qd.weights @ (gx * gx + gy * gy)
    return float(np.sqrt(acc))
