"""Time-stepping schemes for the stochastic Stokes system.

Four one-step schemes share a common engine.  Per step, all of them solve

    (u^{n+1}, v) + k (grad u^{n+1}, grad v) - k (div v, r^{n+1})
        = (u^n, v) + k (f^{n+1}, v) + (noise load)

subject to the incompressibility constraint; they differ in two switches:

* element pairing: "mixed" uses Taylor-Hood (vector P2 velocity, P1
  pressure) with (div u^{n+1}, q) = 0, while "stabilized" uses equal-order
  vector P1/P1 with (div u^{n+1}, q) + eps (grad r^{n+1}, grad q) = 0;
* noise treatment: "helmholtz" variants split B(u^n) = grad xi + eta by a
  discrete Poisson solve and drive the momentum equation with the
  divergence-free part eta only, recovering the full pressure afterwards
  as p^{n+1} = r^{n+1} + k^{-1} xi^n dW; "standard" variants use B(u^n)
  itself and set p = r.

A Stepper precomputes matrices, factorizations and quadrature operators
for one configuration; it is immutable while running and can be shared
read-only across worker processes, each realization carrying its own
state vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

from . import assembly, fem, linsolve
from . import mesh as meshmod
from . import noise as noisemod
from .fem import FeSpace
from .mesh import BcMode, FloatArray

SchemeName = Literal[
    "mixed_helmholtz", "mixed_standard", "stabilized_helmholtz", "stabilized_standard"
]

VectorFn = Callable[[FloatArray], FloatArray]
ForcingFn = Callable[[FloatArray, float], FloatArray]


class NumericalError(Exception):
    """A realization produced non-finite values; carries step diagnostics."""


@dataclass(frozen=True)
class SchemeConfig:
    """Everything needed to build a Stepper (noise path supplied separately).

    ``B_fn`` maps pointwise velocity values (n, 2) to noise-coefficient
    values (n, 2); None means no noise term.  ``f_fn(points, t)`` is the
    forcing; ``u0_fn(points)`` the initial velocity; ``bc_fn(points)``
    nonzero Dirichlet data evaluated on boundary nodes.  ``eps`` defaults
    to h^2 for the stabilized schemes and must be absent/zero for the
    mixed ones.
    """

    scheme: SchemeName
    m: int
    k: float
    T: float = 1.0
    eps: float | None = None
    bc_mode: BcMode = "dirichlet"
    B_fn: VectorFn | None = None
    f_fn: ForcingFn | None = None
    u0_fn: VectorFn | None = None
    bc_fn: VectorFn | None = None
    f_time_dependent: bool = False
    solver_method: str = "direct"

    @property
    def is_stabilized(self) -> bool:
        return self.scheme.startswith("stabilized")

    @property
    def is_helmholtz(self) -> bool:
        return self.scheme.endswith("helmholtz")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def eps_value(self) -> float:
        if not self.is_stabilized:
            return 0.0
        return self.h ** 2 if self.eps is None else self.eps

    @property
    def n_steps(self) -> int:
        steps = self.T / self.k
        n = round(steps)
        if n < 1 or abs(steps - n) > 1e-9 * max(1.0, n):
            raise ValueError(f"T={self.T} is not an integral multiple of k={self.k}")
        return n


@dataclass(frozen=True)
class SchemeState:
    """Coefficients after step n (full nodal vectors, not reduced).

    ``r`` is the deterministic-part pressure and ``p`` the recovered full
    pressure of the split variants (p = r for the standard ones).  ``xi``
    holds the gradient potential removed from the noise term in the step
    that produced this state, with the Wiener increment folded in, so
    p = r + xi / k; it is zero for the standard variants and at step 0.
    """

    n: int
    u: FloatArray
    r: FloatArray
    p: FloatArray
    xi: FloatArray


@dataclass(frozen=True)
class Trajectory:
    """What one realization hands back to the Monte Carlo layer.

    ``max_u_sq`` tracks max_n ||u^n||^2 in L2 over the whole run, the
    quantity whose Monte Carlo mean the energy stability bound controls.
    """

    final: SchemeState
    avg_r: FloatArray
    avg_p: FloatArray
    k: float
    n_steps: int
    max_u_sq: float = 0.0
    path_seed: int | None = None
    snapshots: dict[int, SchemeState] = field(default_factory=dict)


def _validate_config(config: SchemeConfig) -> None:
    if config.scheme not in (
        "mixed_helmholtz", "mixed_standard", "stabilized_helmholtz", "stabilized_standard"
    ):
        raise ValueError(f"unknown scheme {config.scheme!r}")
    if not config.is_stabilized and config.eps not in (None, 0, 0.0):
        raise ValueError("mixed schemes take no stabilization parameter")
    if config.is_stabilized and config.eps_value <= 0.0:
        raise ValueError("stabilized schemes need eps > 0")
    if config.bc_fn is not None and config.bc_mode != "dirichlet":
        raise ValueError("boundary data requires dirichlet mode")
    config.n_steps  # raises if T/k is not integral


class Stepper:
    """Precomputed operators for one SchemeConfig; runs realizations."""

    def __init__(self, config: SchemeConfig):
        _validate_config(config)
        self.config = config
        mesh = meshmod.build_uniform(config.m, config.bc_mode)
        self.mesh = mesh

        vel_kind = "vector_p1" if config.is_stabilized else "vector_p2"
        vel_constraint = "dirichlet0" if config.bc_mode == "dirichlet" else "periodic"
        pres_constraint = "zero_mean" if config.bc_mode == "dirichlet" else "periodic"
        self.vel_space = fem.make_space(mesh, vel_kind, vel_constraint)
        self.pres_space = fem.make_space(mesh, "scalar_p1", pres_constraint)

        k, eps = config.k, config.eps_value
        m_full = assembly.assemble_mass(self.vel_space, reduced=False)
        a_full = assembly.assemble_stiffness(self.vel_space, reduced=False)
        g = self.vel_space.gather
        self._m_full = m_full
        self._gather = g
        m_red = (g.T @ m_full @ g).tocsr()
        a_red = (g.T @ a_full @ g).tocsr()
        b_red = assembly.assemble_divergence(self.vel_space, self.pres_space)
        self._b_red = b_red
        l_red = assembly.assemble_stiffness(self.pres_space)
        self._l_red = l_red
        c_p = self.pres_space.reduce_load(fem.integral_weights(self.pres_space))
        self._c_p = c_p

        self.saddle = linsolve.SaddleSolver(
            linsolve.BlockSystem(
                mass=m_red, stiffness=a_red, divergence=b_red,
                pressure_laplacian=l_red, k=k, eps=eps, mean_weights=c_p,
            ),
            method=config.solver_method,
        )

        self.xi_solver = linsolve.PoissonSolver(l_red, c_p)

        qd_vel = assembly.quad_data(self.vel_space)
        qd_p = assembly.quad_data(self.pres_space)
        self._qd_vel = qd_vel
        self._qd_p = qd_p
        # Both spaces share the same mesh and rule, so the physical points
        # coincide; gradient loads against the scalar space reuse them.
        wdiag = sp.diags(qd_p.weights)
        self._gx_load = (qd_p.grad_x_op.T @ wdiag).tocsr()
        self._gy_load = (qd_p.grad_y_op.T @ wdiag).tocsr()

        self._lift = self._build_lift()
        k_full = (m_full + k * a_full).tocsr()
        if self._lift is not None:
            b_full = assembly.assemble_divergence(self.vel_space, self.pres_space, reduced=False)
            self._rhs_u_lift = g.T @ (k_full @ self._lift)
            self._rhs_p_const = -(self.pres_space.gather.T @ (b_full @ self._lift))
        else:
            self._rhs_u_lift = None
            self._rhs_p_const = np.zeros(b_red.shape[0])

        self._f_load_static: FloatArray | None = None
        if config.f_fn is not None and not config.f_time_dependent:
            self._f_load_static = self._forcing_load(0.0)
        self._mode_basis_q: FloatArray | None = None

    # -- setup helpers ---------------------------------------------------

    def _build_lift(self) -> FloatArray | None:
        config = self.config
        if config.bc_fn is None:
            return None
        space = self.vel_space
        nodes = space.constrained_scalar_nodes
        coords = space.node_coords[nodes]
        vals = np.asarray(config.bc_fn(coords), dtype=np.float64)
        lift = np.zeros(space.n_nodes)
        lift[nodes] = vals[:, 0]
        lift[space.n_scalar_nodes + nodes] = vals[:, 1]
        return lift

    def _forcing_load(self, t: float) -> FloatArray:
        config = self.config
        if config.f_fn is None:
            return np.zeros(self.vel_space.n_nodes)
        qd = self._qd_vel
        vals = np.asarray(config.f_fn(qd.points, t), dtype=np.float64)
        return np.concatenate([qd.load_op @ vals[:, 0], qd.load_op @ vals[:, 1]])

    def _mode_basis(self, J: int) -> FloatArray:
        if self._mode_basis_q is None or self._mode_basis_q.shape[1] != J * J:
            self._mode_basis_q = noisemod.mode_basis_matrix(self._qd_vel.points, J)
        return self._mode_basis_q

    # -- public stepping API ---------------------------------------------

    def initial_state(self) -> SchemeState:
        space = self.vel_space
        if self.config.u0_fn is not None:
            u = space.expand(fem.interpolate(space, self.config.u0_fn))
        else:
            u = np.zeros(space.n_nodes)
        if self._lift is not None:
            u = u + self._lift
        n_p = self.pres_space.n_scalar_nodes
        zeros = np.zeros(n_p)
        return SchemeState(n=0, u=u, r=zeros, p=zeros.copy(), xi=zeros.copy())

    def split_field(self, field_q: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Discrete Helmholtz split of a vector field given at quadrature points.

        Solves the zero-mean Poisson problem (grad xi, grad phi) =
        (field, grad phi) over the scheme's scalar space (natural boundary
        condition in Dirichlet mode, periodic otherwise) and returns (xi as
        full scalar nodal coefficients, field - grad xi at the quadrature
        points).  The second part tests to zero against every discrete
        pressure gradient by construction.
        """
        rhs = self.pres_space.reduce_load(
            self._gx_load @ field_q[:, 0] + self._gy_load @ field_q[:, 1]
        )
        xi_red = self.xi_solver.solve(rhs)
        xi_full = self.pres_space.expand(xi_red)
        eta = field_q.copy()
        eta[:, 0] -= self._qd_p.grad_x_op @ xi_full
        eta[:, 1] -= self._qd_p.grad_y_op @ xi_full
        return xi_full, eta

    def helmholtz_step(self, u_full: FloatArray,
                       B_fn: VectorFn | None = None) -> tuple[FloatArray, FloatArray]:
        """Split the noise coefficient B(u) into grad(xi) + eta.

        This is the coefficient-level split (no increment attached), the
        form the scheme consumes for spatially constant (scalar Wiener)
        increments; the increment then scales eta and xi linearly.  For
        field-valued increments the step splits B(u) dW(x) as one field
        instead, which this method does not cover.
        """
        B_fn = B_fn if B_fn is not None else self.config.B_fn
        if B_fn is None:
            raise ValueError("no noise coefficient function configured")
        return self.split_field(self._field_at_quadrature(u_full, B_fn))

    def _field_at_quadrature(self, u_full: FloatArray, B_fn: VectorFn) -> FloatArray:
        qd = self._qd_vel
        n = self.vel_space.n_scalar_nodes
        u_q = np.column_stack([qd.value_op @ u_full[:n], qd.value_op @ u_full[n:]])
        return np.asarray(B_fn(u_q), dtype=np.float64)

    def step(self, state: SchemeState, coarse: noisemod.CoarsePath | None) -> SchemeState:
        """Advance one step using increment number state.n of the coarse path."""
        config = self.config
        k = config.k
        n = state.n
        qd = self._qd_vel

        noise_term = np.zeros(self.vel_space.n_nodes)
        xi_full = np.zeros(self.pres_space.n_scalar_nodes)
        if config.B_fn is not None and coarse is not None:
            field = self._field_at_quadrature(state.u, config.B_fn)
            if coarse.path.kind == "scalar":
                dw = coarse.increment(n)
                if config.is_helmholtz:
                    xi_full, eta = self.split_field(field)
                    xi_full = xi_full * dw
                else:
                    eta = field
                noise_term = dw * np.concatenate(
                    [qd.load_op @ eta[:, 0], qd.load_op @ eta[:, 1]]
                )
            else:
                dw_q = self._mode_basis(coarse.path.J) @ coarse.mode_coeffs(n)
                field[:, 0] *= dw_q
                field[:, 1] *= dw_q
                if config.is_helmholtz:
                    xi_full, eta = self.split_field(field)
                else:
                    eta = field
                noise_term = np.concatenate(
                    [qd.load_op @ eta[:, 0], qd.load_op @ eta[:, 1]]
                )

        f_load = self._f_load_static
        if f_load is None:
            f_load = self._forcing_load((n + 1) * k)
        rhs_u_full = self._m_full @ state.u + k * f_load + noise_term
        rhs_u = self._gather.T @ rhs_u_full
        if self._rhs_u_lift is not None:
            rhs_u = rhs_u - self._rhs_u_lift
        u_red, r_red = self.saddle.solve(rhs_u, self._rhs_p_const)
        if not np.isfinite(u_red).all():
            raise NumericalError(f"non-finite velocity at step {n + 1}")

        u_full = self.vel_space.expand(u_red)
        if self._lift is not None:
            u_full = u_full + self._lift
        r_full = self.pres_space.expand(r_red)
        if config.is_helmholtz:
            p_full = r_full + xi_full / k
        else:
            p_full = r_full
        return SchemeState(n=n + 1, u=u_full, r=r_full, p=p_full, xi=xi_full)

    def run(self, path: noisemod.WienerPath | None,
            snapshot_steps: tuple[int, ...] = ()) -> Trajectory:
        """Run all steps of one realization and accumulate pressure averages."""
        config = self.config
        coarse = None
        if path is not None:
            if abs(path.T - config.T) > 1e-12:
                raise ValueError(f"path horizon {path.T} does not match T={config.T}")
            coarse = noisemod.coarsen(path, config.k)
        elif config.B_fn is not None:
            raise ValueError("a noise path is required when B_fn is set")

        state = self.initial_state()
        n_p = self.pres_space.n_scalar_nodes
        sum_r = np.zeros(n_p)
        sum_p = np.zeros(n_p)
        max_u_sq = float(state.u @ (self._m_full @ state.u))
        snapshots: dict[int, SchemeState] = {}
        if 0 in snapshot_steps:
            snapshots[0] = state
        for _ in range(config.n_steps):
            state = self.step(state, coarse)
            sum_r += state.r
            sum_p += state.p
            max_u_sq = max(max_u_sq, float(state.u @ (self._m_full @ state.u)))
            if state.n in snapshot_steps:
                snapshots[state.n] = state
        return Trajectory(
            final=state,
            avg_r=config.k * sum_r,
            avg_p=config.k * sum_p,
            k=config.k,
            n_steps=config.n_steps,
            max_u_sq=max_u_sq,
            path_seed=None if path is None else path.seed,
            snapshots=snapshots,
        )

    def constraint_residual(self, state: SchemeState) -> float:
        """Max residual of the scheme's incompressibility constraint at a state."""
        u_red = self._reduce_velocity(state.u)
        res = self._b_red @ u_red - self._rhs_p_const
        if self.config.eps_value != 0.0:
            r_red = self._reduce_pressure(state.r)
            res = res + self.config.eps_value * (self._l_red @ r_red)
        return float(np.max(np.abs(res)))

    def noise_orthogonality_residual(self, u_full: FloatArray,
                                     dw_q: FloatArray | None = None) -> float:
        """Max of |(eta, grad phi)| over the pressure basis for the split at u.

        With dw_q (an increment field sampled at the velocity quadrature
        points) the residual is computed for the product field B(u) dW,
        the object a field-noise step actually splits.
        """
        if self.config.B_fn is None:
            raise ValueError("no noise coefficient function configured")
        field = self._field_at_quadrature(u_full, self.config.B_fn)
        if dw_q is not None:
            field = field * dw_q[:, None]
        _, eta = self.split_field(field)
        t = self.pres_space.reduce_load(
            self._gx_load @ eta[:, 0] + self._gy_load @ eta[:, 1]
        )
        return float(np.max(np.abs(t)))

    def _reduce_velocity(self, u_full: FloatArray) -> FloatArray:
        if self._lift is not None:
            u_full = u_full - self._lift
        return _pick_reduced(self.vel_space, u_full)

    def _reduce_pressure(self, r_full: FloatArray) -> FloatArray:
        return _pick_reduced(self.pres_space, r_full)


def _pick_reduced(space: FeSpace, full: FloatArray) -> FloatArray:
    """Reduced coefficients of a full nodal vector consistent with the constraint.

    Every gather column holds ones at the nodes sharing that DOF; reading
    the value at the first such node inverts the expansion.
    """
    if space.constraint in ("free", "zero_mean"):
        return full
    idx = np.asarray(space.gather.argmax(axis=0)).ravel()
    return full[idx]


def run_realization(config: SchemeConfig, path: noisemod.WienerPath | None,
                    snapshot_steps: tuple[int, ...] = ()) -> Trajectory:
    """Convenience wrapper: build a Stepper for config and run one realization."""
    return Stepper(config).run(path, snapshot_steps=snapshot_steps)
