"""Sparse linear solvers for the per-step systems.

Two system shapes occur: symmetric positive (semi)definite Poisson-type
solves, and the symmetric indefinite velocity-pressure saddle systems.  The
pressure constant null space is removed with a rank-one Lagrange multiplier
row enforcing a zero mean, so no pressure node is pinned.  Factorizations
(SuperLU) are computed once per matrix and reused across all steps and
realizations; solves against a factorization are read-only and safe to run
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FloatArray


class SolverError(Exception):
    """Base class for linear-solver failures."""


class SingularMatrix(SolverError):
    """Factorization broke down or the solution failed the residual check."""


class NotConverged(SolverError):
    """An iterative solve hit its iteration cap."""


_RESIDUAL_RTOL = 1e-9


def _check_residual(a: sp.spmatrix, x: FloatArray, b: FloatArray, rtol: float,
                    what: str) -> None:
    scale = np.linalg.norm(b)
    if scale == 0.0:
        return
    res = np.linalg.norm(a @ x - b)
    if not np.isfinite(res) or res > rtol * scale:
        raise SingularMatrix(f"{what}: relative residual {res / scale:.3e} exceeds {rtol:.1e}")


def _factor(a: sp.spmatrix, what: str) -> spla.SuperLU:
    try:
        return spla.splu(a.tocsc())
    except RuntimeError as exc:  # SuperLU signals exact singularity this way
        raise SingularMatrix(f"{what}: {exc}") from exc


def solve_spd(a: sp.spmatrix, b: FloatArray, rtol: float = 1e-10) -> FloatArray:
    """Direct solve of a symmetric positive definite system with residual check."""
    lu = _factor(a, "spd solve")
    x = lu.solve(np.asarray(b, dtype=np.float64))
    _check_residual(a, x, b, rtol, "spd solve")
    return x


class PoissonSolver:
    """Reusable factorization of a semidefinite stiffness with zero-mean constraint.

    Solves L x = b subject to c @ x = 0 via the augmented symmetric system
    [[L, c], [c^T, 0]]; L may be singular with kernel = constants as long
    as c is not orthogonal to the kernel.
    """

    def __init__(self, laplacian: sp.spmatrix, mean_weights: FloatArray):
        n = laplacian.shape[0]
        c = sp.csr_matrix(np.asarray(mean_weights, dtype=np.float64).reshape(n, 1))
        aug = sp.bmat([[laplacian, c], [c.T, None]], format="csc")
        self._n = n
        self._aug = aug
        self._lu = _factor(aug, "constrained Poisson factorization")

    def solve(self, b: FloatArray, rtol: float = 1e-10) -> FloatArray:
        rhs = np.concatenate([b, [0.0]])
        x = self._lu.solve(rhs)
        _check_residual(self._aug, x, rhs, rtol, "constrained Poisson solve")
        return x[: self._n]


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Blocks of one time step's saddle system.

    Solving for (u, r):
        (M + k A) u - k Bdiv^T r = rhs_u
        Bdiv u + eps L r         = rhs_p
    with r constrained to zero mean against ``mean_weights``.  ``mass`` may
    be None for the steady (Stokes) case, which drops the M block and uses
    k = 1 semantics.
    """

    mass: sp.spmatrix | None
    stiffness: sp.spmatrix
    divergence: sp.spmatrix
    pressure_laplacian: sp.spmatrix | None
    k: float
    eps: float
    mean_weights: FloatArray


class SaddleSolver:
    """Factor a BlockSystem once; solve per-step right-hand sides repeatedly.

    method "direct" factors the full augmented symmetric indefinite matrix;
    "schur_cg" runs conjugate gradients on the pressure Schur complement
    (memory fallback, mixed schemes only).
    """

    def __init__(self, system: BlockSystem, method: str = "direct"):
        if method not in ("direct", "schur_cg"):
            raise ValueError(f"unknown saddle method {method!r}")
        self.system = system
        self.method = method
        k = system.k
        upper = system.stiffness * k
        if system.mass is not None:
            upper = system.mass + upper
        self._upper = upper.tocsr()
        n_u = upper.shape[0]
        n_p = system.divergence.shape[0]
        self._n_u, self._n_p = n_u, n_p

        bdiv = system.divergence.tocsr()
        eps_l = None
        if system.eps != 0.0:
            if system.pressure_laplacian is None:
                raise ValueError("eps > 0 needs the pressure Laplacian block")
            eps_l = system.eps * system.pressure_laplacian
        c = np.asarray(system.mean_weights, dtype=np.float64)
        self._bdiv = bdiv
        self._eps_l = eps_l
        self._c = c

        if method == "direct":
            # Row-scale the constraint rows by -k to make the block symmetric.
            ccol = sp.csr_matrix(c.reshape(n_p, 1))
            block22 = (-k) * eps_l if eps_l is not None else None
            aug = sp.bmat(
                [
                    [self._upper, (-k) * bdiv.T, None],
                    [(-k) * bdiv, block22, (-k) * ccol],
                    [None, (-k) * ccol.T, None],
                ],
                format="csc",
            )
            self._lu = _factor(aug, "saddle factorization")
        else:
            self._upper_lu = _factor(self._upper.tocsc(), "schur velocity block")

    def solve(self, rhs_u: FloatArray, rhs_p: FloatArray,
              rtol: float = _RESIDUAL_RTOL) -> tuple[FloatArray, FloatArray]:
        if self.method == "direct":
            u, r = self._solve_direct(rhs_u, rhs_p)
        else:
            u, r = self._solve_schur(rhs_u, rhs_p)
        self._check(u, r, rhs_u, rhs_p, rtol)
        # The multiplier already pins the mean; subtract the roundoff remainder.
        r = r - (self._c @ r)
        return u, r

    def _solve_direct(self, rhs_u: FloatArray, rhs_p: FloatArray) -> tuple[FloatArray, FloatArray]:
        k = self.system.k
        rhs = np.concatenate([rhs_u, -k * rhs_p, [0.0]])
        x = self._lu.solve(rhs)
        if not np.isfinite(x).all():
            raise SingularMatrix("saddle solve produced non-finite values")
        return x[: self._n_u], x[self._n_u: self._n_u + self._n_p]

    def _solve_schur(self, rhs_u: FloatArray, rhs_p: FloatArray) -> tuple[FloatArray, FloatArray]:
        # Eliminate u: (k Bdiv K^-1 Bdiv^T + eps L) r = rhs_p - Bdiv K^-1 rhs_u,
        # restricted to zero-mean pressures.
        k = self.system.k
        bdiv = self._bdiv
        c = self._c
        csq = c @ c

        def project(q: FloatArray) -> FloatArray:
            return q - (c @ q) / csq * c

        def schur_mv(q: FloatArray) -> FloatArray:
            q = project(q)
            y = k * (bdiv @ self._upper_lu.solve(bdiv.T @ q))
            if self._eps_l is not None:
                y = y + self._eps_l @ q
            return project(y)

        n_p = self._n_p
        op = spla.LinearOperator((n_p, n_p), matvec=schur_mv)
        rhs = project(rhs_p - bdiv @ self._upper_lu.solve(rhs_u))
        r, info = spla.cg(op, rhs, rtol=1e-12, atol=0.0, maxiter=10 * n_p)
        if info != 0:
            raise NotConverged(f"Schur-complement CG stopped with info={info}")
        r = project(r)
        u = self._upper_lu.solve(rhs_u + k * (bdiv.T @ r))
        return u, r

    def _check(self, u: FloatArray, r: FloatArray, rhs_u: FloatArray,
               rhs_p: FloatArray, rtol: float) -> None:
        res_u = self._upper @ u - self.system.k * (self._bdiv.T @ r) - rhs_u
        res_p = self._bdiv @ u - rhs_p
        if self._eps_l is not None:
            res_p = res_p + self._eps_l @ r
        res = np.sqrt(np.linalg.norm(res_u) ** 2 + np.linalg.norm(res_p) ** 2)
        scale = max(np.sqrt(np.linalg.norm(rhs_u) ** 2 + np.linalg.norm(rhs_p) ** 2), 1e-300)
        if np.linalg.norm(rhs_u) == 0.0 and np.linalg.norm(rhs_p) == 0.0:
            scale = 1.0
        if not np.isfinite(res) or res > rtol * scale:
            raise SingularMatrix(
                f"saddle solve: relative block residual {res / scale:.3e} exceeds {rtol:.1e}"
            )
