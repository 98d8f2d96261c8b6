"""Wiener increments on a master time grid with exact coarse subsampling.

Two noise kinds are provided: a scalar Brownian motion and a truncated
Q-Wiener field whose J*J modes are sine products weighted by eigenvalues
1/(j1^2 + j2^2).  Increments are generated once on the finest (master)
grid; coarser grids reuse them through left-to-right window sums, so all
discretization levels of a convergence study share one random path.

The Q-Wiener increment comes in two scalings.  "as-printed-k" multiplies
the standard normals by the step size k itself; "sqrt-k" uses the usual
sqrt(k) so each mode is a genuine Brownian motion.  The scalar kind always
uses the standard N(0, k) increment.

Randomness is counter-based: a Philox generator keyed by the path seed
produces all normals of one path in a single vectorized draw, so paths are
reproducible regardless of how work is distributed across processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .mesh import FloatArray

NoiseKind = Literal["scalar", "qwiener"]
NoiseScaling = Literal["as-printed-k", "sqrt-k"]


def mode_eigenvalues(J: int) -> FloatArray:
    """Flattened eigenvalues lambda_{j1 j2} = 1/(j1^2 + j2^2), j1-major."""
    j = np.arange(1, J + 1)
    return (1.0 / (j[:, None] ** 2 + j[None, :] ** 2)).ravel()


def mode_basis_matrix(points: FloatArray, J: int) -> FloatArray:
    """Values g_{j1 j2}(x) = 2 sin(j1 pi x1) sin(j2 pi x2); shape (n_pts, J*J)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    j = np.arange(1, J + 1)
    sx = np.sin(np.pi * pts[:, 0:1] * j[None, :])
    sy = np.sin(np.pi * pts[:, 1:2] * j[None, :])
    return 2.0 * (sx[:, :, None] * sy[:, None, :]).reshape(len(pts), J * J)


def _master_step_count(master_k: float, T: float) -> int:
    steps = T / master_k
    n = round(steps)
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, n):
        raise ValueError(f"T={T} is not an integral multiple of master_k={master_k}")
    return n


@dataclass(frozen=True, eq=False)
class WienerPath:
    """One realization of the driving noise on the master grid.

    ``coeffs`` holds the already-scaled per-master-step data: shape
    (n_steps,) for the scalar kind (the N(0, master_k) increments) and
    (n_steps, J*J) for the Q-Wiener kind (scaling * sqrt(lambda) * normals,
    ready to contract with the mode basis).
    """

    kind: NoiseKind
    J: int
    master_k: float
    T: float
    seed: int
    scaling: NoiseScaling
    coeffs: FloatArray

    @property
    def n_steps(self) -> int:
        return len(self.coeffs)


def sample_path(kind: NoiseKind, J: int, master_k: float, T: float, seed: int,
                scaling: NoiseScaling = "as-printed-k") -> WienerPath:
    """Draw one path; deterministic in (seed) and independent of call order.

    Raises:
        ValueError: if T is not an integral multiple of master_k, or the
            kind/scaling is unknown.
    """
    if kind not in ("scalar", "qwiener"):
        raise ValueError(f"unknown noise kind {kind!r}")
    if scaling not in ("as-printed-k", "sqrt-k"):
        raise ValueError(f"unknown noise scaling {scaling!r}")
    n = _master_step_count(master_k, T)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    if kind == "scalar":
        coeffs = np.sqrt(master_k) * rng.standard_normal(n)
    else:
        if J < 1:
            raise ValueError("qwiener noise needs J >= 1")
        normals = rng.standard_normal((n, J * J))
        scale = master_k if scaling == "as-printed-k" else np.sqrt(master_k)
        coeffs = scale * np.sqrt(mode_eigenvalues(J))[None, :] * normals
    return WienerPath(kind=kind, J=J, master_k=master_k, T=T, seed=seed,
                      scaling=scaling, coeffs=coeffs)


@dataclass(frozen=True, eq=False)
class CoarsePath:
    """Increments of a WienerPath viewed on a coarser grid of step k.

    Window sums accumulate strictly left to right over the master steps, so
    coarsening with k = master_k returns the master data bitwise and a
    single window spanning [0, T] reproduces the left-to-right total of all
    master increments bitwise.
    """

    path: WienerPath
    k: float
    coeffs: FloatArray

    @property
    def n_steps(self) -> int:
        return len(self.coeffs)

    def increment(self, n: int) -> float:
        """Scalar increment over [n k, (n+1) k]; scalar-kind paths only."""
        if self.path.kind != "scalar":
            raise ValueError("increment() is for scalar paths; use mode_coeffs()")
        if not 0 <= n < self.n_steps:
            raise IndexError(f"step {n} outside [0, {self.n_steps})")
        return float(self.coeffs[n])

    def mode_coeffs(self, n: int) -> FloatArray:
        """Per-mode coefficients of the increment field over step n."""
        if self.path.kind != "qwiener":
            raise ValueError("mode_coeffs() is for qwiener paths; use increment()")
        if not 0 <= n < self.n_steps:
            raise IndexError(f"step {n} outside [0, {self.n_steps})")
        return self.coeffs[n]


def coarsen(path: WienerPath, k: float) -> CoarsePath:
    """View the path on step size k (an integral multiple of master_k)."""
    ratio = k / path.master_k
    c = round(ratio)
    if c < 1 or abs(ratio - c) > 1e-9 * max(1.0, c):
        raise ValueError(f"k={k} is not an integral multiple of master_k={path.master_k}")
    if path.n_steps % c != 0:
        raise ValueError(f"{path.n_steps} master steps do not tile windows of {c}")
    if c == 1:
        return CoarsePath(path=path, k=k, coeffs=path.coeffs)
    # Sequential left-to-right accumulation within each window (vectorized
    # across windows) so window sums telescope exactly.
    acc = path.coeffs[0::c].copy()
    for i in range(1, c):
        acc += path.coeffs[i::c]
    return CoarsePath(path=path, k=k, coeffs=acc)


def increment_field(path: WienerPath, n: int, k: float, points: FloatArray) -> FloatArray:
    """Evaluate the increment over [n k, (n+1) k] at the given coordinates.

    For the Q-Wiener kind this is sum_j coeff_j g_j(x); for the scalar kind
    the (spatially constant) increment broadcast over the points.  A single
    (2,) point yields a scalar array of shape ().
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    coarse = coarsen(path, k)
    if path.kind == "scalar":
        out = np.full(1 if single else len(pts), coarse.increment(n))
    else:
        out = mode_basis_matrix(pts, path.J) @ coarse.mode_coeffs(n)
    return out[0] if single else out
