"""Monte Carlo convergence studies with common random paths.

A study runs one reference discretization and several coarser trial
discretizations over the same collection of Wiener paths, accumulates the
root-mean-square of the error functionals (final-time velocity in L2 and
the H1 seminorm, time-averaged and final-time pressures in L2), and fits
convergence orders against the step size or the mesh size.

Temporal studies keep the mesh fixed and compare coefficient vectors
directly.  Spatial studies evaluate the coarse solution at the reference
mesh's quadrature points; on nested uniform grids every fine triangle lies
inside one coarse triangle, so the quadrature rule integrates the squared
difference exactly and no supermesh is needed.  Non-nested trial meshes
are accepted as long as they are no finer than the reference: fine cells
straddling a coarse edge then carry a small quadrature transfer error, of
higher order than the discretization errors being measured.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from . import assembly, fem
from . import noise as noisemod
from .schemes import SchemeConfig, Stepper, Trajectory

FloatArray = np.ndarray

ERROR_KINDS = ("u_l2", "u_h1", "r_avg", "p_avg", "r_final", "p_final")

NoiseKind = noisemod.NoiseKind
NoiseScaling = noisemod.NoiseScaling


@dataclass(frozen=True)
class StudySpec:
    """One convergence study: a reference config plus coarser trial configs.

    Realization ``i`` uses the path seeded with ``seed_base + i``; the same
    path drives the reference and every trial level, which is what makes
    the RMS differences meaningful.
    """

    axis: str  # "temporal" | "spatial"
    reference: SchemeConfig
    trials: tuple[SchemeConfig, ...]
    n_realizations: int
    seed_base: int
    noise_kind: NoiseKind = "qwiener"
    noise_J: int = 4
    noise_scaling: NoiseScaling = "as-printed-k"
    error_kinds: tuple[str, ...] = ERROR_KINDS

    def __post_init__(self) -> None:
        if self.axis not in ("temporal", "spatial"):
            raise ValueError(f"unknown study axis {self.axis!r}")
        if not self.trials:
            raise ValueError("a study needs at least one trial level")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be positive")
        unknown = set(self.error_kinds) - set(ERROR_KINDS)
        if unknown:
            raise ValueError(f"unknown error kinds {sorted(unknown)}")
        ref = self.reference
        for cfg in self.trials:
            if abs(cfg.T - ref.T) > 1e-12:
                raise ValueError("all levels must share the time horizon")
            ratio = cfg.k / ref.k
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(
                    f"trial step {cfg.k} is not a multiple of the reference step {ref.k}"
                )
            if self.axis == "temporal":
                if cfg.m != ref.m:
                    raise ValueError("temporal studies keep the mesh fixed")
            else:
                if cfg.m > ref.m:
                    raise ValueError(
                        f"trial mesh m={cfg.m} is finer than the reference m={ref.m}"
                    )

    @property
    def level_sizes(self) -> tuple[float, ...]:
        """The step sizes (temporal) or mesh sizes (spatial) of the trials."""
        if self.axis == "temporal":
            return tuple(cfg.k for cfg in self.trials)
        return tuple(cfg.h for cfg in self.trials)


@dataclass(frozen=True)
class ErrorReport:
    """RMS errors and fitted orders of one study."""

    axis: str
    level_sizes: tuple[float, ...]
    rms: dict[str, tuple[float, ...]]
    rms_stderr: dict[str, tuple[float, ...]]
    pairwise_orders: dict[str, tuple[float, ...]]
    fitted_order: dict[str, float]
    n_realizations: int
    wall_time: float

    def summary(self) -> str:
        lines = [f"axis={self.axis}  N_p={self.n_realizations}  "
                 f"wall={self.wall_time:.1f}s"]
        sizes = "  ".join(f"{s:.6g}" for s in self.level_sizes)
        lines.append(f"level sizes: {sizes}")
        for kind, values in self.rms.items():
            vals = "  ".join(f"{v:.5g}" for v in values)
            orders = "  ".join(f"{o:.3f}" for o in self.pairwise_orders[kind])
            lines.append(f"{kind:8s} rms: {vals}   orders: {orders}   "
                         f"fit: {self.fitted_order[kind]:.3f}")
        return "\n".join(lines)


def fit_orders(errors, sizes) -> list[float]:
    """Pairwise convergence orders ln(e_i/e_{i+1}) / ln(s_i/s_{i+1}).

    Raises:
        ValueError: fewer than two levels, or nonpositive errors.
    """
    errors = [float(e) for e in errors]
    sizes = [float(s) for s in sizes]
    if len(errors) != len(sizes) or len(errors) < 2:
        raise ValueError("need matching errors and sizes for at least two levels")
    if any(e <= 0.0 for e in errors):
        raise ValueError("orders need strictly positive errors")
    return [
        float(np.log(errors[i] / errors[i + 1]) / np.log(sizes[i] / sizes[i + 1]))
        for i in range(len(errors) - 1)
    ]


def fitted_order(errors, sizes) -> float:
    """Least-squares slope of log(error) against log(size) over all levels."""
    errors = np.asarray(errors, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(errors <= 0.0):
        raise ValueError("orders need strictly positive errors")
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


class LevelErrors:
    """Error functionals between one trial discretization and the reference.

    Binds the transfer operators once; the per-trajectory methods are then
    cheap.  On a shared mesh the coefficient difference is measured with
    the assembled mass/stiffness matrices; otherwise the coarse solution is
    evaluated at the reference quadrature points.
    """

    def __init__(self, ref: Stepper, trial: Stepper):
        self.ref = ref
        self.trial = trial
        self.same_mesh = ref.config.m == trial.config.m
        qd_v = assembly.quad_data(ref.vel_space)
        qd_p = assembly.quad_data(ref.pres_space)
        if self.same_mesh:
            self._m_vel = ref._m_full
            self._a_vel = assembly.assemble_stiffness(ref.vel_space, reduced=False)
            self._m_pres = assembly.assemble_mass(ref.pres_space, reduced=False)
        else:
            self._wq = qd_v.weights
            self._ref_val = qd_v.value_op
            self._ref_dx = qd_v.grad_x_op
            self._ref_dy = qd_v.grad_y_op
            self._tri_val = fem.point_eval_matrix(trial.vel_space, qd_v.points)
            self._tri_dx = fem.point_eval_matrix(trial.vel_space, qd_v.points, "dx")
            self._tri_dy = fem.point_eval_matrix(trial.vel_space, qd_v.points, "dy")
            self._ref_val_p = qd_p.value_op
            self._tri_val_p = fem.point_eval_matrix(trial.pres_space, qd_p.points)

    def _check_pairing(self, ref_traj: Trajectory, trial_traj: Trajectory) -> None:
        if ref_traj.path_seed != trial_traj.path_seed:
            raise ValueError(
                f"trajectories from different paths: seeds {ref_traj.path_seed} "
                f"vs {trial_traj.path_seed}"
            )

    def u_error(self, ref_traj: Trajectory, trial_traj: Trajectory,
                norm: str = "l2") -> float:
        """Final-time velocity error in the L2 norm or the H1 seminorm."""
        self._check_pairing(ref_traj, trial_traj)
        if norm not in ("l2", "h1"):
            raise ValueError(f"unknown norm {norm!r}")
        ur, ut = ref_traj.final.u, trial_traj.final.u
        if self.same_mesh:
            d = ur - ut
            quad = self._m_vel if norm == "l2" else self._a_vel
            return float(np.sqrt(max(d @ (quad @ d), 0.0)))
        nr = self.ref.vel_space.n_scalar_nodes
        nt = self.trial.vel_space.n_scalar_nodes
        if norm == "l2":
            ops = [(self._ref_val, self._tri_val)]
        else:
            ops = [(self._ref_dx, self._tri_dx), (self._ref_dy, self._tri_dy)]
        total = 0.0
        for ref_op, tri_op in ops:
            for ref_c, tri_c in ((ur[:nr], ut[:nt]), (ur[nr:], ut[nt:])):
                d = ref_op @ ref_c - tri_op @ tri_c
                total += float(self._wq @ (d * d))
        return float(np.sqrt(total))

    def pressure_error(self, ref_traj: Trajectory, trial_traj: Trajectory,
                       which: str = "r", averaged: bool = True) -> float:
        """L2 error of a pressure quantity.

        With ``averaged`` the time averages k0*sum r(k0) and k*sum r(k) are
        compared; otherwise the final-step fields.
        """
        self._check_pairing(ref_traj, trial_traj)
        if which not in ("r", "p"):
            raise ValueError(f"unknown pressure kind {which!r}")
        if averaged:
            fr = ref_traj.avg_r if which == "r" else ref_traj.avg_p
            ft = trial_traj.avg_r if which == "r" else trial_traj.avg_p
        else:
            fr = ref_traj.final.r if which == "r" else ref_traj.final.p
            ft = trial_traj.final.r if which == "r" else trial_traj.final.p
        if self.same_mesh:
            d = fr - ft
            return float(np.sqrt(max(d @ (self._m_pres @ d), 0.0)))
        d = self._ref_val_p @ fr - self._tri_val_p @ ft
        return float(np.sqrt(float(self._wq @ (d * d))))

    def all_errors(self, ref_traj: Trajectory, trial_traj: Trajectory,
                   kinds) -> dict[str, float]:
        out = {}
        for kind in kinds:
            if kind == "u_l2":
                out[kind] = self.u_error(ref_traj, trial_traj, "l2")
            elif kind == "u_h1":
                out[kind] = self.u_error(ref_traj, trial_traj, "h1")
            elif kind == "r_avg":
                out[kind] = self.pressure_error(ref_traj, trial_traj, "r", True)
            elif kind == "p_avg":
                out[kind] = self.pressure_error(ref_traj, trial_traj, "p", True)
            elif kind == "r_final":
                out[kind] = self.pressure_error(ref_traj, trial_traj, "r", False)
            else:
                out[kind] = self.pressure_error(ref_traj, trial_traj, "p", False)
        return out


def error_u(level: LevelErrors, ref_traj: Trajectory, trial_traj: Trajectory,
            norm: str = "l2") -> float:
    """Convenience wrapper around LevelErrors.u_error."""
    return level.u_error(ref_traj, trial_traj, norm)


def error_p_avg(level: LevelErrors, ref_traj: Trajectory, trial_traj: Trajectory,
                which: str = "p") -> float:
    """Convenience wrapper for the time-averaged pressure error."""
    return level.pressure_error(ref_traj, trial_traj, which, averaged=True)


# ---------------------------------------------------------------------------
# study driver

_POOL_STATE: dict = {}


def _build_study(spec: StudySpec):
    ref = Stepper(spec.reference)
    trials = [Stepper(cfg) for cfg in spec.trials]
    levels = [LevelErrors(ref, t) for t in trials]
    return ref, trials, levels


def _one_realization(spec: StudySpec, ref: Stepper, trials, levels,
                     index: int) -> FloatArray:
    """Squared errors of one realization, shape (n_levels, n_kinds)."""
    if spec.reference.B_fn is not None:
        path = noisemod.sample_path(
            spec.noise_kind, J=spec.noise_J, master_k=spec.reference.k,
            T=spec.reference.T, seed=spec.seed_base + index,
            scaling=spec.noise_scaling,
        )
    else:
        path = None
    ref_traj = ref.run(path)
    sq = np.empty((len(trials), len(spec.error_kinds)))
    for i, (stepper, level) in enumerate(zip(trials, levels)):
        trial_traj = stepper.run(path)
        errs = level.all_errors(ref_traj, trial_traj, spec.error_kinds)
        sq[i] = [errs[kind] ** 2 for kind in spec.error_kinds]
    return sq


def _pool_init(spec: StudySpec) -> None:
    _POOL_STATE["spec"] = spec
    _POOL_STATE["built"] = _build_study(spec)


def _pool_task(index: int) -> FloatArray:
    spec = _POOL_STATE["spec"]
    ref, trials, levels = _POOL_STATE["built"]
    return _one_realization(spec, ref, trials, levels, index)


def run_study(spec: StudySpec, workers: int = 1,
              progress=None) -> ErrorReport:
    """Run all realizations of a study and reduce to an ErrorReport.

    The reduction is a fixed-order sum over realization indices, so the
    report does not depend on worker scheduling.  ``progress`` may be a
    callable taking (done, total).
    """
    t0 = time.perf_counter()
    n = spec.n_realizations
    if workers > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_pool_init, initargs=(spec,)) as pool:
            results = pool.map(_pool_task, range(n))
        if progress is not None:
            progress(n, n)
    else:
        ref, trials, levels = _build_study(spec)
        results = []
        for i in range(n):
            results.append(_one_realization(spec, ref, trials, levels, i))
            if progress is not None:
                progress(i + 1, n)

    stacked = np.stack(results)  # (n, n_levels, n_kinds)
    mean_sq = stacked.mean(axis=0)
    rms = np.sqrt(mean_sq)
    # Delta-method standard error of the RMS from the spread of the squares.
    if n > 1:
        var_sq = stacked.var(axis=0, ddof=1)
        stderr = np.sqrt(var_sq / n) / np.maximum(2.0 * rms, 1e-300)
    else:
        stderr = np.zeros_like(rms)

    sizes = spec.level_sizes
    rms_d, se_d, po_d, fo_d = {}, {}, {}, {}
    for j, kind in enumerate(spec.error_kinds):
        values = tuple(float(v) for v in rms[:, j])
        rms_d[kind] = values
        se_d[kind] = tuple(float(v) for v in stderr[:, j])
        if len(values) >= 2 and all(v > 0.0 for v in values):
            po_d[kind] = tuple(fit_orders(values, sizes))
            fo_d[kind] = fitted_order(values, sizes)
        else:
            po_d[kind] = ()
            fo_d[kind] = float("nan")
    return ErrorReport(
        axis=spec.axis,
        level_sizes=tuple(sizes),
        rms=rms_d,
        rms_stderr=se_d,
        pairwise_orders=po_d,
        fitted_order=fo_d,
        n_realizations=n,
        wall_time=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class StabilizationComparison:
    """Side-by-side reports for the split and standard stabilized schemes."""

    helmholtz: ErrorReport
    standard: ErrorReport

    def order_advantage(self, kind: str = "u_l2") -> float:
        """Fitted-order gain of the split variant over the standard one."""
        return self.helmholtz.fitted_order[kind] - self.standard.fitted_order[kind]

    def error_ratios(self, kind: str = "u_l2") -> tuple[float, ...]:
        """Per-level standard/helmholtz RMS ratios (> 1 favors the split)."""
        h = self.helmholtz.rms[kind]
        s = self.standard.rms[kind]
        return tuple(sv / hv for sv, hv in zip(s, h))


def standard_twin(spec: StudySpec) -> StudySpec:
    """The same study with the standard stabilized scheme swapped in."""
    if spec.reference.scheme != "stabilized_helmholtz":
        raise ValueError("comparison spec must use the stabilized_helmholtz scheme")
    swap = dataclasses.replace
    return dataclasses.replace(
        spec,
        reference=swap(spec.reference, scheme="stabilized_standard"),
        trials=tuple(swap(cfg, scheme="stabilized_standard") for cfg in spec.trials),
    )


def compare_stabilization(spec: StudySpec, workers: int = 1,
                          progress=None) -> StabilizationComparison:
    """Run a stabilized study twice, swapping in the standard noise handling.

    Both runs use identical seeds, meshes, and steps; only the scheme
    differs, so the difference in the reports isolates the noise-splitting
    treatment.
    """
    twin = standard_twin(spec)
    return StabilizationComparison(
        helmholtz=run_study(spec, workers=workers, progress=progress),
        standard=run_study(twin, workers=workers, progress=progress),
    )


# ---------------------------------------------------------------------------
# outputs

def write_csv(report: ErrorReport, path) -> None:
    """Write one study report as CSV: level, step_size, error_kind, rms, order.

    The order column holds the pairwise order at the level's coarser
    neighbor and is empty on the first level, mirroring the usual table
    layout.  Formatting is fixed so identical reports serialize to
    identical bytes.
    """
    lines = ["level,step_size,error_kind,rms_error,order"]
    for kind, values in report.rms.items():
        orders = report.pairwise_orders[kind]
        for i, value in enumerate(values):
            order = "" if i == 0 or not orders else f"{orders[i - 1]:.6f}"
            lines.append(
                f"{i},{report.level_sizes[i]:.12g},{kind},{value:.12e},{order}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(path, spec: StudySpec, report: ErrorReport,
                   extra: dict | None = None) -> None:
    """Dump a JSON run manifest: configuration, seeds, versions, timings."""
    import scipy

    def config_dict(cfg: SchemeConfig) -> dict:
        d = {}
        for f in dataclasses.fields(cfg):
            v = getattr(cfg, f.name)
            d[f.name] = v if isinstance(v, (int, float, str, bool, type(None))) \
                else getattr(v, "__name__", repr(v))
        return d

    manifest = {
        "axis": spec.axis,
        "reference": config_dict(spec.reference),
        "trials": [config_dict(c) for c in spec.trials],
        "n_realizations": spec.n_realizations,
        "seed_base": spec.seed_base,
        "noise": {
            "kind": spec.noise_kind,
            "J": spec.noise_J,
            "scaling": spec.noise_scaling,
        },
        "error_kinds": list(spec.error_kinds),
        "rms": {k: list(v) for k, v in report.rms.items()},
        "rms_stderr": {k: list(v) for k, v in report.rms_stderr.items()},
        "pairwise_orders": {k: list(v) for k, v in report.pairwise_orders.items()},
        "fitted_order": report.fitted_order,
        "wall_time": report.wall_time,
        "versions": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
