"""Command-line front end for the convergence studies and the cavity run.

Two subcommands: ``run`` executes an experiment and writes its CSV, manifest
and (for the cavity preset) field dumps; ``validate`` checks a configuration
and prints diagnostics without computing anything.

The experiment presets encode the reference experiments at two scales.
``--scale paper`` uses the full-size mesh/step/realization counts (hours of
compute); ``--scale desk`` shrinks them to workstation size.  Every preset
value can be overridden by flags or a config file, and a config file written
by this tool reproduces the experiment exactly.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass

import numpy as np

from . import mc
from . import noise as noisemod
from .linsolve import NotConverged, SingularMatrix
from .schemes import NumericalError, SchemeConfig, Stepper

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

PRESET_NAMES = (
    "test1-temporal", "test1-spatial", "test2-cavity", "test3-stabilized", "custom",
)


# ---------------------------------------------------------------------------
# named data sets (module-level so worker processes can unpickle configs)

def forcing_ones(points, t=0.0):
    """Constant body force (1, 1)."""
    out = np.empty((len(points), 2))
    out[:] = 1.0
    return out


def noise_coeff_sqrt(values):
    """Componentwise B(u) = sqrt(u_i^2 + 1), evaluated on (n, 2) samples."""
    return np.sqrt(values * values + 1.0)


def noise_coeff_additive(values):
    """Constant B = (1, 1): additive noise."""
    return np.ones_like(values)


def lid_velocity(points):
    """Unit horizontal velocity on the open top edge, zero elsewhere."""
    pts = np.atleast_2d(points)
    out = np.zeros((len(pts), 2))
    on_lid = (np.abs(pts[:, 1] - 1.0) < 1e-12) & (pts[:, 0] > 1e-12) \
        & (pts[:, 0] < 1.0 - 1e-12)
    out[on_lid, 0] = 1.0
    return out


DATA_SETS = {
    "driven": {"B_fn": noise_coeff_sqrt, "f_fn": forcing_ones, "bc_fn": None},
    "cavity": {"B_fn": noise_coeff_additive, "f_fn": None, "bc_fn": lid_velocity},
    "none": {"B_fn": None, "f_fn": None, "bc_fn": None},
}


@dataclass
class ExperimentConfig:
    """Flat description of one experiment; round-trips through an INI file."""

    preset: str = "custom"
    axis: str = "temporal"
    scheme: str = "mixed_helmholtz"
    data_set: str = "driven"
    ref_m: int = 32
    ref_k: float = 1.0 / 512.0
    trial_ks: tuple[float, ...] = ()
    trial_ms: tuple[int, ...] = ()
    shared_k: float = 1.0 / 128.0
    T: float = 1.0
    eps_rule: str = "none"  # "none" | "h2" | a float literal
    noise_kind: str = "qwiener"
    noise_J: int = 4
    noise_scaling: str = "as-printed-k"
    n_realizations: int = 100
    seed_base: int = 1000
    workers: int = 1
    out_dir: str = "."
    error_kinds: tuple[str, ...] = mc.ERROR_KINDS
    compare: bool = False  # also run the standard stabilized twin
    snapshot_realizations: int = 3  # cavity preset only


def desk_preset(name: str) -> ExperimentConfig:
    if name == "test1-temporal":
        return ExperimentConfig(
            preset=name, axis="temporal", scheme="mixed_helmholtz",
            data_set="driven", ref_m=32, ref_k=1.0 / 512.0,
            trial_ks=(1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0),
            n_realizations=100,
        )
    if name == "test1-spatial":
        return ExperimentConfig(
            preset=name, axis="spatial", scheme="mixed_helmholtz",
            data_set="driven", ref_m=64, ref_k=1.0 / 128.0,
            shared_k=1.0 / 128.0, trial_ms=(4, 8, 16, 32),
            n_realizations=100,
        )
    if name == "test2-cavity":
        return ExperimentConfig(
            preset=name, axis="spatial", scheme="mixed_helmholtz",
            data_set="cavity", ref_m=10, ref_k=1.0 / 50.0,
            trial_ms=(10,), shared_k=1.0 / 50.0, n_realizations=50,
        )
    if name == "test3-stabilized":
        return ExperimentConfig(
            preset=name, axis="spatial", scheme="stabilized_helmholtz",
            data_set="driven", ref_m=32, ref_k=1.0 / 128.0,
            shared_k=1.0 / 128.0, trial_ms=(4, 8, 16),
            eps_rule="h2", noise_kind="scalar", n_realizations=100,
            compare=True,
        )
    return ExperimentConfig()


def paper_preset(name: str) -> ExperimentConfig:
    cfg = desk_preset(name)
    if name == "test1-temporal":
        return dataclasses.replace(
            cfg, ref_m=100, ref_k=1.0 / 600.0,
            trial_ks=(1.0 / 5.0, 1.0 / 10.0, 1.0 / 20.0, 1.0 / 40.0),
            n_realizations=501,
        )
    if name == "test1-spatial":
        return dataclasses.replace(
            cfg, ref_m=100, ref_k=1.0 / 200.0, shared_k=1.0 / 200.0,
            trial_ms=(5, 10, 20, 40), n_realizations=501,
        )
    if name == "test2-cavity":
        return dataclasses.replace(
            cfg, ref_m=20, ref_k=1.0 / 100.0, trial_ms=(20,),
            shared_k=1.0 / 100.0, n_realizations=1001,
        )
    if name == "test3-stabilized":
        return dataclasses.replace(
            cfg, ref_m=100, ref_k=1.0 / 4096.0, shared_k=1.0 / 256.0,
            trial_ms=(5, 10, 20, 40), n_realizations=800,
        )
    return cfg


# ---------------------------------------------------------------------------
# config file round trip

def write_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "preset": cfg.preset,
        "axis": cfg.axis,
        "data_set": cfg.data_set,
        "compare": str(cfg.compare),
        "snapshot_realizations": str(cfg.snapshot_realizations),
    }
    parser["scheme"] = {
        "scheme": cfg.scheme,
        "ref_m": str(cfg.ref_m),
        "ref_k": repr(cfg.ref_k),
        "trial_ks": " ".join(repr(k) for k in cfg.trial_ks),
        "trial_ms": " ".join(str(m) for m in cfg.trial_ms),
        "shared_k": repr(cfg.shared_k),
        "t": repr(cfg.T),
        "eps_rule": cfg.eps_rule,
    }
    parser["noise"] = {
        "kind": cfg.noise_kind,
        "j": str(cfg.noise_J),
        "scaling": cfg.noise_scaling,
    }
    parser["mc"] = {
        "n_realizations": str(cfg.n_realizations),
        "seed_base": str(cfg.seed_base),
        "workers": str(cfg.workers),
        "error_kinds": " ".join(cfg.error_kinds),
    }
    parser["output"] = {"out_dir": cfg.out_dir}
    with open(path, "w") as fh:
        parser.write(fh)


def read_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ValueError(f"cannot read config file {path}")
    try:
        exp = parser["experiment"]
        sch = parser["scheme"]
        noi = parser["noise"]
        mcs = parser["mc"]
        out = parser["output"]
        return ExperimentConfig(
            preset=exp.get("preset", "custom"),
            axis=exp.get("axis", "temporal"),
            data_set=exp.get("data_set", "driven"),
            compare=exp.getboolean("compare", False),
            snapshot_realizations=exp.getint("snapshot_realizations", 3),
            scheme=sch.get("scheme", "mixed_helmholtz"),
            ref_m=sch.getint("ref_m"),
            ref_k=sch.getfloat("ref_k"),
            trial_ks=tuple(float(x) for x in sch.get("trial_ks", "").split()),
            trial_ms=tuple(int(x) for x in sch.get("trial_ms", "").split()),
            shared_k=sch.getfloat("shared_k", 1.0 / 128.0),
            T=sch.getfloat("t", 1.0),
            eps_rule=sch.get("eps_rule", "none"),
            noise_kind=noi.get("kind", "qwiener"),
            noise_J=noi.getint("j", 4),
            noise_scaling=noi.get("scaling", "as-printed-k"),
            n_realizations=mcs.getint("n_realizations"),
            seed_base=mcs.getint("seed_base", 1000),
            workers=mcs.getint("workers", 1),
            error_kinds=tuple(mcs.get("error_kinds", " ".join(mc.ERROR_KINDS)).split()),
            out_dir=out.get("out_dir", "."),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed config file {path}: {exc}") from None


# ---------------------------------------------------------------------------
# validation and spec construction

def _eps_for(cfg: ExperimentConfig, m: int) -> float | None:
    if cfg.eps_rule == "none":
        return None
    if cfg.eps_rule == "h2":
        return (1.0 / m) ** 2
    return float(cfg.eps_rule)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """All violations found in a configuration, empty if it is runnable."""
    problems = []
    if cfg.preset not in PRESET_NAMES:
        problems.append(f"unknown preset {cfg.preset!r}")
    if cfg.axis not in ("temporal", "spatial"):
        problems.append(f"unknown axis {cfg.axis!r}")
    if cfg.scheme not in ("mixed_helmholtz", "mixed_standard",
                          "stabilized_helmholtz", "stabilized_standard"):
        problems.append(f"unknown scheme {cfg.scheme!r}")
    if cfg.data_set not in DATA_SETS:
        problems.append(f"unknown data set {cfg.data_set!r}")
    if cfg.noise_kind not in ("scalar", "qwiener"):
        problems.append(f"unknown noise kind {cfg.noise_kind!r}")
    if cfg.noise_scaling not in ("as-printed-k", "sqrt-k"):
        problems.append(f"unknown noise scaling {cfg.noise_scaling!r}")
    if cfg.n_realizations < 1:
        problems.append("n_realizations must be positive")
    if cfg.workers < 1:
        problems.append("workers must be positive")
    if cfg.ref_m < 1:
        problems.append("reference mesh parameter must be positive")
    if cfg.ref_k <= 0 or cfg.ref_k > cfg.T:
        problems.append("reference step must lie in (0, T]")
    if cfg.eps_rule not in ("none", "h2"):
        try:
            eps = float(cfg.eps_rule)
            if eps <= 0:
                problems.append("explicit eps must be positive")
        except ValueError:
            problems.append(f"unknown eps rule {cfg.eps_rule!r}")
    if cfg.eps_rule == "none" and cfg.scheme.startswith("stabilized"):
        problems.append("stabilized schemes need an eps rule")
    if cfg.eps_rule != "none" and cfg.scheme.startswith("mixed"):
        problems.append("mixed schemes take no eps rule")
    unknown_kinds = set(cfg.error_kinds) - set(mc.ERROR_KINDS)
    if unknown_kinds:
        problems.append(f"unknown error kinds {sorted(unknown_kinds)}")

    steps = cfg.T / cfg.ref_k
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        problems.append(f"T={cfg.T} is not an integral multiple of ref_k={cfg.ref_k}")
    if cfg.axis == "temporal":
        if not cfg.trial_ks:
            problems.append("temporal axis needs trial_ks")
        for k in cfg.trial_ks:
            ratio = k / cfg.ref_k
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                problems.append(
                    f"trial step {k} is not an integer multiple of ref_k={cfg.ref_k}"
                )
    else:
        if not cfg.trial_ms:
            problems.append("spatial axis needs trial_ms")
        for m in cfg.trial_ms:
            if m < 1 or m > cfg.ref_m:
                problems.append(f"trial mesh m={m} is finer than ref_m={cfg.ref_m}")
        ratio = cfg.shared_k / cfg.ref_k
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            problems.append(
                f"shared step {cfg.shared_k} is not an integer multiple of "
                f"ref_k={cfg.ref_k}"
            )
    return problems


def build_spec(cfg: ExperimentConfig) -> mc.StudySpec:
    """Turn a validated ExperimentConfig into a StudySpec."""
    data = DATA_SETS[cfg.data_set]
    common = dict(
        scheme=cfg.scheme, T=cfg.T, bc_mode="dirichlet",
        B_fn=data["B_fn"], f_fn=data["f_fn"], bc_fn=data["bc_fn"],
    )
    if cfg.axis == "temporal":
        reference = SchemeConfig(m=cfg.ref_m, k=cfg.ref_k,
                                 eps=_eps_for(cfg, cfg.ref_m), **common)
        trials = tuple(
            SchemeConfig(m=cfg.ref_m, k=k, eps=_eps_for(cfg, cfg.ref_m), **common)
            for k in cfg.trial_ks
        )
    else:
        reference = SchemeConfig(m=cfg.ref_m, k=cfg.ref_k,
                                 eps=_eps_for(cfg, cfg.ref_m), **common)
        trials = tuple(
            SchemeConfig(m=m, k=cfg.shared_k, eps=_eps_for(cfg, m), **common)
            for m in cfg.trial_ms
        )
    return mc.StudySpec(
        axis=cfg.axis, reference=reference, trials=trials,
        n_realizations=cfg.n_realizations, seed_base=cfg.seed_base,
        noise_kind=cfg.noise_kind, noise_J=cfg.noise_J,
        noise_scaling=cfg.noise_scaling, error_kinds=tuple(cfg.error_kinds),
    )


# ---------------------------------------------------------------------------
# cavity run (field dumps instead of a convergence report)

def _write_records(path, n: int, t: float, values) -> None:
    """Per-step text records, one ``n t dof value`` line per coefficient."""
    with open(path, "w") as fh:
        for dof, v in enumerate(np.asarray(values).ravel()):
            fh.write(f"{n} {t:.12g} {dof} {v:.12e}\n")


def _write_coords(path, coords) -> None:
    with open(path, "w") as fh:
        for dof, (x, y) in enumerate(np.asarray(coords)):
            fh.write(f"{dof} {x:.12e} {y:.12e}\n")


def run_cavity(cfg: ExperimentConfig, out_dir) -> None:
    """Monte Carlo mean fields plus a few realization snapshots on disk.

    Velocity records index the stacked coefficient layout (all x-components,
    then all y-components); the ``*_dof_coords.txt`` files map scalar node
    indices to coordinates.
    """
    import os

    data = DATA_SETS[cfg.data_set]
    config = SchemeConfig(
        scheme=cfg.scheme, m=cfg.ref_m, k=cfg.ref_k, T=cfg.T,
        bc_mode="dirichlet", B_fn=data["B_fn"], f_fn=data["f_fn"],
        bc_fn=data["bc_fn"], eps=_eps_for(cfg, cfg.ref_m),
    )
    stepper = Stepper(config)
    n_steps = config.n_steps
    sum_u = np.zeros(stepper.vel_space.n_nodes)
    sum_p = np.zeros(stepper.pres_space.n_scalar_nodes)
    keep = min(cfg.snapshot_realizations, cfg.n_realizations)
    # The records dump full coefficient vectors (constrained nodes included),
    # so the coordinate maps must cover every scalar node.
    _write_coords(os.path.join(out_dir, "velocity_dof_coords.txt"),
                  stepper.vel_space.node_coords)
    _write_coords(os.path.join(out_dir, "pressure_dof_coords.txt"),
                  stepper.pres_space.node_coords)
    for i in range(cfg.n_realizations):
        path = noisemod.sample_path(
            cfg.noise_kind, J=cfg.noise_J, master_k=config.k, T=config.T,
            seed=cfg.seed_base + i, scaling=cfg.noise_scaling,
        )
        traj = stepper.run(path)
        sum_u += traj.final.u
        sum_p += traj.final.p
        if i < keep:
            _write_records(os.path.join(out_dir, f"realization_{i}_velocity.txt"),
                           n_steps, cfg.T, traj.final.u)
            _write_records(os.path.join(out_dir, f"realization_{i}_pressure.txt"),
                           n_steps, cfg.T, traj.final.p)
    _write_records(os.path.join(out_dir, "mean_velocity.txt"), n_steps, cfg.T,
                   sum_u / cfg.n_realizations)
    _write_records(os.path.join(out_dir, "mean_pressure.txt"), n_steps, cfg.T,
                   sum_p / cfg.n_realizations)


# ---------------------------------------------------------------------------
# commands

def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = read_config(args.config)
        if args.preset and args.preset != cfg.preset:
            raise ValueError("--preset conflicts with the preset in --config")
    else:
        preset = args.preset or "custom"
        scale = getattr(args, "scale", "desk") or "desk"
        cfg = paper_preset(preset) if scale == "paper" else desk_preset(preset)
    overrides = {}
    if getattr(args, "np", None) is not None:
        overrides["n_realizations"] = args.np
    if getattr(args, "seed", None) is not None:
        overrides["seed_base"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "scheme", None) is not None:
        overrides["scheme"] = args.scheme
    if getattr(args, "noise_scaling", None) is not None:
        overrides["noise_scaling"] = args.noise_scaling
    return dataclasses.replace(cfg, **overrides)


def cmd_run(args) -> int:
    import os

    try:
        cfg = _load_config(args)
        problems = validate_config(cfg)
        if problems:
            for p in problems:
                print(f"config error: {p}", file=sys.stderr)
            return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_config(cfg, os.path.join(cfg.out_dir, "experiment.cfg"))
    try:
        if cfg.preset == "test2-cavity":
            run_cavity(cfg, cfg.out_dir)
            print(f"cavity fields written to {cfg.out_dir}")
            return EXIT_OK
        spec = build_spec(cfg)
        if cfg.compare:
            cmp_result = mc.compare_stabilization(spec, workers=cfg.workers)
            pairs = (("helmholtz", spec, cmp_result.helmholtz),
                     ("standard", mc.standard_twin(spec), cmp_result.standard))
            for tag, tag_spec, report in pairs:
                mc.write_csv(report, os.path.join(cfg.out_dir, f"errors_{tag}.csv"))
                mc.write_manifest(
                    os.path.join(cfg.out_dir, f"manifest_{tag}.json"),
                    tag_spec, report, extra={"variant": tag},
                )
                print(f"[{tag}]")
                print(report.summary())
            adv = cmp_result.order_advantage("u_l2")
            print(f"u_l2 fitted-order advantage (helmholtz - standard): {adv:.3f}")
        else:
            report = mc.run_study(spec, workers=cfg.workers)
            mc.write_csv(report, os.path.join(cfg.out_dir, "errors.csv"))
            mc.write_manifest(os.path.join(cfg.out_dir, "manifest.json"),
                              spec, report)
            print(report.summary())
        return EXIT_OK
    except (NumericalError, SingularMatrix, NotConverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def cmd_validate(args) -> int:
    try:
        cfg = _load_config(args)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(p)
        return EXIT_CONFIG
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochstokes",
        description="Convergence studies for noise-split time stepping of the "
                    "stochastic Stokes equations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--preset", choices=PRESET_NAMES, default=None)
        p.add_argument("--config", default=None, help="INI experiment file")
        p.add_argument("--np", type=int, default=None,
                       help="number of Monte Carlo realizations")
        p.add_argument("--scale", choices=("paper", "desk"), default="desk")
        p.add_argument("--seed", type=int, default=None, help="seed base")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--scheme", default=None,
                       choices=("mixed_helmholtz", "mixed_standard",
                                "stabilized_helmholtz", "stabilized_standard"))
        p.add_argument("--noise-scaling", dest="noise_scaling", default=None,
                       choices=("as-printed-k", "sqrt-k"))

    run_p = sub.add_parser("run", help="run an experiment")
    add_common(run_p)
    run_p.set_defaults(func=cmd_run)

    val_p = sub.add_parser("validate", help="check a configuration")
    add_common(val_p)
    val_p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None and args.preset is None:
        print("config error: need --preset or --config", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
