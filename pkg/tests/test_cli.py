import dataclasses
import json

import numpy as np
import pytest

from stochstokes import cli
from stochstokes.cli import ExperimentConfig
from stochstokes.linsolve import NotConverged


def tiny_temporal_config(**kw):
    """A seconds-scale temporal study for end-to-end runs."""
    base = dict(
        preset="custom", axis="temporal", scheme="mixed_helmholtz",
        data_set="driven", ref_m=4, ref_k=1 / 8, trial_ks=(1 / 4, 1 / 2),
        noise_kind="qwiener", noise_J=2, n_realizations=2, seed_base=7,
    )
    base.update(kw)
    return ExperimentConfig(**base)


# -- presets ---------------------------------------------------------------


def test_desk_presets_validate_clean():
    for name in ("test1-temporal", "test1-spatial", "test2-cavity",
                 "test3-stabilized"):
        assert cli.validate_config(cli.desk_preset(name)) == []
        assert cli.validate_config(cli.paper_preset(name)) == []


def test_custom_preset_is_deliberately_incomplete():
    problems = cli.validate_config(cli.desk_preset("custom"))
    assert any("trial_ks" in p for p in problems)


def test_paper_scale_widens_the_runs():
    desk = cli.desk_preset("test1-temporal")
    paper = cli.paper_preset("test1-temporal")
    assert paper.n_realizations > desk.n_realizations
    assert paper.ref_m > desk.ref_m
    assert paper.ref_k == 1 / 600
    assert paper.trial_ks == (1 / 5, 1 / 10, 1 / 20, 1 / 40)
    assert cli.paper_preset("test2-cavity").n_realizations == 1001


def test_stabilized_preset_uses_mesh_dependent_eps():
    cfg = cli.desk_preset("test3-stabilized")
    spec = cli.build_spec(cfg)
    for m, trial in zip(cfg.trial_ms, spec.trials):
        assert trial.eps == (1.0 / m) ** 2
    assert spec.reference.eps == (1.0 / cfg.ref_m) ** 2
    assert spec.noise_kind == "scalar"
    assert cfg.compare


# -- config file round trip ------------------------------------------------


def test_config_round_trips_through_the_ini_file(tmp_path):
    cfg = tiny_temporal_config(eps_rule="none", workers=2, out_dir="results",
                               compare=False, error_kinds=("u_l2", "r_avg"))
    path = tmp_path / "exp.cfg"
    cli.write_config(cfg, path)
    assert cli.read_config(path) == cfg


def test_preset_config_round_trips_exactly(tmp_path):
    for name in ("test1-spatial", "test3-stabilized"):
        cfg = cli.desk_preset(name)
        path = tmp_path / f"{name}.cfg"
        cli.write_config(cfg, path)
        assert cli.read_config(path) == cfg


def test_config_writing_is_deterministic(tmp_path):
    cfg = tiny_temporal_config()
    a, b = tmp_path / "a.cfg", tmp_path / "b.cfg"
    cli.write_config(cfg, a)
    cli.write_config(cfg, b)
    assert a.read_bytes() == b.read_bytes()


def test_read_config_rejects_missing_and_malformed_files(tmp_path):
    with pytest.raises(ValueError):
        cli.read_config(tmp_path / "absent.cfg")
    broken = tmp_path / "broken.cfg"
    broken.write_text("[experiment]\npreset = custom\n")  # missing sections
    with pytest.raises(ValueError):
        cli.read_config(broken)


# -- validation ------------------------------------------------------------


def test_validation_catches_step_mismatches():
    cfg = tiny_temporal_config(trial_ks=(1 / 7,))
    assert any("not an integer multiple" in p for p in cli.validate_config(cfg))
    cfg = tiny_temporal_config(ref_k=0.3)  # T / ref_k is not an integer
    assert any("integral multiple" in p for p in cli.validate_config(cfg))


def test_validation_catches_mesh_and_step_pairing():
    cfg = tiny_temporal_config(axis="spatial", trial_ks=(), trial_ms=(8,),
                               shared_k=1 / 8)
    assert any("finer than" in p for p in cli.validate_config(cfg))
    cfg = tiny_temporal_config(axis="spatial", trial_ks=(), trial_ms=(2,),
                               shared_k=1 / 12)
    assert any("shared step" in p for p in cli.validate_config(cfg))


def test_validation_enforces_the_eps_rules():
    cfg = tiny_temporal_config(scheme="stabilized_helmholtz")
    assert any("need an eps rule" in p for p in cli.validate_config(cfg))
    cfg = tiny_temporal_config(eps_rule="h2")
    assert any("take no eps rule" in p for p in cli.validate_config(cfg))
    cfg = tiny_temporal_config(scheme="stabilized_helmholtz", eps_rule="h3")
    assert any("unknown eps rule" in p for p in cli.validate_config(cfg))
    cfg = tiny_temporal_config(scheme="stabilized_helmholtz", eps_rule="-0.5")
    assert any("must be positive" in p for p in cli.validate_config(cfg))


def test_validation_catches_unknown_names():
    checks = [
        (dict(scheme="spectral"), "unknown scheme"),
        (dict(axis="both"), "unknown axis"),
        (dict(data_set="turbulent"), "unknown data set"),
        (dict(noise_kind="levy"), "unknown noise kind"),
        (dict(noise_scaling="cubed"), "unknown noise scaling"),
        (dict(error_kinds=("u_l2", "vorticity")), "unknown error kinds"),
        (dict(preset="test9"), "unknown preset"),
    ]
    for overrides, needle in checks:
        cfg = tiny_temporal_config(**overrides)
        assert any(needle in p for p in cli.validate_config(cfg)), needle


def test_eps_rule_interpretation():
    assert cli._eps_for(tiny_temporal_config(eps_rule="none"), 8) is None
    assert cli._eps_for(tiny_temporal_config(eps_rule="h2"), 8) == 1 / 64
    assert cli._eps_for(tiny_temporal_config(eps_rule="0.25"), 8) == 0.25


# -- spec construction -----------------------------------------------------


def test_temporal_spec_shares_the_mesh():
    cfg = tiny_temporal_config()
    spec = cli.build_spec(cfg)
    assert spec.axis == "temporal"
    assert spec.reference.m == 4 and spec.reference.k == 1 / 8
    assert tuple(t.k for t in spec.trials) == (1 / 4, 1 / 2)
    assert all(t.m == 4 for t in spec.trials)
    assert spec.reference.B_fn is cli.noise_coeff_sqrt
    assert spec.reference.f_fn is cli.forcing_ones


def test_spatial_spec_shares_the_step():
    cfg = tiny_temporal_config(axis="spatial", trial_ks=(), trial_ms=(2, 4),
                               shared_k=1 / 8)
    spec = cli.build_spec(cfg)
    assert tuple(t.m for t in spec.trials) == (2, 4)
    assert all(t.k == 1 / 8 for t in spec.trials)


# -- command level ---------------------------------------------------------


def test_main_needs_a_preset_or_config(capsys):
    assert cli.main(["validate"]) == cli.EXIT_CONFIG
    assert "need --preset or --config" in capsys.readouterr().err


def test_main_rejects_unknown_subcommands():
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_validate_accepts_the_presets(capsys):
    assert cli.main(["validate", "--preset", "test1-temporal"]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_lists_the_problems(tmp_path, capsys):
    cfg = tiny_temporal_config(trial_ks=(1 / 7,), scheme="spectral")
    path = tmp_path / "bad.cfg"
    cli.write_config(cfg, path)
    assert cli.main(["validate", "--config", str(path)]) == cli.EXIT_CONFIG
    out = capsys.readouterr().out
    assert "unknown scheme" in out
    assert "not an integer multiple" in out


def test_preset_flag_conflicting_with_config_is_an_error(tmp_path, capsys):
    path = tmp_path / "exp.cfg"
    cli.write_config(tiny_temporal_config(), path)
    rc = cli.main(["validate", "--config", str(path), "--preset", "test2-cavity"])
    assert rc == cli.EXIT_CONFIG
    assert "conflicts" in capsys.readouterr().err


def test_flag_overrides_reach_the_config():
    args = cli.build_parser().parse_args(
        ["validate", "--preset", "test1-temporal", "--np", "7", "--seed", "42",
         "--workers", "3", "--scheme", "mixed_standard"])
    cfg = cli._load_config(args)
    assert cfg.n_realizations == 7
    assert cfg.seed_base == 42
    assert cfg.workers == 3
    assert cfg.scheme == "mixed_standard"
    assert cfg.preset == "test1-temporal"


def test_run_maps_solver_failures_to_the_numerical_exit_code(
        tmp_path, monkeypatch, capsys):
    path = tmp_path / "exp.cfg"
    cli.write_config(tiny_temporal_config(), path)

    def boom(*a, **kw):
        raise NotConverged("residual 1.0e+00 exceeds tolerance")

    monkeypatch.setattr(cli.mc, "run_study", boom)
    rc = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == cli.EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


# -- end-to-end runs -------------------------------------------------------


def test_run_writes_report_files_and_reruns_identically(tmp_path, capsys):
    cfg_path = tmp_path / "exp.cfg"
    cli.write_config(tiny_temporal_config(), cfg_path)
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2)]) == 0
    assert "axis=temporal" in capsys.readouterr().out

    for name in ("errors.csv", "manifest.json", "experiment.cfg"):
        assert (out1 / name).exists()
    assert (out1 / "errors.csv").read_bytes() == (out2 / "errors.csv").read_bytes()

    # The manifests agree except for the wall-clock entry.
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    m1.pop("wall_time"), m2.pop("wall_time")
    assert m1 == m2
    assert m1["seed_base"] == 7
    assert m1["noise"] == {"kind": "qwiener", "J": 2, "scaling": "as-printed-k"}

    # The stored experiment file reproduces the run's configuration.
    stored = cli.read_config(out1 / "experiment.cfg")
    assert stored == dataclasses.replace(tiny_temporal_config(),
                                         out_dir=str(out1))


def test_run_seed_override_changes_the_errors(tmp_path, capsys):
    cfg_path = tmp_path / "exp.cfg"
    cli.write_config(tiny_temporal_config(), cfg_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out2),
                     "--seed", "999"]) == 0
    capsys.readouterr()
    assert (out1 / "errors.csv").read_bytes() != (out2 / "errors.csv").read_bytes()


def test_cavity_run_dumps_fields_with_the_lid_values(tmp_path, capsys):
    cfg = tiny_temporal_config(
        preset="test2-cavity", axis="spatial", data_set="cavity",
        ref_m=4, ref_k=1 / 4, shared_k=1 / 4, trial_ks=(), trial_ms=(2,),
        n_realizations=2, snapshot_realizations=1)
    cfg_path = tmp_path / "cavity.cfg"
    cli.write_config(cfg, cfg_path)
    out = tmp_path / "fields"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "cavity fields" in capsys.readouterr().out

    for name in ("velocity_dof_coords.txt", "pressure_dof_coords.txt",
                 "realization_0_velocity.txt", "realization_0_pressure.txt",
                 "mean_velocity.txt", "mean_pressure.txt", "experiment.cfg"):
        assert (out / name).exists(), name
    assert not (out / "realization_1_velocity.txt").exists()

    coords = np.loadtxt(out / "velocity_dof_coords.txt")
    n_scalar = (2 * 4 + 1) ** 2
    assert coords.shape == (n_scalar, 3)
    records = np.loadtxt(out / "mean_velocity.txt")
    assert records.shape == (2 * n_scalar, 4)
    assert np.all(records[:, 0] == 4)      # final step index
    assert np.all(records[:, 1] == 1.0)    # final time
    assert np.array_equal(records[:, 2], np.arange(2 * n_scalar))

    # The x-velocity block carries the unit lid value on the open top edge
    # and zero at the corners.
    def value_at(x, y, component):
        node = np.where((np.abs(coords[:, 1] - x) < 1e-12)
                        & (np.abs(coords[:, 2] - y) < 1e-12))[0]
        assert len(node) == 1
        return records[component * n_scalar + node[0], 3]

    assert value_at(0.5, 1.0, 0) == pytest.approx(1.0, abs=1e-12)
    assert value_at(0.125, 1.0, 0) == pytest.approx(1.0, abs=1e-12)
    assert value_at(0.5, 1.0, 1) == pytest.approx(0.0, abs=1e-12)
    assert value_at(0.0, 0.0, 0) == pytest.approx(0.0, abs=1e-12)
    assert value_at(1.0, 1.0, 0) == pytest.approx(0.0, abs=1e-12)


def test_compare_run_writes_twin_reports(tmp_path, capsys):
    cfg = tiny_temporal_config(
        preset="test3-stabilized", axis="spatial",
        scheme="stabilized_helmholtz", eps_rule="h2", noise_kind="scalar",
        ref_m=4, ref_k=1 / 4, shared_k=1 / 4, trial_ks=(), trial_ms=(2, 4),
        compare=True)
    cfg_path = tmp_path / "cmp.cfg"
    cli.write_config(cfg, cfg_path)
    out = tmp_path / "cmp"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in ("errors_helmholtz.csv", "errors_standard.csv",
                 "manifest_helmholtz.json", "manifest_standard.json"):
        assert (out / name).exists(), name
    assert "fitted-order advantage" in capsys.readouterr().out
    tagged = json.loads((out / "manifest_standard.json").read_text())
    assert tagged["variant"] == "standard"
    assert all(c["scheme"] == "stabilized_standard" for c in tagged["trials"])
