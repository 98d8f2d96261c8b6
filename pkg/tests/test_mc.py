import json

import numpy as np
import pytest

from stochstokes import mc, noise
from stochstokes.schemes import SchemeConfig, SchemeState, Stepper, Trajectory


def b_sqrt(v):
    return np.sqrt(v * v + 1.0)


def f_ones(points, t=0.0):
    return np.ones((len(points), 2))


def cfg(scheme="mixed_helmholtz", m=4, k=0.25, **kw):
    kw.setdefault("B_fn", b_sqrt)
    kw.setdefault("f_fn", f_ones)
    return SchemeConfig(scheme=scheme, m=m, k=k, T=1.0, **kw)


def temporal_spec(n_realizations=3, seed_base=500, ref_k=1 / 16,
                  trial_ks=(1 / 4, 1 / 8), **kw):
    return mc.StudySpec(
        axis="temporal",
        reference=cfg(k=ref_k, **kw),
        trials=tuple(cfg(k=k, **kw) for k in trial_ks),
        n_realizations=n_realizations,
        seed_base=seed_base,
    )


# -- order fitting --------------------------------------------------------


def test_pairwise_orders_on_exact_halving():
    assert mc.fit_orders([0.2, 0.1], [1 / 5, 1 / 10]) == pytest.approx([1.0])
    assert mc.fit_orders([0.04, 0.01], [1 / 10, 1 / 20]) == pytest.approx([2.0])


def test_pairwise_orders_on_table_values():
    (order,) = mc.fit_orders([0.16253, 0.11521], [1 / 5, 1 / 10])
    assert order == pytest.approx(0.496, abs=2e-3)


def test_order_fit_rejections():
    with pytest.raises(ValueError):
        mc.fit_orders([0.1], [0.5])
    with pytest.raises(ValueError):
        mc.fit_orders([0.1, 0.0], [0.5, 0.25])
    with pytest.raises(ValueError):
        mc.fitted_order([0.1, -0.2], [0.5, 0.25])


def test_least_squares_order_recovers_power_law():
    sizes = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    errors = [0.7 * s ** 1.5 for s in sizes]
    assert mc.fitted_order(errors, sizes) == pytest.approx(1.5, abs=1e-12)


# -- study specification --------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        mc.StudySpec(axis="spectral", reference=cfg(), trials=(cfg(),),
                     n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):
        mc.StudySpec(axis="temporal", reference=cfg(), trials=(),
                     n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):
        mc.StudySpec(axis="temporal", reference=cfg(), trials=(cfg(),),
                     n_realizations=0, seed_base=0)
    with pytest.raises(ValueError):  # trial step not a multiple
        mc.StudySpec(axis="temporal", reference=cfg(k=1 / 4),
                     trials=(cfg(k=1 / 6),), n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):  # temporal studies share the mesh
        mc.StudySpec(axis="temporal", reference=cfg(k=1 / 8, m=4),
                     trials=(cfg(k=1 / 4, m=8),), n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):  # trial mesh finer than the reference
        mc.StudySpec(axis="spatial", reference=cfg(m=8),
                     trials=(cfg(m=16),), n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):  # unknown error kind
        mc.StudySpec(axis="temporal", reference=cfg(k=1 / 8),
                     trials=(cfg(k=1 / 4),), n_realizations=1, seed_base=0,
                     error_kinds=("u_linf",))


def test_level_sizes_follow_the_axis():
    spec = temporal_spec()
    assert spec.level_sizes == (1 / 4, 1 / 8)
    spatial = mc.StudySpec(
        axis="spatial", reference=cfg(m=8, k=1 / 4),
        trials=(cfg(m=2, k=1 / 4), cfg(m=4, k=1 / 4)),
        n_realizations=1, seed_base=0)
    assert spatial.level_sizes == (1 / 2, 1 / 4)


# -- error functionals ----------------------------------------------------


def _fake_traj(space_u, space_p, u, seed=None):
    zeros = np.zeros(space_p.n_scalar_nodes)
    state = SchemeState(n=1, u=u, r=zeros, p=zeros, xi=zeros)
    return Trajectory(final=state, avg_r=zeros, avg_p=zeros, k=1.0, n_steps=1,
                      path_seed=seed)


def _full_vector_interp(space, f):
    vals = np.asarray(f(space.node_coords), dtype=np.float64)
    return np.concatenate([vals[:, 0], vals[:, 1]])


def test_cross_mesh_transfer_is_exact_for_shared_polynomials():
    # A quadratic velocity is represented exactly on both meshes, so the
    # nested-grid quadrature comparison must see (numerically) zero.
    ref = Stepper(cfg(m=8, B_fn=None, f_fn=None))
    trial = Stepper(cfg(m=4, B_fn=None, f_fn=None))
    level = mc.LevelErrors(ref, trial)

    def f(p):
        return np.column_stack([p[:, 0] ** 2 + p[:, 1], p[:, 0] * p[:, 1]])

    ta = _fake_traj(ref.vel_space, ref.pres_space, _full_vector_interp(ref.vel_space, f))
    tb = _fake_traj(trial.vel_space, trial.pres_space,
                    _full_vector_interp(trial.vel_space, f))
    assert level.u_error(ta, tb, "l2") < 1e-13
    assert level.u_error(ta, tb, "h1") < 1e-12

    # A cubic is not in the trial space, so the error is genuinely nonzero.
    def g(p):
        return np.column_stack([p[:, 0] ** 3, np.zeros(len(p))])

    ua = _fake_traj(ref.vel_space, ref.pres_space, _full_vector_interp(ref.vel_space, g))
    ub = _fake_traj(trial.vel_space, trial.pres_space,
                    _full_vector_interp(trial.vel_space, g))
    assert level.u_error(ua, ub, "l2") > 1e-5


def test_non_nested_meshes_still_transfer_shared_functions_exactly():
    # 5 is not a multiple of 3, so trial cells straddle reference cells; a
    # linear field is still represented exactly on both sides and the
    # cross-mesh quadrature must see zero.
    ref = Stepper(cfg(m=5, B_fn=None, f_fn=None))
    trial = Stepper(cfg(m=3, B_fn=None, f_fn=None))
    level = mc.LevelErrors(ref, trial)

    def f(p):
        return np.column_stack([p[:, 0] + 2 * p[:, 1], 3 * p[:, 0] - p[:, 1]])

    ta = _fake_traj(ref.vel_space, ref.pres_space, _full_vector_interp(ref.vel_space, f))
    tb = _fake_traj(trial.vel_space, trial.pres_space,
                    _full_vector_interp(trial.vel_space, f))
    assert level.u_error(ta, tb, "l2") < 1e-13
    assert level.u_error(ta, tb, "h1") < 1e-12


def test_error_functions_reject_mismatched_paths():
    stepper_args = dict(m=4, k=0.25)
    ref = Stepper(cfg(**stepper_args))
    level = mc.LevelErrors(ref, Stepper(cfg(**stepper_args)))
    a = ref.run(noise.sample_path("qwiener", 4, 0.25, 1.0, 1))
    b = ref.run(noise.sample_path("qwiener", 4, 0.25, 1.0, 2))
    with pytest.raises(ValueError):
        mc.error_u(level, a, b)
    with pytest.raises(ValueError):
        mc.error_p_avg(level, a, b)


def test_wrappers_match_methods():
    ref = Stepper(cfg(k=1 / 8))
    trial = Stepper(cfg(k=1 / 4))
    level = mc.LevelErrors(ref, trial)
    path = noise.sample_path("qwiener", 4, 1 / 8, 1.0, 3)
    a, b = ref.run(path), trial.run(path)
    assert mc.error_u(level, a, b, "h1") == level.u_error(a, b, "h1")
    assert mc.error_p_avg(level, a, b, "r") == level.pressure_error(a, b, "r", True)


# -- the study driver -----------------------------------------------------


def test_identical_trial_gives_exactly_zero_errors():
    spec = mc.StudySpec(
        axis="temporal", reference=cfg(k=1 / 4), trials=(cfg(k=1 / 4),),
        n_realizations=2, seed_base=77)
    report = mc.run_study(spec)
    for kind in mc.ERROR_KINDS:
        assert report.rms[kind] == (0.0,)
        assert report.pairwise_orders[kind] == ()
        assert np.isnan(report.fitted_order[kind])


def test_noiseless_study_reduces_to_the_deterministic_error():
    # Without noise every realization is the same run, so the RMS equals
    # the single deterministic error and the standard error vanishes.
    spec = mc.StudySpec(
        axis="spatial",
        reference=cfg(m=8, k=1 / 4, B_fn=None),
        trials=(cfg(m=2, k=1 / 4, B_fn=None), cfg(m=4, k=1 / 4, B_fn=None)),
        n_realizations=3, seed_base=0)
    report = mc.run_study(spec)
    ref = Stepper(spec.reference)
    ref_traj = ref.run(None)
    for i, tcfg in enumerate(spec.trials):
        trial = Stepper(tcfg)
        level = mc.LevelErrors(ref, trial)
        traj = trial.run(None)
        assert report.rms["u_l2"][i] == level.u_error(ref_traj, traj, "l2")
        assert report.rms["u_h1"][i] == level.u_error(ref_traj, traj, "h1")
        assert report.rms["r_avg"][i] == level.pressure_error(ref_traj, traj, "r", True)
        # Averaging three identical floats leaves at most rounding noise.
        assert report.rms_stderr["u_l2"][i] < 1e-16


def test_report_is_the_root_mean_square_of_realizations():
    spec = temporal_spec(n_realizations=3, seed_base=812)
    report = mc.run_study(spec)
    ref, trials, levels = mc._build_study(spec)
    acc = np.zeros((len(spec.trials), len(spec.error_kinds)))
    for i in range(spec.n_realizations):
        path = noise.sample_path("qwiener", 4, spec.reference.k, 1.0,
                                 spec.seed_base + i)
        ref_traj = ref.run(path)
        for lvl, (stepper, level) in enumerate(zip(trials, levels)):
            errs = level.all_errors(ref_traj, stepper.run(path), spec.error_kinds)
            acc[lvl] += [errs[k] ** 2 for k in spec.error_kinds]
    want = np.sqrt(acc / spec.n_realizations)
    for j, kind in enumerate(spec.error_kinds):
        got = np.array(report.rms[kind])
        assert np.allclose(got, want[:, j], rtol=1e-12)
        assert all(se > 0.0 for se in report.rms_stderr[kind])


def test_reports_do_not_depend_on_worker_count():
    spec = temporal_spec(n_realizations=4, seed_base=900)
    serial = mc.run_study(spec, workers=1)
    pooled = mc.run_study(spec, workers=2)
    assert serial.rms == pooled.rms
    assert serial.rms_stderr == pooled.rms_stderr
    assert serial.fitted_order == pooled.fitted_order


def test_progress_callback_sees_every_realization():
    seen = []
    spec = temporal_spec(n_realizations=3, seed_base=21, trial_ks=(1 / 4,))
    mc.run_study(spec, progress=lambda done, total: seen.append((done, total)))
    assert seen == [(1, 3), (2, 3), (3, 3)]


def test_curl_initial_data_on_torus_keeps_zero_pressure():
    # Divergence-free initial velocity, no forcing, no noise: the discrete
    # pressure stays at solver precision and the flow decays.
    def u0(points):
        x, y = points[:, 0], points[:, 1]
        return np.column_stack([
            2 * np.pi * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y),
            -2 * np.pi * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)])

    stepper = Stepper(SchemeConfig(
        scheme="mixed_standard", m=8, k=1 / 8, bc_mode="periodic", u0_fn=u0))
    traj = stepper.run(None, snapshot_steps=tuple(range(9)))
    from stochstokes import assembly
    for state in traj.snapshots.values():
        assert assembly.l2_norm(stepper.pres_space, state.r) < 1e-11
    u_start = assembly.l2_norm(stepper.vel_space, traj.snapshots[0].u)
    u_end = assembly.l2_norm(stepper.vel_space, traj.final.u)
    assert u_start == pytest.approx(np.pi * np.sqrt(2), rel=1e-2)
    assert u_end < 1e-4 * u_start


# -- the stabilization comparison -----------------------------------------


def test_comparison_requires_the_split_scheme():
    spec = mc.StudySpec(
        axis="spatial", reference=cfg(m=4, scheme="stabilized_standard"),
        trials=(cfg(m=2, scheme="stabilized_standard"),),
        n_realizations=1, seed_base=0)
    with pytest.raises(ValueError):
        mc.compare_stabilization(spec)


def test_comparison_twins_differ_only_in_noise_handling():
    spec = mc.StudySpec(
        axis="spatial",
        reference=cfg(m=8, k=1 / 4, scheme="stabilized_helmholtz", B_fn=None),
        trials=(cfg(m=2, k=1 / 4, scheme="stabilized_helmholtz", B_fn=None),
                cfg(m=4, k=1 / 4, scheme="stabilized_helmholtz", B_fn=None)),
        n_realizations=1, seed_base=0)
    comparison = mc.compare_stabilization(spec)
    # Without noise the split is inert, so the twins agree exactly.
    assert comparison.helmholtz.rms == comparison.standard.rms
    assert comparison.order_advantage("u_l2") == 0.0
    assert comparison.error_ratios("u_l2") == (1.0, 1.0)


def test_comparison_sees_the_split_advantage_with_noise():
    # A constant noise field equals the gradient of x + y, so the split
    # moves all of it into the pressure and the velocity stays clean; the
    # standard scheme leaks some of that gradient into the velocity via
    # the pressure stabilization.
    def b_ones(v):
        return np.ones_like(v)

    spec = mc.StudySpec(
        axis="spatial",
        reference=cfg(m=8, k=1 / 4, scheme="stabilized_helmholtz",
                      B_fn=b_ones, f_fn=None),
        trials=(cfg(m=2, k=1 / 4, scheme="stabilized_helmholtz",
                    B_fn=b_ones, f_fn=None),
                cfg(m=4, k=1 / 4, scheme="stabilized_helmholtz",
                    B_fn=b_ones, f_fn=None)),
        n_realizations=2, seed_base=31, noise_kind="scalar")
    comparison = mc.compare_stabilization(spec)
    for rv in comparison.error_ratios("u_l2"):
        assert rv > 10.0


# -- serialization --------------------------------------------------------


def test_csv_layout_and_byte_stability(tmp_path):
    spec = temporal_spec(n_realizations=2, seed_base=55)
    report = mc.run_study(spec)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    mc.write_csv(report, p1)
    mc.write_csv(report, p2)
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0] == "level,step_size,error_kind,rms_error,order"
    assert len(lines) == 1 + len(mc.ERROR_KINDS) * len(spec.trials)
    first = lines[1].split(",")
    assert first[0] == "0" and first[4] == ""  # no order at the first level
    second = lines[2].split(",")
    assert second[0] == "1" and float(second[4]) == pytest.approx(
        report.pairwise_orders[second[2]][0], abs=1e-6)


def test_manifest_contents(tmp_path):
    spec = temporal_spec(n_realizations=2, seed_base=55)
    report = mc.run_study(spec)
    path = tmp_path / "manifest.json"
    mc.write_manifest(path, spec, report, extra={"label": "unit"})
    data = json.loads(path.read_text())
    assert data["seed_base"] == 55
    assert data["n_realizations"] == 2
    assert data["noise"] == {"kind": "qwiener", "J": 4, "scaling": "as-printed-k"}
    assert data["reference"]["B_fn"] == "b_sqrt"
    assert data["reference"]["k"] == spec.reference.k
    assert set(data["rms"]) == set(mc.ERROR_KINDS)
    assert "numpy" in data["versions"] and "scipy" in data["versions"]
    assert data["label"] == "unit"
