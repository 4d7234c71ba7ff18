import numpy as np
import pytest

from cnflow.errors import (
    ConvergenceRecord,
    ErrorSpec,
    fit_loglog,
    fit_rate,
    integrate_cg1,
    midpoint_reconstruction,
    pressure_error,
    velocity_error,
)
from cnflow.schemes import Trajectory
from cnflow.temporal_ops import GridFunctionCG1, GridFunctionDG0
from cnflow.time_mesh import build_alternating_mesh, build_uniform_mesh


def synthetic_traj(mesh, pressures, velocities=None, space=None):
    if velocities is None:
        velocities = np.zeros((mesh.num_intervals + 1, pressures.shape[1]))
    return Trajectory(mesh, GridFunctionCG1(mesh, velocities),
                      GridFunctionDG0(mesh, pressures),
                      ["CN"] * mesh.num_intervals, space)


def test_fit_rate_exact_slopes():
    fit = fit_loglog([0.1, 0.01], [1e-2, 1e-4])
    assert fit.slope == pytest.approx(2.0, abs=1e-10)
    ks = np.array([0.2, 0.1, 0.05, 0.025])
    fit3 = fit_loglog(ks, 3.7 * ks ** 1.75)
    assert fit3.slope == pytest.approx(1.75, abs=1e-10)
    assert np.allclose(fit3.pairwise, 1.75, atol=1e-10)


def test_fit_rate_flat_errors():
    fit = fit_loglog([0.1, 0.05, 0.025], [3.0, 3.0, 3.0])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_reported_case_data():
    # weighted rows reported for the incompatible-data experiment
    ks = [0.02, 0.01, 0.005, 0.0025]
    errs = [1.86e-5, 5.07e-6, 1.44e-6, 4.06e-7]
    fit = fit_loglog(ks, errs)
    assert fit.slope == pytest.approx(1.84, abs=0.01)


def test_fit_rate_rejects_bad_rows():
    with pytest.raises(ValueError):
        fit_loglog([0.1], [1.0])
    with pytest.raises(ValueError):
        fit_loglog([0.1, 0.05], [1.0, 0.0])
    rec = ConvergenceRecord()
    rec.add(0.1, 0, 0.0, "pressure_L2l2", 1e-3)
    rec.add(0.05, 0, 0.0, "pressure_L2l2", 2.5e-4)
    rec.add(0.05, 0, 0.0, "pressure_Linfl2", 1e-3)
    with pytest.raises(ValueError):
        fit_rate(rec)  # two norm ids
    assert rec.fit("pressure_L2l2").slope == pytest.approx(2.0, abs=1e-10)


def test_record_csv_layout():
    rec = ConvergenceRecord()
    rec.add(0.1, 1, 1.5, "pressure_L2l2", 1e-2)
    rec.add(0.05, 1, 1.5, "pressure_L2l2", 2.5e-3)
    text = rec.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "k,n0,alpha,norm,error,rate_pairwise"
    assert lines[1].startswith("0.1,1,1.5,pressure_L2l2,0.01,")
    assert lines[1].endswith(",")  # no pairwise rate on the first row
    assert lines[2].split(",")[-1] == repr(2.0)


def test_error_spec_validation():
    with pytest.raises(ValueError):
        ErrorSpec("bogus")
    with pytest.raises(ValueError):
        ErrorSpec("pressure_L2l2", alpha=-1.0)
    with pytest.raises(ValueError):
        ErrorSpec("pressure_L2l2", spatial="fancy")


def test_identical_trajectories_zero_error():
    fine = build_uniform_mesh(1.0, 64)
    rng = np.random.default_rng(0)
    p = rng.standard_normal((64, 5))
    traj = synthetic_traj(fine, p)
    assert pressure_error(traj, traj, ErrorSpec("pressure_L2l2", spatial="nodal")) == 0.0
    assert pressure_error(traj, traj, ErrorSpec("pressure_Linfl2", spatial="nodal")) == 0.0


def test_pressure_error_synthetic_offset():
    # coarse pressure constant k on each interval vs zero reference
    fine = build_uniform_mesh(1.0, 64)
    coarse = build_uniform_mesh(1.0, 8)
    k = coarse.k_max
    traj = synthetic_traj(coarse, np.full((8, 3), k))
    ref = synthetic_traj(fine, np.zeros((64, 3)))
    spec = ErrorSpec("pressure_Linfl2", spatial="nodal")
    assert pressure_error(traj, ref, spec) == pytest.approx(np.sqrt(3) * k, rel=1e-12)
    spec2 = ErrorSpec("pressure_L2l2", spatial="nodal")
    assert pressure_error(traj, ref, spec2) == pytest.approx(np.sqrt(3) * k, rel=1e-12)


def test_midpoint_reconstruction_identity_at_anchors():
    mesh = build_alternating_mesh(1.0, 0.13, [0.8, 1.2])
    rng = np.random.default_rng(4)
    vals = rng.standard_normal((mesh.num_intervals, 2))
    f = GridFunctionDG0(mesh, vals)
    got = midpoint_reconstruction(f, mesh.midpoints)
    assert np.allclose(got, vals, rtol=0, atol=1e-15)


def test_midpoint_reconstruction_linear_exact():
    # anchors of a linear-in-time pressure reproduce the line everywhere,
    # including the extension zones beyond the outermost anchors
    mesh = build_uniform_mesh(1.0, 5)
    vals = (3.0 * mesh.midpoints - 1.0).reshape(-1, 1)
    f = GridFunctionDG0(mesh, vals)
    ts = np.array([0.02, 0.1, 0.33, 0.77, 0.98])
    assert np.allclose(midpoint_reconstruction(f, ts).ravel(), 3.0 * ts - 1.0,
                       rtol=1e-13)


def test_window_excludes_prefix():
    # values on the first coarse interval must not affect windowed errors
    fine = build_uniform_mesh(1.0, 64)
    coarse = build_uniform_mesh(1.0, 8)
    p1 = np.zeros((8, 2))
    p2 = np.zeros((8, 2))
    p2[0] = 77.0
    ref = synthetic_traj(fine, np.zeros((64, 2)))
    for norm in ("pressure_L2l2", "pressure_Linfl2"):
        spec = ErrorSpec(norm, alpha=1.5, window_start=1, spatial="nodal")
        e1 = pressure_error(synthetic_traj(coarse, p1), ref, spec)
        e2 = pressure_error(synthetic_traj(coarse, p2), ref, spec)
        # interpolation can leak only into samples below the second anchor,
        # which carry zero or first-interval weight; with the tau weight on
        # interval 1 equal to zero the windowed error cannot see p2[0]
        # except through the anchor segment between midpoints 1 and 2
        mask = fine.midpoints > coarse.nodes[1]
        weights = np.minimum(coarse.nodes[np.atleast_1d(
            coarse.interval_of(fine.midpoints[mask])) - 1], 1.0)
        assert e1 == 0.0
        # the leaked contribution is weighted by tau(I^2) = t_1
        assert e2 <= 77.0 * weights.max() + 1e-12


def test_zero_weight_intervals_contribute_nothing():
    fine = build_uniform_mesh(2.0, 32)
    coarse = build_uniform_mesh(2.0, 4)
    p = np.zeros((4, 1))
    p[0] = 5.0  # tau on I^1 is zero
    ref = synthetic_traj(fine, np.zeros((32, 1)))
    traj = synthetic_traj(coarse, p)
    spec = ErrorSpec("pressure_L2l2", alpha=2.0, window_start=0, spatial="nodal")
    # anchor interpolation reaches into I^2 where tau = t_1 = 0.5
    base = pressure_error(traj, ref, spec)
    spec_w1 = ErrorSpec("pressure_L2l2", alpha=2.0, window_start=1, spatial="nodal")
    windowed = pressure_error(traj, ref, spec_w1)
    assert windowed <= base


def test_norm_axioms_on_random_fields():
    fine = build_uniform_mesh(1.0, 48)
    coarse = build_uniform_mesh(1.0, 6)
    rng = np.random.default_rng(8)
    ref = synthetic_traj(fine, np.zeros((48, 4)))
    a = rng.standard_normal((6, 4))
    b = rng.standard_normal((6, 4))
    for norm in ("pressure_L2l2", "pressure_Linfl2"):
        spec = ErrorSpec(norm, spatial="nodal")

        def err(vals):
            return pressure_error(synthetic_traj(coarse, vals), ref, spec)

        assert err(2.5 * a) == pytest.approx(2.5 * err(a), rel=1e-12)
        assert err(a + b) <= err(a) + err(b) + 1e-12 * (err(a) + err(b))


def test_pressure_error_scaling_linearity():
    fine = build_uniform_mesh(1.0, 32)
    coarse = build_uniform_mesh(1.0, 4)
    rng = np.random.default_rng(12)
    base = rng.standard_normal((4, 3))
    ref = synthetic_traj(fine, np.zeros((32, 3)))
    spec = ErrorSpec("pressure_L2l2", spatial="nodal")
    e1 = pressure_error(synthetic_traj(coarse, 1e-3 * base), ref, spec)
    e2 = pressure_error(synthetic_traj(coarse, 1e-6 * base), ref, spec)
    assert e1 / e2 == pytest.approx(1e3, rel=1e-9)


def test_empty_window_rejected():
    fine = build_uniform_mesh(1.0, 8)
    coarse = build_uniform_mesh(1.0, 2)
    ref = synthetic_traj(fine, np.zeros((8, 1)))
    traj = synthetic_traj(coarse, np.zeros((2, 1)))
    with pytest.raises(ValueError):
        pressure_error(traj, ref, ErrorSpec("pressure_L2l2", window_start=2,
                                            spatial="nodal"))


def test_mismatched_spaces_rejected():
    fine = build_uniform_mesh(1.0, 32)
    coarse = build_uniform_mesh(1.0, 4)
    ref = synthetic_traj(fine, np.zeros((32, 3)))
    traj = synthetic_traj(coarse, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        pressure_error(traj, ref, ErrorSpec("pressure_L2l2", spatial="nodal"))


def test_velocity_error_requires_space():
    fine = build_uniform_mesh(1.0, 32)
    traj = synthetic_traj(fine, np.zeros((32, 2)))
    with pytest.raises(ValueError):
        velocity_error(traj, traj, ErrorSpec("velocity_LinfV1", spatial="nodal"))


def test_integrate_cg1_exact():
    mesh = build_uniform_mesh(1.0, 7)
    vals = (2.0 * mesh.nodes + 1.0).reshape(-1, 1)
    f = GridFunctionCG1(mesh, vals)
    a, b = 0.15, 0.83
    exact = (b * b - a * a) + (b - a)
    assert integrate_cg1(f, a, b)[0] == pytest.approx(exact, rel=1e-13)
    assert integrate_cg1(f, 0.3, 0.3)[0] == 0.0


def test_velocity_errors_on_space(small_space):
    space = small_space
    fine = build_uniform_mesh(1.0, 16)
    coarse = build_uniform_mesh(1.0, 4)
    base = space.interpolate_velocity(lambda x, y: (np.sin(x) * y, np.cos(y) * x))
    rng = np.random.default_rng(19)

    def traj_on(mesh, scale):
        vals = np.outer(np.linspace(0, scale, mesh.num_intervals + 1), base)
        p = np.zeros((mesh.num_intervals, space.num_pressure))
        return synthetic_traj(mesh, p, vals, space)

    ref = traj_on(fine, 1.0)
    same = traj_on(coarse, 1.0)
    for norm in ("velocity_LinfV1", "velocity_L2V2avg"):
        spec = ErrorSpec(norm)
        assert velocity_error(same, ref, spec) == pytest.approx(0.0, abs=1e-12)
        e1 = velocity_error(traj_on(coarse, 1.0 + 1e-3), ref, spec)
        e2 = velocity_error(traj_on(coarse, 1.0 + 1e-6), ref, spec)
        assert e1 / e2 == pytest.approx(1e3, rel=1e-6)


def test_rate_fit_csv_row():
    fit = fit_loglog([0.1, 0.05], [1e-2, 2.5e-3])
    row = fit.csv_row()
    slope, pairwise = row.split(",")
    assert float(slope) == pytest.approx(2.0, abs=1e-10)
    assert float(pairwise) == pytest.approx(2.0, abs=1e-10)
