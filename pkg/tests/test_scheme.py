"""Time-loop tests: equilibrium preservation, staggered-data plumbing,
interpolants, load averaging, rejection policy, checkpoint restart and
the regularized initial data."""

import numpy as np
import pytest

from thermovisc.grid import StructuredGrid
from thermovisc.materials import MaterialModel
from thermovisc.mech import SolverConfig, StepRejectedError
from thermovisc.presets import insulated_pulse, isothermal_creep, shear_pulse, steady
from thermovisc.scheme import (
    Scenario,
    _damping_derivatives,
    interpolants,
    refinement_study,
    run,
    step_load_vector,
    step_theta_b,
    transform_nodal_scalar,
)


def grid66():
    return StructuredGrid((6, 6), (1.0, 1.0), dirichlet_faces=("y0",))


def test_steady_trajectory_constant():
    sc = steady(grid=grid66(), T=0.4)
    traj = run(sc, tau=0.1, eps=0.01)
    y0 = traj.snapshots[0]
    for snap in traj.snapshots[1:]:
        assert np.array_equal(snap.y.values, y0.y.values)
        assert np.array_equal(snap.theta.values, y0.theta.values)
    for d in traj.step_diags:
        assert abs(d.energy_gap_total) <= 1e-9
        assert d.mech_residual <= 1e-9 and d.heat_residual <= 1e-9


def test_steady_with_regularized_data_still_constant():
    # theta_b and theta0 get the same eps-damping, so the equilibrium survives
    sc = steady(grid=grid66(), T=0.2, theta0=2.0)
    traj = run(sc, tau=0.1, eps=0.5)
    assert np.array_equal(traj.snapshots[-1].theta.values,
                          traj.snapshots[0].theta.values)
    th = traj.snapshots[0].theta_qp
    assert np.allclose(th, 2.0 / (1.0 + 0.5 * 2.0), atol=1e-12)


def test_shear_pulse_heats_and_dissipates():
    sc = insulated_pulse(grid=grid66(), T=0.3, amplitude=0.2, t_pulse=0.3)
    traj = run(sc, tau=0.05, eps=0.01)
    total_xi = sum(d.dissipation_step for d in traj.step_diags)
    assert total_xi > 0.0
    mean0 = traj.grid.assemble_scalar(traj.snapshots[0].theta_qp)
    mean1 = traj.grid.assemble_scalar(traj.snapshots[-1].theta_qp)
    assert mean1 > mean0  # adiabatic-like heating during the pulse
    for d in traj.step_diags:
        assert d.defect_reg >= -1e-15   # capped source never exceeds the rate


def test_isothermal_mode_skips_thermal_step():
    sc = isothermal_creep(grid=grid66(), T=0.2, amplitude=0.05)
    traj = run(sc, tau=0.05, eps=0.0)
    for snap in traj.snapshots:
        assert np.array_equal(snap.theta.values, traj.snapshots[0].theta.values)
        assert np.all(snap.w_qp == 0.0)
    for d in traj.step_diags:
        assert d.heat_iterations == 0
        assert d.boundary_heat == 0.0
    # deformation actually creeps under the dead load
    assert not np.array_equal(traj.snapshots[-1].y.values,
                              traj.snapshots[0].y.values)


def test_interpolants_nodal_and_midpoint():
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.1, t_pulse=0.15)
    traj = run(sc, tau=0.05, eps=0.01)
    tau = traj.tau
    for k in (0, 1, 3):
        states = interpolants(traj, k * tau)
        for s in (states.hold_new, states.hold_old, states.affine):
            assert np.allclose(s.y_values, traj.snapshots[k].y.values, atol=1e-14)
    mid = interpolants(traj, 2.5 * tau)
    expect = 0.5 * (traj.snapshots[2].y.values + traj.snapshots[3].y.values)
    assert np.allclose(mid.affine.y_values, expect, atol=1e-14)
    assert np.allclose(mid.hold_new.y_values, traj.snapshots[3].y.values, atol=1e-14)
    assert np.allclose(mid.hold_old.y_values, traj.snapshots[2].y.values, atol=1e-14)
    with pytest.raises(ValueError):
        interpolants(traj, -0.1)


def test_interpolant_gap_bounded_by_rate_integral():
    # max_t || grad(y_affine - y_hold) ||_L2 <= sqrt(tau) * sqrt(int ||grad ydot||^2)
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.2, t_pulse=0.15)
    gaps = {}
    for tau in (0.05, 0.025):
        traj = run(sc, tau=tau, eps=0.01, config=SolverConfig(korn_every=0, hk_every=0))
        grid = traj.grid
        sup_gap = 0.0
        rate_sq = 0.0
        for k in range(1, traj.n_steps + 1):
            dF = traj.snapshots[k].F - traj.snapshots[k - 1].F
            gap = np.sqrt(grid.assemble_scalar(np.sum(dF**2, axis=(-2, -1))))
            sup_gap = max(sup_gap, gap)
            rate_sq += grid.assemble_scalar(np.sum(dF**2, axis=(-2, -1))) / tau
        assert sup_gap <= np.sqrt(tau) * np.sqrt(rate_sq) + 1e-12
        gaps[tau] = sup_gap
    assert gaps[0.025] < gaps[0.05]  # gap shrinks under halving


def test_load_average_exact_for_linear_ramp():
    grid = grid66()
    model = MaterialModel()

    def g(t, X):
        out = np.zeros(X.shape)
        out[..., 1] = 2.0 * t
        return out

    sc = Scenario(name="ramp", grid=grid, model=model, T=1.0, bulk_force=g)
    L = step_load_vector(sc, 0.2, 0.4)
    ref = g(0.3, grid.qcoords)  # average of a linear ramp = midpoint value
    L_ref = grid.assemble_gradient(2, source=ref)
    assert np.allclose(L, L_ref, atol=1e-14)


def test_theta_b_averaging_is_regularized():
    grid = grid66()
    sc = steady(grid=grid66(), T=1.0, theta0=3.0)
    tb = step_theta_b(sc, eps=0.5, t0=0.0, t1=0.1)
    for name in grid.faces:
        assert np.allclose(tb[name], 3.0 / (1.0 + 0.5 * 3.0), atol=1e-14)


def test_step_rejection_bubbles_up():
    grid = grid66()
    model = MaterialModel()

    def g(t, X):
        out = np.zeros(X.shape)
        out[..., 1] = -500.0   # crushing load: not solvable at this budget
        return out

    sc = Scenario(name="crush", grid=grid, model=model, T=0.4, bulk_force=g)
    cfg = SolverConfig(max_newton=3, max_backtracks=6, max_step_halvings=1,
                       korn_every=0, hk_every=0)
    with pytest.raises(StepRejectedError):
        run(sc, tau=0.2, eps=0.0, config=cfg)


def test_checkpoint_restart_reproduces_run(tmp_path):
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.1, t_pulse=0.15)
    cfg = SolverConfig(checkpoint_every=2, korn_every=0, hk_every=0)
    full = run(sc, tau=0.05, eps=0.01, config=cfg, checkpoint_dir=str(tmp_path))
    resumed = run(sc, tau=0.05, eps=0.01, config=cfg,
                  checkpoint_dir=str(tmp_path), resume=True)
    assert resumed.snapshots[0].k == 4  # restarted from the latest checkpoint
    assert np.array_equal(resumed.snapshots[0].y.values, full.snapshots[4].y.values)


def test_determinism_bit_identical():
    sc = shear_pulse(grid=grid66(), T=0.1, amplitude=0.1, t_pulse=0.08)
    t1 = run(sc, tau=0.05, eps=0.01)
    t2 = run(sc, tau=0.05, eps=0.01)
    for a, b in zip(t1.snapshots, t2.snapshots):
        assert np.array_equal(a.y.values, b.y.values)
        assert np.array_equal(a.theta.values, b.theta.values)
        assert np.array_equal(a.w_qp, b.w_qp)


def test_transform_nodal_scalar_chain_rule():
    grid = grid66()

    def fn(X):
        return 1.0 + X[:, 0] * X[:, 1]

    def dfn(X, m):
        x, y = X[:, 0], X[:, 1]
        return {(1, 0): y, (0, 1): x, (1, 1): np.ones_like(x)}[m]

    th = grid.interpolate(fn, dfn=dfn)
    eps = 0.3
    out = transform_nodal_scalar(grid, th, _damping_derivatives(eps))
    nd = grid.ndof_node
    v = th.values[0::nd]
    tx, ty, txy = th.values[1::nd], th.values[2::nd], th.values[3::nd]
    f1 = 1.0 / (1.0 + eps * v) ** 2
    f2 = -2.0 * eps / (1.0 + eps * v) ** 3
    assert np.allclose(out.values[0::nd], v / (1.0 + eps * v), atol=1e-15)
    assert np.allclose(out.values[1::nd], f1 * tx, atol=1e-15)
    assert np.allclose(out.values[2::nd], f1 * ty, atol=1e-15)
    assert np.allclose(out.values[3::nd], f2 * tx * ty + f1 * txy, atol=1e-15)


def test_eps_zero_coupled_path_runs():
    # no regularization at all: uncapped dissipation source, no linear
    # viscosity; the frame-indifferent rate potential alone controls the
    # mechanical step (experimental regime, exercised for coverage)
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.1, t_pulse=0.15)
    traj = run(sc, tau=0.05, eps=0.0, config=SolverConfig(korn_every=0))
    for d in traj.step_diags:
        assert d.defect_reg == 0.0          # capped rate equals the raw rate
        assert abs(d.energy_gap_total) < 1e-12
        assert d.min_theta >= -1e-10


def test_apriori_norms_stable_under_tau_halving():
    from thermovisc.diagnostics import apriori_monitor
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.15, t_pulse=0.15)
    sups = {}
    for tau in (0.05, 0.025):
        traj = run(sc, tau=tau, eps=0.01, config=SolverConfig(korn_every=0, hk_every=0))
        mon = apriori_monitor(traj)
        sups[tau] = (np.max(mon["y_w2p"]), np.max(mon["theta_h1"]))
    for i in range(2):
        ratio = sups[0.025][i] / sups[0.05][i]
        assert 0.5 <= ratio <= 2.0          # sup norms stable within 2x


def test_3d_steady_end_to_end():
    # the whole pipe is dimension generic; a 3D equilibrium run exercises
    # kinematics, both solvers and every certificate at desk scale
    g = StructuredGrid((2, 2, 2), (1.0, 1.0, 1.0), dirichlet_faces=("x0",))
    m = MaterialModel(d=3, q=13.0, c2=12.0 / 13.0)   # stress-free identity in 3D
    assert np.allclose(m.elastic_stress(np.eye(3)), 0.0, atol=1e-12)
    traj = run(steady(grid=g, model=m, T=0.1), tau=0.05, eps=0.01)
    assert np.max(np.abs(traj.snapshots[-1].y.values
                         - traj.snapshots[0].y.values)) == 0.0
    for d in traj.step_diags:
        assert abs(d.energy_gap_total) < 1e-12
        assert 0.0 < d.hk_bound <= d.min_detF
        assert d.korn_const > 0.0


def test_refinement_smoke_tau_cauchy_decreases():
    sc = shear_pulse(grid=grid66(), T=0.2, amplitude=0.15, t_pulse=0.15)
    report = refinement_study(sc, tau_list=[0.1, 0.05, 0.025], eps_list=[0.01])
    rows = report["cauchy"][0.01]
    assert len(rows) == 2
    assert rows[1]["dy_grad_l2"] < rows[0]["dy_grad_l2"]
    assert rows[1]["dtheta_l2"] < rows[0]["dtheta_l2"]
    with pytest.raises(ValueError, match="sorted decreasing"):
        refinement_study(sc, tau_list=[0.05, 0.1], eps_list=[0.01])
