import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import identity_scaler
from rnnhvac.barrier import BarrierProblem, ControlPlan, OptConfig
from rnnhvac.dataset import CONTROLLABLE, PHYSICAL, UNCONTROLLABLE, FeatureSchema, fit_scaler, make_windows
from rnnhvac.plant import PlantConfig, ScheduleSet, plant_schema, simulate
from rnnhvac.rc import RcFitError, RcParams, fit_rc, rc_mpc_solve, rc_predict


def pure_rc_log(days=20, dt=600.0):
    """Heating-only two-zone RC data: linear power, no noise, no internal gains."""
    R_adj = np.array([[np.inf, 0.03], [0.03, np.inf]])
    cfg = PlantConfig(n_zones=2, C=[4.0e6, 5.5e6], R_out=[0.0135, 0.0110], R_adj=R_adj,
                      hvac_gain=800.0, p_max=1e6, power_curve_exponent=1.0, occupancy_heat=0.0,
                      solar_aperture=0.0, noise_std=0.0, power_noise_std=0.0, dt=dt)
    n = int(days * 86400 / dt)
    t = np.arange(n) * dt / 86400.0
    outdoor = 2.5 + 2.5 * np.sin(2 * np.pi * t / 3.1)
    zeros = np.zeros((n, 2))
    sched = ScheduleSet(outdoor, np.zeros(n), zeros, zeros, dt)
    policy = np.column_stack([22 + 2 * np.sin(2 * np.pi * t / 2.3), 21 + 2 * np.sin(2 * np.pi * t / 1.7 + 1.0)])
    log = simulate(cfg, sched, policy, initial_temps=[19.0, 18.0])
    return cfg, log


@pytest.fixture(scope="module")
def pure_rc():
    cfg, log = pure_rc_log()
    P = cfg.hvac_gain * (log.features[:, :2] - log.features[:, 2:4])
    assert P.min() > 0  # heating only, so metered power stays linear in the drive
    scaler = fit_scaler(log)
    windows = make_windows(log, 3, scaler)
    params = fit_rc(windows, log.schema, scaler, cfg.dt, adjacency=np.isfinite(cfg.R_adj))
    return cfg, log, scaler, windows, params


def test_identifies_dynamics_coefficients(pure_rc):
    cfg, _, _, _, params = pure_rc
    np.testing.assert_allclose(params.inv_rc_out, 1.0 / (cfg.R_out * cfg.C), rtol=1e-2)
    true_adj = np.where(np.isfinite(cfg.R_adj), 1.0 / (cfg.R_adj * cfg.C[:, None]), 0.0)
    np.testing.assert_allclose(params.inv_rc_adj, true_adj, rtol=1e-2)
    # in units of the HVAC gain
    np.testing.assert_allclose(params.C, cfg.C / cfg.hvac_gain, rtol=1e-2)
    np.testing.assert_allclose(params.R_out, cfg.R_out * cfg.hvac_gain, rtol=1e-2)


def test_self_prediction_error_is_tiny(pure_rc):
    _, _, scaler, windows, params = pure_rc
    x = scaler.inverse(np.stack([w.inputs for w in windows]))
    y = np.array([w.target for w in windows])
    rmse = np.sqrt(np.mean((rc_predict(params, x) - y) ** 2))
    assert rmse < 1e-3


def test_duplicate_rows_are_rank_deficient():
    schema = plant_schema(1)
    x = np.tile([22.0, 20.0, 0.0, 0.0, 5.0, 0.0], (4, 3, 1))
    with pytest.raises(RcFitError):
        fit_rc((x, np.ones(4)), schema, identity_scaler(6), 600.0)


def test_params_round_trip(pure_rc, tmp_path):
    params = pure_rc[4]
    params.save(tmp_path / "rc.json")
    back = RcParams.load(tmp_path / "rc.json")
    np.testing.assert_array_equal(back.a_adj, params.a_adj)
    assert back.offset == params.offset


def two_zone_params():
    # features: sp0 sp1 T0 T1 To
    a_out, b = np.array([0.1, 0.05]), np.array([0.2, 0.25])
    a_adj = np.array([[0.0, 0.04], [0.05, 0.0]])  # R_adj = b_i / a_ij = 5 both ways
    return RcParams(600.0, a_out, a_adj, b, power_scale=0.5, exchange_scale=0.3, offset=0.1,
                    setpoint_cols=[0, 1], temp_cols=[2, 3], outdoor_col=4, n_features=5)


def test_equal_temperatures_and_no_drive_leave_only_offset():
    params = two_zone_params()
    window = np.full((3, 5), 20.0)
    assert rc_predict(params, window) == pytest.approx(0.1, abs=1e-15)


def test_hand_computed_two_zone_prediction():
    params = two_zone_params()
    window = np.array([[30.0, 30.0, 30.0, 30.0, 30.0],
                       [21.0, 21.0, 20.0, 20.0, 0.0],
                       [22.0, 21.0, 20.0, 18.0, 10.0]])
    # R_out = b / a_out = [2, 5]; adjacency R = 5 each way; only the last row counts
    drive = (22 - 20) + (21 - 18)
    envelope = (10 - 20) / 2 + (10 - 18) / 5
    exchange = (18 - 20) / 5 + (20 - 18) / 5
    expected = 0.1 + 0.5 * drive + 0.3 * (envelope + exchange)
    assert rc_predict(params, window) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(params.R_out, [2.0, 5.0])


def test_doubling_outdoor_difference_doubles_exchange():
    params = two_zone_params()
    base = np.array([[20.0, 20.0, 20.0, 20.0, 20.0]])
    one = base.copy()
    one[0, 4] = 15.0
    two = base.copy()
    two[0, 4] = 10.0
    e1 = rc_predict(params, one) - params.offset
    e2 = rc_predict(params, two) - params.offset
    assert e2 == pytest.approx(2 * e1, rel=1e-12)


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_prediction_is_affine_in_the_window(alpha, seed):
    params = two_zone_params()
    rng = np.random.default_rng(seed)
    w1, w2 = rng.uniform(0, 30, (2, 3, 5))
    mixed = rc_predict(params, alpha * w1 + (1 - alpha) * w2)
    combo = alpha * rc_predict(params, w1) + (1 - alpha) * rc_predict(params, w2)
    assert mixed == pytest.approx(combo, abs=1e-10)


def test_linear_coefficients_agree_with_prediction():
    params = two_zone_params()
    w = np.random.default_rng(0).uniform(0, 30, (4, 5))
    assert rc_predict(params, w) == pytest.approx(params.offset + w[-1] @ params.linear_coefficients(), abs=1e-12)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        rc_predict(two_zone_params(), np.zeros((3, 4)))


def one_zone_setup(lo, hi, T=0, lam=1e-3, temp=20.0):
    """Single zone with measured temperature ``temp`` and outdoor 5 C."""
    params = RcParams(600.0, [0.1], [[0.0]], [0.2], power_scale=0.4, exchange_scale=0.2, offset=0.05,
                      setpoint_cols=[0], temp_cols=[1], outdoor_col=2, n_features=3)
    schema = FeatureSchema(["setpoint_z0", "temp_z0", "outdoor_temp"], [CONTROLLABLE, UNCONTROLLABLE, PHYSICAL],
                           [(lo, hi), (lo - 1.0, hi + 1.0), None], {1: 0})
    hist = np.tile([21.0, temp, 5.0], (T, 1))
    fc = np.tile([0.0, temp, 5.0], (T + 1, 1))
    problem = BarrierProblem(None, hist, fc, schema, lam)
    return params, problem


def test_single_zone_matches_analytic_minimizer():
    # f = 0.05 + 0.4 (x - 20) + 0.2 (5 - 20) / 2 vanishes at x*; bounds symmetric about x*
    x_star = 20.0 - (0.05 + 0.2 * (5 - 20) / 2) / 0.4
    params, problem = one_zone_setup(x_star - 4, x_star + 4)
    plan = rc_mpc_solve(params, problem, ControlPlan([[x_star + 2.5]]),
                        OptConfig(learning_rate=0.5, n_iter=2000, stall_patience=2000))
    assert abs(plan.controls[0, 0] - x_star) < 1e-4


def test_near_point_bounds_pin_the_plan():
    params, problem = one_zone_setup(21.99999, 22.00001)
    plan = rc_mpc_solve(params, problem, ControlPlan([[22.0]]), OptConfig())
    assert abs(plan.controls[0, 0] - 22.0) < 1e-5


def rc_grid_loss(x0, x1, lam):
    off, ps, es, R = 0.05, 0.4, 0.2, 2.0
    f0 = off + ps * (x0 - 20.0) + es * (5.0 - 20.0) / R
    f1 = off + ps * (x1 - x0) + es * (5.0 - x0) / R
    bar = np.log(x0 - 21) + np.log(23 - x0) + np.log(x1 - 21) + np.log(23 - x1)
    bar += np.log(x0 - 20) + np.log(24 - x0)  # x0 is also the next measured temperature
    return f0**2 + f1**2 - lam * bar


def test_two_step_plan_matches_grid_search():
    lam = 1e-2
    params, problem = one_zone_setup(21.0, 23.0, T=1, lam=lam)
    step = 1e-3
    g = np.arange(21.0 + step, 23.0, step)
    X0, X1 = np.meshgrid(g, g, indexing="ij")
    i, j = np.unravel_index(np.argmin(rc_grid_loss(X0, X1, lam)), X0.shape)
    plan = rc_mpc_solve(params, problem, ControlPlan([[22.0], [22.0]]),
                        OptConfig(learning_rate=0.05, n_iter=3000, stall_patience=3000))
    assert np.max(np.abs(plan.controls[:, 0] - [g[i], g[j]])) <= step
