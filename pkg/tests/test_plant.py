import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_schedules, quiet_plant
from rnnhvac.dataset import ProfileLog
from rnnhvac.plant import (
    ConfigError,
    ExogRow,
    PlantConfig,
    PlantState,
    constant_policy,
    excitation_policy,
    generate_schedules,
    hvac_effort,
    plant_step,
    simulate,
)


def exog(n_zones, outdoor=10.0):
    return ExogRow(outdoor, 0.0, np.zeros(n_zones), np.zeros(n_zones))


def test_equilibrium_is_a_fixed_point():
    cfg = quiet_plant()
    state, power = plant_step(PlantState([21.0]), [21.0], exog(1, outdoor=21.0), cfg)
    assert state.zone_temps[0] == 21.0
    assert power == 0.0


def test_free_decay_matches_closed_form():
    cfg = quiet_plant(hvac_gain=0.0)
    ratio = 1 - cfg.dt / (cfg.R_out[0] * cfg.C[0])
    state = PlantState([30.0])
    for k in range(1, 50):
        state, _ = plant_step(state, [25.0], exog(1, outdoor=20.0), cfg)
        assert state.zone_temps[0] == pytest.approx(20 + 10 * ratio**k, rel=1e-12)


def test_coupling_vanishes_for_equal_temperatures():
    R_adj = np.array([[np.inf, 0.02], [0.02, np.inf]])
    coupled = quiet_plant(2, R_adj=R_adj, hvac_gain=0.0)
    apart = quiet_plant(2, hvac_gain=0.0)
    a, _ = plant_step(PlantState([23.0, 23.0]), [0.0, 0.0], exog(2), coupled)
    b, _ = plant_step(PlantState([23.0, 23.0]), [0.0, 0.0], exog(2), apart)
    np.testing.assert_array_equal(a.zone_temps, b.zone_temps)


def test_effort_is_clipped_to_actuator_range():
    cfg = PlantConfig()
    e = hvac_effort(np.array([10.0, 30.0, 20.0, 20.0]), np.array([30.0, 10.0, 20.5, 19.0]), cfg)
    np.testing.assert_allclose(e, [cfg.p_max, -cfg.p_max, 0.5 * cfg.hvac_gain, -cfg.hvac_gain])


def test_default_nominal_effort_is_about_half_the_range():
    cfg = PlantConfig()
    # design heat loss of the leakiest zone at 22 C inside, 4 C outside
    loss = (22.0 - 4.0) / cfg.R_out.min()
    assert 0.3 < loss / cfg.p_max < 0.6


def test_dimension_and_finiteness_errors():
    cfg = PlantConfig()
    with pytest.raises(ValueError):
        plant_step(PlantState(np.full(4, 20.0)), [20.0, 20.0], exog(4), cfg)
    with pytest.raises(ValueError):
        plant_step(PlantState(np.full(4, 20.0)), [20.0, np.nan, 20.0, 20.0], exog(4), cfg)


@given(st.lists(st.floats(5.0, 35.0), min_size=4, max_size=4), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_metered_power_is_nonnegative(setpoints, seed):
    cfg = PlantConfig(power_noise_std=500.0)
    _, power = plant_step(PlantState(np.full(4, 20.0)), setpoints, exog(4), cfg, seed)
    assert power >= 0.0


@given(st.lists(st.floats(-10.0, 40.0), min_size=4, max_size=4))
@settings(max_examples=40, deadline=None)
def test_free_response_decreases_lyapunov_energy(temps):
    cfg = PlantConfig(hvac_gain=0.0, noise_std=0.0, power_noise_std=0.0)
    outdoor = 12.0

    def energy(T):
        return float(np.sum(cfg.C * (T - outdoor) ** 2))

    state = PlantState(temps)
    prev = energy(state.zone_temps)
    for _ in range(30):
        state, _ = plant_step(state, np.zeros(4), exog(4, outdoor), cfg)
        cur = energy(state.zone_temps)
        assert cur <= prev * (1 + 1e-12) + 1e-9
        prev = cur


def test_config_rejects_unstable_or_malformed_values():
    with pytest.raises(ConfigError):
        PlantConfig(dt=60000.0)
    bad = np.array(PlantConfig().R_adj)
    bad[0, 1] = 0.5
    with pytest.raises(ConfigError):
        PlantConfig(R_adj=bad)
    loops = np.array(PlantConfig().R_adj)
    loops[0, 0] = 0.1
    with pytest.raises(ConfigError):
        PlantConfig(R_adj=loops)
    with pytest.raises(ConfigError):
        PlantConfig(C=[-1.0, 1e6, 1e6, 1e6])


def test_config_dict_round_trip():
    cfg = PlantConfig()
    again = PlantConfig.from_dict(cfg.to_dict())
    np.testing.assert_array_equal(again.R_adj, cfg.R_adj)
    assert again.to_dict() == cfg.to_dict()


def test_constant_profile_is_constant():
    s = generate_schedules(1, seed=3, profile="constant")
    assert len(s) == 144
    for series in (s.outdoor_temp, s.solar, s.occupancy, s.appliance_load):
        assert np.ptp(series) == 0


def test_schedules_are_deterministic():
    a = generate_schedules(3, seed=9)
    b = generate_schedules(3, seed=9)
    for name in ("outdoor_temp", "solar", "occupancy", "appliance_load"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_weekend_noon_occupancy_is_low():
    s = generate_schedules(7, seed=0)
    spd = 144
    wed_10 = s.occupancy[2 * spd + 60].sum()
    sat_12 = s.occupancy[5 * spd + 72].sum()
    assert sat_12 < 0.1 * wed_10


def test_weekday_noon_dip():
    s = generate_schedules(7, seed=0)
    tue = s.occupancy[144:288].sum(axis=1)
    assert tue[75] < 0.6 * tue[66]  # 12:30 vs 11:00


def test_unknown_profile_is_rejected():
    with pytest.raises(ConfigError):
        generate_schedules(1, seed=0, profile="warehouse")


def test_simulate_empty_and_length_mismatch():
    cfg = PlantConfig()
    empty = generate_schedules(1, 0).slice(0, 0)
    assert len(simulate(cfg, empty, np.zeros((0, 4)))) == 0
    s = generate_schedules(1, 0)
    with pytest.raises(ValueError):
        simulate(cfg, s, constant_policy(10, 4))


def test_constant_inputs_reach_constant_power():
    cfg = quiet_plant(4, R_adj=PlantConfig().R_adj)
    s = flat_schedules(600, 4, outdoor=8.0)
    log = simulate(cfg, s, constant_policy(600, 4, 21.0), initial_temps=np.full(4, 15.0))
    tail = log.power[-50:]
    assert np.ptp(tail) < 1e-6


def test_simulate_is_seed_reproducible_and_row_aligned(tmp_path):
    cfg = PlantConfig()
    s = generate_schedules(2, seed=4)
    policy = excitation_policy(len(s), 4, seed=5)
    a = simulate(cfg, s, policy, seed=6)
    b = simulate(cfg, s, policy, seed=6)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.power, b.power)
    np.testing.assert_array_equal(a.features[:, :4], policy)
    assert np.all(a.power >= 0)

    a.to_csv(tmp_path / "log.csv")
    back = ProfileLog.from_csv(tmp_path / "log.csv", {f"setpoint_z{z}": (16.0, 28.0) for z in range(4)})
    np.testing.assert_array_equal(back.features, a.features)
    np.testing.assert_array_equal(back.power, a.power)
    assert back.schema.names == a.schema.names
    assert back.schema.pairing == a.schema.pairing


def test_excitation_policy_stays_in_range_with_bounded_jumps():
    p = excitation_policy(5000, 4, seed=2, low=16.0, high=28.0, max_jump=2.0)
    assert p.min() >= 16.0 and p.max() <= 28.0
    assert np.abs(np.diff(p, axis=0)).max() <= 2.0 + 1e-12
