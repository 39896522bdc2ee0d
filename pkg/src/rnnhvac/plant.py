"""Synthetic multi-zone building used as ground truth and closed-loop testbed.

Each zone is a first-order RC node exchanging heat with outdoor air and its
neighbours:

    C_i dT_i/dt = (T_o - T_i)/R_i + sum_j (T_j - T_i)/R_ij + P_i + Q_i

where ``P_i = hvac_gain * (setpoint_i - T_i)`` clipped to ``±p_max`` and
``Q_i`` collects occupant, appliance and solar gains. Metered electric power
is a superlinear function of the HVAC effort plus appliance loads, so the
plant is strictly richer than the linear RC model fitted to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    CONTROLLABLE,
    PHYSICAL,
    UNCONTROLLABLE,
    DataError,
    FeatureSchema,
    ProfileLog,
)

SECONDS_PER_DAY = 86400


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _default_adjacency():
    # 2x2 floor plate: 0-1, 0-2, 1-3, 2-3
    inf = np.inf
    return [
        [inf, 0.02, 0.025, inf],
        [0.02, inf, inf, 0.03],
        [0.025, inf, inf, 0.02],
        [inf, 0.03, 0.02, inf],
    ]


@dataclass
class PlantConfig:
    """Physical parameters. ``R_adj`` uses ``inf`` for non-neighbours."""

    n_zones: int = 4
    C: np.ndarray = field(default_factory=lambda: [4.0e6, 5.0e6, 6.0e6, 4.5e6])
    R_out: np.ndarray = field(default_factory=lambda: [0.0135, 0.0144, 0.0150, 0.0110])
    R_adj: np.ndarray = field(default_factory=_default_adjacency)
    hvac_gain: float = 800.0
    p_max: float = 3000.0
    power_curve_exponent: float = 1.5
    occupancy_heat: float = 100.0
    solar_aperture: float = 1.5
    dt: float = 600.0
    noise_std: float = 0.05
    power_noise_std: float = 20.0

    def __post_init__(self):
        n = int(self.n_zones)
        self.n_zones = n
        self.C = np.broadcast_to(np.asarray(self.C, dtype=float), (n,)).copy()
        self.R_out = np.broadcast_to(np.asarray(self.R_out, dtype=float), (n,)).copy()
        R_adj = np.asarray(self.R_adj, dtype=float)
        if R_adj.shape != (n, n):
            if n == 1 and R_adj.size <= 1:
                R_adj = np.full((1, 1), np.inf)
            else:
                raise ConfigError(f"R_adj must be {n}x{n}")
        self.R_adj = R_adj
        self.validate()

    def validate(self) -> None:
        if self.n_zones < 1:
            raise ConfigError("n_zones must be >= 1")
        if np.any(self.C <= 0) or np.any(self.R_out <= 0):
            raise ConfigError("C and R_out must be positive")
        if not np.allclose(self.R_adj, self.R_adj.T, rtol=0, atol=0, equal_nan=False):
            raise ConfigError("R_adj must be symmetric")
        if np.any(np.isfinite(np.diag(self.R_adj))):
            raise ConfigError("R_adj must not contain self-loops")
        if np.any(self.R_adj <= 0):
            raise ConfigError("R_adj entries must be positive (inf for non-neighbours)")
        if self.hvac_gain < 0 or self.p_max <= 0:
            raise ConfigError("hvac_gain must be >= 0 and p_max > 0")
        if self.power_curve_exponent < 1:
            raise ConfigError("power_curve_exponent must be >= 1")
        if self.dt <= 0 or self.noise_std < 0 or self.power_noise_std < 0:
            raise ConfigError("dt must be positive and noise levels nonnegative")
        rc = np.concatenate([self.R_out * self.C, (self.R_adj * self.C[:, None]).ravel()])
        if not self.dt < rc.min() / 2:
            raise ConfigError(f"dt={self.dt} violates dt < min(RC)/2 = {rc.min() / 2:.1f}")
        # total per-step relaxation must stay below 1 for a monotone Euler update
        if np.any(self.dt * (self.conductance_total + self.hvac_gain) / self.C >= 1):
            raise ConfigError("dt too large for the total zone conductance incl. HVAC gain")

    @property
    def adjacency_conductance(self) -> np.ndarray:
        return 1.0 / self.R_adj

    @property
    def conductance_total(self) -> np.ndarray:
        return 1.0 / self.R_out + self.adjacency_conductance.sum(axis=1)

    @property
    def steps_per_day(self) -> int:
        spd = SECONDS_PER_DAY / self.dt
        if spd != int(spd):
            raise ConfigError("dt must divide one day")
        return int(spd)

    def to_dict(self) -> dict:
        def enc(a):
            return np.where(np.isfinite(a), a, -1.0).tolist()

        return {
            "n_zones": self.n_zones,
            "C": self.C.tolist(),
            "R_out": self.R_out.tolist(),
            "R_adj": enc(self.R_adj),
            "hvac_gain": self.hvac_gain,
            "p_max": self.p_max,
            "power_curve_exponent": self.power_curve_exponent,
            "occupancy_heat": self.occupancy_heat,
            "solar_aperture": self.solar_aperture,
            "dt": self.dt,
            "noise_std": self.noise_std,
            "power_noise_std": self.power_noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlantConfig":
        d = dict(d)
        if "R_adj" in d and d["R_adj"] is not None:
            # -1 / null mark non-neighbours in config files
            a = np.array([[np.inf if v is None else v for v in row] for row in d["R_adj"]], dtype=float)
            d["R_adj"] = np.where(a < 0, np.inf, a)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown plant keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PlantState:
    zone_temps: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.zone_temps = np.asarray(self.zone_temps, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.zone_temps)):
            raise DataError("zone temperatures must be finite")
        if self.time_index < 0:
            raise DataError("time_index must be >= 0")


@dataclass
class ExogRow:
    outdoor_temp: float
    solar: float
    occupancy: np.ndarray
    appliance_load: np.ndarray


@dataclass
class ScheduleSet:
    """Exogenous series sharing one timestep: weather, occupancy and plug loads."""

    outdoor_temp: np.ndarray
    solar: np.ndarray
    occupancy: np.ndarray  # (N, n_zones)
    appliance_load: np.ndarray  # (N, n_zones)
    dt: float = 600.0
    start_day: int = 0

    def __post_init__(self):
        self.outdoor_temp = np.asarray(self.outdoor_temp, dtype=float).reshape(-1)
        n = len(self.outdoor_temp)
        self.solar = np.asarray(self.solar, dtype=float).reshape(n)
        self.occupancy = np.asarray(self.occupancy, dtype=float)
        self.appliance_load = np.asarray(self.appliance_load, dtype=float)
        if self.occupancy.ndim != 2 or len(self.occupancy) != n:
            self.occupancy = self.occupancy.reshape(n, -1)
        if self.appliance_load.ndim != 2 or len(self.appliance_load) != n:
            self.appliance_load = self.appliance_load.reshape(n, -1)
        if self.occupancy.shape != self.appliance_load.shape:
            raise DataError("occupancy and appliance_load must have the same shape")
        if np.any(self.occupancy < 0) or np.any(self.solar < 0):
            raise DataError("occupancy and solar must be nonnegative")

    def __len__(self):
        return len(self.outdoor_temp)

    @property
    def n_zones(self) -> int:
        return self.occupancy.shape[1]

    def row(self, k: int) -> ExogRow:
        return ExogRow(
            float(self.outdoor_temp[k]), float(self.solar[k]), self.occupancy[k], self.appliance_load[k]
        )

    def slice(self, start: int, stop: int) -> "ScheduleSet":
        return ScheduleSet(
            self.outdoor_temp[start:stop],
            self.solar[start:stop],
            self.occupancy[start:stop],
            self.appliance_load[start:stop],
            self.dt,
            self.start_day,
        )


def hvac_effort(zone_temps, setpoints, cfg: PlantConfig) -> np.ndarray:
    return np.clip(cfg.hvac_gain * (setpoints - zone_temps), -cfg.p_max, cfg.p_max)


def hvac_electric(effort, cfg: PlantConfig) -> np.ndarray:
    """Per-zone electric draw: ``p_max * (|P|/p_max)**k`` (equals |P| at k=1)."""
    return cfg.p_max * (np.abs(effort) / cfg.p_max) ** cfg.power_curve_exponent


def plant_step(state: PlantState, setpoints, exog: ExogRow, cfg: PlantConfig, rng=None):
    """Advance one forward-Euler step; returns ``(next_state, metered_power)``.

    ``rng`` is a seed or ``numpy.random.Generator`` used for process and
    metering noise; it may be omitted when both noise levels are zero.
    """
    T = state.zone_temps
    sp = np.asarray(setpoints, dtype=float).reshape(-1)
    occ = np.asarray(exog.occupancy, dtype=float).reshape(-1)
    app = np.asarray(exog.appliance_load, dtype=float).reshape(-1)
    n = cfg.n_zones
    if T.shape != (n,) or sp.shape != (n,) or occ.shape != (n,) or app.shape != (n,):
        raise DataError(f"plant_step expects {n}-zone vectors")
    if not (np.all(np.isfinite(sp)) and np.isfinite(exog.outdoor_temp) and np.isfinite(exog.solar)):
        raise DataError("non-finite plant input")

    P = hvac_effort(T, sp, cfg)
    G = cfg.adjacency_conductance
    flows = (exog.outdoor_temp - T) / cfg.R_out + G @ T - G.sum(axis=1) * T
    gains = occ * cfg.occupancy_heat + app + exog.solar * cfg.solar_aperture
    T_next = T + cfg.dt / cfg.C * (flows + P + gains)

    power = hvac_electric(P, cfg).sum() + app.sum()
    if cfg.noise_std > 0 or cfg.power_noise_std > 0:
        rng = np.random.default_rng(rng)
        T_next = T_next + rng.normal(0.0, cfg.noise_std, n)
        power += rng.normal(0.0, cfg.power_noise_std)
    return PlantState(T_next, state.time_index + 1), max(float(power), 0.0)


def generate_schedules(
    days: int,
    seed: int,
    profile: str = "weekday-office",
    n_zones: int = 4,
    dt: float = 600.0,
    start_day: int = 0,
) -> ScheduleSet:
    """Deterministic synthetic weather, occupancy and plug-load series.

    Day 0 of the year is a Monday. ``weekday-office`` has weekday occupancy
    from roughly 07:00 to 19:00 with a lunchtime dip and near-empty nights and
    weekends; outdoor temperature is a seasonal plus diurnal sinusoid with
    AR(1) noise. ``constant`` holds every series fixed (10 °C, no sun, empty).
    """
    if days < 1:
        raise ConfigError("days must be >= 1")
    spd = SECONDS_PER_DAY / dt
    if spd != int(spd):
        raise ConfigError("dt must divide one day")
    spd = int(spd)
    n = days * spd

    if profile == "constant":
        return ScheduleSet(
            np.full(n, 10.0), np.zeros(n), np.zeros((n, n_zones)), np.zeros((n, n_zones)), dt, start_day
        )
    if profile != "weekday-office":
        raise ConfigError(f"unknown schedule profile {profile!r}")

    rng = np.random.default_rng(seed)
    k = np.arange(n)
    hour = (k % spd) * dt / 3600.0
    day = start_day + k // spd
    weekday = day % 7 < 5
    year_phase = 2 * np.pi * (day + hour / 24.0 - 20.0) / 365.0

    noise = np.empty(n)
    innov = rng.normal(0.0, 0.15, n)
    acc = 0.0
    for i in range(n):
        acc = 0.98 * acc + innov[i]
        noise[i] = acc
    outdoor = 11.0 - 6.0 * np.cos(year_phase) + 4.0 * np.sin(2 * np.pi * (hour - 9.0) / 24.0) + noise

    cloud = rng.uniform(0.3, 1.0, days)[k // spd]
    daylight = np.clip(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0, None)
    solar = daylight * (250.0 + 450.0 * (1 - np.cos(year_phase)) / 2) * cloud

    # office occupancy shape: ramps 7-9 and 17-19, lunchtime dip 12-13
    shape = np.interp(hour, [0, 7, 9, 12, 12.25, 12.75, 13, 17, 19, 24], [0, 0, 1, 1, 0.4, 0.4, 1, 1, 0, 0])
    peak = rng.uniform(4.0, 8.0, n_zones)
    jitter = np.clip(1.0 + 0.1 * rng.normal(size=(n, n_zones)), 0.0, None)
    occupancy = np.where(weekday[:, None], shape[:, None] * peak * jitter, 0.03 * peak * shape[:, None])
    occupancy = np.clip(occupancy, 0.0, None)
    base_load = rng.uniform(60.0, 120.0, n_zones)
    appliance = base_load + 60.0 * occupancy
    return ScheduleSet(outdoor, solar, occupancy, appliance, dt, start_day)


def plant_schema(n_zones: int, setpoint_bounds=(18.0, 26.0), temp_bounds=None) -> FeatureSchema:
    """Feature layout of plant logs: setpoints, temps, occupancy, plug loads, weather."""
    temp_bounds = setpoint_bounds if temp_bounds is None else temp_bounds
    names, blocks, bounds = [], [], []
    for z in range(n_zones):
        names.append(f"setpoint_z{z}"), blocks.append(CONTROLLABLE), bounds.append(setpoint_bounds)
    for z in range(n_zones):
        names.append(f"temp_z{z}"), blocks.append(UNCONTROLLABLE), bounds.append(temp_bounds)
    for z in range(n_zones):
        names.append(f"occupancy_z{z}"), blocks.append(UNCONTROLLABLE), bounds.append(None)
    for z in range(n_zones):
        names.append(f"appliance_z{z}"), blocks.append(UNCONTROLLABLE), bounds.append(None)
    names += ["outdoor_temp", "solar"]
    blocks += [PHYSICAL, PHYSICAL]
    bounds += [None, None]
    pairing = {n_zones + z: z for z in range(n_zones)}
    return FeatureSchema(names, blocks, bounds, pairing)


def feature_row(setpoints, zone_temps, exog: ExogRow) -> np.ndarray:
    return np.concatenate(
        [setpoints, zone_temps, exog.occupancy, exog.appliance_load, [exog.outdoor_temp, exog.solar]]
    )


def simulate(
    cfg: PlantConfig,
    schedules: ScheduleSet,
    setpoint_policy,
    seed: int = 0,
    initial_temps=None,
    schema: FeatureSchema | None = None,
) -> ProfileLog:
    """Run the plant open loop under a precomputed setpoint series.

    Row k holds the setpoints applied at step k, the zone temperatures measured
    before applying them, the exogenous inputs and the power metered over the
    step.
    """
    policy = np.asarray(setpoint_policy, dtype=float)
    n = len(schedules)
    if policy.shape[0] != n:
        raise DataError(f"policy length {policy.shape[0]} != schedule length {n}")
    if schedules.n_zones != cfg.n_zones:
        raise DataError("schedule zone count does not match plant")
    if schedules.dt != cfg.dt:
        raise DataError("schedule timestep does not match plant dt")
    schema = schema or plant_schema(cfg.n_zones)
    if n == 0:
        return ProfileLog(schema, np.zeros(0), np.zeros((0, len(schema))), np.zeros(0))
    policy = policy.reshape(n, cfg.n_zones)

    rng = np.random.default_rng(seed)
    temps = policy[0] if initial_temps is None else initial_temps
    state = PlantState(np.array(temps, dtype=float))
    rows = np.empty((n, len(schema)))
    power = np.empty(n)
    for k in range(n):
        exog = schedules.row(k)
        rows[k] = feature_row(policy[k], state.zone_temps, exog)
        state, power[k] = plant_step(state, policy[k], exog, cfg, rng)
    times = (np.arange(n) * cfg.dt).astype(np.int64)
    return ProfileLog(schema, times, rows, power)


def constant_policy(n_steps: int, n_zones: int, value: float = 22.0) -> np.ndarray:
    return np.full((n_steps, n_zones), float(value))


def excitation_policy(
    n_steps: int,
    n_zones: int,
    seed: int,
    low: float = 16.0,
    high: float = 28.0,
    max_jump: float = 2.0,
    min_hold: int = 3,
    max_hold: int = 48,
    drift_fraction: float = 0.5,
) -> np.ndarray:
    """Random setpoints for system identification.

    Each zone alternates holds at a level that random-walks by at most
    ``max_jump`` with slow ramps (mostly downward, so zones coast with little
    HVAC effort). Small jumps keep actuator saturation rare.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n_steps, n_zones))
    for z in range(n_zones):
        k = 0
        level = rng.uniform(low, high)
        while k < n_steps:
            hold = int(rng.integers(min_hold, max_hold + 1))
            if rng.uniform() < drift_fraction:
                rate = rng.uniform(0.02, 0.25) * rng.choice([-1.0, 1.0], p=[0.7, 0.3])
                seg = np.clip(level + rate * np.arange(1, hold + 1), low, high)
                level = seg[-1]
            else:
                level = float(np.clip(level + rng.uniform(-max_jump, max_jump), low, high))
                seg = np.full(hold, level)
            stop = min(k + hold, n_steps)
            out[k:stop, z] = seg[: stop - k]
            k = stop
    return out
