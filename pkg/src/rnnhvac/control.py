"""Receding-horizon closed loop against the plant, plus comparison reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier import (BarrierProblem, ControlPlan, OptConfig, StallError, optimize_inputs, project_interior,
                      warm_start)
from .dataset import FeatureSchema, Scaler
from .plant import PlantConfig, PlantState, ScheduleSet, feature_row, plant_schema, plant_step
from .rc import RcModel, RcParams, rc_predict
from .rnn import NumericError

KINDS = ("rnn-barrier", "rc-mpc", "fixed-schedule")


class ScenarioMismatch(ValueError):
    pass


@dataclass
class ControllerSpec:
    kind: str
    model: object = None  # evaluator for rnn-barrier, RcParams for rc-mpc
    opt: OptConfig = field(default_factory=OptConfig)
    warm_start: str = "repeat-last"  # or "shift"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind != "fixed-schedule" and self.model is None:
            raise ValueError(f"{self.kind} controller needs a model")
        if self.warm_start not in ("shift", "repeat-last"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")

    def evaluator(self):
        return RcModel(self.model) if self.kind == "rc-mpc" else self.model


def _as_rows(a, n):
    a = np.asarray(a, dtype=float)
    return a if a.ndim == 2 and len(a) == n else a.reshape(n, -1)


@dataclass
class EpisodeMetrics:
    setpoints: np.ndarray  # (N, n_zones) applied
    temps: np.ndarray  # (N, n_zones) measured before applying
    power: np.ndarray  # (N,)
    bounds: tuple
    fallback_steps: list = field(default_factory=list)
    interior: np.ndarray = None  # (N,) bool
    iterations: np.ndarray = None
    scenario: dict = field(default_factory=dict)
    controller: str = ""

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=float).reshape(-1)
        n = len(self.power)
        self.setpoints = _as_rows(self.setpoints, n)
        self.temps = _as_rows(self.temps, n)
        self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
        if self.interior is None:
            self.interior = np.ones(n, dtype=bool)
        if self.iterations is None:
            self.iterations = np.zeros(n, dtype=int)

    def __len__(self):
        return len(self.power)

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.power))

    @property
    def sum_squared_power(self) -> float:
        return float(np.sum(self.power**2))

    @property
    def comfort_violations(self) -> dict:
        lo, hi = self.bounds
        excess = np.maximum(lo - self.temps, 0.0) + np.maximum(self.temps - hi, 0.0)
        return {"count": int(np.count_nonzero(excess > 0)), "max_magnitude": float(excess.max(initial=0.0))}

    def summary(self) -> dict:
        return {
            "controller": self.controller,
            "scenario": self.scenario,
            "bounds": list(self.bounds),
            "steps": len(self),
            "total_energy": self.total_energy,
            "sum_squared_power": self.sum_squared_power,
            "comfort_violations": self.comfort_violations,
            "fallback_steps": list(self.fallback_steps),
            "all_commands_interior": bool(np.all(self.interior)),
            "mean_iterations": float(np.mean(self.iterations)) if len(self) else 0.0,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2) + "\n"

    def to_csv(self, path) -> None:
        nz = self.setpoints.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "P", *[f"c:setpoint_z{z}" for z in range(nz)],
                        *[f"uc:temp_z{z}" for z in range(nz)], "interior", "fallback", "iterations"])
            fb = set(self.fallback_steps)
            for k in range(len(self)):
                w.writerow([k, repr(float(self.power[k])), *map(repr, self.setpoints[k].tolist()),
                            *map(repr, self.temps[k].tolist()), int(self.interior[k]), int(k in fb),
                            int(self.iterations[k])])

    def save(self, stem) -> None:
        """Write ``<stem>.json`` (summary) and ``<stem>.csv`` (per-step log)."""
        Path(f"{stem}.json").write_text(self.to_json())
        self.to_csv(f"{stem}.csv")

    @classmethod
    def load(cls, stem) -> "EpisodeMetrics":
        doc = json.loads(Path(f"{stem}.json").read_text())
        with open(f"{stem}.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = [row for row in reader if row]
        nz = sum(1 for h in header if h.startswith("c:setpoint_z"))
        arr = np.array(body, dtype=float).reshape(len(body), 2 + 2 * nz + 3)
        return cls(arr[:, 2 : 2 + nz], arr[:, 2 + nz : 2 + 2 * nz], arr[:, 1], tuple(doc["bounds"]),
                   list(doc["fallback_steps"]), arr[:, -3].astype(bool), arr[:, -1].astype(int),
                   doc["scenario"], doc["controller"])


def _forecast_rows(schedules: ScheduleSet, start: int, count: int, n_features: int, n_zones: int):
    """Feature rows for steps start .. start+count-1; past the end the last row repeats."""
    rows = np.zeros((count, n_features))
    last = len(schedules) - 1
    for i in range(count):
        ex = schedules.row(min(start + i, last))
        rows[i] = feature_row(np.zeros(n_zones), np.zeros(n_zones), ex)
    return rows


def run_episode(
    plant: PlantConfig,
    schedules: ScheduleSet,
    controller: ControllerSpec,
    bounds,
    T: int,
    reference,
    seed: int = 0,
    schema: FeatureSchema | None = None,
    n_steps: int | None = None,
    initial_temps=None,
) -> EpisodeMetrics:
    """Closed-loop run: T burn-in steps on ``reference``, then receding horizon.

    ``reference`` is the fixed setpoint series (len(schedules), n_zones) used
    for burn-in and by the fixed-schedule controller. Each step solves for
    T+1 control rows and applies only the first.
    """
    reference = np.asarray(reference, dtype=float).reshape(len(schedules), plant.n_zones)
    if len(schedules) < T + 1:
        raise ValueError(f"schedules need at least T+1={T + 1} steps")
    lo, hi = float(bounds[0]), float(bounds[1])
    schema = (schema or plant_schema(plant.n_zones)).with_bounds(
        {n: (lo, hi) for n in _bounded_names(plant.n_zones)})
    n_feat = len(schema)
    available = len(schedules) - T
    n_steps = available if n_steps is None else min(n_steps, available)

    rng = np.random.default_rng(seed)
    temps0 = reference[0] if initial_temps is None else initial_temps
    state = PlantState(np.array(temps0, dtype=float))
    rows = np.zeros((T + n_steps, n_feat))
    for k in range(T):
        ex = schedules.row(k)
        rows[k] = feature_row(reference[k], state.zone_temps, ex)
        state, _ = plant_step(state, reference[k], ex, plant, rng)

    sp_log = np.zeros((n_steps, plant.n_zones))
    t_log = np.zeros((n_steps, plant.n_zones))
    p_log = np.zeros(n_steps)
    interior = np.ones(n_steps, dtype=bool)
    iters = np.zeros(n_steps, dtype=int)
    fallbacks = []
    evaluator = controller.evaluator() if controller.kind != "fixed-schedule" else None
    last_sp = reference[T - 1] if T > 0 else reference[0]
    prev_plan = None
    temp_cols = sorted(schema.pairing)
    for i in range(n_steps):
        k = T + i
        if controller.kind == "fixed-schedule":
            sp = reference[k]
        else:
            forecast = _forecast_rows(schedules, k, T + 1, n_feat, plant.n_zones)
            forecast[0, temp_cols] = state.zone_temps
            problem = BarrierProblem(evaluator, rows[k - T : k], forecast, schema, controller.opt.lam)
            init = _initial_plan(problem, controller.warm_start, last_sp, prev_plan)
            try:
                plan = optimize_inputs(problem, init, controller.opt)
                sp = plan.first_action
                iters[i] = plan.iterations
                prev_plan = plan
            except (StallError, NumericError):
                sp = last_sp.copy()
                fallbacks.append(i)
                prev_plan = None
            interior[i] = bool(np.all(sp > lo) and np.all(sp < hi))
        ex = schedules.row(k)
        rows[k] = feature_row(sp, state.zone_temps, ex)
        sp_log[i], t_log[i] = sp, state.zone_temps
        state, p_log[i] = plant_step(state, sp, ex, plant, rng)
        last_sp = np.asarray(sp, dtype=float)

    scenario = {"seed": seed, "T": T, "steps": n_steps, "start_day": schedules.start_day,
                "schedule_length": len(schedules)}
    return EpisodeMetrics(sp_log, t_log, p_log, (lo, hi), fallbacks, interior, iters, scenario,
                          controller.kind)


def _bounded_names(n_zones):
    return [f"setpoint_z{z}" for z in range(n_zones)] + [f"temp_z{z}" for z in range(n_zones)]


def _initial_plan(problem: BarrierProblem, strategy, last_sp, prev_plan) -> ControlPlan:
    if strategy == "shift" and prev_plan is not None:
        shifted = np.vstack([prev_plan.controls[1:], prev_plan.controls[-1:]])
        lo, hi = problem.row_bounds()
        return ControlPlan(project_interior(shifted, lo, hi))
    return warm_start(problem, last_sp)


def reduction_pct(reference: float, candidate: float) -> float:
    """Percentage reduction of ``candidate`` relative to ``reference``."""
    if reference == 0:
        raise ZeroDivisionError("reference value is zero")
    return 100.0 * (reference - candidate) / reference


def compare(reference: EpisodeMetrics, candidate: EpisodeMetrics, reference_name="reference",
            candidate_name="candidate") -> dict:
    """Energy and Σ P² reductions of ``candidate`` relative to ``reference``."""
    if len(reference) != len(candidate) or reference.scenario != candidate.scenario:
        raise ScenarioMismatch("episodes come from different scenarios")
    ref_c, cand_c = reference.comfort_violations, candidate.comfort_violations
    return {
        "reference": reference_name,
        "candidate": candidate_name,
        "energy_reduction_pct": reduction_pct(reference.total_energy, candidate.total_energy),
        "sum_squared_power_reduction_pct": reduction_pct(reference.sum_squared_power,
                                                         candidate.sum_squared_power),
        "comfort_violation_count_delta": cand_c["count"] - ref_c["count"],
        "comfort_violation_max_delta": cand_c["max_magnitude"] - ref_c["max_magnitude"],
    }


def constraint_sweep(plant, schedules, controller: ControllerSpec, bound_sets, T, reference, seed=0, **kw):
    """One episode per bound set with identical schedules and seeds."""
    return [(tuple(b), run_episode(plant, schedules, controller, b, T, reference, seed, **kw))
            for b in bound_sets]


@dataclass
class FitReport:
    rmse_rnn: float
    rmse_rc: float
    residuals: list = field(default_factory=list)  # (origin, target, rnn, rc)

    @property
    def improvement_pct(self) -> float:
        return reduction_pct(self.rmse_rc, self.rmse_rnn)

    def summary(self) -> dict:
        return {"rmse_rnn": self.rmse_rnn, "rmse_rc": self.rmse_rc, "improvement_pct": self.improvement_pct,
                "n_test": len(self.residuals)}


def model_fit_report(rnn, rc: RcParams, test_x, test_y, scaler: Scaler, origins=None) -> FitReport:
    """Normalized test RMSE of both models on the same windows.

    ``rnn`` is an evaluator on physical windows (e.g. ``ScaledRnn``);
    ``test_x`` holds normalized windows as produced by ``make_windows``.
    """
    test_x = np.asarray(test_x, dtype=float)
    test_y = np.asarray(test_y, dtype=float)
    if len(test_y) == 0:
        raise ValueError("empty test set")
    raw = scaler.inverse(test_x)
    p_rnn = np.concatenate([rnn.predict(raw[i : i + 4096]) for i in range(0, len(raw), 4096)])
    p_rc = rc_predict(rc, raw)
    origins = range(len(test_y)) if origins is None else origins
    residuals = [(int(o), float(y), float(a), float(b)) for o, y, a, b in zip(origins, test_y, p_rnn, p_rc)]
    return FitReport(float(np.sqrt(np.mean((p_rnn - test_y) ** 2))),
                     float(np.sqrt(np.mean((p_rc - test_y) ** 2))), residuals)
