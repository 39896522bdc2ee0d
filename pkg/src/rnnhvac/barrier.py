"""Log-barrier input optimization over a frozen power model.

Decision variables are the controllable rows of the next T+1 steps. Paired
uncontrollable measurements (zone temperatures) are not free: at step τ ≥ 1
they are replaced by the control commanded at τ-1, so their box constraints
become a second barrier on the same controls. The loss

    Σ_τ f(window_τ)² - λ Σ log(x - lower) - λ Σ log(upper - x)

is minimized with momentum gradient descent, backtracking any step that
would leave the open box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureSchema
from .rnn import NumericError


class StallError(RuntimeError):
    """A momentum step could not be shrunk back into the feasible interior."""


@dataclass
class OptConfig:
    learning_rate: float = 0.5
    momentum: float = 0.9
    n_iter: int = 200
    lam: float = 1e-3
    backtrack_shrink: float = 0.5
    max_backtracks: int = 60
    stall_tol: float = 1e-9
    stall_patience: int = 25

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lam <= 0:
            raise ValueError("barrier weight lam must be positive")
        if not 0 < self.backtrack_shrink < 1:
            raise ValueError("backtrack_shrink must be in (0, 1)")
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")


class FunctionModel:
    """Evaluator built from plain callables on a single window.

    ``f(window) -> float`` and ``grad(window) -> array like window``.
    """

    def __init__(self, f, grad):
        self.f = f
        self.grad = grad

    def predict(self, windows):
        return np.array([self.f(w) for w in windows], dtype=float)

    def predict_and_grad(self, windows):
        return self.predict(windows), np.stack([self.grad(w) for w in windows])


@dataclass
class BarrierProblem:
    """One receding-horizon solve.

    ``history`` holds rows t-T .. t-1. ``forecast`` holds rows t .. t+T and
    supplies weather and unpaired uncontrollables; its paired-uc entries in
    row 0 are the current measurements, its controllable columns are ignored.
    """

    model: object
    history: np.ndarray
    forecast: np.ndarray
    schema: FeatureSchema
    lam: float = 1e-3

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=float)
        self.forecast = np.asarray(self.forecast, dtype=float)
        n = len(self.schema)
        self.T = self.history.shape[0]
        if self.history.shape != (self.T, n) or self.forecast.shape != (self.T + 1, n):
            raise ValueError(f"history must be (T, {n}) and forecast (T+1, {n})")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        self.c_cols = np.array(self.schema.controllable, dtype=int)
        paired_by_c = {c: uc for uc, c in self.schema.pairing.items()}
        for i in self.schema.uncontrollable:
            if self.schema.bounds[i] is not None and i not in self.schema.pairing:
                raise ValueError(f"bounded uncontrollable {self.schema.names[i]!r} has no paired control")
        # position in the control vector -> paired uc column (or -1)
        self.uc_of_c = np.array([paired_by_c.get(c, -1) for c in self.c_cols], dtype=int)
        self.lower = np.array([self.schema.bounds[c][0] for c in self.c_cols])
        self.upper = np.array([self.schema.bounds[c][1] for c in self.c_cols])
        has = self.uc_of_c >= 0
        self.img_pos = np.flatnonzero(has)
        self.img_cols = self.uc_of_c[has]
        self.img_lower = np.array([self.schema.bounds[u][0] for u in self.img_cols])
        self.img_upper = np.array([self.schema.bounds[u][1] for u in self.img_cols])
        L = self.T + 1
        self._win_idx = np.arange(L)[:, None] + np.arange(L)[None, :]

    @property
    def n_controls(self) -> int:
        return len(self.c_cols)

    def row_bounds(self):
        """Per-row (T+1, n_c) lower/upper, intersecting image bounds where they apply."""
        L = self.T + 1
        lo = np.tile(self.lower, (L, 1))
        hi = np.tile(self.upper, (L, 1))
        if len(self.img_pos) and self.T > 0:
            lo[:-1, self.img_pos] = np.maximum(lo[:-1, self.img_pos], self.img_lower)
            hi[:-1, self.img_pos] = np.minimum(hi[:-1, self.img_pos], self.img_upper)
        return lo, hi

    def is_interior(self, controls) -> bool:
        if not (np.all(controls > self.lower) and np.all(controls < self.upper)):
            return False
        if len(self.img_pos) and self.T > 0:
            img = controls[:-1, self.img_pos]
            return bool(np.all(img > self.img_lower) and np.all(img < self.img_upper))
        return True

    def trajectory(self, controls) -> np.ndarray:
        """Rows t-T .. t+T with plan controls and paired substitution filled in."""
        Z = np.vstack([self.history, self.forecast])
        T = self.T
        Z[T:, self.c_cols] = controls
        if len(self.img_pos) and T > 0:
            Z[T + 1 :, self.img_cols] = controls[:-1, self.img_pos]
        return Z

    def barrier_terms(self, controls) -> float:
        lo, hi = self.lower, self.upper
        val = np.sum(np.log(controls - lo)) + np.sum(np.log(hi - controls))
        if len(self.img_pos) and self.T > 0:
            img = controls[:-1, self.img_pos]
            val += np.sum(np.log(img - self.img_lower)) + np.sum(np.log(self.img_upper - img))
        return -self.lam * float(val)

    def barrier_gradient(self, controls) -> np.ndarray:
        g = -self.lam / (controls - self.lower) + self.lam / (self.upper - controls)
        if len(self.img_pos) and self.T > 0:
            img = controls[:-1, self.img_pos]
            g[:-1, self.img_pos] += -self.lam / (img - self.img_lower) + self.lam / (self.img_upper - img)
        return g


@dataclass
class ControlPlan:
    controls: np.ndarray  # (T+1, n_c)
    velocity: np.ndarray = None
    loss_trace: list = field(default_factory=list)
    iterations: int = 0
    best_iteration: int = 0
    backtracks: int = 0

    def __post_init__(self):
        self.controls = np.array(self.controls, dtype=float)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.controls)

    @property
    def first_action(self) -> np.ndarray:
        return self.controls[0].copy()

    def to_report(self, problem: BarrierProblem | None = None) -> dict:
        doc = {
            "iterations": self.iterations,
            "best_iteration": self.best_iteration,
            "backtracks": self.backtracks,
            "loss_trace": [float(v) for v in self.loss_trace],
            "controls": self.controls.tolist(),
        }
        if problem is not None:
            doc["interior"] = problem.is_interior(self.controls)
        return doc

    def to_json(self, problem=None) -> str:
        return json.dumps(self.to_report(problem))


def assemble_windows(problem: BarrierProblem, plan) -> np.ndarray:
    """The T+1 evaluation windows, shape (T+1, T+1, n); window τ covers rows t-T+τ .. t+τ."""
    controls = plan.controls if isinstance(plan, ControlPlan) else np.asarray(plan, dtype=float)
    if controls.shape != (problem.T + 1, problem.n_controls):
        raise ValueError(f"plan must be ({problem.T + 1}, {problem.n_controls})")
    return problem.trajectory(controls)[problem._win_idx]


def _controls(plan):
    return plan.controls if isinstance(plan, ControlPlan) else np.asarray(plan, dtype=float)


def barrier_loss(problem: BarrierProblem, plan) -> float:
    """Objective value; ``inf`` when the plan is not strictly interior."""
    controls = _controls(plan)
    if not problem.is_interior(controls):
        return float("inf")
    f = problem.model.predict(assemble_windows(problem, controls))
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite model output")
    return float(np.sum(f * f)) + problem.barrier_terms(controls)


def loss_and_grad(problem: BarrierProblem, controls):
    windows = assemble_windows(problem, controls)
    f, dw = problem.model.predict_and_grad(windows)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(dw))):
        raise NumericError("non-finite model output or gradient")
    T = problem.T
    dZ = np.zeros((2 * T + 1, windows.shape[2]))
    weighted = 2.0 * f[:, None, None] * dw
    for tau in range(T + 1):
        dZ[tau : tau + T + 1] += weighted[tau]
    grad = dZ[T:, problem.c_cols].copy()
    if len(problem.img_pos) and T > 0:
        grad[:-1, problem.img_pos] += dZ[T + 1 :, problem.img_cols]
    grad += problem.barrier_gradient(controls)
    loss = float(np.sum(f * f)) + problem.barrier_terms(controls)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite barrier gradient")
    return loss, grad


def barrier_grad(problem: BarrierProblem, plan) -> np.ndarray:
    """Gradient of :func:`barrier_loss` with respect to the plan controls."""
    controls = _controls(plan)
    if not problem.is_interior(controls):
        raise ValueError("barrier gradient requires a strictly interior plan")
    return loss_and_grad(problem, controls)[1]


def momentum_step(plan: ControlPlan, gradient, cfg: OptConfig, problem: BarrierProblem | None = None) -> ControlPlan:
    """``g = γ g_prev + η ∇``, ``x = x - g``, shrinking ``g`` until x stays interior."""
    g = cfg.momentum * plan.velocity + cfg.learning_rate * np.asarray(gradient, dtype=float)
    new = plan.controls - g
    shrinks = 0
    if problem is not None:
        while not problem.is_interior(new):
            shrinks += 1
            if shrinks > cfg.max_backtracks:
                raise StallError("could not restore feasibility by backtracking")
            g = g * cfg.backtrack_shrink
            new = plan.controls - g
    return ControlPlan(new, g, list(plan.loss_trace), plan.iterations, plan.best_iteration,
                       plan.backtracks + shrinks)


def project_interior(controls, lower, upper, margin: float = 0.01) -> np.ndarray:
    """Clamp into ``[l + margin (u-l), u - margin (u-l)]``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    span = upper - lower
    return np.clip(np.asarray(controls, dtype=float), lower + margin * span, upper - margin * span)


def warm_start(problem: BarrierProblem, last_controls, margin: float = 0.01) -> ControlPlan:
    """Last applied controls repeated over the horizon, projected inside the box."""
    lo, hi = problem.row_bounds()
    reps = np.tile(np.asarray(last_controls, dtype=float), (problem.T + 1, 1))
    return ControlPlan(project_interior(reps, lo, hi, margin))


def optimize_inputs(problem: BarrierProblem, init_plan: ControlPlan, cfg: OptConfig, callback=None) -> ControlPlan:
    """Momentum gradient descent on the barrier loss; returns the best iterate.

    ``callback(k, controls, loss)`` sees every accepted iterate, k = 0 being
    the initial plan.
    """
    controls = np.array(init_plan.controls, dtype=float)
    if not problem.is_interior(controls):
        raise ValueError("initial plan must be strictly interior; use project_interior")
    plan = ControlPlan(controls, np.zeros_like(controls))
    loss, grad = loss_and_grad(problem, controls)
    trace = [loss]
    if callback is not None:
        callback(0, controls, loss)
    best, best_loss, best_k = controls, loss, 0
    stall = 0
    backtracks = 0
    k = 0
    for k in range(1, cfg.n_iter + 1):
        plan = momentum_step(plan, grad, cfg, problem)
        backtracks = plan.backtracks
        loss, grad = loss_and_grad(problem, plan.controls)
        trace.append(loss)
        if callback is not None:
            callback(k, plan.controls, loss)
        if loss < best_loss - cfg.stall_tol:
            best, best_loss, best_k = plan.controls, loss, k
            stall = 0
        else:
            if loss < best_loss:
                best, best_loss, best_k = plan.controls, loss, k
            stall += 1
            if stall >= cfg.stall_patience:
                break
    return ControlPlan(best.copy(), plan.velocity, trace, k if cfg.n_iter else 0, best_k, backtracks)
