"""First-order RC baseline: least-squares fit, linear power predictor, MPC.

Dynamics are identified on the Euler-discretized zone balance

    T_i[k+1] - T_i[k] = a_i (T_o - T_i) + Σ_j a_ij (T_j - T_i) + b_i (sp_i - T_i)

with a_i = dt/(R_i C_i), a_ij = dt/(R_ij C_i) and b_i = dt·g/C_i for an
unknown common HVAC gain g. Only ratios are identifiable, so C, R_out and
R_adj are reported in units where g = 1.

Power at the last row of a window is predicted as

    offset + power_scale · Σ_i (sp_i - T_i) + exchange_scale · Σ_i Q_i

where Q_i is the envelope heat flow of zone i in the same units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .barrier import BarrierProblem, ControlPlan, OptConfig, optimize_inputs
from .dataset import FeatureSchema, Scaler, SequenceSample


class RcFitError(ValueError):
    """Regression is rank deficient or yields nonphysical parameters."""


@dataclass
class RcParams:
    dt: float
    a_out: np.ndarray  # (n,)
    a_adj: np.ndarray  # (n, n), zero for non-neighbours
    b_hvac: np.ndarray  # (n,)
    power_scale: float
    exchange_scale: float
    offset: float
    setpoint_cols: list
    temp_cols: list
    outdoor_col: int
    n_features: int

    def __post_init__(self):
        self.a_out = np.asarray(self.a_out, dtype=float)
        self.a_adj = np.asarray(self.a_adj, dtype=float)
        self.b_hvac = np.asarray(self.b_hvac, dtype=float)
        if np.any(self.a_out <= 0) or np.any(self.b_hvac <= 0) or np.any(self.a_adj < 0):
            raise RcFitError("RC parameters must be positive")
        if not np.allclose(self.R_adj, self.R_adj.T, rtol=1e-12, atol=0):
            raise RcFitError("R_adj must be symmetric")

    @property
    def n_zones(self) -> int:
        return len(self.a_out)

    @property
    def C(self) -> np.ndarray:
        return self.dt / self.b_hvac

    @property
    def R_out(self) -> np.ndarray:
        return self.b_hvac / self.a_out

    @property
    def R_adj(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.a_adj > 0, self.b_hvac[:, None] / np.where(self.a_adj > 0, self.a_adj, 1), np.inf)

    @property
    def inv_rc_out(self) -> np.ndarray:
        """1/(R_out C) in 1/s."""
        return self.a_out / self.dt

    @property
    def inv_rc_adj(self) -> np.ndarray:
        """1/(R_adj C) in 1/s (zero for non-neighbours)."""
        return self.a_adj / self.dt

    def linear_coefficients(self) -> np.ndarray:
        """Weights w such that prediction = offset + last_row @ w."""
        w = np.zeros(self.n_features)
        g_out = 1.0 / self.R_out
        w[self.setpoint_cols] += self.power_scale
        w[self.temp_cols] -= self.power_scale
        w[self.temp_cols] -= self.exchange_scale * g_out
        w[self.outdoor_col] += self.exchange_scale * g_out.sum()
        # adjacency flows: Σ_i Σ_j G_ij (T_j - T_i)
        G = np.where(np.isfinite(self.R_adj), 1.0 / self.R_adj, 0.0)
        w[self.temp_cols] += self.exchange_scale * (G.sum(axis=0) - G.sum(axis=1))
        return w

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "a_out": self.a_out.tolist(),
            "a_adj": self.a_adj.tolist(),
            "b_hvac": self.b_hvac.tolist(),
            "power_scale": self.power_scale,
            "exchange_scale": self.exchange_scale,
            "offset": self.offset,
            "setpoint_cols": list(self.setpoint_cols),
            "temp_cols": list(self.temp_cols),
            "outdoor_col": self.outdoor_col,
            "n_features": self.n_features,
            "derived": {
                "C": self.C.tolist(),
                "R_out": self.R_out.tolist(),
                "R_adj": np.where(np.isfinite(self.R_adj), self.R_adj, -1.0).tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RcParams":
        d = {k: v for k, v in d.items() if k != "derived"}
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "RcParams":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"RC parameters not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def _zone_columns(schema: FeatureSchema):
    if not schema.pairing:
        raise RcFitError("schema pairs no measured temperature with a setpoint")
    temp_cols = sorted(schema.pairing)
    sp_cols = [schema.pairing[t] for t in temp_cols]
    if "outdoor_temp" not in schema.names:
        raise RcFitError("schema has no outdoor_temp feature")
    return sp_cols, temp_cols, schema.index("outdoor_temp")


def _lstsq(A, y, what):
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise RcFitError(f"rank-deficient regression for {what}")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def fit_rc(train, schema: FeatureSchema, scaler: Scaler, dt: float, adjacency=None) -> RcParams:
    """Least-squares RC fit from windowed samples.

    ``adjacency`` is a boolean (n, n) neighbour mask; all pairs when omitted.
    Targets stay in the scaler's normalized power units.
    """
    sp_cols, temp_cols, out_col = _zone_columns(schema)
    n = len(temp_cols)
    adjacency = ~np.eye(n, dtype=bool) if adjacency is None else np.asarray(adjacency, dtype=bool)
    if isinstance(train, tuple):
        x, y = train
    else:
        if not train:
            raise RcFitError("no training samples")
        x = np.stack([s.inputs for s in train])
        y = np.array([s.target for s in train])
    raw = scaler.inverse(x)

    # consecutive row pairs inside every window
    now = raw[:, :-1].reshape(-1, raw.shape[2])
    nxt = raw[:, 1:].reshape(-1, raw.shape[2])
    if len(now) == 0:
        raise RcFitError("windows need at least two rows to identify dynamics")
    T_now, T_next = now[:, temp_cols], nxt[:, temp_cols]
    To = now[:, out_col]
    a_out = np.empty(n)
    b = np.empty(n)
    a_adj = np.zeros((n, n))
    for i in range(n):
        nbrs = np.flatnonzero(adjacency[i])
        A = np.column_stack([To - T_now[:, i], now[:, sp_cols[i]] - T_now[:, i]]
                            + [T_now[:, j] - T_now[:, i] for j in nbrs])
        coef = _lstsq(A, T_next[:, i] - T_now[:, i], f"zone {i} dynamics")
        a_out[i], b[i] = coef[0], coef[1]
        a_adj[i, nbrs] = coef[2:]
    if np.any(a_out <= 0) or np.any(b <= 0) or np.any(a_adj[adjacency] <= 0):
        raise RcFitError(f"nonpositive RC estimate: a_out={a_out}, b={b}, a_adj={a_adj}")
    # R_ij (in gain units) is b_i / a_ij; enforce symmetry by averaging conductances
    cond = np.where(adjacency, a_adj / b[:, None], 0.0)
    cond = 0.5 * (cond + cond.T)
    a_adj = cond * b[:, None]

    last = raw[:, -1]
    params = RcParams(dt, a_out, a_adj, b, 1.0, 1.0, 0.0, sp_cols, temp_cols, out_col, raw.shape[2])
    hvac, exch = rc_terms(params, last)
    A = np.column_stack([np.ones(len(y)), hvac, exch])
    offset, power_scale, exchange_scale = _lstsq(A, y, "power map")
    return RcParams(dt, a_out, a_adj, b, float(power_scale), float(exchange_scale), float(offset),
                    sp_cols, temp_cols, out_col, raw.shape[2])


def rc_terms(params: RcParams, rows: np.ndarray):
    """Aggregate HVAC drive Σ(sp_i - T_i) and envelope flow Σ Q_i of feature rows."""
    rows = np.atleast_2d(rows)
    sp = rows[:, params.setpoint_cols]
    T = rows[:, params.temp_cols]
    To = rows[:, params.outdoor_col]
    hvac = (sp - T).sum(axis=1)
    G = np.where(np.isfinite(params.R_adj), 1.0 / params.R_adj, 0.0)
    flow_out = (To[:, None] - T) / params.R_out
    flow_adj = T @ G.T - T * G.sum(axis=1)
    exch = (flow_out + flow_adj).sum(axis=1)
    return hvac, exch


def rc_predict(params: RcParams, window) -> float | np.ndarray:
    """Normalized power predicted from a physical-unit (T+1, n) window or batch."""
    w = np.asarray(window, dtype=float)
    single = w.ndim == 2
    batch = w[None] if single else w
    if batch.ndim != 3 or batch.shape[2] != params.n_features:
        raise ValueError(f"window width must be {params.n_features}")
    hvac, exch = rc_terms(params, batch[:, -1])
    out = params.offset + params.power_scale * hvac + params.exchange_scale * exch
    return float(out[0]) if single else out


class RcModel:
    """Evaluator wrapper so the barrier optimizer can drive the RC predictor."""

    def __init__(self, params: RcParams):
        self.params = params
        self._w = params.linear_coefficients()

    def predict(self, windows):
        return rc_predict(self.params, windows)

    def predict_and_grad(self, windows):
        windows = np.asarray(windows, dtype=float)
        g = np.zeros_like(windows)
        g[:, -1] = self._w
        return rc_predict(self.params, windows), g


def rc_mpc_solve(params: RcParams, problem: BarrierProblem, init_plan: ControlPlan, cfg: OptConfig) -> ControlPlan:
    """Solve the same barrier problem with the RC predictor as the model."""
    rc_problem = BarrierProblem(RcModel(params), problem.history, problem.forecast, problem.schema, problem.lam)
    return optimize_inputs(rc_problem, init_plan, cfg)
