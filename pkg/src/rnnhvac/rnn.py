"""Recurrent surrogate of building power with exact reverse-mode gradients.

The cell is a tanh Elman layer with weights shared across time steps:

    h_0 = 0,    h_{k+1} = tanh(x_k W_x + h_k W_h + b)

The head reads the final hidden state together with the last input row and
applies three affine layers with ReLU in between, ending in a scalar.
Everything is float64 so finite-difference checks are meaningful.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Scaler, stack_samples

CHECKPOINT_VERSION = 1
HEAD_WIDTHS = (16, 8)


class NumericError(ArithmeticError):
    """Non-finite activations, gradients or losses."""


class TrainingDiverged(NumericError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class RnnModel:
    input_dim: int
    hidden_dim: int
    params: dict
    head_widths: tuple = HEAD_WIDTHS
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        self.head_widths = tuple(self.head_widths)
        for key, shape in param_shapes(self.input_dim, self.hidden_dim, self.head_widths).items():
            arr = np.asarray(self.params[key], dtype=float)
            if arr.shape != shape:
                raise ValueError(f"parameter {key} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"parameter {key} is not finite")
            self.params[key] = arr

    def copy(self) -> "RnnModel":
        return copy.deepcopy(self)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat(self, vec) -> None:
        i = 0
        for key in PARAM_ORDER:
            p = self.params[key]
            self.params[key] = np.asarray(vec[i : i + p.size], dtype=float).reshape(p.shape)
            i += p.size


PARAM_ORDER = ("Wx", "Wh", "b", "W1", "b1", "W2", "b2", "W3", "b3")


def param_shapes(input_dim, hidden_dim, head_widths=HEAD_WIDTHS) -> dict:
    w1, w2 = head_widths
    return {
        "Wx": (input_dim, hidden_dim),
        "Wh": (hidden_dim, hidden_dim),
        "b": (hidden_dim,),
        "W1": (hidden_dim + input_dim, w1),
        "b1": (w1,),
        "W2": (w1, w2),
        "b2": (w2,),
        "W3": (w2, 1),
        "b3": (1,),
    }


def init_model(input_dim: int, hidden_dim: int = 32, seed: int = 0, dropout_rate: float = 0.0,
               head_widths=HEAD_WIDTHS) -> RnnModel:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for key, shape in param_shapes(input_dim, hidden_dim, head_widths).items():
        if key.startswith("b"):
            params[key] = np.zeros(shape)
        else:
            params[key] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
    return RnnModel(input_dim, hidden_dim, params, head_widths, dropout_rate, seed)


def zero_model(input_dim: int, hidden_dim: int) -> RnnModel:
    shapes = param_shapes(input_dim, hidden_dim)
    return RnnModel(input_dim, hidden_dim, {k: np.zeros(s) for k, s in shapes.items()})


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (B, L, n)
    hidden: list  # h_0 .. h_L, each (B, H)
    head_in: np.ndarray
    pre1: np.ndarray
    act1: np.ndarray
    pre2: np.ndarray
    act2: np.ndarray
    masks: tuple
    prediction: np.ndarray = field(default=None)


def _as_batch(model, windows):
    x = np.asarray(windows, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != model.input_dim:
        raise ValueError(f"window width must be {model.input_dim}, got shape {np.shape(windows)}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite window")
    return x, single


def forward_batch(model: RnnModel, x: np.ndarray, mode: str = "eval", rng=None) -> ForwardTrace:
    p = model.params
    B, L, _ = x.shape
    proj = x @ p["Wx"] + p["b"]
    h = np.zeros((B, model.hidden_dim))
    hidden = [h]
    for k in range(L):
        h = np.tanh(proj[:, k] + h @ p["Wh"])
        hidden.append(h)
    head_in = np.concatenate([h, x[:, -1]], axis=1)
    pre1 = head_in @ p["W1"] + p["b1"]
    act1 = np.maximum(pre1, 0.0)
    m1 = m2 = None
    dropout = mode == "train" and model.dropout_rate > 0
    if dropout:
        keep = 1.0 - model.dropout_rate
        m1 = (rng.random(act1.shape) < keep) / keep
        act1 = act1 * m1
    pre2 = act1 @ p["W2"] + p["b2"]
    act2 = np.maximum(pre2, 0.0)
    if dropout:
        m2 = (rng.random(act2.shape) < keep) / keep
        act2 = act2 * m2
    out = (act2 @ p["W3"] + p["b3"])[:, 0]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite activations in forward pass")
    return ForwardTrace(x, hidden, head_in, pre1, act1, pre2, act2, (m1, m2), out)


def forward(model: RnnModel, window, mode: str = "eval", rng=None):
    """Predict from one (T+1, n) window or a (B, T+1, n) batch.

    Returns ``(prediction, trace)``. ``mode="train"`` applies dropout drawn
    from ``rng``; ``"eval"`` is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None:
        rng = np.random.default_rng(model.seed)
    x, single = _as_batch(model, window)
    trace = forward_batch(model, x, mode, rng)
    pred = float(trace.prediction[0]) if single else trace.prediction
    return pred, trace


def backward(model: RnnModel, trace: ForwardTrace, d_out: np.ndarray, need_params=True):
    """Reverse pass from dL/d(prediction) of shape (B,).

    Returns ``(param_grads or None, input_grads of shape (B, L, n))``.
    """
    p = model.params
    x = trace.inputs
    H = model.hidden_dim
    m1, m2 = trace.masks
    g = {}
    d = d_out[:, None]
    if need_params:
        g["W3"] = trace.act2.T @ d
        g["b3"] = d.sum(axis=0)
    d_act2 = d @ p["W3"].T
    if m2 is not None:
        d_act2 = d_act2 * m2
    d_pre2 = d_act2 * (trace.pre2 > 0)
    if need_params:
        g["W2"] = trace.act1.T @ d_pre2
        g["b2"] = d_pre2.sum(axis=0)
    d_act1 = d_pre2 @ p["W2"].T
    if m1 is not None:
        d_act1 = d_act1 * m1
    d_pre1 = d_act1 * (trace.pre1 > 0)
    if need_params:
        g["W1"] = trace.head_in.T @ d_pre1
        g["b1"] = d_pre1.sum(axis=0)
    d_head = d_pre1 @ p["W1"].T
    dh = d_head[:, :H]

    L = x.shape[1]
    d_pre = np.empty((x.shape[0], L, H))
    Wh_T = p["Wh"].T
    for k in range(L - 1, -1, -1):
        h_next = trace.hidden[k + 1]
        da = dh * (1.0 - h_next * h_next)
        d_pre[:, k] = da
        dh = da @ Wh_T
    dx = d_pre @ p["Wx"].T
    dx[:, -1] += d_head[:, H:]
    if need_params:
        g["Wx"] = np.einsum("bln,blh->nh", x, d_pre)
        h_prev = np.stack(trace.hidden[:-1], axis=1)
        g["Wh"] = np.einsum("blh,blk->hk", h_prev, d_pre)
        g["b"] = d_pre.sum(axis=(0, 1))
        return g, dx
    return None, dx


def loss_mse(prediction, target) -> float:
    """Squared error; averaged over a batch."""
    diff = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(diff * diff))


def _check_grads(g):
    for key in PARAM_ORDER:
        if key in g and not np.all(np.isfinite(g[key])):
            raise NumericError(f"non-finite gradient in parameter block {key}")


def loss_and_grad(model: RnnModel, x, y, mode="eval", rng=None):
    trace = forward_batch(model, x, mode, rng)
    diff = trace.prediction - y
    loss = float(np.mean(diff * diff))
    g, _ = backward(model, trace, 2.0 * diff / len(y))
    _check_grads(g)
    return loss, g


def grad_weights(model: RnnModel, batch) -> dict:
    """Exact gradient of mean squared error over a batch of samples (eval mode)."""
    if isinstance(batch, tuple):
        x, y = batch
    else:
        x, y = stack_samples(batch)
    x, _ = _as_batch(model, x)
    _, g = loss_and_grad(model, x, np.asarray(y, dtype=float).reshape(-1))
    return g


def grad_inputs(model: RnnModel, window) -> np.ndarray:
    """d(prediction)/d(window), same shape as ``window`` (eval mode)."""
    x, single = _as_batch(model, window)
    trace = forward_batch(model, x, "eval")
    _, dx = backward(model, trace, np.ones(x.shape[0]), need_params=False)
    if not np.all(np.isfinite(dx)):
        raise NumericError("non-finite input gradient")
    return dx[0] if single else dx


def predict_and_grad_inputs(model: RnnModel, x: np.ndarray):
    """Batched eval-mode predictions and input gradients in one pass."""
    trace = forward_batch(model, x, "eval")
    _, dx = backward(model, trace, np.ones(x.shape[0]), need_params=False)
    if not np.all(np.isfinite(dx)):
        raise NumericError("non-finite input gradient")
    return trace.prediction, dx


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 60
    dropout_rate: float = 0.0
    seed: int = 0
    gradient_clip_norm: float = 5.0
    decay_every: int = 20
    decay_factor: float = 0.5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.gradient_clip_norm <= 0:
            raise ValueError("learning_rate and gradient_clip_norm must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def evaluate_rmse(model: RnnModel, x, y, batch=4096) -> float:
    preds = np.concatenate([forward_batch(model, x[i : i + batch]).prediction for i in range(0, len(x), batch)])
    return float(np.sqrt(np.mean((preds - y) ** 2)))


def train(model: RnnModel, train_samples, val_samples, cfg: TrainConfig, log=None):
    """Minibatch SGD with dropout and global-norm clipping.

    Returns the model with the best validation RMSE and the per-epoch history.
    The input model is not modified.
    """
    x_tr, y_tr = train_samples if isinstance(train_samples, tuple) else stack_samples(train_samples)
    x_va, y_va = val_samples if isinstance(val_samples, tuple) else stack_samples(val_samples)
    model = model.copy()
    model.dropout_rate = cfg.dropout_rate
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    best = model.copy()
    best_rmse = evaluate_rmse(model, x_va, y_va)
    history = []
    n = len(y_tr)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_every)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, g = loss_and_grad(model, x_tr[idx], y_tr[idx], "train", rng)
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
            total += loss * len(idx)
            norm = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
            scale = min(1.0, cfg.gradient_clip_norm / norm) if norm > 0 else 1.0
            for k, v in g.items():
                velocity[k] = cfg.momentum * velocity[k] - lr * scale * v
                model.params[k] = model.params[k] + velocity[k]
        train_loss = total / n
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
        val_rmse = evaluate_rmse(model, x_va, y_va)
        history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_rmse": val_rmse})
        if log is not None:
            log(f"epoch {epoch:3d} lr {lr:.4g} train_mse {train_loss:.6f} val_rmse {val_rmse:.5f}")
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best = model.copy()
    return best, history


class ScaledRnn:
    """RNN evaluator on physical-unit windows, returning normalized power.

    Gradients are taken with respect to the physical inputs.
    """

    def __init__(self, model: RnnModel, scaler: Scaler):
        self.model = model
        self.scaler = scaler

    def predict(self, windows):
        return forward_batch(self.model, self.scaler.transform(windows)).prediction

    def predict_and_grad(self, windows):
        pred, dz = predict_and_grad_inputs(self.model, self.scaler.transform(windows))
        return pred, dz / self.scaler.scale


def save_checkpoint(path, model: RnnModel, scaler: Scaler | None = None, extra=None) -> None:
    doc = {
        "format": "rnnhvac-checkpoint",
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "head_widths": list(model.head_widths),
        "dropout_rate": model.dropout_rate,
        "seed": model.seed,
        "scaler": None if scaler is None else scaler.to_dict(),
        "params": {k: model.params[k].ravel().tolist() for k in PARAM_ORDER},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> tuple[RnnModel, Scaler | None]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != "rnnhvac-checkpoint" or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint header")
    shapes = param_shapes(doc["input_dim"], doc["hidden_dim"], tuple(doc["head_widths"]))
    params = {k: np.asarray(doc["params"][k], dtype=float).reshape(shapes[k]) for k in PARAM_ORDER}
    model = RnnModel(doc["input_dim"], doc["hidden_dim"], params, tuple(doc["head_widths"]),
                     doc["dropout_rate"], doc["seed"])
    scaler = None if doc["scaler"] is None else Scaler.from_dict(doc["scaler"])
    return model, scaler
