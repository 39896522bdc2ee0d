"""Experiment configuration loaded from a YAML file with nested sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .barrier import OptConfig
from .plant import ConfigError, PlantConfig
from .rnn import TrainConfig


@dataclass
class DataSection:
    days: int = 365
    start_day: int = 0
    profile: str = "weekday-office"
    test_fraction: float = 1 / 6
    horizon_steps: int = 24
    seed: int | None = None
    policy_low: float = 16.0
    policy_high: float = 28.0


@dataclass
class RnnSection:
    hidden_dim: int = 32
    horizon_steps: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class OptSection:
    solver: OptConfig = field(default_factory=OptConfig)
    horizon_steps: int | None = None
    bounds: tuple = (18.0, 26.0)
    sweep_bounds: list = field(default_factory=lambda: [[18.0, 26.0], [19.0, 24.0], [21.95, 22.05]])
    warm_start: str = "repeat-last"


@dataclass
class ControlSection:
    days: int = 5
    start_day: int = 14
    seed: int | None = None
    reference_setpoint: float = 22.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    data: DataSection = field(default_factory=DataSection)
    rnn: RnnSection = field(default_factory=RnnSection)
    opt: OptSection = field(default_factory=OptSection)
    control: ControlSection = field(default_factory=ControlSection)
    workspace: str = "workspace"

    @property
    def T(self) -> int:
        return self.data.horizon_steps

    # derived seeds keep the streams independent
    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    @property
    def policy_seed(self) -> int:
        return self.data_seed + 1

    @property
    def plant_seed(self) -> int:
        return self.data_seed + 2

    @property
    def split_seed(self) -> int:
        return self.data_seed + 3

    @property
    def control_seed(self) -> int:
        return self.seed + 1000 if self.control.seed is None else self.control.seed

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "plant": self.plant.to_dict(),
            "data": asdict(self.data),
            "rnn": {"hidden_dim": self.rnn.hidden_dim, "horizon_steps": self.rnn.horizon_steps,
                    "train": asdict(self.rnn.train)},
            "opt": {"solver": asdict(self.opt.solver), "horizon_steps": self.opt.horizon_steps,
                    "bounds": list(self.opt.bounds), "sweep_bounds": [list(b) for b in self.opt.sweep_bounds],
                    "warm_start": self.opt.warm_start},
            "control": asdict(self.control),
            "workspace": self.workspace,
        }

    def section_hash(self, *names) -> str:
        doc = self.to_dict()
        blob = json.dumps({n: doc[n] for n in names}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, raw, where, errors):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        errors.append(f"{where}: expected a mapping")
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        errors.append(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k in known}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def config_from_dict(doc: dict | None) -> ExperimentConfig:
    """Build and validate a config; all problems are reported in one ConfigError."""
    doc = dict(doc or {})
    errors = []
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        errors.append(f"top level: unknown keys {sorted(unknown)}")

    plant = PlantConfig()
    if doc.get("plant") is not None:
        try:
            plant = PlantConfig.from_dict(doc["plant"])
        except (ConfigError, TypeError, ValueError) as exc:
            errors.append(f"plant: {exc}")

    data = _build(DataSection, doc.get("data"), "data", errors)

    rnn_raw = dict(doc.get("rnn") or {})
    train = _build(TrainConfig, rnn_raw.pop("train", None), "rnn.train", errors)
    rnn = _build(RnnSection, rnn_raw, "rnn", errors)
    rnn.train = train

    opt_raw = dict(doc.get("opt") or {})
    solver = _build(OptConfig, opt_raw.pop("solver", None), "opt.solver", errors)
    opt = _build(OptSection, opt_raw, "opt", errors)
    opt.solver = solver
    opt.bounds = tuple(float(v) for v in opt.bounds)

    control = _build(ControlSection, doc.get("control"), "control", errors)

    cfg = ExperimentConfig(
        seed=int(doc.get("seed", 0)), plant=plant, data=data, rnn=rnn, opt=opt, control=control,
        workspace=str(doc.get("workspace", "workspace")),
    )

    T = data.horizon_steps
    if not isinstance(T, int) or T < 1:
        errors.append(f"data.horizon_steps must be a positive integer, got {T!r}")
    for section, value in (("rnn", rnn.horizon_steps), ("opt", opt.horizon_steps)):
        if value is not None and value != T:
            errors.append(f"{section}.horizon_steps={value} disagrees with data.horizon_steps={T}")
    for b in [opt.bounds, *opt.sweep_bounds]:
        if len(b) != 2 or not b[0] < b[1]:
            errors.append(f"bounds {list(b)} must be [lower, upper] with lower < upper")
    if data.days < 1 or control.days < 1:
        errors.append("data.days and control.days must be >= 1")
    if not 0 < data.test_fraction < 1:
        errors.append("data.test_fraction must be in (0, 1)")
    if opt.warm_start not in ("shift", "repeat-last"):
        errors.append(f"opt.warm_start must be 'shift' or 'repeat-last', got {opt.warm_start!r}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc)
