"""Profile logs, feature schemas, scaling and windowed supervised samples.

A profile log is a fixed-step time series of feature vectors (setpoints,
measurements, weather) paired with metered power. Features are tagged with
one of three blocks:

    controllable    commanded by the operator (``c:`` prefix)
    uncontrollable  observed but not commanded (``uc:`` prefix)
    physical        exogenous weather quantities (``phy:`` prefix)
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CONTROLLABLE = "controllable"
UNCONTROLLABLE = "uncontrollable"
PHYSICAL = "physical"

BLOCK_PREFIX = {CONTROLLABLE: "c", UNCONTROLLABLE: "uc", PHYSICAL: "phy"}
PREFIX_BLOCK = {v: k for k, v in BLOCK_PREFIX.items()}

# uc features named "<MEASURED>_<suffix>" pair with c features "<COMMANDED>_<suffix>"
MEASURED_PREFIX = "temp_"
COMMANDED_PREFIX = "setpoint_"


class DataError(ValueError):
    """Malformed or inconsistent data (shapes, lengths, schema)."""


@dataclass
class FeatureSchema:
    names: list[str]
    blocks: list[str]
    bounds: list[tuple[float, float] | None] = field(default_factory=list)
    pairing: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.blocks = list(self.blocks)
        if not self.bounds:
            self.bounds = [None] * len(self.names)
        self.bounds = [None if b is None else (float(b[0]), float(b[1])) for b in self.bounds]
        self.pairing = {int(k): int(v) for k, v in self.pairing.items()}
        if not (len(self.names) == len(self.blocks) == len(self.bounds)):
            raise DataError("names, blocks and bounds must have equal length")
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate feature names")
        for b in self.blocks:
            if b not in BLOCK_PREFIX:
                raise DataError(f"unknown block {b!r}")
        for i in self.controllable:
            lo_hi = self.bounds[i]
            if lo_hi is None or not np.all(np.isfinite(lo_hi)):
                raise DataError(f"controllable feature {self.names[i]!r} needs finite bounds")
        for i, b in enumerate(self.bounds):
            if b is not None and not b[0] < b[1]:
                raise DataError(f"bounds of {self.names[i]!r} must satisfy lower < upper")
        for uc, c in self.pairing.items():
            if self.blocks[uc] != UNCONTROLLABLE or self.blocks[c] != CONTROLLABLE:
                raise DataError("pairing must map uncontrollable -> controllable")
        if len(set(self.pairing.values())) != len(self.pairing):
            raise DataError("pairing must be injective")

    def __len__(self):
        return len(self.names)

    def _indices(self, block):
        return [i for i, b in enumerate(self.blocks) if b == block]

    @property
    def controllable(self) -> list[int]:
        return self._indices(CONTROLLABLE)

    @property
    def uncontrollable(self) -> list[int]:
        return self._indices(UNCONTROLLABLE)

    @property
    def physical(self) -> list[int]:
        return self._indices(PHYSICAL)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def header(self) -> list[str]:
        return [f"{BLOCK_PREFIX[b]}:{n}" for n, b in zip(self.names, self.blocks)]

    def with_bounds(self, bounds: dict[str, tuple[float, float]]) -> "FeatureSchema":
        """Copy of the schema with bounds replaced for the named features."""
        new = list(self.bounds)
        for name, b in bounds.items():
            new[self.index(name)] = b
        return FeatureSchema(self.names, self.blocks, new, self.pairing)

    @classmethod
    def from_header(cls, header: Sequence[str], bounds=None) -> "FeatureSchema":
        """Recover names, blocks and pairing from ``block:name`` column labels.

        ``bounds`` maps feature names to (lower, upper); controllable features
        without an entry are rejected by validation.
        """
        names, blocks = [], []
        for col in header:
            prefix, sep, name = col.partition(":")
            if not sep or prefix not in PREFIX_BLOCK:
                raise DataError(f"column {col!r} lacks a c:/uc:/phy: prefix")
            names.append(name)
            blocks.append(PREFIX_BLOCK[prefix])
        pairing = {}
        for i, (n, b) in enumerate(zip(names, blocks)):
            if b == UNCONTROLLABLE and n.startswith(MEASURED_PREFIX):
                target = COMMANDED_PREFIX + n[len(MEASURED_PREFIX):]
                if target in names and blocks[names.index(target)] == CONTROLLABLE:
                    pairing[i] = names.index(target)
        bounds = bounds or {}
        return cls(names, blocks, [bounds.get(n) for n in names], pairing)

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "blocks": self.blocks,
            "bounds": [None if b is None else list(b) for b in self.bounds],
            "pairing": {str(k): v for k, v in sorted(self.pairing.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(d["names"], d["blocks"], d["bounds"], d.get("pairing", {}))


@dataclass
class ProfileLog:
    """Time-indexed feature rows with metered power.

    ``times`` are integer seconds, ``features`` is (N, n_features) and
    ``power`` is (N,) in W.
    """

    schema: FeatureSchema
    times: np.ndarray
    features: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        n = len(self.times)
        self.features = np.asarray(self.features, dtype=float).reshape(n, len(self.schema))
        self.power = np.asarray(self.power, dtype=float).reshape(n)
        if n > 1:
            steps = np.diff(self.times)
            if steps[0] <= 0 or np.any(steps != steps[0]):
                raise DataError("timestamps must increase with a fixed step")

    def __len__(self):
        return len(self.times)

    def rows(self) -> Iterator[tuple[int, np.ndarray, float]]:
        for t, x, p in zip(self.times, self.features, self.power):
            yield int(t), x, float(p)

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.schema.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "P", *self.schema.header])
            for t, x, p in self.rows():
                w.writerow([t, repr(p), *map(repr, x.tolist())])

    @classmethod
    def from_csv(cls, path, bounds=None) -> "ProfileLog":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"profile log not found: {path}")
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["time", "P"]:
                raise DataError(f"{path}: header must start with time,P")
            schema = FeatureSchema.from_header(header[2:], bounds)
            body = [row for row in reader if row]
        if not body:
            return cls(schema, np.zeros(0), np.zeros((0, len(schema))), np.zeros(0))
        arr = np.array(body, dtype=float)
        if arr.shape[1] != len(schema) + 2:
            raise DataError(f"{path}: row width does not match header")
        return cls(schema, arr[:, 0].astype(np.int64), arr[:, 2:], arr[:, 1])


@dataclass
class Scaler:
    """Per-feature and target min-max affine maps: ``z = (x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray
    target_shift: float
    target_scale: float

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0) or self.target_scale <= 0:
            raise DataError("scaler scales must be positive")

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def transform_target(self, p):
        return (np.asarray(p, dtype=float) - self.target_shift) / self.target_scale

    def inverse_target(self, z):
        return np.asarray(z, dtype=float) * self.target_scale + self.target_shift

    def to_dict(self) -> dict:
        return {
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "target_shift": float(self.target_shift),
            "target_scale": float(self.target_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["shift"], d["scale"], d["target_shift"], d["target_scale"])


def _minmax(values):
    lo, hi = values.min(axis=0), values.max(axis=0)
    span = hi - lo
    return lo, np.where(span > 0, span, 1.0)


def fit_scaler(log: ProfileLog, rows=None) -> Scaler:
    """Min-max scaler mapping each feature and the power into [0, 1].

    Constant columns get scale 1 and shift equal to their value. ``rows``
    optionally restricts the fit to a subset of row indices or a boolean mask.
    """
    features, power = log.features, log.power
    if rows is not None:
        features, power = features[rows], power[rows]
    if len(power) == 0:
        raise DataError("cannot fit a scaler on an empty log")
    shift, scale = _minmax(features)
    t_shift, t_scale = _minmax(power)
    return Scaler(shift, scale, float(t_shift), float(t_scale))


@dataclass
class SequenceSample:
    inputs: np.ndarray  # (T+1, n_features), normalized
    target: float  # normalized power at the last row
    origin_index: int


def make_windows(log: ProfileLog, T: int, scaler: Scaler) -> list[SequenceSample]:
    """Sliding windows of T+1 rows; sample k covers rows k..k+T."""
    if T < 0:
        raise DataError("window length T must be >= 0")
    if len(log) < T + 1:
        raise DataError(f"log of length {len(log)} is shorter than T+1={T + 1}")
    z = scaler.transform(log.features)
    y = scaler.transform_target(log.power)
    n = len(log) - T
    return [SequenceSample(z[k : k + T + 1], float(y[k + T]), k) for k in range(n)]


def stack_samples(samples: Sequence[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    """(B, T+1, n) inputs and (B,) targets."""
    if not samples:
        raise DataError("no samples")
    x = np.stack([s.inputs for s in samples])
    y = np.array([s.target for s in samples], dtype=float)
    return x, y


def split(samples: Sequence[SequenceSample], test_fraction: float = 1 / 6, seed: int = 0):
    """Seeded shuffle at window level, then split into (train, test)."""
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must be in (0, 1)")
    n = len(samples)
    n_test = int(round(n * test_fraction))
    if n_test == 0 or n_test == n:
        raise DataError(f"split of {n} samples at {test_fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    test = [samples[i] for i in sorted(order[:n_test])]
    train = [samples[i] for i in sorted(order[n_test:])]
    return train, test


def write_split_manifest(path, train, test) -> None:
    doc = {
        "train": [s.origin_index for s in train],
        "test": [s.origin_index for s in test],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def read_split_manifest(path) -> tuple[list[int], list[int]]:
    doc = json.loads(Path(path).read_text())
    return doc["train"], doc["test"]


@dataclass
class PreparedData:
    scaler: Scaler
    train: list
    test: list


def prepare_dataset(log: ProfileLog, T: int, test_fraction: float = 1 / 6, seed: int = 0) -> PreparedData:
    """Split windows, then fit the scaler on rows covered by training windows only."""
    n = len(log) - T
    if T < 0 or n < 1:
        raise DataError(f"log of length {len(log)} is shorter than T+1={T + 1}")
    placeholders = [SequenceSample(np.zeros((0, 0)), 0.0, k) for k in range(n)]
    train_idx, _ = split(placeholders, test_fraction, seed)
    covered = np.zeros(len(log), dtype=bool)
    for s in train_idx:
        covered[s.origin_index : s.origin_index + T + 1] = True
    scaler = fit_scaler(log, covered)
    train, test = split(make_windows(log, T, scaler), test_fraction, seed)
    return PreparedData(scaler, train, test)
