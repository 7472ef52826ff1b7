"""Throughput-vs-distance models fitted from field traces.

Each propagation mode (band x tier) gets a curve ``T(d) = alpha + beta * ln(d)``
clamped at zero and cut off at a finite distance.  The variation stream scales
link throughput per device and epoch with a seeded, stateless multiplier.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

FIXTURE_TRACE = Path(__file__).with_name("data") / "farm_trace.csv"


class FitError(ValueError):
    """A trace cannot be turned into a usable throughput curve."""


class Band(enum.Enum):
    GHz24 = "2.4"
    GHz5 = "5"


class Tier(enum.Enum):
    UnderCanopy = "uc"
    AboveCanopy = "ac"


class Mode(enum.Enum):
    UC24 = "uc24"
    AC24 = "ac24"
    UC5 = "uc5"
    AC5 = "ac5"

    @property
    def band(self) -> Band:
        return _BAND[self]

    @property
    def tier(self) -> Tier:
        return _TIER[self]


_BAND = {m: (Band.GHz24 if m.value.endswith("24") else Band.GHz5) for m in Mode}
_TIER = {m: (Tier.UnderCanopy if m.value.startswith("uc") else Tier.AboveCanopy) for m in Mode}


@dataclass(frozen=True)
class TracePoint:
    distance: float
    throughput: float


@dataclass(frozen=True)
class ModeFit:
    alpha: float
    beta: float
    cutoff: float

    def __call__(self, d):
        return _evaluate(self, d)


def _evaluate(fit: ModeFit, d):
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        t = fit.alpha + fit.beta * np.log(np.where(d > 0, d, 1.0))
    t = np.where(d >= fit.cutoff, 0.0, np.maximum(t, 0.0))
    return t if t.ndim else float(t)


def fit_model(points: Iterable[TracePoint], mode: Mode | str | None = None) -> ModeFit:
    """Least-squares fit of ``alpha + beta*ln(d)`` to one mode's trace.

    Zero-throughput points are not part of the regression; the smallest such
    distance becomes the cutoff.  Without zeros the cutoff is where the fitted
    curve crosses zero.
    """
    pts = list(points)
    label = f" for {Mode(mode).value}" if mode is not None else ""
    if any(p.distance <= 0 for p in pts):
        raise FitError(f"non-positive distance in trace{label}")
    zeros = [p.distance for p in pts if p.throughput <= 0]
    live = [p for p in pts if p.throughput > 0]
    if len(live) < 3:
        raise FitError(f"need at least 3 positive trace points{label}, got {len(live)}")
    x = np.log([p.distance for p in live])
    y = np.array([p.throughput for p in live])
    if np.ptp(x) == 0:
        raise FitError(f"all trace distances identical{label}")
    beta, alpha = np.polyfit(x, y, 1)
    if beta >= 0:
        raise FitError(f"throughput does not decay with distance{label} (beta={beta:.3g})")
    crossing = math.exp(-alpha / beta)
    cutoff = min(zeros) if zeros else crossing
    return ModeFit(float(alpha), float(beta), float(cutoff))


class ThroughputModel:
    """Fitted curves for the enabled modes; read-only after construction."""

    def __init__(self, fits: Mapping[Mode, ModeFit]):
        self._fits = {Mode(m): f for m, f in fits.items()}

    @property
    def modes(self) -> list[Mode]:
        return sorted(self._fits, key=lambda m: m.value)

    def __contains__(self, mode) -> bool:
        return Mode(mode) in self._fits

    def fit(self, mode) -> ModeFit:
        mode = Mode(mode)
        if mode not in self._fits:
            raise KeyError(f"mode {mode.value} not enabled in this model")
        return self._fits[mode]

    def cutoff(self, mode) -> float:
        return self.fit(mode).cutoff

    def throughput(self, mode, d):
        return _evaluate(self.fit(mode), d)

    def to_json(self) -> dict:
        return {
            m.value: {"alpha": f.alpha, "beta": f.beta, "cutoff_m": f.cutoff}
            for m, f in sorted(self._fits.items(), key=lambda kv: kv[0].value)
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ThroughputModel":
        return cls({Mode(k): ModeFit(v["alpha"], v["beta"], v["cutoff_m"]) for k, v in doc.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ThroughputModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def throughput(model: ThroughputModel, mode, d):
    """Full-channel throughput in Mbps at distance ``d`` meters."""
    if np.any(np.asarray(d) <= 0):
        raise ValueError("distance must be positive")
    return model.throughput(mode, d)


def read_trace(path) -> dict[Mode, list[TracePoint]]:
    """Parse a ``mode,distance_m,throughput_mbps`` CSV into per-mode points."""
    out: dict[Mode, list[TracePoint]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"mode", "distance_m", "throughput_mbps"}:
            raise FitError(f"{path}: expected header mode,distance_m,throughput_mbps")
        for lineno, row in enumerate(reader, start=2):
            try:
                mode = Mode(row["mode"].strip())
                pt = TracePoint(float(row["distance_m"]), float(row["throughput_mbps"]))
            except (ValueError, AttributeError) as exc:
                raise FitError(f"{path}:{lineno}: malformed row {row}") from exc
            out.setdefault(mode, []).append(pt)
    return out


def fit_trace(path) -> ThroughputModel:
    return ThroughputModel({m: fit_model(pts, m) for m, pts in read_trace(path).items()})


def fixture_model() -> ThroughputModel:
    return fit_trace(FIXTURE_TRACE)


# -- variation stream -------------------------------------------------------

_SPATIAL_STREAM = 1
_TEMPORAL_STREAM = 2
_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _key(item) -> int:
    if isinstance(item, (int, np.integer)):
        return int(item) & 0xFFFFFFFF
    return zlib.crc32(str(item).encode())


def _normals(seed: int, keys: np.ndarray, epoch: int, stream: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        h = _splitmix(np.full(keys.shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
        h = _splitmix(h ^ keys.astype(np.uint64))
        h = _splitmix(h ^ np.uint64(epoch & 0xFFFFFFFF))
        h = _splitmix(h ^ np.uint64(stream))
        h2 = _splitmix(h)
    u1 = ((h >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53
    u2 = ((h2 >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class VariationModel:
    spatial_stddev_fraction: float = 0.30
    temporal_stddev_fraction: float = 0.10
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("spatial_stddev_fraction", "temporal_stddev_fraction"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must be in [0, 1), got {v}")

    def spatial(self, ids, epoch: int) -> np.ndarray:
        keys = np.array([_key(i) for i in ids], dtype=np.uint64)
        return self._draw(keys, epoch, _SPATIAL_STREAM, self.spatial_stddev_fraction)

    def temporal(self, ids, epoch: int) -> np.ndarray:
        keys = np.array([_key(i) for i in ids], dtype=np.uint64)
        return self._draw(keys, epoch, _TEMPORAL_STREAM, self.temporal_stddev_fraction)

    def _draw(self, keys, epoch, stream, sd):
        if sd == 0 or keys.size == 0:
            return np.ones(keys.shape)
        z = _normals(self.rng_seed, keys, epoch, stream)
        return np.clip(1.0 + sd * z, 0.1, 2.0)


def spatial_multiplier(vm: VariationModel, device_id, epoch: int) -> float:
    return float(vm.spatial([device_id], epoch)[0])
