"""Tasks, their runtime state, and seeded farm workload generators."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Device, MeshTopology, centered_gateways, default_gateways
from .propagation import Mode, ThroughputModel, fixture_model

EPOCH_S = 60.0
WEEK_EPOCHS = 14 * 24 * 60


class Kind(enum.Enum):
    RealTime = "realtime"
    DataCollection = "collection"


class Status(enum.Enum):
    Pending = "pending"
    Active = "active"
    Paused = "paused"
    Done = "done"
    Expired = "expired"


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: Kind
    source: str
    request_epoch: int
    deadline_epoch: int
    demand: float = 0.0  # Mbps, real-time only
    duration: int = 0  # epochs, real-time only
    data_volume: float = 0.0  # MB, collection only
    preemptible: bool = True

    def __post_init__(self):
        if self.deadline_epoch < self.request_epoch:
            raise WorkloadError(f"task {self.id}: deadline before request")
        if self.kind is Kind.RealTime:
            if self.demand <= 0 or self.duration <= 0:
                raise WorkloadError(f"task {self.id}: real-time tasks need positive demand and duration")
        elif self.data_volume <= 0:
            raise WorkloadError(f"task {self.id}: collection tasks need a positive data volume")

    @property
    def is_realtime(self) -> bool:
        return self.kind is Kind.RealTime

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        d["kind"] = Kind(d["kind"])
        return cls(**d)


@dataclass
class FlowState:
    task: TaskSpec
    remaining: float  # epochs for real-time, MB for collection
    status: Status = Status.Pending
    last_rate: float | None = None
    history: list = field(default_factory=list)  # (epoch, assigned, delivered)
    active_epochs: int = 0
    first_active: int | None = None

    @classmethod
    def fresh(cls, task: TaskSpec) -> "FlowState":
        return cls(task, float(task.duration if task.is_realtime else task.data_volume))

    @property
    def finished(self) -> bool:
        return self.status in (Status.Done, Status.Expired)


def slack(task: TaskSpec, state: FlowState, now: int, epoch_s: float = EPOCH_S) -> float:
    """Epochs of spare time before the task must run continuously to finish."""
    if state.finished:
        raise WorkloadError(f"task {task.id} is {state.status.value}")
    left = task.deadline_epoch - now
    if task.is_realtime:
        return left - state.remaining
    if not state.last_rate:
        return math.inf
    return left - state.remaining * 8.0 / (state.last_rate * epoch_s)


@dataclass
class Scenario:
    name: str
    topology: MeshTopology
    tasks: list[TaskSpec]
    horizon: int
    seed: int = 0
    scale: float = 1.0
    clusters: list = field(default_factory=list)  # groups of co-located real-time device ids

    def tasks_json(self) -> list[dict]:
        return [t.to_json() for t in self.tasks]

    def topology_json(self) -> dict:
        topo = self.topology
        return {
            "grid": {"rows": topo.rows, "cols": topo.cols, "spacing_m": topo.spacing},
            "gateways": list(topo.gateway_ids),
            "devices": [
                {"id": d.id, "start_xy": list(d.waypoints[0][:2]), "waypoints": [list(w) for w in d.waypoints],
                 "above_canopy": d.above_canopy}
                for d in topo.devices
            ],
            "horizon": self.horizon,
        }

    def write(self, path) -> Path:
        """Write the task list and a ``.topology.json`` companion next to it."""
        path = Path(path)
        path.write_text(json.dumps(self.tasks_json(), indent=1, sort_keys=True) + "\n")
        companion = path.with_suffix(".topology.json")
        companion.write_text(json.dumps(self.topology_json(), indent=1, sort_keys=True) + "\n")
        return companion


def topology_from_json(doc: dict) -> MeshTopology:
    g = doc["grid"]
    devices = []
    for d in doc.get("devices", []):
        pts = d.get("waypoints") or [[*d["start_xy"], 0]]
        devices.append(Device(str(d["id"]), tuple(tuple(float(v) for v in w) for w in pts), bool(d.get("above_canopy", False))))
    gws = doc.get("gateways") or default_gateways(int(g["cols"]), 1)
    return MeshTopology(int(g["rows"]), int(g["cols"]), float(g.get("spacing_m", 90.0)), [int(x) for x in gws], devices)


def load_workload(path, topology_path=None, horizon: int | None = None) -> Scenario:
    path = Path(path)
    tasks = [TaskSpec.from_json(t) for t in json.loads(path.read_text())]
    topo_doc = json.loads(Path(topology_path or path.with_suffix(".topology.json")).read_text())
    topo = topology_from_json(topo_doc)
    h = horizon or topo_doc.get("horizon") or max((t.deadline_epoch for t in tasks if t.deadline_epoch < WEEK_EPOCHS), default=1)
    known = {d.id for d in topo.devices}
    for t in tasks:
        if t.source not in known:
            raise WorkloadError(f"task {t.id}: source device {t.source!r} not in topology")
    return Scenario(path.stem, topo, tasks, int(h))


# -- generators -------------------------------------------------------------

HORIZON = 250
DAILY_MB, DAILY_DEADLINE = 15.0, 200
WEEKLY_MB = 500.0
MOBILE_FRACTION = 0.30
MAX_CLUSTER = 5


def _check_scale(scale):
    if not 0 < scale <= 1:
        raise WorkloadError(f"scale must be in (0, 1], got {scale}")


def _counts(scale):
    return dict(
        side=max(2, round(15 * scale)),
        gateways=max(1, round(3 * scale)),
        daily=round(40 * scale),
        weekly=round(8 * scale),
        realtime=round(100 * scale),
        concurrent=max(1, round(15 * scale)),
    )


def _windows_fit(load: np.ndarray, start: int, end: int, cap: int) -> bool:
    return bool(np.all(load[start:end] < cap))


def _trajectory(rng, xy, start, end, extent, mobile) -> tuple:
    if not mobile or end <= start:
        return ((xy[0], xy[1], 0.0),)
    speed = rng.uniform(5.0, 10.0)
    travel = speed * (end - start)
    room = [d for d in (1.0, -1.0) if 0 <= xy[0] + d * travel <= extent]
    direction = room[int(rng.integers(len(room)))] if room else (1.0 if xy[0] < extent / 2 else -1.0)
    x1 = min(max(xy[0] + direction * travel, 0.0), extent)
    return ((xy[0], xy[1], float(start)), (x1, xy[1], float(end)))


def _background(rng, n_daily, n_weekly, extent, horizon):
    tasks, devices = [], []
    for i in range(n_daily):
        dev = Device.static(f"s{i}", rng.uniform(0, extent, 2))
        devices.append(dev)
        tasks.append(TaskSpec(f"daily{i}", Kind.DataCollection, dev.id, 0, DAILY_DEADLINE, data_volume=DAILY_MB))
    for i in range(n_weekly):
        dev = Device.static(f"h{i}", rng.uniform(0, extent, 2))
        devices.append(dev)
        tasks.append(TaskSpec(f"weekly{i}", Kind.DataCollection, dev.id, 0, WEEK_EPOCHS, data_volume=WEEKLY_MB))
    return tasks, devices


def _span(thin, duration, sl):
    # "active": bound flows running if admitted on request; "window": bound whole request-deadline windows
    if thin == "active":
        return duration
    if thin == "window":
        return duration + sl
    raise WorkloadError(f"unknown thinning rule {thin!r}")


def _rt_params(rng):
    return float(rng.uniform(10.0, 20.0)), int(rng.integers(5, 21)), int(rng.integers(0, 11))


def _gateways(layout, side, count):
    if layout == "centered":
        return centered_gateways(side, count)
    if layout == "spread":
        return default_gateways(side, count)
    raise WorkloadError(f"unknown gateway layout {layout!r}")


def generate_scenario1(seed: int, scale: float = 1.0, gateways: str = "centered", thin: str = "active") -> Scenario:
    """Farm-wide workload: uniformly placed sources on a square grid."""
    _check_scale(scale)
    c = _counts(scale)
    rng = np.random.default_rng([seed, 1])
    extent = (c["side"] - 1) * 90.0
    tasks, devices = _background(rng, c["daily"], c["weekly"], extent, HORIZON)
    load = np.zeros(HORIZON, dtype=int)
    for i in range(c["realtime"]):
        demand, duration, sl = _rt_params(rng)
        latest = HORIZON - duration - sl
        for _ in range(10_000):
            req = int(rng.integers(0, latest + 1))
            if _windows_fit(load, req, req + _span(thin, duration, sl), c["concurrent"]):
                break
        else:
            raise WorkloadError("cannot place real-time task under the concurrency bound")
        load[req:req + _span(thin, duration, sl)] += 1
        xy = rng.uniform(0, extent, 2)
        mobile = rng.random() < MOBILE_FRACTION
        dev = Device(f"r{i}", _trajectory(rng, xy, req, req + duration + sl, extent, mobile))
        devices.append(dev)
        tasks.append(TaskSpec(f"rt{i}", Kind.RealTime, dev.id, req, req + duration + sl, demand=demand, duration=duration))
    topo = MeshTopology(c["side"], c["side"], 90.0, _gateways(gateways, c["side"], c["gateways"]), devices)
    return Scenario("scenario1", topo, tasks, HORIZON, seed, scale)


def generate_scenario2(seed: int, scale: float = 1.0, model: ThroughputModel | None = None,
                       gateways: str = "centered", thin: str = "active") -> Scenario:
    """Localized workload: real-time sources in groups of up to five around one AP."""
    _check_scale(scale)
    c = _counts(scale)
    model = model or fixture_model()
    rng = np.random.default_rng([seed, 2])
    extent = (c["side"] - 1) * 90.0
    radius = min(0.6 * 90.0, 0.99 * model.cutoff(Mode.UC24))
    tasks, devices = _background(rng, c["daily"], c["weekly"], extent, HORIZON)
    load = np.zeros(HORIZON, dtype=int)
    made = 0
    clusters = []
    while made < c["realtime"]:
        # a cluster runs together, so it cannot outnumber the concurrency bound
        size = min(int(rng.integers(1, MAX_CLUSTER + 1)), c["realtime"] - made, c["concurrent"])
        center = rng.integers(0, c["side"], 2) * 90.0
        members = [_rt_params(rng) for _ in range(size)]
        offsets = [int(rng.integers(0, 3)) for _ in range(size)]
        span = max(d + s + o for (_, d, s), o in zip(members, offsets))
        for _ in range(10_000):
            base = int(rng.integers(0, HORIZON - span + 1))
            trial = load.copy()
            for (_, d, s), o in zip(members, offsets):
                trial[base + o: base + o + _span(thin, d, s)] += 1
            if trial.max() <= c["concurrent"]:
                break
        else:
            raise WorkloadError("cannot place real-time cluster under the concurrency bound")
        load = trial
        clusters.append([])
        for (demand, duration, sl), o in zip(members, offsets):
            ang, rad = rng.uniform(0, 2 * np.pi), radius * math.sqrt(rng.uniform())
            xy = np.clip(center + rad * np.array([math.cos(ang), math.sin(ang)]), 0, extent)
            req = base + o
            mobile = rng.random() < MOBILE_FRACTION
            dev = Device(f"r{made}", _trajectory(rng, xy, req, req + duration + sl, extent, mobile))
            devices.append(dev)
            clusters[-1].append(dev.id)
            tasks.append(TaskSpec(f"rt{made}", Kind.RealTime, dev.id, req, req + duration + sl,
                                  demand=demand, duration=duration))
            made += 1
    topo = MeshTopology(c["side"], c["side"], 90.0, _gateways(gateways, c["side"], c["gateways"]), devices)
    return Scenario("scenario2", topo, tasks, HORIZON, seed, scale, clusters)


def max_concurrent_windows(tasks, horizon: int) -> int:
    load = np.zeros(horizon + 1, dtype=int)
    for t in tasks:
        if t.is_realtime:
            load[t.request_epoch:min(t.deadline_epoch, horizon)] += 1
    return int(load.max()) if len(load) else 0
