"""Two-tier grid topology: above-canopy routers, under-canopy devices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .propagation import Mode, ThroughputModel

CHANNELS_24 = (1, 6, 11)
CHANNEL_5 = 36
DEFAULT_SPACING = 90.0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Router:
    id: int
    position: tuple[float, float]
    channel24: int = 1
    channel5: int = CHANNEL_5
    is_gateway: bool = False

    def __post_init__(self):
        if self.channel24 not in CHANNELS_24:
            raise TopologyError(f"router {self.id}: 2.4GHz channel {self.channel24} not in {CHANNELS_24}")


@dataclass(frozen=True)
class Device:
    """An under-canopy device moving along straight segments between waypoints.

    ``waypoints`` holds ``(x, y, epoch)`` triples with strictly increasing epochs;
    the position is held constant before the first and after the last one.
    """

    id: str
    waypoints: tuple[tuple[float, float, float], ...]
    above_canopy: bool = False

    def __post_init__(self):
        if not self.waypoints:
            raise TopologyError(f"device {self.id}: no waypoints")
        epochs = [w[2] for w in self.waypoints]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise TopologyError(f"device {self.id}: waypoint epochs must increase")

    @classmethod
    def static(cls, id: str, xy, above_canopy=False) -> "Device":
        return cls(id, ((float(xy[0]), float(xy[1]), 0.0),), above_canopy)

    @property
    def is_mobile(self) -> bool:
        pts = {(w[0], w[1]) for w in self.waypoints}
        return len(pts) > 1

    def position(self, epoch: float) -> tuple[float, float]:
        w = self.waypoints
        if epoch <= w[0][2]:
            return (w[0][0], w[0][1])
        for (x0, y0, t0), (x1, y1, t1) in zip(w, w[1:]):
            if epoch <= t1:
                f = (epoch - t0) / (t1 - t0)
                return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))
        return (w[-1][0], w[-1][1])

    def max_speed(self) -> float:
        """Largest segment speed in meters per epoch."""
        best = 0.0
        for (x0, y0, t0), (x1, y1, t1) in zip(self.waypoints, self.waypoints[1:]):
            best = max(best, math.hypot(x1 - x0, y1 - y0) / (t1 - t0))
        return best


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def default_gateways(cols: int, count: int) -> list[int]:
    """Evenly spaced router ids along the first row."""
    if count < 1:
        raise TopologyError("need at least one gateway")
    if count > cols:
        raise TopologyError(f"{count} gateways do not fit in a row of {cols}")
    return sorted({int(round((i + 0.5) * cols / count - 0.5)) for i in range(count)})


def centered_gateways(cols: int, count: int) -> list[int]:
    """Adjacent router ids in the middle of the first row."""
    if count < 1:
        raise TopologyError("need at least one gateway")
    if count > cols:
        raise TopologyError(f"{count} gateways do not fit in a row of {cols}")
    first = (cols - count) // 2
    return list(range(first, first + count))


@dataclass
class MeshTopology:
    rows: int
    cols: int
    spacing: float = DEFAULT_SPACING
    gateway_ids: list[int] = field(default_factory=list)
    devices: list[Device] = field(default_factory=list)
    channels24: Sequence[int] | None = None

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise TopologyError("grid dimensions must be non-negative")
        if self.spacing <= 0:
            raise TopologyError("spacing must be positive")
        n = self.rows * self.cols
        if n and not self.gateway_ids:
            self.gateway_ids = [0]
        for g in self.gateway_ids:
            if not 0 <= g < n:
                raise TopologyError(f"gateway {g} outside the {self.rows}x{self.cols} grid")
        chans = list(self.channels24) if self.channels24 is not None else [CHANNELS_24[0]] * n
        if len(chans) != n:
            raise TopologyError("one 2.4GHz channel per router required")
        gw = set(self.gateway_ids)
        self.routers = [
            Router(i, ((i % self.cols) * self.spacing, (i // self.cols) * self.spacing), chans[i], CHANNEL_5, i in gw)
            for i in range(n)
        ]
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate device id")
        self._device_index = {d.id: n + k for k, d in enumerate(self.devices)}
        self.router_xy = np.array([r.position for r in self.routers], dtype=float).reshape(n, 2)
        diff = self.router_xy[:, None, :] - self.router_xy[None, :, :]
        self.router_dist = np.hypot(diff[..., 0], diff[..., 1])

    @property
    def num_routers(self) -> int:
        return len(self.routers)

    @property
    def num_nodes(self) -> int:
        return len(self.routers) + len(self.devices)

    def node_index(self, node) -> int:
        """Routers are their own id; devices follow after the last router."""
        if isinstance(node, Router):
            node = node.id
        if isinstance(node, Device):
            node = node.id
        if isinstance(node, (int, np.integer)) and 0 <= node < self.num_nodes:
            return int(node)
        if node in self._device_index:
            return self._device_index[node]
        raise TopologyError(f"unknown node {node!r}")

    def node_name(self, index: int):
        if index < self.num_routers:
            return index
        return self.devices[index - self.num_routers].id

    def device(self, device_id) -> Device:
        i = self.node_index(device_id)
        if i < self.num_routers:
            raise TopologyError(f"node {device_id!r} is a router")
        return self.devices[i - self.num_routers]

    def position(self, node, epoch: float = 0):
        i = self.node_index(node)
        if i < self.num_routers:
            return self.routers[i].position
        return self.devices[i - self.num_routers].position(epoch)

    def positions(self, epoch: float = 0) -> np.ndarray:
        """(num_nodes, 2) positions of every router then every device."""
        dev = np.array([d.position(epoch) for d in self.devices], dtype=float).reshape(len(self.devices), 2)
        return np.vstack([self.router_xy, dev])

    def with_devices(self, devices) -> "MeshTopology":
        return MeshTopology(self.rows, self.cols, self.spacing, list(self.gateway_ids), list(devices), self.channels24)

    def grid_coords(self, router_id: int) -> tuple[int, int]:
        return divmod(router_id, self.cols)


def grid_neighbors(topo: MeshTopology, router) -> list[Router]:
    rid = router.id if isinstance(router, Router) else router
    if not isinstance(rid, (int, np.integer)) or not 0 <= rid < topo.num_routers:
        raise TopologyError(f"unknown router {router!r}")
    r, c = topo.grid_coords(int(rid))
    out = []
    for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < topo.rows and 0 <= cc < topo.cols:
            out.append(topo.routers[rr * topo.cols + cc])
    return out


def neighbors_in_range(topo: MeshTopology, node, mode: Mode | str, model: ThroughputModel, epoch: float = 0) -> list[Router]:
    """Routers other than ``node`` that hear it with positive throughput in ``mode``."""
    if topo.num_routers == 0:
        return []
    i = topo.node_index(node)
    xy = np.asarray(topo.position(i, epoch))
    d = np.hypot(*(topo.router_xy - xy).T)
    # a device sitting on a router still hears it
    ok = np.asarray(model.throughput(mode, np.maximum(d, 1e-3))) > 0
    if i < topo.num_routers:
        ok[i] = False
    return [topo.routers[k] for k in np.flatnonzero(ok)]


def nearest_router(topo: MeshTopology, xy) -> int:
    d = np.hypot(*(topo.router_xy - np.asarray(xy, dtype=float)).T)
    return int(np.argmin(d))
