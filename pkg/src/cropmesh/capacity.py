"""Resource-unit accounting for two-tier WiFi meshes.

Every node has one unit of capacity per channel it can use.  A hop carrying
``X`` Mbps over distance ``d`` consumes ``X / T(d)`` units at both endpoints,
and ``X / T(d) * min(1, T(d_sc) / T(d))`` at every other node on the same
channel that hears the sender at distance ``d_sc``.

Units live in an ``(num_nodes, 4)`` array.  Column 0 is the shared 5GHz
channel and columns 1..3 are 2.4GHz channels 1, 6 and 11.  Interference is
charged per channel column, so a router is charged for 2.4GHz traffic on a
channel even while its own AP uses a different one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mesh import CHANNELS_24, MeshTopology
from .propagation import Band, Mode, ThroughputModel

BAND_LABELS = ("5", "2.4/1", "2.4/6", "2.4/11")
NUM_KEYS = 4
KEY_5 = 0


class CapacityError(ValueError):
    pass


def channel_key(mode: Mode, channel: int | None = None) -> int:
    if not isinstance(mode, Mode):
        mode = Mode(mode)
    if mode.band is Band.GHz5:
        return KEY_5
    if channel not in CHANNELS_24:
        raise CapacityError(f"2.4GHz hop needs a channel in {CHANNELS_24}, got {channel}")
    return 1 + CHANNELS_24.index(channel)


@dataclass(frozen=True)
class HopSpec:
    src: int
    dst: int
    mode: Mode
    rate: float = 0.0
    channel: int | None = None

    def __post_init__(self):
        if self.rate < 0:
            raise CapacityError(f"negative rate on hop {self.src}->{self.dst}")

    @property
    def key(self) -> int:
        return channel_key(self.mode, self.channel)

    def at_rate(self, rate: float) -> "HopSpec":
        return HopSpec(self.src, self.dst, self.mode, rate, self.channel)


class Geometry:
    """Node positions plus which radios each node carries.

    Routers have both radios; devices only 2.4GHz.  Node indices follow
    ``MeshTopology.node_index``.
    """

    def __init__(self, positions, radio5=None, radio24=None):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        self.radio5 = np.ones(n, bool) if radio5 is None else np.asarray(radio5, bool)
        self.radio24 = np.ones(n, bool) if radio24 is None else np.asarray(radio24, bool)

    @classmethod
    def from_topology(cls, topo: MeshTopology, epoch: float = 0) -> "Geometry":
        radio5 = np.zeros(topo.num_nodes, bool)
        radio5[: topo.num_routers] = True
        return cls(topo.positions(epoch), radio5)

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    def dist(self, a: int, b: int) -> float:
        return float(np.hypot(*(self.positions[a] - self.positions[b])))

    def dists_from(self, a: int) -> np.ndarray:
        return np.hypot(*(self.positions - self.positions[a]).T)

    def radio_mask(self, mode: Mode) -> np.ndarray:
        return self.radio5 if Mode(mode).band is Band.GHz5 else self.radio24


def delta(model: ThroughputModel, mode, d_ab, d_ac):
    """Interference scaling at a bystander ``d_ac`` from a sender whose receiver is ``d_ab`` away."""
    t_ab = model.throughput(mode, d_ab)
    if np.any(np.asarray(t_ab) <= 0):
        raise CapacityError(f"receiver at {d_ab} m is out of {Mode(mode).value} range")
    t_ac = model.throughput(mode, np.maximum(d_ac, 1e-9))
    out = np.minimum(1.0, np.asarray(t_ac) / t_ab)
    return out if out.ndim else float(out)


def _hop_throughput(hop: HopSpec, model: ThroughputModel, geom: Geometry) -> float:
    d = geom.dist(hop.src, hop.dst)
    t = float(model.throughput(hop.mode, max(d, 1e-9)))
    if t <= 0:
        raise CapacityError(f"hop {hop.src}->{hop.dst} spans {d:.1f} m, beyond {Mode(hop.mode).value} range")
    return t


def direct_units(hop: HopSpec, model: ThroughputModel, geom: Geometry, scale: float = 1.0) -> float:
    """Units used at each endpoint; ``scale`` multiplies the link throughput."""
    if hop.rate == 0:
        return 0.0
    return hop.rate / (_hop_throughput(hop, model, geom) * scale)


def interference_units(hop: HopSpec, bystander: int, model: ThroughputModel, geom: Geometry, scale: float = 1.0) -> float:
    if hop.rate == 0 or bystander in (hop.src, hop.dst):
        return 0.0
    d_ac = geom.dist(hop.src, bystander)
    d_ab = geom.dist(hop.src, hop.dst)
    return direct_units(hop, model, geom, scale) * delta(model, hop.mode, max(d_ab, 1e-9), d_ac)


def hop_vector(hop: HopSpec, model: ThroughputModel, geom: Geometry, scale: float = 1.0) -> np.ndarray:
    """Per-Mbps units charged by one hop on its channel column, for every node."""
    t_ab = _hop_throughput(hop, model, geom)
    d = geom.dists_from(hop.src)
    t = np.asarray(model.throughput(hop.mode, np.maximum(d, 1e-9)))
    vec = np.where(geom.radio_mask(hop.mode), np.minimum(1.0, t / t_ab), 0.0)
    vec[hop.src] = 1.0
    vec[hop.dst] = 1.0
    return vec / (t_ab * scale)


class ResourceFootprint:
    """Units a flow consumes per (node, channel column), plus which entries it
    touches as an endpoint.  Only endpoint entries are capacity-constrained:
    a node with no traffic of its own loses nothing to interference."""

    __slots__ = ("units", "endpoints")

    def __init__(self, units: np.ndarray, endpoints: np.ndarray):
        self.units = units
        self.endpoints = endpoints

    @classmethod
    def zeros(cls, num_nodes: int) -> "ResourceFootprint":
        return cls(np.zeros((num_nodes, NUM_KEYS)), np.zeros((num_nodes, NUM_KEYS), bool))

    def scaled(self, rate: float) -> "ResourceFootprint":
        return ResourceFootprint(self.units * rate, self.endpoints.copy())

    def total(self) -> float:
        return float(self.units.sum())

    def items(self, names: Sequence | None = None) -> dict:
        out = {}
        for node, key in zip(*np.nonzero(self.units)):
            label = names[node] if names is not None else int(node)
            out[(label, BAND_LABELS[key])] = float(self.units[node, key])
        return out

    def __getitem__(self, node_band):
        node, band = node_band
        key = BAND_LABELS.index(band) if isinstance(band, str) else band
        return float(self.units[node, key])


def check_path(path: Sequence[HopSpec], channels: Sequence[int] | None = None) -> None:
    for a, b in zip(path, path[1:]):
        if a.dst != b.src:
            raise CapacityError(f"path breaks between hop {a.src}->{a.dst} and {b.src}->{b.dst}")
    if channels is None:
        return
    for h in path:
        if Mode(h.mode).band is Band.GHz24:
            for end in (h.src, h.dst):
                if end < len(channels) and channels[end] != h.channel:
                    raise CapacityError(f"hop {h.src}->{h.dst} on channel {h.channel} but router {end} is on {channels[end]}")


def path_coefficients(path: Sequence[HopSpec], model: ThroughputModel, geom: Geometry, scales=None) -> ResourceFootprint:
    """Footprint of the path at 1 Mbps; hop rates are ignored."""
    fp = ResourceFootprint.zeros(geom.num_nodes)
    for i, hop in enumerate(path):
        s = 1.0 if scales is None else scales[i]
        fp.units[:, hop.key] += hop_vector(hop, model, geom, s)
        fp.endpoints[hop.src, hop.key] = True
        fp.endpoints[hop.dst, hop.key] = True
    return fp


def flow_footprint(path: Sequence[HopSpec], model: ThroughputModel, geom: Geometry,
                   channels: Sequence[int] | None = None, scales=None) -> ResourceFootprint:
    """Footprint of a device-to-gateway path at each hop's own rate."""
    check_path(path, channels)
    fp = ResourceFootprint.zeros(geom.num_nodes)
    for i, hop in enumerate(path):
        s = 1.0 if scales is None else scales[i]
        if hop.rate > 0:
            fp.units[:, hop.key] += hop.rate * hop_vector(hop, model, geom, s)
        fp.endpoints[hop.src, hop.key] = True
        fp.endpoints[hop.dst, hop.key] = True
    return fp


class ContentionLedger:
    """Committed units per (node, channel column) for the scheduled flows.

    Adding is incremental; removing re-sums the survivors in insertion order so
    that add(a), add(b), remove(b) gives back exactly the ledger after add(a).
    """

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self._flows: dict = {}
        self.committed = np.zeros((num_nodes, NUM_KEYS))
        self._endpoint_count = np.zeros((num_nodes, NUM_KEYS), dtype=np.int64)

    def __contains__(self, flow_id) -> bool:
        return flow_id in self._flows

    def __len__(self) -> int:
        return len(self._flows)

    @property
    def flow_ids(self) -> list:
        return list(self._flows)

    @property
    def constrained(self) -> np.ndarray:
        return self._endpoint_count > 0

    def footprint(self, flow_id) -> ResourceFootprint:
        return self._flows[flow_id]

    def add(self, flow_id, fp: ResourceFootprint) -> None:
        if flow_id in self._flows:
            raise KeyError(f"flow {flow_id!r} already committed")
        self._flows[flow_id] = fp
        self.committed = self.committed + fp.units
        self._endpoint_count += fp.endpoints

    def remove(self, flow_id) -> ResourceFootprint:
        fp = self._flows.pop(flow_id)
        self._endpoint_count -= fp.endpoints
        total = np.zeros((self.num_nodes, NUM_KEYS))
        for other in self._flows.values():
            total = total + other.units
        self.committed = total
        return fp

    def copy(self) -> "ContentionLedger":
        out = ContentionLedger(self.num_nodes)
        out._flows = dict(self._flows)
        out.committed = self.committed.copy()
        out._endpoint_count = self._endpoint_count.copy()
        return out

    def rows(self, names: Sequence | None = None) -> list[tuple]:
        out = []
        for node, key in zip(*np.nonzero(self.committed)):
            label = names[node] if names is not None else int(node)
            out.append((label, BAND_LABELS[key], float(self.committed[node, key])))
        return out


def ledger_check(ledger: ContentionLedger, headroom: float = 0.0, tol: float = 1e-9) -> list[tuple]:
    """(node, band, committed) for constrained entries above ``1 - headroom``."""
    over = ledger.constrained & (ledger.committed > 1.0 - headroom + tol)
    return [(int(n), BAND_LABELS[k], float(ledger.committed[n, k])) for n, k in zip(*np.nonzero(over))]


def write_ledger_csv(path, rows: Iterable[tuple]) -> None:
    """Rows are ``(epoch, node, band, committed_fraction)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "node", "band", "committed_fraction"])
        for epoch, node, band, value in rows:
            w.writerow([epoch, node, band, repr(float(value))])


class CoefficientCache:
    """Per-Mbps hop vectors for one topology.

    Router-to-router 5GHz hops only touch routers, whose positions never
    change, so their vectors are computed once.  Every other hop depends on
    device positions and is recomputed for each geometry.
    """

    def __init__(self, model: ThroughputModel, topo: MeshTopology):
        self.model = model
        self.topo = topo
        self._static: dict = {}
        self._paths: dict = {}
        self._geom_epoch = None
        self._geom = None

    def geometry(self, epoch: float) -> Geometry:
        if epoch != self._geom_epoch:
            self._geom = Geometry.from_topology(self.topo, epoch)
            self._geom_epoch = epoch
        return self._geom

    def vector(self, hop: HopSpec, geom: Geometry) -> np.ndarray:
        n = self.topo.num_routers
        if Mode(hop.mode).band is Band.GHz5 and hop.src < n and hop.dst < n:
            k = (hop.src, hop.dst, hop.mode)
            vec = self._static.get(k)
            if vec is None:
                vec = hop_vector(hop, self.model, geom)
                vec.setflags(write=False)
                self._static[k] = vec
            return vec
        return hop_vector(hop, self.model, geom)

    def _is_static(self, hop: HopSpec) -> bool:
        n = self.topo.num_routers
        return hop.mode is Mode.AC5 and hop.src < n and hop.dst < n

    def footprint(self, hops: Sequence[HopSpec], geom: Geometry, scales=None) -> ResourceFootprint:
        if scales is None:
            return self._unscaled(hops, geom)
        fp = ResourceFootprint.zeros(geom.num_nodes)
        for i, hop in enumerate(hops):
            vec = self.vector(hop, geom)
            if scales is not None and scales[i] != 1.0:
                vec = vec / scales[i]
            fp.units[:, hop.key] += vec
            fp.endpoints[hop.src, hop.key] = True
            fp.endpoints[hop.dst, hop.key] = True
        return fp

    def _unscaled(self, hops, geom) -> ResourceFootprint:
        # the router-only 5GHz part of a path is position independent, so it is summed once
        mesh = tuple((h.src, h.dst) for h in hops if self._is_static(h))
        base = self._paths.get(mesh)
        if base is None:
            base = ResourceFootprint.zeros(geom.num_nodes)
            for a, b in mesh:
                base.units[:, KEY_5] += self.vector(HopSpec(a, b, Mode.AC5), geom)
                base.endpoints[a, KEY_5] = base.endpoints[b, KEY_5] = True
            if len(self._paths) > 50_000:
                self._paths.clear()
            self._paths[mesh] = base
        fp = ResourceFootprint(base.units.copy(), base.endpoints.copy())
        for hop in hops:
            if self._is_static(hop):
                continue
            fp.units[:, hop.key] += self.vector(hop, geom)
            fp.endpoints[hop.src, hop.key] = True
            fp.endpoints[hop.dst, hop.key] = True
        return fp
