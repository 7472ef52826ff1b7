"""Centralized traffic engineering on the resource-unit ledger.

Each invocation plans a short window of epochs.  The first epoch of the
window is planned from scratch: zero-slack real-time flows are forced in,
then the rest are admitted in ascending slack order if their full-demand
footprint fits under ``1 - headroom``.  Admitted flows get max-min fair rates
and collection flows share what is left.  Later epochs of the window keep the
chosen APs and routes, admit newly requested flows and follow mobile devices.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .capacity import (BAND_LABELS, KEY_5, NUM_KEYS, CoefficientCache, Geometry, HopSpec,
                       ResourceFootprint, channel_key)
from .maxmin import max_min_fair
from .mesh import CHANNELS_24, MeshTopology, grid_neighbors
from .propagation import Mode, ThroughputModel
from .workload import WEEK_EPOCHS, FlowState, Status, TaskSpec, slack

FIT_TOL = 1e-12


class TeError(RuntimeError):
    pass


@dataclass(frozen=True)
class TeParams:
    invocation_period: int = 5
    headroom: float = 0.10
    hop_epsilon: float = 1e-6
    channel_switch_penalty_s: float = 5.2
    epoch_s: float = 60.0

    def __post_init__(self):
        if self.invocation_period < 1:
            raise ValueError("invocation_period must be at least 1")
        if not 0 <= self.headroom < 1:
            raise ValueError("headroom must be in [0, 1)")
        if self.hop_epsilon <= 0 or self.channel_switch_penalty_s <= 0 or self.epoch_s <= 0:
            raise ValueError("hop_epsilon, channel_switch_penalty_s and epoch_s must be positive")

    @property
    def budget(self) -> float:
        return 1.0 - self.headroom


# -- plan records -----------------------------------------------------------

@dataclass(frozen=True)
class FlowKnobs:
    flow_id: str
    status: str  # "scheduled" or "paused"
    rate: float = 0.0
    ap: int | None = None
    channel: int | None = None
    route: tuple = ()
    bands: tuple = ()  # ledger column per mesh hop; empty means all 5GHz
    rate_controlled: bool = True

    @property
    def scheduled(self) -> bool:
        return self.status == "scheduled"

    def hop_keys(self) -> tuple:
        return self.bands or (KEY_5,) * max(0, len(self.route) - 1)

    def to_json(self) -> dict:
        d = {"id": self.flow_id, "status": self.status, "rate_mbps": self.rate, "ap": self.ap,
             "channel": self.channel, "route": list(self.route)}
        if self.bands:
            d["hop_bands"] = [BAND_LABELS[k] for k in self.bands]
        if not self.rate_controlled:
            d["rate_controlled"] = False
        return d


@dataclass
class EpochPlan:
    epoch: int
    flows: dict
    router_channels: tuple

    def scheduled(self) -> list[FlowKnobs]:
        return [k for k in self.flows.values() if k.scheduled]

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "flows": [self.flows[f].to_json() for f in sorted(self.flows)],
            "router_channels": {str(i): c for i, c in enumerate(self.router_channels)},
        }


@dataclass
class TePlan:
    start: int
    epochs: list = field(default_factory=list)

    def at(self, epoch: int) -> EpochPlan:
        i = epoch - self.start
        if not 0 <= i < len(self.epochs):
            raise TeError(f"plan starting at {self.start} does not cover epoch {epoch}")
        return self.epochs[i]

    def to_json(self) -> list:
        return [e.to_json() for e in self.epochs]


@dataclass
class World:
    """What the planner may look at when it is invoked."""

    topo: MeshTopology
    tasks: dict
    states: dict
    router_channels: np.ndarray
    device_channels: dict = field(default_factory=dict)
    knobs: dict = field(default_factory=dict)  # last executed epoch's knobs
    horizon: int = 10**9


def access_mode(topo: MeshTopology, device_node: int) -> Mode:
    dev = topo.devices[device_node - topo.num_routers]
    return Mode.AC24 if dev.above_canopy else Mode.UC24


def flow_hops(topo: MeshTopology, device_node: int, ap: int, channel: int, route, bands=()) -> list[HopSpec]:
    if route and route[0] != ap:
        raise TeError(f"route starts at {route[0]}, not at AP {ap}")
    hops = [HopSpec(device_node, ap, access_mode(topo, device_node), 0.0, channel)]
    keys = bands or (KEY_5,) * max(0, len(route) - 1)
    for (a, b), k in zip(zip(route, route[1:]), keys):
        if k == KEY_5:
            hops.append(HopSpec(a, b, Mode.AC5))
        else:
            hops.append(HopSpec(a, b, Mode.AC24, 0.0, CHANNELS_24[k - 1]))
    return hops


# -- AP and channel selection ----------------------------------------------

def ap_scores(src: int, demand: float, topo: MeshTopology, committed: np.ndarray, model: ThroughputModel,
              geom: Geometry | None = None, ap_channels: dict | None = None, router_channels=None,
              channel: int | None = None) -> dict:
    """F(AP, channel) for every AP in 2.4GHz range of ``src``.

    F = r(f,AP) + C(AP) + sum over same-channel routers Rj heard by the sender
    of r(f,Rj) + C(Rj).  Only routers already serving as APs (the keys of
    ``ap_channels``) count as Rj: an idle router's 2.4GHz units are not
    constrained.  APs already carrying flows keep their channel.
    """
    geom = geom or Geometry.from_topology(topo)
    committed = getattr(committed, "committed", committed)
    ap_channels = ap_channels or {}
    n = topo.num_routers
    mode = access_mode(topo, src) if src >= n else Mode.UC24
    d = np.maximum(geom.dists_from(src)[:n], 1e-9)
    t = np.asarray(model.throughput(mode, d))
    heard = t > 0
    eff = np.array(router_channels if router_channels is not None else [r.channel24 for r in topo.routers])
    for a, c in ap_channels.items():
        eff[a] = c
    busy = np.zeros(n, bool)
    busy[list(ap_channels)] = True
    out = {}
    for a in np.flatnonzero(heard):
        a = int(a)
        r_a = demand / t[a]
        shares = r_a * np.minimum(1.0, t / t[a])
        chans = [ap_channels[a]] if a in ap_channels else list(CHANNELS_24)
        for c in chans:
            if channel is not None and c != channel:
                continue
            k = channel_key(Mode.UC24, c)
            same = heard & (eff == c) & busy
            same[a] = False
            out[(a, c)] = float(r_a + committed[a, k] + np.sum(shares[same] + committed[:n][same, k]))
    return out


def select_ap(src: int, demand: float, topo: MeshTopology, committed, model: ThroughputModel,
              geom: Geometry | None = None, ap_channels: dict | None = None, router_channels=None,
              channel: int | None = None, prefer_current: bool = False) -> tuple[int, int]:
    """Minimize F; ties go to the nearer AP, then the lower id, then the lower channel.

    With ``prefer_current`` an AP's present channel wins channel ties, which
    avoids needless switches.
    """
    geom = geom or Geometry.from_topology(topo)
    scores = ap_scores(src, demand, topo, committed, model, geom, ap_channels, router_channels, channel)
    if not scores:
        raise TeError(f"no AP in range of node {src}" + (f" on channel {channel}" if channel else ""))
    d = geom.dists_from(src)
    current = router_channels if router_channels is not None else [r.channel24 for r in topo.routers]
    best_f = min(scores.values())
    tied = [ac for ac, f in scores.items() if f <= best_f + 1e-12 * max(1.0, abs(best_f))]

    def order(ac):
        a, c = ac
        keep = 0 if (prefer_current and current[a] == c) else 1
        return (d[a], a, keep, c)

    return min(tied, key=order)


def nearest_ap(src: int, topo: MeshTopology, model: ThroughputModel, geom: Geometry, allowed=None) -> int | None:
    n = topo.num_routers
    d = geom.dists_from(src)[:n]
    mode = access_mode(topo, src) if src >= n else Mode.UC24
    ok = np.asarray(model.throughput(mode, np.maximum(d, 1e-9))) > 0
    if allowed is not None:
        ok &= allowed
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    return int(idx[np.lexsort((idx, d[idx]))[0]])


# -- routing ----------------------------------------------------------------

class MeshGraph:
    """Grid adjacency plus interference shares for one-spacing hops."""

    def __init__(self, topo: MeshTopology, model: ThroughputModel):
        self.topo = topo
        self.n = topo.num_routers
        self.adj = [[r.id for r in grid_neighbors(topo, i)] for i in range(self.n)]
        self.gateways = set(topo.gateway_ids)
        self.hop_tput = {}
        self.shares = {}
        for mode, key in ((Mode.AC5, KEY_5), (Mode.AC24, None)):
            if mode not in model:
                continue
            t_hop = float(model.throughput(mode, topo.spacing))
            if t_hop <= 0:
                raise TeError(f"grid spacing {topo.spacing} m is beyond {mode.value} range")
            d = topo.router_dist
            s = np.minimum(1.0, np.asarray(model.throughput(mode, np.maximum(d, 1e-9))) / t_hop)
            np.fill_diagonal(s, 0.0)
            self.hop_tput[mode] = t_hop
            self.shares[mode] = s


def node_weights(graph: MeshGraph, committed_col: np.ndarray, demand: float, budget: float = 1.0,
                 mode: Mode = Mode.AC5) -> np.ndarray:
    """w(R) = max(0, C(R) + 2r - b) + sum over in-range Rn of max(0, C(Rn) + r*delta - b)."""
    r = demand / graph.hop_tput[mode]
    s = graph.shares[mode]
    c = committed_col[: graph.n]
    spill = np.where(s > 0, np.maximum(0.0, c[None, :] + r * s - budget), 0.0)
    return np.maximum(0.0, c + 2 * r - budget) + spill.sum(axis=1)


def path_cost(path, weights, eps: float) -> float:
    return float(sum(weights[v] for v in path) + eps * (len(path) - 1))


def route(ap: int, demand: float, graph: MeshGraph, committed, params: TeParams, rng=None,
          weighted: bool = True, tie: str = "random", hop_channels=None) -> tuple[list, tuple]:
    """Cheapest 4-neighbor path from ``ap`` to any gateway.

    Path cost is the sum of node weights plus ``hop_epsilon`` per hop.  Exact
    ties are broken uniformly over all optimal paths (``tie="random"``) or by
    lowest next-hop id (``tie="lowest"``).  ``hop_channels`` enables above-canopy
    2.4GHz hops between grid neighbors sharing a channel.
    Returns the router list and, if 2.4GHz hops are enabled, their ledger columns.
    """
    committed = getattr(committed, "committed", committed)
    n, eps = graph.n, params.hop_epsilon
    if not 0 <= ap < n:
        raise TeError(f"unknown AP {ap}")
    budget = params.budget
    w = {KEY_5: node_weights(graph, committed[:, KEY_5], demand, budget) if weighted else np.zeros(n)}
    keys_for = None
    if hop_channels is not None:
        hop_channels = np.asarray(hop_channels)
        for ch in CHANNELS_24:
            k = channel_key(Mode.AC24, ch)
            w[k] = node_weights(graph, committed[:, k], demand, budget, Mode.AC24) if weighted else np.zeros(n)

        def keys_for(v, u):
            return (KEY_5, channel_key(Mode.AC24, int(hop_channels[v]))) if hop_channels[v] == hop_channels[u] else (KEY_5,)

    wl = {k: [float(x) for x in arr] for k, arr in w.items()}
    gws = graph.gateways

    def edge_keys(v, u):
        return keys_for(v, u) if keys_for else (KEY_5,)

    dist = [math.inf] * n
    heap = []
    for g in sorted(gws):
        dist[g] = wl[KEY_5][g]
        heap.append((dist[g], g))
    heapq.heapify(heap)
    done = [False] * n
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in graph.adj[u]:
            if v in gws or done[v]:
                continue
            for k in edge_keys(v, u):
                cand = du + wl[k][v] + eps
                if cand < dist[v]:
                    dist[v] = cand
                    heapq.heappush(heap, (cand, v))
    if not math.isfinite(dist[ap]):
        raise TeError(f"no gateway reachable from router {ap}")

    tight_of = {}

    def tight(v):
        if v not in tight_of:
            tol = 1e-12 * max(1.0, dist[v])
            tight_of[v] = [(u, k) for u in graph.adj[v] for k in edge_keys(v, u)
                           if math.isfinite(dist[u]) and abs(dist[u] + wl[k][v] + eps - dist[v]) <= tol]
        return tight_of[v]

    counts = None
    if tie == "random":
        # only nodes no farther than the AP can lie on its optimal paths
        counts = np.zeros(n)
        for v in sorted(range(n), key=dist.__getitem__):
            if dist[v] > dist[ap]:
                break
            counts[v] = 1.0 if v in graph.gateways else sum(counts[u] for u, _ in tight(v))
        if rng is None:
            rng = np.random.default_rng(0)
    path, keys = [ap], []
    v = ap
    while v not in graph.gateways:
        opts = sorted(tight(v))
        if tie == "random" and len(opts) > 1:
            p = np.array([counts[u] for u, _ in opts])
            u, k = opts[int(rng.choice(len(opts), p=p / p.sum()))]
        else:
            u, k = opts[0]
        path.append(u)
        keys.append(k)
        v = u
    return path, (tuple(keys) if hop_channels is not None else ())


# -- rate assignment --------------------------------------------------------

def assign_rates_realtime(footprints, demands, params: TeParams, constrained=None) -> np.ndarray:
    """Max-min fair Mbps rates capped at demand, within ``1 - headroom`` per constrained entry."""
    if not footprints:
        return np.zeros(0)
    mask = np.zeros_like(footprints[0].endpoints) if constrained is None else constrained.copy()
    for fp in footprints:
        mask |= fp.endpoints
    coef = np.stack([fp.units[mask] for fp in footprints])
    return max_min_fair(coef, params.budget, np.asarray(demands, dtype=float))


def water_fill(fp: ResourceFootprint, committed: np.ndarray, constrained: np.ndarray, budget: float, cap: float) -> float:
    """Largest rate up to ``cap`` whose footprint fits the leftover units."""
    mask = (constrained | fp.endpoints) & (fp.units > 0)
    if not mask.any():
        return float(cap)
    room = (budget - committed[mask]) / fp.units[mask]
    return float(max(0.0, min(cap, room.min())))


def assign_rates_background(footprints, caps, committed, constrained, params: TeParams, order) -> np.ndarray:
    """Water-fill collection flows one at a time in ``order`` (seeded-random upstream)."""
    committed = committed.copy()
    constrained = constrained.copy()
    rates = np.zeros(len(footprints))
    for i in order:
        fp = footprints[i]
        rates[i] = water_fill(fp, committed, constrained, params.budget, caps[i])
        if rates[i] > 0:
            committed += rates[i] * fp.units
            constrained |= fp.endpoints
    return rates


def solo_rate(fp: ResourceFootprint, budget: float) -> float:
    """Largest rate the footprint's own endpoints allow with nothing else on the network."""
    peak = float(fp.units[fp.endpoints].max()) if fp.endpoints.any() else 0.0
    return budget / peak if peak > 0 else math.inf


def fits(fp: ResourceFootprint, rate: float, committed: np.ndarray, constrained: np.ndarray, budget: float) -> bool:
    mask = constrained | fp.endpoints
    return bool(np.all(committed[mask] + rate * fp.units[mask] <= budget + FIT_TOL))


# -- mobility ---------------------------------------------------------------

def handover_target(device_node: int, current_ap: int, channel: int, topo: MeshTopology, model: ThroughputModel,
                    geom: Geometry, ap_channels: dict, keep_channel: bool = True):
    """AP the device should use at this geometry, or None when it is out of coverage.

    With ``keep_channel`` only APs free to take the device's channel qualify.
    The device moves when a qualifying AP is strictly nearer than its current one
    or the current one went out of range.
    """
    n = topo.num_routers
    allowed = np.ones(n, bool)
    if keep_channel:
        for a, c in ap_channels.items():
            if c != channel and a != current_ap:
                allowed[a] = False
    best = nearest_ap(device_node, topo, model, geom, allowed)
    d = geom.dists_from(device_node)
    in_range = float(model.throughput(access_mode(topo, device_node), max(d[current_ap], 1e-9))) > 0
    if best is None:
        return current_ap if in_range else None
    if not in_range or d[best] < d[current_ap]:
        return best
    return current_ap


def plan_mobility(device_node: int, ap: int, channel: int, topo: MeshTopology, model: ThroughputModel,
                  start: int, end: int, ap_channels: dict | None = None, keep_channel: bool = True) -> list[tuple]:
    """Handover schedule for one flow over epochs ``[start, end)``.

    Returns events ``(epoch, kind, router, channel)`` with kinds ``"channel"``
    (router retuned to the device's channel one epoch ahead), ``"handover"``
    and ``"pause"`` (no AP in range).
    """
    ap_channels = dict(ap_channels or {})
    events = []
    cur = ap
    for t in range(start + 1, end):
        geom = Geometry.from_topology(topo, t)
        nxt = handover_target(device_node, cur, channel, topo, model, geom, ap_channels, keep_channel)
        if nxt is None:
            events.append((t, "pause", cur, channel))
            break
        if nxt != cur:
            if keep_channel and ap_channels.get(nxt, topo.routers[nxt].channel24) != channel:
                events.append((t - 1, "channel", nxt, channel))
            events.append((t, "handover", nxt, channel))
            ap_channels.pop(cur, None)
            ap_channels[nxt] = channel
            cur = nxt
    return events


# -- planner ----------------------------------------------------------------

@dataclass(frozen=True)
class PolicyFeatures:
    name: str
    slack_admission: bool = True
    rate_control: bool = True
    ap_selection: bool = True
    routing: str = "weighted"  # weighted | random | lowest
    twofour: bool = False


CORNET = PolicyFeatures("cornet")


@dataclass
class _Alloc:
    fid: str
    task: TaskSpec
    dev: int
    ap: int
    channel: int
    route: list
    bands: tuple
    demand: float
    realtime: bool
    forced: bool = False
    rate: float = 0.0
    fp: ResourceFootprint | None = None


class Planner:
    def __init__(self, topo: MeshTopology, model: ThroughputModel, params: TeParams = TeParams(),
                 features: PolicyFeatures = CORNET, seed: int = 0, cache: CoefficientCache | None = None):
        self.topo = topo
        self.model = model
        self.params = params
        self.features = features
        self.seed = seed
        self.graph = MeshGraph(topo, model)
        self.cache = cache or CoefficientCache(model, topo)
        rng = np.random.default_rng([seed, 7])
        self.initial_channels = np.array(rng.choice(CHANNELS_24, size=topo.num_routers), dtype=int)

    # helpers ---------------------------------------------------------------

    def _rng(self, *key):
        return np.random.default_rng([self.seed, *key])

    def _choose_ap(self, dev, demand, geom, committed, ap_ch, router_ch, channel=None):
        if self.features.ap_selection:
            try:
                return select_ap(dev, demand, self.topo, committed, self.model, geom, ap_ch, router_ch,
                                 channel, prefer_current=True)
            except TeError:
                return None
        ap = nearest_ap(dev, self.topo, self.model, geom)
        if ap is None:
            return None
        return ap, int(router_ch[ap])

    def _route(self, fid, ap, demand, committed, router_ch, now):
        f = self.features
        rng = self._rng(now, _stable_hash(fid))
        hop_channels = router_ch if f.twofour else None
        if f.routing == "weighted":
            return route(ap, demand, self.graph, committed, self.params, rng, True, "random", hop_channels)
        tie = "random" if f.routing == "random" else "lowest"
        return route(ap, demand, self.graph, committed, self.params, rng, False, tie, hop_channels)

    def _footprint(self, a: _Alloc, geom) -> ResourceFootprint:
        return self.cache.footprint(flow_hops(self.topo, a.dev, a.ap, a.channel, a.route, a.bands), geom)

    def _place(self, fid, task, demand, realtime, geom, committed, ap_ch, router_ch, now, channel=None):
        dev = self.topo.node_index(task.source)
        pick = self._choose_ap(dev, demand, geom, committed, ap_ch, router_ch, channel)
        if pick is None:
            return None
        ap, ch = pick
        try:
            path, bands = self._route(fid, ap, demand, committed, _with(router_ch, ap, ch), now)
        except TeError:
            return None
        a = _Alloc(fid, task, dev, ap, ch, path, bands, demand, realtime)
        a.fp = self._footprint(a, geom)
        if realtime and self.features.rate_control:
            # a path that cannot carry the demand even alone never will; plan for what it can carry
            a.demand = min(demand, solo_rate(a.fp, self.params.budget))
        return a

    # main entry ------------------------------------------------------------

    def plan(self, world: World, now: int) -> TePlan:
        p, f = self.params, self.features
        end = min(now + p.invocation_period, world.horizon)
        pred = {fid: [st.remaining, st.status, st.last_rate] for fid, st in world.states.items() if not st.finished}
        router_ch = np.array(world.router_channels, dtype=int)
        if not f.ap_selection:
            router_ch = self.initial_channels.copy()
        dev_ch = dict(world.device_channels)
        prev_running = {fid for fid, k in world.knobs.items() if k.scheduled}
        coll_ids = sorted(fid for fid, t in world.tasks.items() if not t.is_realtime)
        bg_order = [coll_ids[i] for i in self._rng(now, 1).permutation(len(coll_ids))]
        allocs: dict[str, _Alloc] = {}
        bg: dict[str, _Alloc] = {}
        plan = TePlan(now)
        for t in range(now, end):
            geom = self.cache.geometry(t)
            self._drop_finished(allocs, bg, pred, world.tasks, t, dev_ch)
            if t > now:
                self._follow_devices(allocs, bg, geom, router_ch, t)
            for a in list(allocs.values()) + list(bg.values()):
                a.fp = self._footprint(a, geom)
            if f.slack_admission:
                self._admit(world, allocs, bg, pred, geom, router_ch, dev_ch, prev_running, now, t)
            else:
                self._admit_all(world, allocs, pred, geom, router_ch, t)
            committed, constrained = self._rate_realtime(allocs)
            for a in allocs.values():
                router_ch[a.ap] = a.channel
                if a.task.is_realtime:
                    dev_ch[a.task.source] = a.channel
            if f.ap_selection and t + 1 < end:
                self._preswitch(allocs, router_ch, t)
            # background never sets a channel, so removing it cannot change a real-time decision
            self._background(world, allocs, bg, pred, geom, router_ch, committed, constrained, bg_order, t)
            plan.epochs.append(self._emit(t, world, allocs, bg, pred, router_ch))
            self._advance(allocs, bg, pred)
        return plan

    def _drop_finished(self, allocs, bg, pred, tasks, t, dev_ch):
        for fid, st in list(pred.items()):
            task = tasks[fid]
            remaining, status, _ = st
            expired = task.is_realtime and t >= task.deadline_epoch
            expired |= (not task.is_realtime) and t >= task.deadline_epoch
            if remaining <= 1e-9 or expired:
                del pred[fid]
                allocs.pop(fid, None)
                bg.pop(fid, None)
                if task.is_realtime:
                    dev_ch.pop(task.source, None)

    def _follow_devices(self, allocs, bg, geom, router_ch, t):
        keep = self.features.ap_selection
        for group in (allocs, bg):
            for fid, a in list(group.items()):
                if not self.topo.device(a.task.source).is_mobile:
                    continue
                ap_ch = self._ap_channels(allocs, exclude=fid)
                nxt = handover_target(a.dev, a.ap, a.channel, self.topo, self.model, geom, ap_ch,
                                      keep and a.task.is_realtime)
                if nxt is None:
                    del group[fid]
                    continue
                if nxt == a.ap:
                    continue
                a.ap = nxt
                if not keep:
                    a.channel = int(router_ch[nxt])
                elif nxt in ap_ch:
                    a.channel = ap_ch[nxt]
                committed = self._committed(allocs, bg if group is bg else {}, exclude=fid)
                try:
                    a.route, a.bands = self._route(fid, nxt, a.demand, committed, _with(router_ch, nxt, a.channel), t)
                except TeError:
                    del group[fid]

    def _preswitch(self, allocs, router_ch, t):
        """Retune the AP a mobile real-time device reaches next epoch ahead of time."""
        geom = self.cache.geometry(t + 1)
        ap_ch = self._ap_channels(allocs)
        for a in allocs.values():
            if not a.task.is_realtime or not self.topo.device(a.task.source).is_mobile:
                continue
            nxt = handover_target(a.dev, a.ap, a.channel, self.topo, self.model, geom, ap_ch, True)
            if nxt is not None and nxt != a.ap and nxt not in ap_ch:
                router_ch[nxt] = a.channel

    def _ap_channels(self, allocs, exclude=None) -> dict:
        # background flows never pin their AP's channel
        return {a.ap: a.channel for fid, a in allocs.items() if fid != exclude}

    def _committed(self, allocs, bg, exclude=None) -> np.ndarray:
        total = np.zeros((self.topo.num_nodes, NUM_KEYS))
        for group in (allocs, bg):
            for fid, a in group.items():
                if fid != exclude and a.fp is not None and a.rate > 0:
                    total += a.rate * a.fp.units
        return total

    def _slack(self, world, fid, pred, t):
        task = world.tasks[fid]
        rem, status, last = pred[fid]
        st = FlowState(task, rem, status, last)
        return slack(task, st, t, self.params.epoch_s)

    def _admit_all(self, world, allocs, pred, geom, router_ch, t):
        """No admission control: every requested real-time flow starts at once."""
        committed = np.zeros((self.topo.num_nodes, NUM_KEYS))
        for fid in sorted(pred):
            task = world.tasks[fid]
            if fid in allocs or not task.is_realtime or task.request_epoch > t:
                continue
            a = self._place(fid, task, task.demand, True, geom, committed, {}, router_ch, t)
            if a is not None:
                a.forced = True
                allocs[fid] = a

    def _admit(self, world, allocs, bg, pred, geom, router_ch, dev_ch, prev_running, now, t):
        p = self.params
        full = t == now
        if full:
            allocs.clear()
            bg.clear()
        committed = np.zeros((self.topo.num_nodes, NUM_KEYS))
        constrained = np.zeros_like(committed, bool)
        for a in allocs.values():
            committed += a.demand * a.fp.units if a.forced else a.rate * a.fp.units
            constrained |= a.fp.endpoints
        ap_ch = self._ap_channels(allocs)
        visible = [fid for fid in sorted(pred) if fid not in allocs and world.tasks[fid].request_epoch <= t]
        zero, running, pending = [], [], []
        for fid in visible:
            task = world.tasks[fid]
            s = self._slack(world, fid, pred, t)
            if task.is_realtime:
                if s <= 0:
                    zero.append((-task.demand, fid))
                elif full and fid in prev_running:
                    running.append((s, fid))
                else:
                    pending.append((s, fid))
            elif task.deadline_epoch < WEEK_EPOCHS and s <= 0 and task.deadline_epoch > t:
                pending.append((s, fid))
        zero.sort()
        running.sort()
        pending.sort()

        def place(fid, demand, realtime):
            task = world.tasks[fid]
            sticky = dev_ch.get(task.source) if task.is_realtime else None
            a = self._place(fid, task, demand, realtime, geom, committed, ap_ch, router_ch, t, sticky)
            if a is None and sticky is not None:
                a = self._place(fid, task, demand, realtime, geom, committed, ap_ch, router_ch, t)
            return a

        def commit(a, forced):
            nonlocal committed, constrained
            a.forced = forced
            allocs[a.fid] = a
            ap_ch[a.ap] = a.channel
            committed = committed + a.demand * a.fp.units
            constrained = constrained | a.fp.endpoints

        newly_forced = False
        for _, fid in zero:
            a = place(fid, world.tasks[fid].demand, True)
            if a is not None:
                commit(a, True)
                newly_forced |= fid not in prev_running
        for _, fid in running:
            task = world.tasks[fid]
            a = place(fid, task.demand, True)
            if a is None:
                continue
            if fits(a.fp, a.demand, committed, constrained, p.budget):
                commit(a, False)
            elif not (task.preemptible and newly_forced):
                commit(a, True)
        for _, fid in pending:
            task = world.tasks[fid]
            if task.is_realtime:
                demand = task.demand
            else:
                left = max(1, task.deadline_epoch - t)
                demand = pred[fid][0] * 8.0 / (left * p.epoch_s)
            a = place(fid, demand, True)
            if a is not None and fits(a.fp, a.demand, committed, constrained, p.budget):
                commit(a, False)

    def _rate_realtime(self, allocs):
        n = self.topo.num_nodes
        committed = np.zeros((n, NUM_KEYS))
        constrained = np.zeros((n, NUM_KEYS), bool)
        items = sorted(allocs.values(), key=lambda a: a.fid)
        if not items:
            return committed, constrained
        if self.features.rate_control:
            rates = assign_rates_realtime([a.fp for a in items], [a.demand for a in items], self.params)
        else:
            rates = [a.demand for a in items]
        for a, r in zip(items, rates):
            a.rate = float(r)
            committed += a.rate * a.fp.units
            constrained |= a.fp.endpoints
        return committed, constrained

    def _background(self, world, allocs, bg, pred, geom, router_ch, committed, constrained, order, t):
        p = self.params
        for fid in order:
            if fid not in pred or fid in allocs:
                bg.pop(fid, None)
                continue
            task = world.tasks[fid]
            if task.request_epoch > t:
                continue
            cap = pred[fid][0] * 8.0 / p.epoch_s
            a = bg.get(fid)
            if a is not None and a.channel != router_ch[a.ap]:
                a = None  # its AP was retuned for real-time traffic; place it afresh
            if a is None:
                dev = self.topo.node_index(task.source)
                ap = nearest_ap(dev, self.topo, self.model, geom)
                if ap is None:
                    continue
                ch = int(router_ch[ap])
                try:
                    path, bands = self._route(fid, ap, cap, committed, router_ch, t)
                except TeError:
                    continue
                a = _Alloc(fid, task, dev, ap, ch, path, bands, cap, False)
                a.fp = self._footprint(a, geom)
                bg[fid] = a
            a.demand = cap
            if self.features.rate_control:
                a.rate = water_fill(a.fp, committed, constrained, p.budget, cap)
            else:
                a.rate = cap
            if a.rate > 0:
                committed = committed + a.rate * a.fp.units
                constrained = constrained | a.fp.endpoints

    def _emit(self, t, world, allocs, bg, pred, router_ch) -> EpochPlan:
        rc = self.features.rate_control
        flows = {}
        for fid in sorted(pred):
            if world.tasks[fid].request_epoch > t:
                continue
            a = allocs.get(fid) or bg.get(fid)
            if a is not None and a.rate > 0:
                flows[fid] = FlowKnobs(fid, "scheduled", a.rate, a.ap, a.channel, tuple(a.route), tuple(a.bands), rc)
            else:
                flows[fid] = FlowKnobs(fid, "paused")
        return EpochPlan(t, flows, tuple(int(c) for c in router_ch))

    def _advance(self, allocs, bg, pred):
        for a in allocs.values():
            if a.rate > 0:
                st = pred[a.fid]
                if a.task.is_realtime:
                    st[0] -= 1
                else:
                    st[0] -= a.rate * self.params.epoch_s / 8.0
                    st[2] = a.rate
                st[1] = Status.Active
        for a in bg.values():
            if a.rate > 0:
                st = pred[a.fid]
                st[0] -= a.rate * self.params.epoch_s / 8.0
                st[2] = a.rate
                st[1] = Status.Active


def _with(channels, router, ch):
    out = np.array(channels, dtype=int)
    out[router] = ch
    return out


def _stable_hash(s: str) -> int:
    return zlib.crc32(s.encode())


def validate_plan(plan: TePlan, topo: MeshTopology, world: World | None = None) -> list[str]:
    """Structural problems with a plan; empty when it is well formed."""
    problems = []
    gws = set(topo.gateway_ids)
    for ep in plan.epochs:
        if len(ep.router_channels) != topo.num_routers:
            problems.append(f"epoch {ep.epoch}: router channel table has wrong size")
        for c in ep.router_channels:
            if c not in CHANNELS_24:
                problems.append(f"epoch {ep.epoch}: invalid channel {c}")
        for k in ep.scheduled():
            tag = f"epoch {ep.epoch} flow {k.flow_id}"
            if k.ap is None or k.channel is None or not k.route:
                problems.append(f"{tag}: incomplete knobs")
                continue
            if k.route[0] != k.ap:
                problems.append(f"{tag}: route does not start at AP")
            if k.route[-1] not in gws:
                problems.append(f"{tag}: route does not end at a gateway")
            for a, b in zip(k.route, k.route[1:]):
                if b not in {r.id for r in grid_neighbors(topo, a)}:
                    problems.append(f"{tag}: {a}->{b} is not a grid edge")
            if ep.router_channels[k.ap] != k.channel:
                problems.append(f"{tag}: AP {k.ap} on {ep.router_channels[k.ap]} but flow on {k.channel}")
            if k.rate < 0 or not math.isfinite(k.rate):
                problems.append(f"{tag}: bad rate {k.rate}")
    return problems
