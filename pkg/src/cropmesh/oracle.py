"""Ground truth for tests: exhaustive optimum on tiny instances and an
independent transcription of the resource-unit formulas.

The optimum lets every epoch pick its own AP, channel, route and rates, and
each flow pick which epochs of its window it runs in, up to its duration.
With static devices an epoch's best value depends only on the set of flows
running in it, so the search splits into "best value per flow subset" and
"best subset per epoch".  Rates are continuous; the per-subset LP is solved
by enumerating vertices.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capacity import Geometry, HopSpec, ResourceFootprint
from .mesh import CHANNELS_24, Device, MeshTopology, grid_neighbors
from .propagation import Band, Mode, ThroughputModel, fixture_model
from .workload import Kind, Scenario, TaskSpec

SEARCH_BOUND = 10**7
MB_PER_MBPS_EPOCH = 60.0 / 8.0


class OracleError(ValueError):
    pass


@dataclass
class TinyInstance:
    rows: int
    cols: int
    gateways: list
    devices: list  # Device, all static
    tasks: list  # real-time TaskSpec only
    horizon: int
    spacing: float = 90.0

    def __post_init__(self):
        if not (1 <= self.rows <= 3 and 1 <= self.cols <= 3):
            raise OracleError(f"grid {self.rows}x{self.cols} exceeds 3x3")
        if not 1 <= len(self.tasks) <= 3:
            raise OracleError("tiny instances carry 1 to 3 flows")
        if not 1 <= self.horizon <= 5:
            raise OracleError("tiny horizon must be 1..5 epochs")
        if any(not t.is_realtime for t in self.tasks):
            raise OracleError("tiny instances carry real-time flows only")
        if any(d.is_mobile for d in self.devices):
            raise OracleError("tiny instances need static devices")

    def topology(self) -> MeshTopology:
        return MeshTopology(self.rows, self.cols, self.spacing, list(self.gateways), list(self.devices))

    def scenario(self, seed: int = 0) -> Scenario:
        return Scenario("tiny", self.topology(), list(self.tasks), self.horizon, seed)


def random_tiny(seed: int, model: ThroughputModel | None = None) -> TinyInstance:
    """A seeded tiny instance whose devices all reach at least one router."""
    model = model or fixture_model()
    rng = np.random.default_rng([seed, 11])
    rows, cols = (int(v) for v in rng.integers(2, 4, 2))
    gateways = [int(rng.integers(cols))]
    horizon = int(rng.integers(3, 5))
    reach = 0.7 * model.cutoff(Mode.UC24)
    devices, tasks = [], []
    hub = np.array([rng.integers(cols), rng.integers(rows)]) * 90.0
    for i in range(int(rng.integers(1, 4))):
        # devices crowd one router half the time so that flows contend
        anchor = hub if rng.random() < 0.5 else np.array([rng.integers(cols), rng.integers(rows)]) * 90.0
        ang, rad = rng.uniform(0, 2 * math.pi), rng.uniform(5.0, reach)
        xy = anchor + rad * np.array([math.cos(ang), math.sin(ang)])
        devices.append(Device.static(f"d{i}", xy))
        duration = int(rng.integers(1, 3))
        req = int(rng.integers(0, horizon - duration + 1))
        deadline = min(horizon, req + duration + int(rng.integers(0, 3)))
        tasks.append(TaskSpec(f"f{i}", Kind.RealTime, f"d{i}", req, deadline,
                              demand=float(rng.integers(5, 41)), duration=duration))
    return TinyInstance(int(rows), int(cols), gateways, devices, tasks, horizon)


# -- independent transcription of the unit formulas --------------------------

def _tput(model: ThroughputModel, mode: Mode, d: float) -> float:
    # alpha + beta*ln(d), floored at zero, zero from the cutoff on
    f = model.fit(mode)
    d = max(d, 1e-9)
    if d >= f.cutoff:
        return 0.0
    return max(0.0, f.alpha + f.beta * math.log(d))


def _column(mode: Mode, channel) -> int:
    if mode in (Mode.AC5, Mode.UC5):
        return 0
    return {1: 1, 6: 2, 11: 3}[channel]


def recompute_footprint(path, model: ThroughputModel, geom: Geometry) -> ResourceFootprint:
    """Units of a device-to-gateway path at each hop's rate, written out node by node.

    Endpoints pay rate/T(d_AB); every other node with a radio in the band pays
    rate/T(d_AB) * min(1, T(d_AC)/T(d_AB)), with C measured from the sender.
    """
    n = geom.num_nodes
    units = np.zeros((n, 4))
    ends = np.zeros((n, 4), bool)
    prev = None
    for hop in path:
        if prev is not None and prev.dst != hop.src:
            raise OracleError(f"path breaks at {prev.src}->{prev.dst} / {hop.src}->{hop.dst}")
        prev = hop
        mode = Mode(hop.mode)
        col = _column(mode, hop.channel)
        ax, ay = geom.positions[hop.src]
        bx, by = geom.positions[hop.dst]
        t_ab = _tput(model, mode, math.hypot(ax - bx, ay - by))
        if t_ab <= 0:
            raise OracleError(f"hop {hop.src}->{hop.dst} out of range")
        ends[hop.src, col] = ends[hop.dst, col] = True
        if hop.rate == 0:
            continue
        r_direct = hop.rate / t_ab
        has_radio = geom.radio5 if mode.band is Band.GHz5 else geom.radio24
        for c in range(n):
            if c in (hop.src, hop.dst):
                units[c, col] += r_direct
            elif has_radio[c]:
                cx, cy = geom.positions[c]
                t_ac = _tput(model, mode, math.hypot(ax - cx, ay - cy))
                units[c, col] += r_direct * min(1.0, t_ac / t_ab)
    return ResourceFootprint(units, ends)


# -- LP by vertex enumeration ------------------------------------------------

def lp_max_sum(coef, caps):
    """max sum(x) s.t. 0 <= x <= caps and coef.T @ x <= 1; returns (value, x).

    ``coef`` is (flows, constraints).  Single-flow rows fold into the caps and
    dominated rows are dropped before enumerating vertices.
    """
    coef = np.asarray(coef, float).reshape(len(caps), -1)
    u = np.array(caps, float)
    nf = len(u)
    rows = []
    for row in coef.T:
        nz = np.flatnonzero(row > 0)
        if len(nz) == 0:
            continue
        if len(nz) == 1:
            u[nz[0]] = min(u[nz[0]], 1.0 / row[nz[0]])
        else:
            rows.append(row)
    rows = _undominated(rows)
    g = np.vstack([np.array(rows).reshape(-1, nf), np.eye(nf), -np.eye(nf)])
    h = np.concatenate([np.ones(len(rows)), u, np.zeros(nf)])
    idx = _combos(len(g), nf)
    m = g[idx]
    ok = np.abs(np.linalg.det(m)) > 1e-12
    idx, m = idx[ok], m[ok]
    xs = np.linalg.solve(m, h[idx][..., None])[..., 0]
    feasible = np.all(xs @ g.T <= h + 1e-9 * np.maximum(1.0, np.abs(h)), axis=1)
    xs = xs[feasible]
    vals = xs.sum(axis=1)
    # first vertex (in combination order) within tolerance of the maximum
    i = int(np.flatnonzero(vals >= vals.max() - 1e-9)[0])
    return float(vals[i]), np.maximum(xs[i], 0.0)


_COMBOS: dict = {}


def _combos(n_rows, k):
    key = (n_rows, k)
    if key not in _COMBOS:
        _COMBOS[key] = np.array(list(itertools.combinations(range(n_rows), k)), dtype=int).reshape(-1, k)
    return _COMBOS[key]


def _undominated(rows):
    keep = []
    for i, r in enumerate(rows):
        dominated = False
        for j, s in enumerate(rows):
            if i != j and np.all(s >= r) and (np.any(s > r) or j < i):
                dominated = True
                break
        if not dominated:
            keep.append(r)
    return keep


# -- exhaustive optimum --------------------------------------------------------

@dataclass(frozen=True)
class Choice:
    ap: int
    channel: int
    route: tuple


@dataclass
class OracleResult:
    objective_mb: float
    epochs: list = field(default_factory=list)  # per epoch: {flow: (Choice, rate)}
    candidates: int = 0


def simple_routes(topo: MeshTopology, start: int) -> list[tuple]:
    """All loop-free 4-neighbor router paths from ``start`` that stop at the first gateway."""
    gws = set(topo.gateway_ids)
    out = []

    def walk(path):
        v = path[-1]
        if v in gws:
            out.append(tuple(path))
            return
        for r in grid_neighbors(topo, v):
            if r.id not in path:
                walk(path + [r.id])

    walk([start])
    return sorted(out, key=lambda p: (len(p), p))


class _Options:
    """Per-flow choices with their unit footprints; dominated ones dropped."""

    def __init__(self, inst: TinyInstance, model: ThroughputModel):
        self.topo = inst.topology()
        self.geom = Geometry.from_topology(self.topo, 0)
        self.model = model
        self.by_flow = {}
        for t in inst.tasks:
            self.by_flow[t.id] = self._flow_options(t)

    def _flow_options(self, task):
        topo = self.topo
        dev = topo.node_index(task.source)
        mode = Mode.AC24 if topo.device(task.source).above_canopy else Mode.UC24
        opts = []
        for ap in range(topo.num_routers):
            if _tput(self.model, mode, self.geom.dist(dev, ap)) <= 0:
                continue
            routes = simple_routes(topo, ap)
            for ch in CHANNELS_24:
                for route in routes:
                    hops = [HopSpec(dev, ap, mode, 1.0, ch)]
                    hops += [HopSpec(a, b, Mode.AC5, 1.0) for a, b in zip(route, route[1:])]
                    fp = recompute_footprint(hops, self.model, self.geom)
                    opts.append((Choice(ap, ch, route), fp))
        if not opts:
            raise OracleError(f"device {task.source} reaches no router")
        keep = []
        for i, (c, fp) in enumerate(opts):
            if not any(_covers(fp, other) and (j < i or not _covers(other, fp))
                       for j, (_, other) in enumerate(opts) if j != i):
                keep.append((c, fp))
        return keep


def _covers(big: ResourceFootprint, small: ResourceFootprint) -> bool:
    """``small`` is no worse than ``big`` for any set of co-running flows."""
    return bool(np.all(small.units <= big.units + 1e-15) and np.all(big.endpoints | ~small.endpoints))


def search_space(inst: TinyInstance, opts: _Options) -> int:
    ids = [t.id for t in inst.tasks]
    per_subset = sum(math.prod(len(opts.by_flow[f]) for f in sub)
                     for k in range(1, len(ids) + 1) for sub in itertools.combinations(ids, k))
    patterns = math.prod(2 ** len(_eligible(inst, e)) for e in range(inst.horizon))
    return per_subset + patterns


def _eligible(inst, epoch):
    return [t.id for t in inst.tasks if t.request_epoch <= epoch < t.deadline_epoch]


def _canonical_channels(chans) -> bool:
    """Channels appear in first-use order 1, 6, 11; only relative equality matters."""
    seen = []
    for c in chans:
        if c not in seen:
            seen.append(c)
    return seen == list(CHANNELS_24[:len(seen)])


def _subset_value(sub, inst, opts):
    demand = {t.id: t.demand for t in inst.tasks}
    best = (0.0, None)
    for combo in itertools.product(*(opts.by_flow[f] for f in sub)):
        chan = {}
        if any(chan.setdefault(c.ap, c.channel) != c.channel for c, _ in combo):
            continue  # one channel per AP
        if not _canonical_channels([c.channel for c, _ in combo]):
            continue  # relabeling channels maps this combination onto an earlier one
        ends = np.zeros_like(combo[0][1].endpoints)
        for _, fp in combo:
            ends |= fp.endpoints
        coef = np.stack([fp.units[ends] for _, fp in combo])
        val, x = lp_max_sum(coef, [demand[f] for f in sub])
        if val > best[0] + 1e-9:
            best = (val, {f: (c, float(r)) for f, (c, _), r in zip(sub, combo, x)})
    return best


def brute_force_optimal(inst: TinyInstance, model: ThroughputModel | None = None,
                        bound: int = SEARCH_BOUND) -> OracleResult:
    """Maximum delivered data (MB) over all plans of the instance.

    Ties keep the first optimum in enumeration order: subsets and epochs in
    ascending order, choices sorted by (AP, channel, route).
    """
    model = model or fixture_model()
    opts = _Options(inst, model)
    size = search_space(inst, opts)
    if size > bound:
        raise OracleError(f"search space {size} exceeds bound {bound}")
    ids = [t.id for t in inst.tasks]
    value = {(): (0.0, {})}
    for k in range(1, len(ids) + 1):
        for sub in itertools.combinations(ids, k):
            value[sub] = _subset_value(sub, inst, opts)
    duration = {t.id: t.duration for t in inst.tasks}
    per_epoch = []
    for e in range(inst.horizon):
        elig = _eligible(inst, e)
        per_epoch.append([s for k in range(len(elig) + 1) for s in itertools.combinations(elig, k)])
    best_val, best_pick = -1.0, None
    for pick in itertools.product(*per_epoch):
        used = {}
        ok = True
        for sub in pick:
            for f in sub:
                used[f] = used.get(f, 0) + 1
                if used[f] > duration[f]:
                    ok = False
        if not ok:
            continue
        val = math.fsum(value[s][0] for s in pick)
        if val > best_val + 1e-9:
            best_val, best_pick = val, pick
    epochs = [dict(value[s][1] or {}) for s in best_pick]
    return OracleResult(best_val * MB_PER_MBPS_EPOCH, epochs, size)


# -- greedy vs optimum ---------------------------------------------------------

def policy_objective(inst: TinyInstance, policy, model: ThroughputModel | None = None, seed: int = 0,
                     headroom: float = 0.0) -> float:
    """Delivered MB when ``policy`` plans the instance and the simulator runs it without variation.

    Headroom only guards against model deviation, and there is none here, so it defaults to zero.
    """
    from .baselines import make_planner
    from .sim import SimParams, Simulator
    from .te import TeParams

    model = model or fixture_model()
    sc = inst.scenario(seed)
    planner = make_planner(policy, sc.topology, model, TeParams(headroom=headroom), seed=seed)
    params = SimParams(horizon=inst.horizon, seed=seed, spatial_stddev=0.0, temporal_stddev=0.0, dump_ledger=False)
    return Simulator(sc, model, planner, params).run(keep_plans=False).total_mb


def gap_report(seeds, model: ThroughputModel | None = None) -> dict:
    model = model or fixture_model()
    rows = []
    for s in seeds:
        inst = random_tiny(s, model)
        opt = brute_force_optimal(inst, model).objective_mb
        greedy = policy_objective(inst, "cornet", model, s)
        naive = policy_objective(inst, "naive", model, s)
        rows.append({"seed": int(s), "optimal_mb": opt, "cornet_mb": greedy, "naive_mb": naive,
                     "cornet_ratio": greedy / opt if opt > 0 else 1.0,
                     "naive_ratio": naive / opt if opt > 0 else 1.0})
    ratios = np.array([r["cornet_ratio"] for r in rows])
    naive = np.array([r["naive_ratio"] for r in rows])
    return {
        "instances": rows,
        "cornet_ratio_quantiles": {f"p{p}": float(np.percentile(ratios, p)) for p in (0, 10, 50, 90, 100)},
        "naive_ratio_median": float(np.median(naive)),
        "cornet_ratio_median": float(np.median(ratios)),
        "cornet_le_optimal": int(np.sum(ratios <= 1 + 1e-9)),
        "cornet_ge_naive": int(sum(r["cornet_mb"] >= r["naive_mb"] - 1e-9 for r in rows)),
    }


def write_gap_report(path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path
