"""Discrete-time simulation of planned flows on the two-tier mesh.

Each epoch the planned flows try to send at their assigned rates.  Link
throughputs are perturbed by the variation stream, and contended resources
are shared max-min fairly in Mbps with one unit per (node, channel).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capacity import BAND_LABELS, KEY_5, NUM_KEYS, Geometry, HopSpec, path_coefficients
from .maxmin import max_min_fair, per_device_fair
from .mesh import MeshTopology
from .propagation import Mode, ThroughputModel, VariationModel
from .te import EpochPlan, FlowKnobs, Planner, TeParams, World, flow_hops
from .workload import FlowState, Scenario, Status

MB_PER_MBPS_EPOCH = 1.0 / 8.0


@dataclass(frozen=True)
class SimParams:
    epoch_length_s: float = 60.0
    horizon: int = 250
    channel_switch_penalty_s: float = 5.2
    control_propagation_s: float = 1.3
    seed: int = 0
    spatial_stddev: float = 0.30
    temporal_stddev: float = 0.10
    dump_ledger: bool = True
    sharing: str = "device"  # "device": each (node, channel) splits alone; "global": network-wide max-min

    def __post_init__(self):
        if self.epoch_length_s <= 0 or self.horizon < 0:
            raise ValueError("epoch length must be positive and horizon non-negative")
        if not 0 < self.channel_switch_penalty_s < self.epoch_length_s:
            raise ValueError("channel switch penalty must be positive and shorter than an epoch")
        if self.sharing not in ("device", "global"):
            raise ValueError(f"unknown sharing mode {self.sharing!r}")
        if self.control_propagation_s < 0:
            raise ValueError("control propagation delay must be non-negative")

    @property
    def switch_loss(self) -> float:
        return self.channel_switch_penalty_s / self.epoch_length_s


@dataclass
class SimReport:
    rows: list = field(default_factory=list)  # (flow_id, epoch, assigned, delivered)
    totals_mb: dict = field(default_factory=dict)
    normalized: dict = field(default_factory=dict)
    waiting: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    ledger_rows: list = field(default_factory=list)  # (epoch, node, band, committed)
    plans: list = field(default_factory=list)
    kinds: dict = field(default_factory=dict)  # flow_id -> "realtime" | "collection"
    epoch_s: float = 60.0

    @property
    def total_mb(self) -> float:
        return math.fsum(self.totals_mb.values())

    def realtime_normalized(self) -> np.ndarray:
        return np.array([self.normalized[k] for k in sorted(self.normalized)])

    def summary(self) -> dict:
        norm = self.realtime_normalized()
        q = {f"p{int(p)}": (float(np.percentile(norm, p)) if len(norm) else 0.0) for p in (10, 25, 50, 75, 90)}
        return {
            "total_mb": self.total_mb,
            "totals_mb": dict(sorted(self.totals_mb.items())),
            "realtime_normalized_mean": float(norm.mean()) if len(norm) else 0.0,
            "realtime_normalized_quantiles": q,
            "realtime_flows": len(norm),
            "mean_wait_epochs": float(np.mean(list(self.waiting.values()))) if self.waiting else 0.0,
            "violations": sorted(self.violations),
        }

    def write(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "flows.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["flow_id", "epoch", "assigned_mbps", "delivered_mbps"])
            for fid, epoch, assigned, delivered in self.rows:
                w.writerow([fid, epoch, repr(float(assigned)), repr(float(delivered))])
        (run_dir / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        if self.ledger_rows:
            with open(run_dir / "ledger.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "node", "band", "committed_fraction"])
                for row in self.ledger_rows:
                    w.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        if self.plans:
            (run_dir / "plans.json").write_text(json.dumps(self.plans, sort_keys=True) + "\n")
        return run_dir


@dataclass
class StepResult:
    assigned: dict
    delivered: dict
    committed: np.ndarray
    constrained: np.ndarray


class Simulator:
    def __init__(self, scenario: Scenario, model: ThroughputModel, planner: Planner,
                 params: SimParams = SimParams(), te_params: TeParams | None = None):
        self.scenario = scenario
        self.topo: MeshTopology = scenario.topology
        self.model = model
        self.planner = planner
        self.params = params
        self.te_params = te_params or planner.params
        self.cache = planner.cache
        self.variation = VariationModel(params.spatial_stddev, params.temporal_stddev, params.seed)
        self.tasks = {t.id: t for t in scenario.tasks}
        self.states = {t.id: FlowState.fresh(t) for t in scenario.tasks}
        self.world = World(self.topo, self.tasks, self.states, planner.initial_channels.copy(),
                           horizon=params.horizon)
        self._prev_channels = np.array(self.world.router_channels)
        self._prev_dev_channel: dict = {}
        self._was_active: set = set()

    def step(self, ep: EpochPlan, epoch: int) -> StepResult:
        """Deliver one epoch of ``ep``; updates flow states in place."""
        if ep.epoch != epoch:
            raise ValueError(f"plan is for epoch {ep.epoch}, not {epoch}")
        p = self.params
        geom = self.cache.geometry(epoch)
        live = []
        for k in sorted(ep.scheduled(), key=lambda k: k.flow_id):
            st = self.states.get(k.flow_id)
            if st is None or st.finished or self.tasks[k.flow_id].request_epoch > epoch:
                continue
            task = self.tasks[k.flow_id]
            cap = k.rate
            if not task.is_realtime:
                cap = min(cap, st.remaining / (MB_PER_MBPS_EPOCH * p.epoch_length_s))
            if cap <= 0:
                continue
            dev = self.topo.node_index(task.source)
            hops = flow_hops(self.topo, dev, k.ap, k.channel, k.route, k.bands)
            scales = self._scales(task.source, hops, epoch)
            live.append((k, task, st, cap, self.cache.footprint(hops, geom, scales)))
        n = self.topo.num_nodes
        committed = np.zeros((n, NUM_KEYS))
        constrained = np.zeros((n, NUM_KEYS), bool)
        for *_, fp in live:
            constrained |= fp.endpoints
        if live:
            coef = np.stack([fp.units[constrained] for *_, fp in live])
            share = per_device_fair if p.sharing == "device" else max_min_fair
            rates = share(coef, 1.0, np.array([c for _, _, _, c, _ in live]))
        else:
            rates = np.zeros(0)
        assigned, delivered = {}, {}
        active_now = set()
        for (k, task, st, cap, fp), x in zip(live, rates):
            committed += x * fp.units
            got = float(x)
            if self._switched(k, task, ep):
                got *= 1.0 - p.switch_loss
            assigned[k.flow_id] = k.rate
            delivered[k.flow_id] = got
            self._account(task, st, epoch, k.rate, got)
            if got > 0:
                active_now.add(k.flow_id)
        for fid, st in self.states.items():
            task = self.tasks[fid]
            if st.finished or task.request_epoch > epoch:
                continue
            if st.status is Status.Active and fid not in active_now:
                st.status = Status.Paused
            if epoch + 1 >= task.deadline_epoch and st.remaining > 1e-12:
                st.status = Status.Expired
        self._was_active = active_now
        self._prev_channels = np.array(ep.router_channels)
        self._prev_dev_channel = {self.tasks[f].source: ep.flows[f].channel for f in active_now}
        self.world.router_channels = np.array(ep.router_channels)
        self.world.device_channels = {self.tasks[f].source: ep.flows[f].channel
                                      for f in active_now if self.tasks[f].is_realtime}
        self.world.knobs = {f: k for f, k in ep.flows.items() if f in active_now}
        return StepResult(assigned, delivered, committed, constrained)

    def _scales(self, device_id, hops, epoch):
        out = [float(self.variation.spatial([device_id], epoch)[0])]
        if len(hops) > 1:
            out.extend(self.variation.temporal([h.src for h in hops[1:]], epoch).tolist())
        return out

    def _switched(self, k: FlowKnobs, task, ep: EpochPlan) -> bool:
        routers = [k.ap]
        for (a, b), key in zip(zip(k.route, k.route[1:]), k.hop_keys()):
            if key != KEY_5:
                routers += [a, b]
        if any(ep.router_channels[r] != self._prev_channels[r] for r in routers):
            return True
        prev = self._prev_dev_channel.get(task.source)
        return k.flow_id in self._was_active and prev is not None and prev != k.channel

    def _account(self, task, st: FlowState, epoch, assigned, got):
        p = self.params
        st.history.append((epoch, assigned, got))
        if got <= 0:
            return
        if st.first_active is None:
            st.first_active = epoch
        st.status = Status.Active
        st.last_rate = got
        st.active_epochs += 1
        if task.is_realtime:
            st.remaining -= 1
            if st.remaining <= 0:
                st.remaining = 0
                st.status = Status.Done
        else:
            st.remaining -= got * p.epoch_length_s * MB_PER_MBPS_EPOCH
            if st.remaining <= 1e-9:
                st.remaining = 0.0
                st.status = Status.Done

    def run(self, keep_plans: bool = True) -> SimReport:
        p, tp = self.params, self.te_params
        report = SimReport(epoch_s=p.epoch_length_s)
        names = [self.topo.node_name(i) for i in range(self.topo.num_nodes)]
        plan = None
        for epoch in range(p.horizon):
            if plan is None or epoch - plan.start >= len(plan.epochs):
                plan = self.planner.plan(self.world, epoch)
                if keep_plans:
                    report.plans.append({"epoch": epoch, "epochs": plan.to_json()})
            ep = plan.at(epoch)
            res = self.step(ep, epoch)
            for fid in sorted(res.assigned):
                report.rows.append((fid, epoch, res.assigned[fid], res.delivered[fid]))
            if p.dump_ledger:
                for node, key in zip(*np.nonzero(res.constrained)):
                    report.ledger_rows.append((epoch, names[node], BAND_LABELS[key], float(res.committed[node, key])))
        return self._finish(report)

    def _finish(self, report: SimReport) -> SimReport:
        p = self.params
        per_kind: dict = {}
        for fid, epoch, assigned, delivered in report.rows:
            per_kind.setdefault(self.tasks[fid].kind.value, []).append(delivered * p.epoch_length_s * MB_PER_MBPS_EPOCH)
        report.kinds = {fid: t.kind.value for fid, t in self.tasks.items()}
        report.totals_mb = {k.value: 0.0 for k in {t.kind for t in self.tasks.values()}}
        report.totals_mb.update({k: math.fsum(v) for k, v in per_kind.items()})
        for fid, task in sorted(self.tasks.items()):
            st = self.states[fid]
            if task.is_realtime:
                samples = [d / task.demand for _, _, d in st.history if d > 0]
                report.normalized[fid] = float(np.mean(samples)) if samples else 0.0
                report.waiting[fid] = (st.first_active if st.first_active is not None else p.horizon) - task.request_epoch
                if st.status is not Status.Done and task.deadline_epoch <= p.horizon:
                    report.violations.append(fid)
            elif st.status is Status.Expired:
                report.violations.append(fid)
        return report


def run(scenario: Scenario, planner: Planner, params: SimParams = SimParams(), keep_plans: bool = True) -> SimReport:
    return Simulator(scenario, planner.model, planner, params).run(keep_plans)


def chain_throughput(n_hops: int, spacing: float, model: ThroughputModel, mode: Mode = Mode.AC5) -> float:
    """Saturating end-to-end rate of one flow over ``n_hops`` equally spaced hops."""
    if n_hops < 1:
        raise ValueError("need at least one hop")
    geom = Geometry(np.column_stack([np.arange(n_hops + 1) * spacing, np.zeros(n_hops + 1)]))
    hops = [HopSpec(i, i + 1, mode) for i in range(n_hops)]
    fp = path_coefficients(hops, model, geom)
    coef = fp.units[fp.endpoints][None, :]
    ceiling = float(model.throughput(mode, spacing)) * 10
    return float(max_min_fair(coef, 1.0, ceiling)[0])
