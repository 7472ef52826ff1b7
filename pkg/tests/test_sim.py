import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmesh.baselines import make_planner
from cropmesh.capacity import Geometry, HopSpec, path_coefficients
from cropmesh.maxmin import is_max_min_fair
from cropmesh.mesh import Device, MeshTopology
from cropmesh.propagation import Mode
from cropmesh.sim import SimParams, Simulator, chain_throughput
from cropmesh.te import EpochPlan, FlowKnobs, Planner, flow_hops
from cropmesh.workload import Kind, Scenario, TaskSpec

QUIET = dict(spatial_stddev=0.0, temporal_stddev=0.0, dump_ledger=False)


def make_sim(model, devices, tasks, rows=1, cols=2, gateways=(0,), horizon=10, sharing="device", policy="cornet"):
    topo = MeshTopology(rows, cols, gateway_ids=list(gateways), devices=devices)
    sc = Scenario("t", topo, tasks, horizon)
    pl = make_planner(policy, topo, model)
    pl.initial_channels[:] = 1  # hand-built plans below use channel 1
    return Simulator(sc, model, pl, SimParams(horizon=horizon, sharing=sharing, **QUIET))


def rt(i, src, demand=10.0, duration=5, deadline=10):
    return TaskSpec(f"f{i}", Kind.RealTime, src, 0, deadline, demand=demand, duration=duration)


def knobs(fid, rate, ap, channel, route, controlled=True):
    return FlowKnobs(fid, "scheduled", rate, ap, channel, tuple(route), (), controlled)


def test_params_validation():
    assert SimParams().switch_loss == pytest.approx(5.2 / 60)
    with pytest.raises(ValueError):
        SimParams(channel_switch_penalty_s=60)
    with pytest.raises(ValueError):
        SimParams(sharing="fifo")


def test_single_flow_delivered_equals_assigned(model):
    sim = make_sim(model, [Device.static("d", (30, 0))], [rt(0, "d")])
    ep = EpochPlan(0, {"f0": knobs("f0", 8.0, 0, 1, [0])}, (1, 1))
    res = sim.step(ep, 0)
    assert res.delivered["f0"] == 8.0 and res.assigned["f0"] == 8.0
    assert sim.states["f0"].remaining == 4


def test_plan_epoch_mismatch(model):
    sim = make_sim(model, [Device.static("d", (30, 0))], [rt(0, "d")])
    with pytest.raises(ValueError, match="epoch"):
        sim.step(EpochPlan(3, {}, (1, 1)), 0)


@pytest.mark.parametrize("sharing", ["device", "global"])
def test_symmetric_saturation_halves(model, sharing):
    devs = [Device.static("a", (0, 40)), Device.static("b", (0, -40))]
    sim = make_sim(model, devs, [rt(0, "a", 50.0), rt(1, "b", 50.0)], sharing=sharing)
    ep = EpochPlan(0, {f: knobs(f, 50.0, 0, 1, [0], False) for f in ("f0", "f1")}, (1, 1))
    res = sim.step(ep, 0)
    t = float(model.throughput(Mode.UC24, 40))
    assert res.delivered["f0"] == pytest.approx(t / 2) and res.delivered["f1"] == pytest.approx(t / 2)


def test_channel_switch_penalty_exact(model):
    sim = make_sim(model, [Device.static("d", (30, 0))], [rt(0, "d", 12.0)])
    sim._prev_channels = np.array([6, 1])
    res = sim.step(EpochPlan(0, {"f0": knobs("f0", 12.0, 0, 1, [0])}, (1, 1)), 0)
    assert res.delivered["f0"] == 12.0 * (1 - 5.2 / 60)
    assert res.delivered["f0"] == pytest.approx(10.96, abs=0.005)
    # same channel next epoch: no loss
    res = sim.step(EpochPlan(1, {"f0": knobs("f0", 12.0, 0, 1, [0])}, (1, 1)), 1)
    assert res.delivered["f0"] == 12.0


def test_empty_scenario_all_zero(model):
    sim = make_sim(model, [], [], horizon=6)
    rep = sim.run()
    assert rep.total_mb == 0 and rep.rows == [] and rep.summary()["realtime_flows"] == 0


def test_single_hop_integral(model):
    # 10 Mbps for 5 one-minute epochs is 375 MB
    sim = make_sim(model, [Device.static("d", (30, 0))], [rt(0, "d", 10.0, 5, 10)], horizon=10)
    rep = sim.run()
    assert rep.totals_mb["realtime"] == pytest.approx(10.0 * 5 * 60 / 8)
    assert rep.normalized["f0"] == pytest.approx(1.0)
    assert rep.violations == []


def _scenario(seed, model):
    rng = np.random.default_rng(seed)
    devs, tasks = [], []
    for i in range(int(rng.integers(2, 7))):
        devs.append(Device.static(f"d{i}", rng.uniform(0, 180, 2)))
        dur = int(rng.integers(2, 6))
        req = int(rng.integers(0, 5))
        tasks.append(TaskSpec(f"f{i}", Kind.RealTime, f"d{i}", req, req + dur + int(rng.integers(0, 3)),
                              demand=float(rng.uniform(5, 40)), duration=dur))
    devs.append(Device("m", ((0.0, 0.0, 0.0), (180.0, 180.0, 12.0))))
    tasks.append(TaskSpec("c0", Kind.DataCollection, "m", 0, 10**6, data_volume=300.0))
    topo = MeshTopology(3, 3, gateway_ids=[1], devices=devs)
    return Scenario("r", topo, tasks, 14, seed)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["naive", "cornet"]), st.sampled_from(["device", "global"]))
def test_conservation_and_feasibility(model, seed, policy, sharing):
    sc = _scenario(seed, model)
    pl = make_planner(policy, sc.topology, model, seed=seed)
    sim = Simulator(sc, model, pl, SimParams(horizon=14, seed=seed, sharing=sharing, dump_ledger=True))
    rep = sim.run()
    for kind in ("realtime", "collection"):
        rows = [d for f, _, _, d in rep.rows if rep.kinds[f] == kind]
        assert rep.totals_mb[kind] == pytest.approx(sum(rows) * 60 / 8, rel=1e-12, abs=1e-12)
    assert all(d <= a + 1e-9 or not sim.planner.features.rate_control for _, _, a, d in rep.rows)
    assert all(v <= 1.0 + 1e-9 for *_, v in rep.ledger_rows)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_global_sharing_is_max_min(model, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    devs = [Device.static(f"d{i}", rng.uniform(0, 90, 2)) for i in range(n)]
    tasks = [rt(i, f"d{i}", float(rng.uniform(5, 60))) for i in range(n)]
    sim = make_sim(model, devs, tasks, rows=2, cols=2, sharing="global")
    flows, fps = {}, []
    for i, t in enumerate(tasks):
        ap = int(rng.integers(4))
        route = [ap] if ap == 0 else ([ap, 0] if ap in (1, 2) else [3, 1, 0])
        d = float(np.hypot(*(np.array(devs[i].position(0)) - np.array(sim.topo.routers[ap].position))))
        if model.throughput(Mode.UC24, d) <= 0:
            continue
        flows[t.id] = knobs(t.id, t.demand, ap, 1, route, False)
        hops = flow_hops(sim.topo, 4 + i, ap, 1, route)
        fps.append((t.id, t.demand, path_coefficients(hops, model, Geometry.from_topology(sim.topo))))
    if not fps:
        return
    res = sim.step(EpochPlan(0, flows, (1, 1, 1, 1)), 0)
    mask = np.zeros_like(fps[0][2].endpoints)
    for *_, fp in fps:
        mask |= fp.endpoints
    coef = np.stack([fp.units[mask] for *_, fp in fps])
    x = np.array([res.delivered[f] for f, _, _ in fps])
    assert is_max_min_fair(coef, 1.0, [d for _, d, _ in fps], x)


def test_reports_byte_identical(model, tmp_path):
    for out in ("a", "b"):
        sc = _scenario(5, model)
        pl = make_planner("cornet", sc.topology, model, seed=5)
        Simulator(sc, model, pl, SimParams(horizon=14, seed=5)).run().write(tmp_path / out)
    for name in ("flows.csv", "summary.json", "ledger.csv", "plans.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flows_csv_header(model, tmp_path):
    sim = make_sim(model, [Device.static("d", (30, 0))], [rt(0, "d")], horizon=3)
    sim.run().write(tmp_path)
    lines = (tmp_path / "flows.csv").read_text().splitlines()
    assert lines[0] == "flow_id,epoch,assigned_mbps,delivered_mbps"
    assert lines[1].startswith("f0,0,")


def test_expired_flow_is_violation(model):
    # demand far above what the device can send: still runs, but a 1-epoch window with 3 epochs of work expires
    devs = [Device.static("d", (30, 0)), Device.static("e", (500, 500))]
    tasks = [rt(0, "d", 10.0, 3, 3), TaskSpec("f1", Kind.RealTime, "e", 0, 4, demand=5, duration=2)]
    sim = make_sim(model, devs, tasks, horizon=6)
    rep = sim.run()
    assert "f1" in rep.violations and "f0" not in rep.violations
    assert rep.waiting["f1"] == 6


def test_chain_examples(model):
    t = float(model.throughput(Mode.AC5, 90))
    assert chain_throughput(1, 90, model) == pytest.approx(t)
    assert chain_throughput(2, 90, model) / chain_throughput(1, 90, model) == pytest.approx(0.5, abs=1e-6)
    assert 0.28 <= chain_throughput(4, 90, model) / t <= 0.38
    rates = [chain_throughput(n, 90, model) for n in range(1, 9)]
    assert all(b <= a + 1e-12 for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        chain_throughput(0, 90, model)
