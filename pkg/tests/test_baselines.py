import numpy as np
import pytest

from cropmesh.baselines import FEATURES, PolicyId, make_planner, naive_plan, parse_policy
from cropmesh.mesh import Device, MeshTopology
from cropmesh.propagation import Mode
from cropmesh.te import MeshGraph, TeParams, World, route
from cropmesh.workload import FlowState, Kind, TaskSpec


def world(topo, tasks, channels):
    return World(topo, {t.id: t for t in tasks}, {t.id: FlowState.fresh(t) for t in tasks}, channels)


@pytest.mark.parametrize("name, pid", [("naive", PolicyId.NaiveMesh), ("CentralRouting", PolicyId.CentralRouting),
                                       ("two-four", PolicyId.TwoFourAboveCanopy), ("HopCount", PolicyId.HopCount)])
def test_parse_policy(name, pid):
    assert parse_policy(name) is pid


def test_unknown_policy():
    with pytest.raises(ValueError, match="unknown policy"):
        parse_policy("ospf")


def test_every_policy_has_features():
    assert set(FEATURES) == set(PolicyId)
    assert FEATURES[PolicyId.CentralRouting].routing == "weighted"
    naive = FEATURES[PolicyId.NaiveMesh]
    assert not (naive.slack_admission or naive.rate_control or naive.ap_selection)


def _setup():
    devs = [Device.static("d", (260, 255)), Device.static("e", (10, 170))]
    topo = MeshTopology(4, 4, gateway_ids=[1], devices=devs)
    tasks = [TaskSpec("f0", Kind.RealTime, "d", 0, 30, demand=15, duration=10),
             TaskSpec("f1", Kind.RealTime, "e", 0, 30, demand=60, duration=10)]
    return topo, tasks


def test_naive_starts_now_nearest_ap_full_demand(model):
    topo, tasks = _setup()
    pl = make_planner("naive", topo, model, seed=3)
    ep = pl.plan(world(topo, tasks, pl.initial_channels.copy()), 0).at(0)
    k = ep.flows["f0"]
    assert k.scheduled and k.rate == 15 and not k.rate_controlled
    assert k.ap == 15 and k.channel == pl.initial_channels[15]
    assert len(k.route) - 1 == 5
    # no rate control: the far flow asks for its whole demand
    assert ep.flows["f1"].rate == 60


def test_hopcount_and_manhattan_lengths_on_empty_net(model):
    topo, tasks = _setup()
    lengths = {}
    for pol in ("hopcount", "manhattan", "cornet"):
        pl = make_planner(pol, topo, model, seed=1)
        k = pl.plan(world(topo, tasks[:1], pl.initial_channels.copy()), 0).at(0).flows["f0"]
        lengths[pol] = len(k.route)
    assert lengths["hopcount"] == lengths["manhattan"] == lengths["cornet"] == 6


def test_naive_deterministic_per_seed(model):
    topo, tasks = _setup()
    pl = make_planner("naive", topo, model, seed=4)
    a = naive_plan(world(topo, tasks, pl.initial_channels.copy()), 0, topo, model, seed=4).to_json()
    b = naive_plan(world(topo, tasks, pl.initial_channels.copy()), 0, topo, model, seed=4).to_json()
    assert a == b


def test_naive_channels_fixed_per_run(model):
    topo, _ = _setup()
    a = make_planner("naive", topo, model, seed=5).initial_channels
    assert np.array_equal(a, make_planner("naive", topo, model, seed=5).initial_channels)
    assert set(a) <= {1, 6, 11}


def test_twofour_uses_24ghz_hops_when_5ghz_is_loaded(model):
    topo, _ = _setup()
    graph = MeshGraph(topo, model)
    committed = np.zeros((topo.num_nodes, 4))
    committed[:16, 0] = 0.85
    path, bands = route(15, 20.0, graph, committed, TeParams(), np.random.default_rng(0),
                        hop_channels=np.full(16, 6))
    assert len(bands) == len(path) - 1 and set(bands) == {2}
    # without aligned channels only 5GHz hops exist
    mixed = np.array([1, 6] * 8)
    _, bands = route(15, 20.0, graph, committed, TeParams(), np.random.default_rng(0), hop_channels=mixed)
    assert 0 in bands
    assert model.cutoff(Mode.AC24) > model.cutoff(Mode.AC5)
