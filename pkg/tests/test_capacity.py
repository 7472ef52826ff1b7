import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cropmesh.capacity import (CapacityError, CoefficientCache, ContentionLedger, Geometry, HopSpec,
                               ResourceFootprint, channel_key, delta, direct_units, flow_footprint,
                               interference_units, ledger_check, path_coefficients, write_ledger_csv)
from cropmesh.maxmin import max_min_fair
from cropmesh.mesh import Device, MeshTopology
from cropmesh.propagation import Mode, ModeFit, ThroughputModel

from conftest import line_positions


def test_channel_keys():
    assert channel_key(Mode.AC5) == 0
    assert [channel_key(Mode.UC24, c) for c in (1, 6, 11)] == [1, 2, 3]
    with pytest.raises(CapacityError):
        channel_key(Mode.UC24, 3)


def test_direct_units_examples(model):
    geom = Geometry(line_positions([0, 80]))
    t80 = float(model.throughput(Mode.UC24, 80))
    assert direct_units(HopSpec(0, 1, Mode.UC24, t80, 1), model, geom) == pytest.approx(1.0)
    assert direct_units(HopSpec(0, 1, Mode.UC24, 0.0, 1), model, geom) == 0.0
    # exact 7.5 Mbps at 80 m
    anchored = ThroughputModel({Mode.UC24: ModeFit(7.5 + 2 * math.log(80), -2.0, 500.0)})
    assert direct_units(HopSpec(0, 1, Mode.UC24, 5.0, 1), anchored, geom) == pytest.approx(2 / 3)


def test_out_of_range_hop(model):
    geom = Geometry(line_positions([0, 300]))
    with pytest.raises(CapacityError, match="beyond"):
        direct_units(HopSpec(0, 1, Mode.UC24, 1.0, 1), model, geom)


def test_interference_hand_substitution(toy_model):
    e = math.e
    geom = Geometry(line_positions([0, e**2, -e**4]))
    hop = HopSpec(0, 1, Mode.AC5, 4.0)
    assert direct_units(hop, toy_model, geom) == pytest.approx(0.5)
    assert delta(toy_model, Mode.AC5, e**2, e**4) == pytest.approx(0.5)
    assert interference_units(hop, 2, toy_model, geom) == pytest.approx(0.25)


def test_interference_near_and_far(model):
    geom = Geometry(line_positions([0, 90, 40, 400]))
    hop = HopSpec(0, 1, Mode.AC5, 20.0)
    # bystander closer than the receiver takes the full direct charge
    assert interference_units(hop, 2, model, geom) == direct_units(hop, model, geom)
    assert interference_units(hop, 3, model, geom) == 0.0
    assert interference_units(hop, 1, model, geom) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(5, 190), st.floats(0.1, 400), st.floats(0.1, 400))
def test_delta_range_and_monotone(model, d_ab, c1, c2):
    lo, hi = sorted((c1, c2))
    a, b = delta(model, Mode.AC5, d_ab, lo), delta(model, Mode.AC5, d_ab, hi)
    assert 0 <= b <= a <= 1
    if lo <= d_ab:
        assert a == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.1, 5))
def test_footprint_linear_in_rate(model, rate, k):
    geom = Geometry(line_positions([0, 60, 150, 240, 100]), radio5=[1, 1, 1, 1, 0])
    path = [HopSpec(4, 1, Mode.UC24, rate, 6), HopSpec(1, 2, Mode.AC5, rate), HopSpec(2, 3, Mode.AC5, rate)]
    fp = flow_footprint(path, model, geom)
    fpk = flow_footprint([h.at_rate(rate * k) for h in path], model, geom)
    assert np.allclose(fpk.units, k * fp.units, rtol=1e-12, atol=0)
    assert np.array_equal(fp.endpoints, fpk.endpoints)
    # a device without a 5GHz radio is never charged on the 5GHz column
    assert fp.units[4, 0] == 0


def test_single_hop_full_rate_touches_only_endpoints(model):
    geom = Geometry(line_positions([0, 90]))
    t = float(model.throughput(Mode.AC5, 90))
    fp = flow_footprint([HopSpec(0, 1, Mode.AC5, t)], model, geom)
    assert fp.items() == {(0, "5"): pytest.approx(1.0), (1, "5"): pytest.approx(1.0)}
    assert fp[0, "5"] == pytest.approx(1.0)


def test_path_must_connect(model):
    geom = Geometry(line_positions([0, 90, 180]))
    with pytest.raises(CapacityError, match="breaks"):
        flow_footprint([HopSpec(0, 1, Mode.AC5, 1), HopSpec(0, 2, Mode.AC5, 1)], model, geom)
    with pytest.raises(CapacityError, match="channel"):
        flow_footprint([HopSpec(2, 0, Mode.UC24, 1, 6)], model, geom, channels=[1, 1])


def _chain_closed_form(model, n, spacing):
    # units per Mbps at every node: 1/T per hop it ends, delta/T per hop it overhears
    t = float(model.throughput(Mode.AC5, spacing))
    load = []
    for v in range(n + 1):
        s = 0.0
        for i in range(n):
            if v in (i, i + 1):
                s += 1.0
            else:
                s += min(1.0, float(model.throughput(Mode.AC5, abs(v - i) * spacing)) / t)
        load.append(s / t)
    return 1.0 / max(load)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_chain_coefficients_match_closed_form(model, n):
    geom = Geometry(line_positions(np.arange(n + 1) * 90.0))
    fp = path_coefficients([HopSpec(i, i + 1, Mode.AC5) for i in range(n)], model, geom)
    rate = max_min_fair(fp.units[fp.endpoints][None, :], 1.0, 1e6)[0]
    assert rate == pytest.approx(_chain_closed_form(model, n, 90.0), rel=1e-12)


def test_four_hop_chain_near_a_third(model):
    t = float(model.throughput(Mode.AC5, 90))
    assert 0.28 <= _chain_closed_form(model, 4, 90.0) / t <= 0.38


def test_two_flows_saturating_router_sum_to_one(model):
    geom = Geometry(line_positions([0, 50, -70]))
    fps = [path_coefficients([HopSpec(s, 0, Mode.UC24, 0, 1)], model, geom) for s in (1, 2)]
    coef = np.stack([fp.units[:, 1] for fp in fps])
    x = max_min_fair(coef, 1.0, [1e6, 1e6])
    direct = sum(x[i] / float(model.throughput(Mode.UC24, d)) for i, d in enumerate((50, 70)))
    assert direct == pytest.approx(1.0, abs=1e-9)


def test_ledger_add_remove_reversible(model):
    geom = Geometry(line_positions([0, 90, 180, 60]), radio5=[1, 1, 1, 0])
    a = flow_footprint([HopSpec(3, 1, Mode.UC24, 3, 1), HopSpec(1, 0, Mode.AC5, 3)], model, geom)
    b = flow_footprint([HopSpec(2, 1, Mode.AC5, 7.3), HopSpec(1, 0, Mode.AC5, 7.3)], model, geom)
    solo = ContentionLedger(4)
    solo.add("b", b)
    led = ContentionLedger(4)
    led.add("a", a)
    led.add("b", b)
    assert len(led) == 2 and "a" in led
    led.remove("a")
    assert np.array_equal(led.committed, solo.committed)
    assert np.array_equal(led.constrained, solo.constrained)
    with pytest.raises(KeyError):
        led.add("b", b)


def test_ledger_check_reports_over_budget(tmp_path):
    led = ContentionLedger(2)
    assert ledger_check(led, 0.1) == []
    fp = ResourceFootprint.zeros(2)
    fp.units[0, 0] = 0.95
    fp.endpoints[0, 0] = True
    fp.units[1, 0] = 2.0  # interference only, not constrained
    led.add("f", fp)
    assert ledger_check(led, 0.1) == [(0, "5", 0.95)]
    assert ledger_check(led, 0.0) == []
    write_ledger_csv(tmp_path / "l.csv", [(0, n, b, v) for n, b, v in led.rows()])
    assert (tmp_path / "l.csv").read_text().splitlines()[1] == "0,0,5,0.95"


def test_cache_matches_direct_computation(model):
    devs = [Device.static("a", (30, 20)), Device("m", ((0, 0, 0), (170, 0, 4)))]
    topo = MeshTopology(2, 3, devices=devs)
    cache = CoefficientCache(model, topo)
    for epoch in (0, 2, 4):
        geom = cache.geometry(epoch)
        for dev in (6, 7):
            hops = [HopSpec(dev, 1, Mode.UC24, 0, 6), HopSpec(1, 0, Mode.AC5), HopSpec(0, 3, Mode.AC5)]
            want = path_coefficients(hops, model, Geometry.from_topology(topo, epoch))
            got = cache.footprint(hops, geom)
            assert np.allclose(got.units, want.units, rtol=1e-13, atol=0)
            assert np.array_equal(got.endpoints, want.endpoints)
            scaled = cache.footprint(hops, geom, [0.5, 1.0, 2.0])
            want = path_coefficients(hops, model, Geometry.from_topology(topo, epoch), [0.5, 1.0, 2.0])
            assert np.allclose(scaled.units, want.units, rtol=1e-13, atol=0)
