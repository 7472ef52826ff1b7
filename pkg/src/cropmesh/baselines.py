"""Comparison policies, each a feature subset of the full planner."""

from __future__ import annotations

import enum

from .propagation import ThroughputModel
from .mesh import MeshTopology
from .te import PolicyFeatures, Planner, TeParams


class PolicyId(enum.Enum):
    NaiveMesh = "naive"
    FlowSchedRate = "flowsched"
    ApSelect = "apselect"
    CentralRouting = "cornet"
    HopCount = "hopcount"
    Manhattan = "manhattan"
    TwoFourAboveCanopy = "twofour"


FEATURES = {
    # start on request, nearest AP on a fixed random channel, random min-hop path, no rate control
    PolicyId.NaiveMesh: PolicyFeatures("naive", slack_admission=False, rate_control=False,
                                       ap_selection=False, routing="random"),
    PolicyId.FlowSchedRate: PolicyFeatures("flowsched", ap_selection=False, routing="random"),
    PolicyId.ApSelect: PolicyFeatures("apselect", routing="random"),
    PolicyId.CentralRouting: PolicyFeatures("cornet"),
    # deterministic BFS order instead of a random pick among min-hop paths
    PolicyId.HopCount: PolicyFeatures("hopcount", routing="lowest"),
    PolicyId.Manhattan: PolicyFeatures("manhattan", routing="random"),
    PolicyId.TwoFourAboveCanopy: PolicyFeatures("twofour", twofour=True),
}

ALIASES = {"centralrouting": PolicyId.CentralRouting, "naivemesh": PolicyId.NaiveMesh,
           "flowschedrate": PolicyId.FlowSchedRate, "twofourabovecanopy": PolicyId.TwoFourAboveCanopy}


def parse_policy(name) -> PolicyId:
    if isinstance(name, PolicyId):
        return name
    key = str(name).strip().lower().replace("-", "").replace("_", "")
    if key in ALIASES:
        return ALIASES[key]
    for pid in PolicyId:
        if pid.value == key:
            return pid
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(p.value for p in PolicyId)}")


def make_planner(policy, topo: MeshTopology, model: ThroughputModel, params: TeParams = TeParams(),
                 seed: int = 0) -> Planner:
    return Planner(topo, model, params, FEATURES[parse_policy(policy)], seed)


def naive_plan(world, now, topo, model, params=TeParams(), seed=0):
    return make_planner(PolicyId.NaiveMesh, topo, model, params, seed).plan(world, now)


def hopcount_plan(world, now, topo, model, params=TeParams(), seed=0):
    return make_planner(PolicyId.HopCount, topo, model, params, seed).plan(world, now)


def twofour_plan(world, now, topo, model, params=TeParams(), seed=0):
    return make_planner(PolicyId.TwoFourAboveCanopy, topo, model, params, seed).plan(world, now)
