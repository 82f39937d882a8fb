"""Comparison schedulers: spread-style default placement and traffic-score
node selection.

``default_spread`` mimics an orchestrator that balances load at deploy time
and never reschedules. ``netmarks_place`` relocates one target service at a
time to the node whose resident services exchange the most traffic with it,
subject to the element-wise capacity check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import (
    NodeId,
    NodeSpec,
    Placement,
    ResourceVector,
    ServiceSpec,
    TrafficStressGraph,
)

log = logging.getLogger(__name__)


class NoFeasibleNodeError(RuntimeError):
    """No node has spare capacity for the target service."""


@dataclass(frozen=True)
class NodeScore:
    node: NodeId
    score: float


def default_spread(
    services: list[ServiceSpec], nodes: list[NodeSpec], seed: int = 0
) -> Placement:
    """Least-loaded-first assignment in service index order.

    Each service goes to the node with the smallest aggregate assigned
    demand (amounts summed across resource kinds), ties broken by node
    index. ``seed`` is accepted for interface stability but the rule is
    deterministic and never uses it.
    """
    if not nodes:
        raise ValueError("default_spread needs at least one node")
    loads = np.zeros(len(nodes))
    assignment = []
    for svc in services:
        chosen = int(np.argmin(loads))
        assignment.append(chosen)
        loads[chosen] += svc.placement_demand.total()
    return Placement(tuple(assignment), len(nodes))


def _node_ids(num_nodes: int, nodes: list[NodeSpec] | None) -> list[NodeId]:
    if nodes is not None:
        return [n.id for n in nodes]
    return [NodeId(i, f"node{i}") for i in range(num_nodes)]


def netmarks_score(
    target,
    T: TrafficStressGraph,
    P: Placement,
    nodes: list[NodeSpec] | None = None,
) -> list[NodeScore]:
    """Per-node sum of traffic flows between the target and resident services."""
    t = target.index if hasattr(target, "index") else int(target)
    scores = np.zeros(P.num_nodes)
    for s in range(len(P)):
        if s == t:
            continue
        scores[P[s]] += T[t, s] + T[s, t]
    ids = _node_ids(P.num_nodes, nodes)
    return [NodeScore(ids[n], float(scores[n])) for n in range(P.num_nodes)]


def netmarks_place(
    target,
    T: TrafficStressGraph,
    P: Placement,
    cap: list[ResourceVector],
    res: list[ResourceVector],
) -> int:
    """Pick the hosting node for one target service by traffic score.

    Only nodes that can absorb the target without violating capacity are
    considered. The highest score wins; when the current node ties for best
    the service stays put, other ties resolve to the lowest node index. If
    every score is zero the least-loaded feasible node is used instead.
    """
    t = target.index if hasattr(target, "index") else int(target)
    p = P.num_nodes

    loads = [ResourceVector.zeros(res[0].kinds) for _ in range(p)]
    for s in range(len(P)):
        if s == t:
            continue
        loads[P[s]] = loads[P[s]].add(res[s])
    feasible = [n for n in range(p) if loads[n].add(res[t]).leq(cap[n])]
    if not feasible:
        raise NoFeasibleNodeError(
            f"no node can host service {t} within capacity"
        )

    scores = np.zeros(p)
    for s in range(len(P)):
        if s == t:
            continue
        scores[P[s]] += T[t, s] + T[s, t]

    if all(scores[n] == 0 for n in feasible):
        return min(feasible, key=lambda n: (loads[n].total(), n))

    best_score = max(scores[n] for n in feasible)
    tied = [n for n in feasible if scores[n] == best_score]
    if P[t] in tied:
        return P[t]
    return min(tied)
