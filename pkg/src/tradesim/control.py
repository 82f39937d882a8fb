"""Adaptive QoS control loop: trigger detection, policy dispatch, migration
plan filtering.

Every poll period the loop inspects a sliding latency window. When the
windowed mean exceeds the target it asks the active policy for a new
placement, strips services that already sit on the proposed node or must
not move, and emits an ordered migration plan. A cooldown of one window
length follows every executed plan so the next decision sees metrics that
reflect the new placement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .baselines import NoFeasibleNodeError, netmarks_place
from .mapper import solve_placement
from .model import (
    CostWeights,
    DelayMatrix,
    NodeId,
    NodeSpec,
    Placement,
    ResourceVector,
    ServiceId,
    ServiceSpec,
    StructuralError,
    TrafficStressGraph,
)
from .traffic import sort_pairs

log = logging.getLogger(__name__)

POLICIES = ("kdefault", "netmarks", "trade")


@dataclass(frozen=True)
class QoSConfig:
    """Latency target plus polling cadence of the control loop."""

    target_ms: float
    poll_period_s: float = 30.0
    window_s: float = 60.0

    def __post_init__(self):
        if self.target_ms <= 0 or self.poll_period_s <= 0 or self.window_s <= 0:
            raise StructuralError("QoS target, poll period and window must be > 0")
        if self.window_s < self.poll_period_s:
            log.warning(
                "window (%.0fs) shorter than poll period (%.0fs); polls will "
                "miss samples",
                self.window_s,
                self.poll_period_s,
            )


@dataclass(frozen=True)
class LatencyWindow:
    """Aggregated duration sums and request counts over one sliding window."""

    sum_ms: float
    count: float

    def __post_init__(self):
        if self.sum_ms < 0 or self.count < 0:
            raise StructuralError("window sums and counts must be >= 0")


@dataclass(frozen=True)
class TriggerDecision:
    triggered: bool
    observed_mean_ms: float | None
    reason: str  # above_target | below_target | no_data


def evaluate_trigger(window: LatencyWindow, cfg: QoSConfig) -> TriggerDecision:
    """Raise the trigger iff the windowed mean exceeds the target.

    An empty window (zero traffic count) never triggers.
    """
    if window.count == 0:
        return TriggerDecision(False, None, "no_data")
    mean = window.sum_ms / window.count
    if mean > cfg.target_ms:
        return TriggerDecision(True, mean, "above_target")
    return TriggerDecision(False, mean, "below_target")


@dataclass(frozen=True)
class MigrationStep:
    """One service relocation with its lifecycle event times (once scheduled)."""

    service: ServiceId
    from_node: NodeId
    to_node: NodeId
    launch_at: float | None = None
    ready_at: float | None = None
    evict_at: float | None = None

    def __post_init__(self):
        if self.from_node.index == self.to_node.index:
            raise StructuralError(
                f"step for {self.service.name} moves to its current node"
            )
        times = (self.launch_at, self.ready_at, self.evict_at)
        if all(t is not None for t in times):
            if not (self.launch_at < self.ready_at < self.evict_at):
                raise StructuralError(
                    f"step for {self.service.name}: launch must precede ready "
                    "must precede evict"
                )


@dataclass(frozen=True)
class MigrationPlan:
    steps: tuple[MigrationStep, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def filter_placement(
    current: Placement,
    proposed: Placement,
    services: list[ServiceSpec],
    stress_graph: TrafficStressGraph | None = None,
    nodes: list[NodeSpec] | None = None,
    diagnostics: list | None = None,
) -> MigrationPlan:
    """Turn a proposed placement into the migration steps worth executing.

    Only services whose node actually changes AND that are migratable make
    the plan; blocked non-migratable moves land in ``diagnostics``. Steps
    are ordered by descending incident stress so the heaviest pairs move
    first, ties broken by service index.
    """
    if len(current) != len(proposed) or len(current) != len(services):
        raise StructuralError("current/proposed placements and services disagree")

    def node_id(n: int) -> NodeId:
        return nodes[n].id if nodes is not None else NodeId(n, f"node{n}")

    moves = []
    for i, svc in enumerate(services):
        if proposed[i] == current[i]:
            continue
        if not svc.migratable:
            if diagnostics is not None:
                diagnostics.append(("not_migratable", svc.id.name))
            log.debug("skipping non-migratable service %s", svc.id.name)
            continue
        degree = stress_graph.stress_degree(i) if stress_graph is not None else 0.0
        moves.append((-degree, i))
    moves.sort()
    steps = tuple(
        MigrationStep(services[i].id, node_id(current[i]), node_id(proposed[i]))
        for _deg, i in moves
    )
    return MigrationPlan(steps)


def propose_placement(
    policy: str,
    graph: TrafficStressGraph,
    measured: DelayMatrix,
    current: Placement,
    services: list[ServiceSpec],
    nodes: list[NodeSpec],
    weights: CostWeights,
    workers: int = 4,
    max_rounds: int = 10,
    top_q: int = 5,
) -> Placement:
    """Placement suggested by the selected policy for one trigger event.

    ``kdefault`` never remaps. ``netmarks`` rescores the services incident
    to the ``top_q`` highest-stress pairs, one at a time. ``trade`` runs the
    full greedy search from the current placement.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy == "kdefault":
        return current

    res = [s.placement_demand for s in services]
    cap = [n.capacity for n in nodes]

    if policy == "trade":
        result = solve_placement(
            graph, measured, current, res, cap, workers, weights, max_rounds
        )
        return result.placement

    # netmarks: rescore the services touching the hottest pairs
    targets: list[int] = []
    for u, v, _stress in sort_pairs(graph)[:top_q]:
        for s in (u, v):
            if s not in targets:
                targets.append(s)
    working = current
    for t in targets:
        try:
            node = netmarks_place(t, graph, working, cap, res)
        except NoFeasibleNodeError:
            log.warning("no feasible node for service %s; leaving in place",
                        services[t].id.name)
            continue
        if node != working[t]:
            working = working.move(t, node)
    return working


@dataclass
class ControlDecision:
    """Everything recorded at one poll tick."""

    time_s: float
    trigger: TriggerDecision
    plan: MigrationPlan
    in_cooldown: bool = False
    blocked: tuple = ()

    def to_record(self) -> dict:
        return {
            "time_s": self.time_s,
            "mean_ms": self.trigger.observed_mean_ms,
            "triggered": self.trigger.triggered,
            "reason": self.trigger.reason,
            "plan_size": len(self.plan),
            "in_cooldown": self.in_cooldown,
            "blocked": list(self.blocked),
        }


@dataclass
class QoSControlLoop:
    """Stateful per-simulation controller; one instance per policy run."""

    cfg: QoSConfig
    policy: str
    services: list[ServiceSpec]
    nodes: list[NodeSpec]
    weights: CostWeights
    workers: int = 4
    max_rounds: int = 10
    top_q: int = 5
    cooldown_until: float = field(default=float("-inf"), init=False)

    def decide(
        self,
        now: float,
        window: LatencyWindow,
        current: Placement,
        graph: TrafficStressGraph | None,
        measured: DelayMatrix | None,
    ) -> ControlDecision:
        trigger = evaluate_trigger(window, self.cfg)
        if not trigger.triggered:
            return ControlDecision(now, trigger, MigrationPlan())
        if now < self.cooldown_until:
            return ControlDecision(now, trigger, MigrationPlan(), in_cooldown=True)
        if graph is None or measured is None:
            return ControlDecision(now, trigger, MigrationPlan())
        proposed = propose_placement(
            self.policy, graph, measured, current, self.services, self.nodes,
            self.weights, self.workers, self.max_rounds, self.top_q,
        )
        diagnostics: list = []
        plan = filter_placement(
            current, proposed, self.services, graph, self.nodes, diagnostics
        )
        if len(plan) > 0:
            self.cooldown_until = now + self.cfg.window_s
        return ControlDecision(now, trigger, plan, blocked=tuple(diagnostics))


def run_control_loop(scenario, policy: str):
    """Run a full simulation and return (time, trigger, plan) per poll."""
    from .simulator import run_simulation

    report = run_simulation(scenario, policy)
    return [(d.time_s, d.trigger, d.plan) for d in report.decisions]
