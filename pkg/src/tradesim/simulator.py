"""Discrete-event cluster simulator.

Runs request call trees against a placement and a time-scheduled delay
matrix, maintains the per-pair byte counters the traffic analyzer consumes,
drives the QoS control loop at its polling cadence, and executes migration
plans with launch-then-evict ordering so no service ever loses its last
ready instance.

The latency model is analytic: each request pays the round-trip node delay
plus a bandwidth term per call edge and the processing time per visited
service. There is no queueing or contention; a request fails when its
latency reaches the request type's timeout.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .baselines import default_spread
from .control import (
    ControlDecision,
    LatencyWindow,
    MigrationPlan,
    MigrationStep,
    QoSControlLoop,
)
from .dynamics import active_matrix, inject, measure
from .mapper import adaptive_penalty_factor
from .model import (
    CostWeights,
    DelayMatrix,
    Placement,
    StructuralError,
    TrafficStressGraph,
)
from .traffic import CounterSample, build_stress_graph

if TYPE_CHECKING:
    from .scenario import ScenarioSpec

log = logging.getLogger(__name__)

# event priorities within one tick: delay-phase flips first, migrations
# become ready before arrivals route, polls observe the tick's arrivals
_PRIO_PHASE, _PRIO_READY, _PRIO_EVICT, _PRIO_ARRIVAL, _PRIO_POLL = range(5)

EVICT_LAG_S = 0.001  # old instance leaves one clock tick after the new is ready


@dataclass(frozen=True)
class CallEdge:
    upstream: int
    downstream: int
    request_bytes: float
    response_bytes: float

    def __post_init__(self):
        if self.request_bytes < 0 or self.response_bytes < 0:
            raise StructuralError("edge byte sizes must be >= 0")


@dataclass(frozen=True)
class RequestType:
    """One request shape: a rooted call tree with byte sizes and processing."""

    name: str
    entry: int
    edges: tuple[CallEdge, ...]
    processing_ms: tuple[tuple[int, float], ...] = ()
    timeout_ms: float = 1000.0
    parallel_fanout: bool = False

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise StructuralError(f"{self.name}: timeout must be > 0 ms")
        children: dict[int, list[CallEdge]] = {}
        parents: dict[int, int] = {}
        for e in self.edges:
            if e.downstream == self.entry:
                raise StructuralError(f"{self.name}: entry service has a caller")
            if e.downstream in parents:
                raise StructuralError(
                    f"{self.name}: service {e.downstream} has two callers"
                )
            parents[e.downstream] = e.upstream
            children.setdefault(e.upstream, []).append(e)
        # walk from the entry; everything must be reachable (tree, no cycles)
        seen = {self.entry}
        stack = [self.entry]
        while stack:
            for e in children.get(stack.pop(), ()):
                if e.downstream in seen:
                    raise StructuralError(f"{self.name}: call graph has a cycle")
                seen.add(e.downstream)
                stack.append(e.downstream)
        if len(seen) != len(self.edges) + 1:
            raise StructuralError(f"{self.name}: call tree is not connected")
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_proc", dict(self.processing_ms))

    @property
    def visited(self) -> frozenset[int]:
        return frozenset({self.entry} | {e.downstream for e in self.edges})

    def total_processing(self) -> float:
        return sum(self._proc.get(s, 0.0) for s in self.visited)

    def processing_of(self, service: int) -> float:
        return self._proc.get(service, 0.0)

    def children_of(self, service: int) -> list[CallEdge]:
        return self._children.get(service, [])


@dataclass(frozen=True)
class WorkloadPhase:
    start_s: float
    duration_s: float
    rates: tuple[tuple[str, float], ...]  # (request type name, qps)

    def __post_init__(self):
        if self.duration_s <= 0:
            raise StructuralError("workload phase duration must be > 0 s")
        for name, qps in self.rates:
            if qps <= 0:
                raise StructuralError(f"qps for {name} must be > 0")


@dataclass(frozen=True)
class WorkloadSpec:
    phases: tuple[WorkloadPhase, ...]
    seed: int = 0

    @property
    def duration_s(self) -> float:
        return max(p.start_s + p.duration_s for p in self.phases)


@dataclass(frozen=True)
class RequestRecord:
    start_time_s: float
    request_type: str
    latency_ms: float
    success: bool


def request_latency(
    rt: RequestType,
    P: Placement,
    D: DelayMatrix,
    bandwidth_Bps: float,
    per_hop_overhead_ms: float = 0.0,
) -> float:
    """End-to-end latency of one request under a placement.

    Every call edge pays the one-way delay in both directions plus the
    transfer time of its bytes; every visited service pays its processing
    time. Sibling subtrees run sequentially unless the request type is
    flagged for parallel fan-out, in which case the slowest sibling wins.
    """
    if bandwidth_Bps <= 0:
        raise ValueError("bandwidth must be > 0")
    routing = P.as_array()
    Dm = D.matrix

    def edge_ms(e: CallEdge) -> float:
        a, b = routing[e.upstream], routing[e.downstream]
        transfer = (e.request_bytes + e.response_bytes) / bandwidth_Bps * 1000.0
        return float(Dm[a, b] + Dm[b, a]) + transfer + per_hop_overhead_ms

    if not rt.parallel_fanout:
        return rt.total_processing() + sum(edge_ms(e) for e in rt.edges)

    def walk(service: int) -> float:
        branches = [edge_ms(e) + walk(e.downstream) for e in rt.children_of(service)]
        return rt.processing_of(service) + (max(branches) if branches else 0.0)

    return walk(rt.entry)


@dataclass
class _Instance:
    node: int
    ready_from: float
    evicted_at: float = math.inf

    def ready_at(self, t: float) -> bool:
        return self.ready_from <= t < self.evicted_at


@dataclass
class SimulationReport:
    policy: str
    scenario_name: str
    seed: int
    duration_s: float
    total_requests: int
    successes: int
    failures: int
    goodput_ratio: float
    mean_latency_ms: float | None
    p95_latency_ms: float | None
    p99_latency_ms: float | None
    trigger_count: int
    migration_count: int
    final_placement: tuple[int, ...]
    timeseries: list[dict]
    decisions: list[ControlDecision]
    migrations: list[MigrationStep]
    readiness_trace: list[tuple[float, str, int]]
    pair_counters: list[dict]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "policy": self.policy,
            "scenario": self.scenario_name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "summary": {
                "total_requests": self.total_requests,
                "successes": self.successes,
                "failures": self.failures,
                "goodput_ratio": self.goodput_ratio,
                "mean_latency_ms": self.mean_latency_ms,
                "p95_latency_ms": self.p95_latency_ms,
                "p99_latency_ms": self.p99_latency_ms,
                "trigger_count": self.trigger_count,
                "migration_count": self.migration_count,
                "final_placement": list(self.final_placement),
            },
            "decisions": [d.to_record() for d in self.decisions],
            "migrations": [
                {
                    "service": m.service.name,
                    "from": m.from_node.name,
                    "to": m.to_node.name,
                    "launch_at_s": m.launch_at,
                    "ready_at_s": m.ready_at,
                    "evict_at_s": m.evict_at,
                }
                for m in self.migrations
            ],
            "pair_counters": self.pair_counters,
        }

    TIMESERIES_FIELDS = (
        "time_s",
        "phase",
        "window_mean_ms",
        "window_p95_ms",
        "window_p99_ms",
        "window_throughput_rps",
        "window_goodput",
        "cumulative_goodput",
        "triggered",
        "plan_size",
    )


class ClusterSim:
    """Mutable simulation state; one instance per (scenario, policy) run."""

    def __init__(self, scenario: "ScenarioSpec", policy: str):
        self.scenario = scenario
        self.policy = policy
        self.k = len(scenario.services)
        self.p = len(scenario.nodes)
        self.services = scenario.services
        self.nodes = scenario.nodes
        self.demands = [s.placement_demand for s in self.services]
        self.caps = [n.capacity for n in self.nodes]
        self._demand_arr = np.array([d.amounts for d in self.demands])
        self._cap_arr = np.array([c.amounts for c in self.caps])

        if scenario.initial_placement is not None:
            placement = scenario.initial_placement
        else:
            placement = default_spread(self.services, self.nodes, scenario.seed)
        self.routing = placement.as_array().copy()
        self.routing_version = 0
        self.instances: list[list[_Instance]] = [
            [_Instance(node=int(self.routing[i]), ready_from=0.0)]
            for i in range(self.k)
        ]
        self.node_loads = np.zeros_like(self._cap_arr)
        np.add.at(self.node_loads, self.routing, self._demand_arr)

        # effective truth matrices, one per schedule phase
        self.truth_matrices = [
            inject(scenario.base_delay, entry.matrix, scenario.reserved)
            for entry in scenario.delay_schedule.entries
        ]
        self.phase_idx = 0

        self.counters: dict[tuple[int, int], list[float]] = {}
        self.snapshots: list[tuple[float, dict]] = [(0.0, {})]
        self.rec_times: list[float] = []
        self.rec_ok_lat_cum: list[float] = [0.0]  # prefix sums over records
        self.rec_ok_cum: list[int] = [0]
        self.records: list[RequestRecord] = []
        self.readiness_trace: list[tuple[float, str, int]] = []
        self.migrations: list[MigrationStep] = []
        self.decisions: list[ControlDecision] = []
        self.timeseries: list[dict] = []
        self.now = 0.0
        self.poll_no = 0
        self._latency_cache: dict[tuple[str, int, int], float] = {}
        self._seq = itertools.count()
        self._heap: list = []
        self._pending_migrations: set[int] = set()

        self.controller = QoSControlLoop(
            cfg=scenario.qos,
            policy=policy,
            services=self.services,
            nodes=self.nodes,
            weights=CostWeights(scenario.w_f, scenario.w_b, 1.0),
            workers=scenario.workers,
            max_rounds=scenario.max_rounds,
            top_q=scenario.top_q,
        )

    # ---- event plumbing -------------------------------------------------

    def _push(self, t_s: float, prio: int, kind: str, payload=None):
        heapq.heappush(
            self._heap, (round(t_s * 1000), prio, next(self._seq), kind, payload)
        )

    def _schedule_all(self):
        sc = self.scenario
        for i, entry in enumerate(sc.delay_schedule.entries):
            if i > 0:
                self._push(entry.activation_s, _PRIO_PHASE, "phase", i)
        duration = sc.workload.duration_s
        for phase in sc.workload.phases:
            for name, qps in phase.rates:
                n = int(math.floor(phase.duration_s * qps))
                for j in range(n):
                    self._push(
                        phase.start_s + j / qps, _PRIO_ARRIVAL, "arrival", name
                    )
        t = sc.qos.poll_period_s
        while t <= duration + 1e-9:
            self._push(t, _PRIO_POLL, "poll", None)
            t += sc.qos.poll_period_s

    # ---- per-event handlers ---------------------------------------------

    @property
    def truth(self) -> DelayMatrix:
        return self.truth_matrices[self.phase_idx]

    def _phase(self, idx: int):
        self.phase_idx = idx
        self._latency_cache.clear()

    def _record_readiness(self, service: int):
        count = sum(1 for inst in self.instances[service] if inst.ready_at(self.now))
        self.readiness_trace.append(
            (self.now, self.services[service].id.name, count)
        )

    def _arrival(self, type_name: str):
        rt = self.scenario.request_types[type_name]
        key = (type_name, self.routing_version, self.phase_idx)
        latency = self._latency_cache.get(key)
        if latency is None:
            latency = request_latency(
                rt,
                Placement(tuple(int(n) for n in self.routing), self.p),
                self.truth,
                self.scenario.bandwidth_Bps,
                self.scenario.mesh_overhead_ms,
            )
            self._latency_cache[key] = latency
        success = latency < rt.timeout_ms
        self.records.append(
            RequestRecord(self.now, type_name, latency, success)
        )
        self.rec_times.append(self.now)
        self.rec_ok_lat_cum.append(
            self.rec_ok_lat_cum[-1] + (latency if success else 0.0)
        )
        self.rec_ok_cum.append(self.rec_ok_cum[-1] + (1 if success else 0))
        for e in rt.edges:
            cell = self.counters.setdefault((e.upstream, e.downstream), [0.0, 0.0])
            cell[0] += e.request_bytes
            cell[1] += e.response_bytes

    def _window(self, t: float) -> LatencyWindow:
        lo = bisect.bisect_right(self.rec_times, t - self.scenario.qos.window_s)
        hi = bisect.bisect_right(self.rec_times, t)
        return LatencyWindow(
            sum_ms=self.rec_ok_lat_cum[hi] - self.rec_ok_lat_cum[lo],
            count=self.rec_ok_cum[hi] - self.rec_ok_cum[lo],
        )

    def _window_stats(self, t: float) -> dict:
        W = self.scenario.qos.window_s
        lo = bisect.bisect_right(self.rec_times, t - W)
        hi = bisect.bisect_right(self.rec_times, t)
        lats = [r.latency_ms for r in self.records[lo:hi] if r.success]
        completed = hi - lo
        row = {
            "time_s": t,
            "phase": self.scenario.delay_schedule.entries[self.phase_idx].label,
            "window_mean_ms": float(np.mean(lats)) if lats else None,
            "window_p95_ms": float(np.percentile(lats, 95)) if lats else None,
            "window_p99_ms": float(np.percentile(lats, 99)) if lats else None,
            "window_throughput_rps": completed / W,
            "window_goodput": (len(lats) / completed) if completed else None,
        }
        return row

    def _stress_graph(self, t: float) -> TrafficStressGraph:
        """Counter-delta graph over the trailing window ending at t."""
        W = self.scenario.qos.window_s
        times = [s[0] for s in self.snapshots]
        idx = bisect.bisect_right(times, t - W + 1e-9) - 1
        idx = max(idx, 0)
        start_t, start_counters = self.snapshots[idx]
        dt = t - start_t
        samples = []
        for (u, v), (sent, recv) in self.counters.items():
            s0, r0 = start_counters.get((u, v), (0.0, 0.0))
            uid = self.services[u].id
            vid = self.services[v].id
            samples.append(CounterSample(uid, vid, s0, r0, start_t))
            samples.append(CounterSample(uid, vid, sent, recv, t))
        return build_stress_graph(samples, self.services, dt)

    def _poll(self):
        t = self.now
        self.poll_no += 1
        self.snapshots.append(
            (t, {k: (v[0], v[1]) for k, v in self.counters.items()})
        )
        window = self._window(t)
        graph = self._stress_graph(t)
        noise = self.scenario.noise.for_step(self.poll_no)
        measured = measure(self.truth, noise)

        weights = CostWeights(
            self.scenario.w_f,
            self.scenario.w_b,
            self.scenario.penalty_factor
            or adaptive_penalty_factor(graph, measured, self.caps),
        )
        self.controller.weights = weights
        current = Placement(tuple(int(n) for n in self.routing), self.p)
        decision = self.controller.decide(t, window, current, graph, measured)
        self.decisions.append(decision)

        if len(decision.plan) > 0:
            apply_migration(decision.plan, self, t)

        row = self._window_stats(t)
        total_ok = self.rec_ok_cum[-1]
        total = len(self.records)
        row["cumulative_goodput"] = (total_ok / total) if total else None
        row["triggered"] = decision.trigger.triggered
        row["plan_size"] = len(decision.plan)
        self.timeseries.append(row)

    def _ready(self, payload):
        service, instance = payload
        instance_obj: _Instance = instance
        self.routing[service] = instance_obj.node
        self.routing_version += 1
        self._record_readiness(service)

    def _evict(self, payload):
        service, instance = payload
        inst: _Instance = instance
        self.instances[service].remove(inst)
        self.node_loads[inst.node] -= self._demand_arr[service]
        self._pending_migrations.discard(service)
        self._record_readiness(service)

    # ---- main loop -------------------------------------------------------

    def run(self) -> SimulationReport:
        self._schedule_all()
        handlers = {
            "phase": self._phase,
            "arrival": self._arrival,
            "poll": lambda _payload: self._poll(),
            "ready": self._ready,
            "evict": self._evict,
        }
        while self._heap:
            t_ms, _prio, _seq, kind, payload = heapq.heappop(self._heap)
            self.now = t_ms / 1000.0
            handlers[kind](payload)
        return self._report()

    def _report(self) -> SimulationReport:
        ok_lats = [r.latency_ms for r in self.records if r.success]
        total = len(self.records)
        successes = len(ok_lats)
        pair_counters = [
            {
                "upstream": self.services[u].id.name,
                "downstream": self.services[v].id.name,
                "sent_bytes_total": sent,
                "received_bytes_total": recv,
            }
            for (u, v), (sent, recv) in sorted(self.counters.items())
        ]
        return SimulationReport(
            policy=self.policy,
            scenario_name=self.scenario.name,
            seed=self.scenario.seed,
            duration_s=self.scenario.workload.duration_s,
            total_requests=total,
            successes=successes,
            failures=total - successes,
            goodput_ratio=(successes / total) if total else 1.0,
            mean_latency_ms=float(np.mean(ok_lats)) if ok_lats else None,
            p95_latency_ms=float(np.percentile(ok_lats, 95)) if ok_lats else None,
            p99_latency_ms=float(np.percentile(ok_lats, 99)) if ok_lats else None,
            trigger_count=sum(1 for d in self.decisions if d.trigger.triggered),
            migration_count=len(self.migrations),
            final_placement=tuple(int(n) for n in self.routing),
            timeseries=self.timeseries,
            decisions=self.decisions,
            migrations=self.migrations,
            readiness_trace=self.readiness_trace,
            pair_counters=pair_counters,
        )


def apply_migration(plan: MigrationPlan, state: ClusterSim, now: float | None = None):
    """Schedule the launch/ready/evict events of every step in the plan.

    The new instance starts consuming capacity immediately, becomes ready
    after the configured launch duration, and only then is the old instance
    evicted, so readiness never drops to zero. Transient capacity overflow
    during the overlap is tolerated with a warning.
    """
    t = state.now if now is None else now
    dur = state.scenario.migration_launch_s
    for step in plan:
        i = step.service.index
        if i >= state.k or state.services[i].id.name != step.service.name:
            raise StructuralError(f"plan references unknown service {step.service}")
        if step.from_node.index != int(state.routing[i]):
            raise StructuralError(
                f"plan for {step.service.name} expects node "
                f"{step.from_node.index} but service is on {int(state.routing[i])}"
            )
        if i in state._pending_migrations:
            log.warning("service %s already migrating; step skipped",
                        step.service.name)
            continue
        old = state.instances[i][-1]
        new = _Instance(node=step.to_node.index, ready_from=t + dur)
        scheduled = replace(
            step,
            launch_at=t,
            ready_at=t + dur,
            evict_at=t + dur + EVICT_LAG_S,
        )
        old.evicted_at = scheduled.evict_at
        state.instances[i].append(new)
        state._pending_migrations.add(i)
        state.node_loads[new.node] += state._demand_arr[i]
        overflow = state.node_loads[new.node] - state._cap_arr[new.node]
        if np.any(overflow > 0):
            log.warning(
                "node %s transiently over capacity by %s during migration of %s",
                step.to_node.name, overflow.clip(min=0), step.service.name,
            )
        state.migrations.append(scheduled)
        state._record_readiness(i)
        state._push(scheduled.ready_at, _PRIO_READY, "ready", (i, new))
        state._push(scheduled.evict_at, _PRIO_EVICT, "evict", (i, old))
    return state


def run_simulation(scenario: "ScenarioSpec", policy: str) -> SimulationReport:
    """Simulate one scenario under one policy; deterministic per seed."""
    return ClusterSim(scenario, policy).run()
