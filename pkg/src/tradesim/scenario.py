"""Scenario, problem and counter-dump file loading with path-addressed
validation.

All matrices in files are row-major flat arrays with explicit ``rows`` and
``cols`` fields, and every file carries a ``schema_version``. Units are
fixed by the schema: delays in milliseconds, stress in bytes/second, byte
counters in bytes. Validation collects every problem it can find before
failing so one round trip fixes a whole file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .control import QoSConfig
from .dynamics import (
    DelaySchedule,
    MeasurementNoise,
    ReservedDestinations,
    ScheduleEntry,
)
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
from .simulator import CallEdge, RequestType, WorkloadPhase, WorkloadSpec
from .traffic import CounterSample

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """One or more validation failures, each prefixed with its JSON path."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("\n".join(errors))


class _Ctx:
    def __init__(self):
        self.errors: list[str] = []

    def err(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def check(self, cond: bool, path: str, msg: str) -> bool:
        if not cond:
            self.err(path, msg)
        return cond

    def raise_if_failed(self):
        if self.errors:
            raise ScenarioError(self.errors)


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError([f"{path}: file not found"])
    except json.JSONDecodeError as e:
        raise ScenarioError([f"{path}: invalid JSON ({e})"])
    if not isinstance(doc, dict):
        raise ScenarioError([f"{path}: top level must be a JSON object"])
    return doc


def _check_version(doc: dict, ctx: _Ctx):
    v = doc.get("schema_version")
    ctx.check(
        v == SCHEMA_VERSION,
        "schema_version",
        f"expected {SCHEMA_VERSION}, got {v!r}",
    )


def _number(doc, key, path, ctx, default=None, minimum=None, strict_min=False):
    val = doc.get(key, default)
    if val is None:
        ctx.err(f"{path}.{key}", "required number is missing")
        return None
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        ctx.err(f"{path}.{key}", f"expected a number, got {val!r}")
        return None
    if minimum is not None:
        if strict_min and val <= minimum:
            ctx.err(f"{path}.{key}", f"must be > {minimum}, got {val}")
            return None
        if not strict_min and val < minimum:
            ctx.err(f"{path}.{key}", f"must be >= {minimum}, got {val}")
            return None
    return float(val)


def _parse_matrix(doc, path: str, ctx: _Ctx, square_dim: int | None = None):
    if not isinstance(doc, dict):
        ctx.err(path, "expected an object with rows/cols/data")
        return None
    rows, cols = doc.get("rows"), doc.get("cols")
    data = doc.get("data")
    if not isinstance(rows, int) or not isinstance(cols, int):
        ctx.err(path, "rows and cols must be integers")
        return None
    if not isinstance(data, list):
        ctx.err(f"{path}.data", "expected a flat row-major list")
        return None
    if len(data) != rows * cols:
        ctx.err(
            f"{path}.data",
            f"expected {rows}x{cols} = {rows * cols} entries, got {len(data)}",
        )
        return None
    if square_dim is not None and (rows != square_dim or cols != square_dim):
        ctx.err(path, f"expected a {square_dim}x{square_dim} matrix, got {rows}x{cols}")
        return None
    try:
        return np.array(data, dtype=float).reshape(rows, cols)
    except (TypeError, ValueError) as e:
        ctx.err(f"{path}.data", f"not numeric: {e}")
        return None


def _parse_resource(doc, kinds, path, ctx) -> ResourceVector | None:
    if not isinstance(doc, dict):
        ctx.err(path, f"expected an object with amounts per kind {list(kinds)}")
        return None
    for key in doc:
        if key not in kinds:
            ctx.err(f"{path}.{key}", f"unknown resource kind (declared: {list(kinds)})")
            return None
    try:
        return ResourceVector.from_mapping(kinds, doc)
    except (StructuralError, TypeError, ValueError) as e:
        ctx.err(path, str(e))
        return None


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything a simulation run needs, decoded and cross-checked."""

    name: str
    seed: int
    resource_kinds: tuple[str, ...]
    services: list[ServiceSpec]
    nodes: list[NodeSpec]
    request_types: dict[str, RequestType]
    workload: WorkloadSpec
    base_delay: DelayMatrix
    delay_schedule: DelaySchedule
    reserved: ReservedDestinations
    noise: MeasurementNoise
    qos: QoSConfig
    initial_placement: Placement | None
    bandwidth_Bps: float
    mesh_overhead_ms: float
    migration_launch_s: float
    workers: int
    max_rounds: int
    top_q: int
    w_f: float
    w_b: float
    penalty_factor: float | None

    def service_index(self, name: str) -> int:
        for s in self.services:
            if s.id.name == name:
                return s.id.index
        raise KeyError(name)


def parse_scenario(doc: dict, name: str = "scenario") -> ScenarioSpec:
    ctx = _Ctx()
    _check_version(doc, ctx)
    seed = int(doc.get("seed", 0))

    kinds = doc.get("resources")
    if not isinstance(kinds, list) or not all(isinstance(k, str) for k in kinds):
        ctx.err("resources", "expected a list of resource kind names")
        kinds = []
    kinds = tuple(kinds)

    nodes: list[NodeSpec] = []
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        ctx.err("nodes", "expected a non-empty list")
        raw_nodes = []
    node_names = {}
    for i, nd in enumerate(raw_nodes):
        path = f"nodes[{i}]"
        if not isinstance(nd, dict) or "name" not in nd:
            ctx.err(path, "expected an object with a name")
            continue
        nm = nd["name"]
        if nm in node_names:
            ctx.err(f"{path}.name", f"duplicate node name {nm!r}")
            continue
        node_names[nm] = i
        cap = _parse_resource(nd.get("capacity", {}), kinds, f"{path}.capacity", ctx)
        if cap is not None:
            nodes.append(NodeSpec(NodeId(i, nm), cap))

    services: list[ServiceSpec] = []
    raw_services = doc.get("services")
    if not isinstance(raw_services, list) or not raw_services:
        ctx.err("services", "expected a non-empty list")
        raw_services = []
    service_names = {}
    for i, sd in enumerate(raw_services):
        path = f"services[{i}]"
        if not isinstance(sd, dict) or "name" not in sd:
            ctx.err(path, "expected an object with a name")
            continue
        nm = sd["name"]
        if nm in service_names:
            ctx.err(f"{path}.name", f"duplicate service name {nm!r}")
            continue
        service_names[nm] = i
        demand = _parse_resource(sd.get("demand", {}), kinds, f"{path}.demand", ctx)
        replicas = sd.get("replicas", 1)
        if not isinstance(replicas, int) or replicas < 1:
            ctx.err(f"{path}.replicas", f"must be an integer >= 1, got {replicas!r}")
            replicas = 1
        if demand is not None:
            services.append(
                ServiceSpec(
                    ServiceId(i, nm),
                    demand,
                    migratable=bool(sd.get("migratable", True)),
                    replicas=replicas,
                )
            )

    # bail out early when the node/service identity layer is broken;
    # everything below needs valid indices
    ctx.raise_if_failed()
    k, p = len(services), len(nodes)

    request_types: dict[str, RequestType] = {}
    for i, rd in enumerate(doc.get("request_types", [])):
        path = f"request_types[{i}]"
        if not isinstance(rd, dict) or "name" not in rd:
            ctx.err(path, "expected an object with a name")
            continue
        nm = rd["name"]
        if nm in request_types:
            ctx.err(f"{path}.name", f"duplicate request type {nm!r}")
            continue
        entry = rd.get("entry")
        if entry not in service_names:
            ctx.err(f"{path}.entry", f"unknown service {entry!r}")
            continue
        edges = []
        ok = True
        for j, cd in enumerate(rd.get("calls", [])):
            cpath = f"{path}.calls[{j}]"
            src, dst = cd.get("from"), cd.get("to")
            if src not in service_names or dst not in service_names:
                ctx.err(cpath, f"unknown service in edge {src!r} -> {dst!r}")
                ok = False
                continue
            req = _number(cd, "request_bytes", cpath, ctx, default=0.0, minimum=0.0)
            resp = _number(cd, "response_bytes", cpath, ctx, default=0.0, minimum=0.0)
            if req is None or resp is None:
                ok = False
                continue
            edges.append(CallEdge(service_names[src], service_names[dst], req, resp))
        proc = []
        for svc_name, ms in (rd.get("processing_ms") or {}).items():
            if svc_name not in service_names:
                ctx.err(f"{path}.processing_ms.{svc_name}", "unknown service")
                ok = False
                continue
            proc.append((service_names[svc_name], float(ms)))
        if not ok:
            continue
        try:
            request_types[nm] = RequestType(
                name=nm,
                entry=service_names[entry],
                edges=tuple(edges),
                processing_ms=tuple(proc),
                timeout_ms=float(rd.get("timeout_ms", 1000.0)),
                parallel_fanout=bool(rd.get("parallel_fanout", False)),
            )
        except StructuralError as e:
            ctx.err(path, str(e))

    # workload: either a single phase shorthand or an explicit phase list
    wl = doc.get("workload")
    phases: list[WorkloadPhase] = []
    if not isinstance(wl, dict):
        ctx.err("workload", "expected an object")
    else:
        raw_phases = wl.get("phases")
        if raw_phases is None:
            raw_phases = [dict(wl, start_s=0.0)]
        start_cursor = 0.0
        for i, ph in enumerate(raw_phases):
            path = f"workload.phases[{i}]"
            dur = _number(ph, "duration_s", path, ctx, minimum=0.0, strict_min=True)
            start = _number(ph, "start_s", path, ctx, default=start_cursor, minimum=0.0)
            if dur is None or start is None:
                continue
            start_cursor = start + dur
            rates = []
            reqs = ph.get("requests")
            if isinstance(reqs, list):
                for j, rq in enumerate(reqs):
                    rpath = f"{path}.requests[{j}]"
                    tname = rq.get("type")
                    if tname not in request_types:
                        ctx.err(f"{rpath}.type", f"unknown request type {tname!r}")
                        continue
                    qps = _number(rq, "qps", rpath, ctx, minimum=0.0, strict_min=True)
                    if qps is not None:
                        rates.append((tname, qps))
            elif isinstance(ph.get("mix"), list):
                total_qps = _number(ph, "qps", path, ctx, minimum=0.0, strict_min=True)
                ratios = [m.get("ratio", 0.0) for m in ph["mix"]]
                if abs(sum(ratios) - 1.0) > 1e-9:
                    ctx.err(f"{path}.mix", f"ratios must sum to 1, got {sum(ratios)}")
                elif total_qps is not None:
                    for j, m in enumerate(ph["mix"]):
                        tname = m.get("type")
                        if tname not in request_types:
                            ctx.err(
                                f"{path}.mix[{j}].type",
                                f"unknown request type {tname!r}",
                            )
                            continue
                        rates.append((tname, total_qps * float(m["ratio"])))
            else:
                ctx.err(path, "needs either a requests list or a qps + mix pair")
            if rates:
                phases.append(WorkloadPhase(start, dur, tuple(rates)))
        if not phases:
            ctx.err("workload", "no usable workload phases")

    # delay schedule
    ds = doc.get("delay_schedule")
    base_delay = None
    schedule = None
    reserved = ReservedDestinations.none()
    noise = MeasurementNoise(seed=seed)
    if not isinstance(ds, dict):
        ctx.err("delay_schedule", "expected an object")
    else:
        base_ms = ds.get("base_delay_ms", 0.5)
        if "base_matrix" in ds:
            base_arr = _parse_matrix(ds["base_matrix"], "delay_schedule.base_matrix",
                                     ctx, square_dim=p)
            if base_arr is not None:
                try:
                    base_delay = DelayMatrix(base_arr)
                except StructuralError as e:
                    ctx.err("delay_schedule.base_matrix", str(e))
        elif isinstance(base_ms, (int, float)) and base_ms >= 0:
            base_delay = DelayMatrix.constant(p, float(base_ms))
        else:
            ctx.err("delay_schedule.base_delay_ms", f"must be >= 0, got {base_ms!r}")

        res_names = ds.get("reserved_destinations", [])
        res_idx = set()
        for i, nm in enumerate(res_names):
            if nm not in node_names:
                ctx.err(f"delay_schedule.reserved_destinations[{i}]",
                        f"unknown node {nm!r}")
            else:
                res_idx.add(node_names[nm])
        reserved = ReservedDestinations(frozenset(res_idx))

        nz = ds.get("noise", {})
        try:
            noise = MeasurementNoise(
                distribution=nz.get("distribution", "uniform"),
                magnitude_ms=float(nz.get("magnitude_ms", 1.0)),
                seed=int(nz.get("seed", seed)),
            )
        except (StructuralError, TypeError, ValueError) as e:
            ctx.err("delay_schedule.noise", str(e))

        entries = []
        for i, phd in enumerate(ds.get("phases", [])):
            path = f"delay_schedule.phases[{i}]"
            at = _number(phd, "at_s", path, ctx, minimum=0.0)
            label = phd.get("label", f"phase{i}")
            arr = _parse_matrix(phd.get("injected_ms"), f"{path}.injected_ms",
                                ctx, square_dim=p)
            if at is None or arr is None:
                continue
            try:
                entries.append(ScheduleEntry(at, DelayMatrix(arr), str(label)))
            except StructuralError as e:
                ctx.err(f"{path}.injected_ms", str(e))
        if entries:
            try:
                schedule = DelaySchedule(
                    tuple(entries),
                    update_period_s=float(ds.get("update_period_s", 300.0)),
                )
            except StructuralError as e:
                ctx.err("delay_schedule", str(e))
        else:
            ctx.err("delay_schedule.phases", "at least one phase is required")

    qd = doc.get("qos", {})
    qos = None
    target = _number(qd, "target_ms", "qos", ctx, minimum=0.0, strict_min=True)
    poll = _number(qd, "poll_period_s", "qos", ctx, default=30.0, minimum=0.0,
                   strict_min=True)
    window = _number(qd, "window_s", "qos", ctx, default=60.0, minimum=0.0,
                     strict_min=True)
    if target is not None and poll is not None and window is not None:
        qos = QoSConfig(target, poll, window)

    initial = doc.get("initial_placement", "spread")
    placement = None
    if initial == "spread":
        placement = None
    elif isinstance(initial, list):
        if len(initial) != k:
            ctx.err("initial_placement", f"expected {k} entries, got {len(initial)}")
        else:
            idxs = []
            ok = True
            for i, entry in enumerate(initial):
                if isinstance(entry, str):
                    if entry not in node_names:
                        ctx.err(f"initial_placement[{i}]", f"unknown node {entry!r}")
                        ok = False
                    else:
                        idxs.append(node_names[entry])
                elif isinstance(entry, int) and 0 <= entry < p:
                    idxs.append(entry)
                else:
                    ctx.err(f"initial_placement[{i}]", f"invalid node {entry!r}")
                    ok = False
            if ok:
                placement = Placement(tuple(idxs), p)
    else:
        ctx.err("initial_placement", "expected 'spread' or a list of nodes")

    bandwidth_gbps = _number(doc, "bandwidth_gbps", "", ctx, default=16.0,
                             minimum=0.0, strict_min=True)
    mesh = _number(doc, "mesh_overhead_ms", "", ctx, default=0.0, minimum=0.0)
    mig = doc.get("migration", {})
    launch_s = _number(mig, "launch_duration_s", "migration", ctx, default=10.0,
                       minimum=0.0, strict_min=True)

    pga = doc.get("pga", {})
    workers = pga.get("workers", 4)
    max_rounds = pga.get("max_rounds", 10)
    top_q = pga.get("top_q_pairs", 5)
    if not isinstance(workers, int) or workers < 1:
        ctx.err("pga.workers", f"must be an integer >= 1, got {workers!r}")
        workers = 1
    w_f = _number(pga, "w_f", "pga", ctx, default=0.5, minimum=0.0)
    w_b = _number(pga, "w_b", "pga", ctx, default=0.5, minimum=0.0)
    pf = pga.get("penalty_factor")
    if pf is not None and (not isinstance(pf, (int, float)) or pf <= 0):
        ctx.err("pga.penalty_factor", f"must be > 0 or null, got {pf!r}")
        pf = None

    if not request_types:
        ctx.err("request_types", "at least one request type is required")

    ctx.raise_if_failed()
    return ScenarioSpec(
        name=str(doc.get("name", name)),
        seed=seed,
        resource_kinds=kinds,
        services=services,
        nodes=nodes,
        request_types=request_types,
        workload=WorkloadSpec(tuple(phases), seed=seed),
        base_delay=base_delay,
        delay_schedule=schedule,
        reserved=reserved,
        noise=noise,
        qos=qos,
        initial_placement=placement,
        bandwidth_Bps=bandwidth_gbps * 1e9 / 8.0,
        mesh_overhead_ms=mesh,
        migration_launch_s=launch_s,
        workers=workers,
        max_rounds=int(max_rounds),
        top_q=int(top_q),
        w_f=w_f,
        w_b=w_b,
        penalty_factor=None if pf is None else float(pf),
    )


def load_scenario(path) -> ScenarioSpec:
    return parse_scenario(_load_json(path), name=str(path))


def bundled_scenario_path(name: str):
    """Filesystem path of a scenario shipped with the package."""
    return resources.files("tradesim").joinpath(f"scenarios/{name}.json")


def load_bundled_scenario(name: str) -> ScenarioSpec:
    with resources.as_file(bundled_scenario_path(name)) as p:
        return load_scenario(p)


@dataclass(frozen=True)
class PlacementProblem:
    """Decoded `solve`/`oracle` input: matrices, vectors and weights."""

    service_names: tuple[str, ...]
    stress: TrafficStressGraph
    delays: DelayMatrix
    demands: list[ResourceVector]
    capacities: list[ResourceVector]
    initial: Placement
    weights: CostWeights


def parse_problem(doc: dict) -> PlacementProblem:
    ctx = _Ctx()
    _check_version(doc, ctx)

    t_arr = _parse_matrix(doc.get("stress_matrix"), "stress_matrix", ctx)
    d_arr = _parse_matrix(doc.get("delay_matrix"), "delay_matrix", ctx)
    ctx.raise_if_failed()
    if t_arr.shape[0] != t_arr.shape[1]:
        ctx.err("stress_matrix", f"must be square, got {t_arr.shape}")
    if d_arr.shape[0] != d_arr.shape[1]:
        ctx.err("delay_matrix", f"must be square, got {d_arr.shape}")
    ctx.raise_if_failed()
    k, p = t_arr.shape[0], d_arr.shape[0]

    names = doc.get("services", [f"s{i}" for i in range(k)])
    if len(names) != k:
        ctx.err("services", f"expected {k} names, got {len(names)}")

    kinds = tuple(doc.get("resources", []))
    demands, caps = [], []
    raw_dem = doc.get("demands", [])
    raw_cap = doc.get("capacities", [])
    if len(raw_dem) != k:
        ctx.err("demands", f"expected {k} entries, got {len(raw_dem)}")
    if len(raw_cap) != p:
        ctx.err("capacities", f"expected {p} entries, got {len(raw_cap)}")
    for i, d in enumerate(raw_dem):
        rv = _parse_resource(d, kinds, f"demands[{i}]", ctx)
        if rv is not None:
            demands.append(rv)
    for i, c in enumerate(raw_cap):
        rv = _parse_resource(c, kinds, f"capacities[{i}]", ctx)
        if rv is not None:
            caps.append(rv)

    raw_init = doc.get("initial_placement")
    placement = None
    if not isinstance(raw_init, list) or len(raw_init) != k:
        ctx.err("initial_placement", f"expected a list of {k} node indices")
    else:
        try:
            placement = Placement(tuple(int(n) for n in raw_init), p)
        except (StructuralError, TypeError, ValueError) as e:
            ctx.err("initial_placement", str(e))

    wd = doc.get("weights", {})
    try:
        weights = CostWeights(
            w_f=float(wd.get("w_f", 0.5)),
            w_b=float(wd.get("w_b", 0.5)),
            penalty_factor=float(wd["penalty_factor"])
            if wd.get("penalty_factor") is not None
            else 1e6,
        )
    except (StructuralError, TypeError, ValueError) as e:
        ctx.err("weights", str(e))
        weights = None

    window = _number(doc, "window_s", "", ctx, default=60.0, minimum=0.0,
                     strict_min=True)
    stress = None
    try:
        stress = TrafficStressGraph(t_arr, window_s=window or 60.0)
    except StructuralError as e:
        ctx.err("stress_matrix", str(e))
    delays = None
    try:
        delays = DelayMatrix(d_arr)
    except StructuralError as e:
        ctx.err("delay_matrix", str(e))

    ctx.raise_if_failed()
    problem = PlacementProblem(
        tuple(names), stress, delays, demands, caps, placement, weights
    )
    if doc.get("weights", {}).get("penalty_factor") is None:
        from .mapper import adaptive_penalty_factor

        pf = adaptive_penalty_factor(stress, delays, caps)
        problem = PlacementProblem(
            tuple(names), stress, delays, demands, caps, placement,
            CostWeights(weights.w_f, weights.w_b, pf),
        )
    return problem


def load_problem(path) -> PlacementProblem:
    return parse_problem(_load_json(path))


@dataclass(frozen=True)
class CounterDump:
    services: list[ServiceSpec]
    samples: list[CounterSample]
    window_s: float


def parse_counter_dump(doc: dict) -> CounterDump:
    ctx = _Ctx()
    _check_version(doc, ctx)
    names = doc.get("services")
    if not isinstance(names, list) or not names:
        ctx.err("services", "expected a non-empty list of service names")
        names = []
    if len(set(names)) != len(names):
        ctx.err("services", "service names must be unique")
    window = _number(doc, "window_s", "", ctx, default=60.0, minimum=0.0,
                     strict_min=True)
    services = [
        ServiceSpec(ServiceId(i, nm), ResourceVector.zeros(()))
        for i, nm in enumerate(names)
    ]
    index = {nm: i for i, nm in enumerate(names)}

    samples = []
    unknown = set()
    for i, sd in enumerate(doc.get("samples", [])):
        path = f"samples[{i}]"
        up, down = sd.get("upstream"), sd.get("downstream")
        if up not in index:
            unknown.add(str(up))
            continue
        if down not in index:
            unknown.add(str(down))
            continue
        sent = _number(sd, "sent_bytes_total", path, ctx, minimum=0.0)
        recv = _number(sd, "received_bytes_total", path, ctx, minimum=0.0)
        ts = _number(sd, "timestamp", path, ctx, minimum=0.0)
        if None in (sent, recv, ts):
            continue
        try:
            samples.append(
                CounterSample(
                    services[index[up]].id, services[index[down]].id, sent, recv, ts
                )
            )
        except StructuralError as e:
            ctx.err(path, str(e))
    for nm in sorted(unknown):
        ctx.err("samples", f"unknown service name {nm!r}")
    ctx.raise_if_failed()
    return CounterDump(services, samples, window or 60.0)


def load_counter_dump(path) -> CounterDump:
    return parse_counter_dump(_load_json(path))
