"""Traffic analyzer: byte-counter samples -> stress graph -> sorted pairs.

Counters follow the service-mesh convention: per ordered (upstream,
downstream) pair we track cumulative bytes for both transfer directions.
The stress of a pair over a window is the bidirectional byte delta divided
by twice the window length, i.e. the average of the sent and received
rates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import ServiceId, ServiceSpec, StructuralError, TrafficStressGraph

log = logging.getLogger(__name__)


class CounterResetError(ValueError):
    """A cumulative counter decreased across the window (pod restart)."""


@dataclass(frozen=True)
class CounterSample:
    """Cumulative sent/received byte counters for one ordered pair at one instant."""

    upstream: ServiceId
    downstream: ServiceId
    sent_bytes_total: float
    received_bytes_total: float
    timestamp: float

    def __post_init__(self):
        if self.upstream.index == self.downstream.index:
            raise StructuralError(
                f"counter sample pairs a service with itself: {self.upstream.name}"
            )
        if self.sent_bytes_total < 0 or self.received_bytes_total < 0:
            raise StructuralError("cumulative byte counters must be >= 0")


@dataclass(frozen=True)
class StressElement:
    """(upstream, downstream, stress) dependency triple; stress in bytes/s."""

    upstream: ServiceId
    downstream: ServiceId
    stress: float

    def __post_init__(self):
        if self.stress < 0:
            raise StructuralError(f"stress must be >= 0, got {self.stress}")
        if self.upstream.index == self.downstream.index:
            raise StructuralError("stress element pairs a service with itself")


@dataclass(frozen=True)
class SortedPairs:
    """All strictly-positive stress cells as (upstream, downstream, stress),
    non-increasing in stress; ties broken by ascending index pair."""

    pairs: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        for a, b in zip(self.pairs, self.pairs[1:]):
            if b[2] > a[2]:
                raise StructuralError("sorted pairs must be non-increasing in stress")

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)


def bi_traffic(
    upstream: ServiceId,
    downstream: ServiceId,
    window_start_sample: CounterSample,
    window_end_sample: CounterSample,
    dt: float,
) -> float:
    """Average bidirectional byte rate of one pair across a window.

    Returns (delta_sent + delta_received) / (2 * dt) in bytes/s. Raises
    CounterResetError when either cumulative counter decreased; callers that
    tolerate restarts should pre-correct the samples (see
    :func:`build_stress_graph`).
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    for sample in (window_start_sample, window_end_sample):
        if (
            sample.upstream.index != upstream.index
            or sample.downstream.index != downstream.index
        ):
            raise StructuralError(
                f"sample for pair ({sample.upstream.name} -> {sample.downstream.name}) "
                f"does not match ({upstream.name} -> {downstream.name})"
            )
    d_sent = window_end_sample.sent_bytes_total - window_start_sample.sent_bytes_total
    d_recv = (
        window_end_sample.received_bytes_total
        - window_start_sample.received_bytes_total
    )
    if d_sent < 0 or d_recv < 0:
        raise CounterResetError(
            f"counter decreased for pair ({upstream.name} -> {downstream.name})"
        )
    return (d_sent + d_recv) / (2.0 * dt)


def _service_index(sid: ServiceId, services: list[ServiceSpec]) -> int:
    if sid.index >= len(services) or services[sid.index].id.name != sid.name:
        raise StructuralError(
            f"sample references unknown service {sid.name!r} (index {sid.index})"
        )
    return sid.index


def build_stress_graph(
    samples,
    services: list[ServiceSpec],
    dt: float,
    diagnostics: list | None = None,
) -> TrafficStressGraph:
    """Build the k x k traffic stress graph from counter samples.

    For every ordered pair with at least two samples, the cell holds the
    bidirectional rate between the earliest and latest sample of the window.
    The per-pair interval is the exact difference of those sample timestamps;
    ``dt`` is used only when the timestamps coincide, and it also becomes the
    graph's window length. Pairs without samples stay zero.

    Counter resets (a cumulative value decreasing, as happens when a pod
    restarts) are handled by taking the end value as the window delta; the
    affected pair is appended to ``diagnostics`` when a list is given.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    k = len(services)
    graph = np.zeros((k, k))

    by_pair: dict[tuple[int, int], list[CounterSample]] = {}
    for s in samples:
        u = _service_index(s.upstream, services)
        v = _service_index(s.downstream, services)
        by_pair.setdefault((u, v), []).append(s)

    for (u, v), pair_samples in by_pair.items():
        pair_samples.sort(key=lambda s: s.timestamp)
        start, end = pair_samples[0], pair_samples[-1]
        if start is end:
            # one sample carries no window delta
            if diagnostics is not None:
                diagnostics.append(
                    ("single_sample", start.upstream.name, start.downstream.name)
                )
            continue
        if (
            end.sent_bytes_total < start.sent_bytes_total
            or end.received_bytes_total < start.received_bytes_total
        ):
            # counter restarted from zero mid-window: the end value IS the delta
            start = CounterSample(
                start.upstream, start.downstream, 0.0, 0.0, start.timestamp
            )
            if diagnostics is not None:
                diagnostics.append(
                    ("counter_reset", end.upstream.name, end.downstream.name)
                )
            log.debug(
                "counter reset for pair %s -> %s",
                end.upstream.name,
                end.downstream.name,
            )
        pair_dt = end.timestamp - start.timestamp
        if pair_dt <= 0:
            pair_dt = dt
        graph[u, v] = bi_traffic(end.upstream, end.downstream, start, end, pair_dt)

    return TrafficStressGraph(graph, window_s=dt)


def sort_pairs(graph: TrafficStressGraph) -> SortedPairs:
    """All cells with stress > 0, sorted by stress descending.

    Ties break by ascending (upstream index, downstream index) so the order
    is fully deterministic.
    """
    m = graph.matrix
    us, vs = np.nonzero(m > 0)
    triples = [(int(u), int(v), float(m[u, v])) for u, v in zip(us, vs)]
    triples.sort(key=lambda t: (-t[2], t[0], t[1]))
    return SortedPairs(tuple(triples))
