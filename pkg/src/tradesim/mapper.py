"""Penalized placement cost and the parallel greedy placement search.

The search walks service pairs in descending traffic-stress order. For each
pair it exhaustively scores every candidate node pair (including colocating
both services) and adopts the best candidate only when it strictly lowers
the penalized total cost. Chunks of the sorted pair list are explored by
independent workers that all start from the same placement; the cheapest
worker result wins. A brute-force enumerator doubles as the verification
oracle for small instances.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import (
    CostWeights,
    DelayMatrix,
    Placement,
    ResourceVector,
    StructuralError,
    TrafficStressGraph,
)
from .traffic import SortedPairs, sort_pairs

log = logging.getLogger(__name__)

ORACLE_DEFAULT_BOUND = 10**6


class InstanceTooLargeError(ValueError):
    """The brute-force oracle refuses instances beyond its enumeration bound."""


@dataclass(frozen=True)
class CostBreakdown:
    """Communication cost plus capacity-overflow penalty."""

    communication_cost: float
    penalty: float

    @property
    def total(self) -> float:
        return self.communication_cost + self.penalty


@dataclass(frozen=True)
class ChunkPlan:
    """Disjoint contiguous slices of the sorted pair list, one per worker."""

    chunks: tuple[tuple[tuple[int, int, float], ...], ...]
    size_bound: int


@dataclass(frozen=True)
class PlacementResult:
    placement: Placement
    cost: CostBreakdown
    iterations: int
    elapsed: float


def chunk_pairs(pairs: SortedPairs, num_workers: int) -> ChunkPlan:
    """Split sorted pairs into balanced contiguous chunks.

    Chunk size is ceil((num_pairs + num_workers - 1) / num_workers); trailing
    empty chunks are dropped when there are more workers than pairs.
    """
    if num_workers < 1:
        raise ValueError(f"num_workers must be >= 1, got {num_workers}")
    n = len(pairs)
    size = math.ceil((n + num_workers - 1) / num_workers)
    chunks = []
    for i in range(num_workers):
        chunk = tuple(pairs[i * size : (i + 1) * size]) if size > 0 else ()
        if chunk:
            chunks.append(chunk)
    return ChunkPlan(tuple(chunks), size_bound=size)


def _index(service) -> int:
    return service.index if hasattr(service, "index") else int(service)


def pair_cost(
    i,
    j,
    T: TrafficStressGraph,
    D: DelayMatrix,
    P: Placement,
    w: CostWeights,
) -> float:
    """Two-direction weighted cost of one service pair under a placement."""
    u, v = _index(i), _index(j)
    a, b = P[u], P[v]
    return w.w_f * T[u, v] * D[a, b] + w.w_b * T[v, u] * D[b, a]


class _CostCore:
    """Array-backed cost evaluation shared by the search and the oracle.

    ``full`` is the canonical evaluation every acceptance decision and
    reported cost goes through; ``candidate_totals`` scores all node pairs
    for one service pair in a single vectorized pass and is only used to
    pick the most promising candidate.
    """

    def __init__(self, Tm: np.ndarray, Dm: np.ndarray, demands: np.ndarray,
                 caps: np.ndarray, pf: float):
        k = Tm.shape[0]
        p = Dm.shape[0]
        if demands.shape[0] != k:
            raise StructuralError(
                f"{demands.shape[0]} demand vectors for {k} services"
            )
        if caps.shape[0] != p:
            raise StructuralError(
                f"{caps.shape[0]} capacity vectors for {p} nodes"
            )
        if demands.size and caps.size and demands.shape[1] != caps.shape[1]:
            raise StructuralError(
                "demand and capacity vectors differ in resource kinds"
            )
        self.Tm = Tm
        self.Dm = Dm
        self.demands = demands
        self.caps = caps
        self.pf = pf
        self.k = k
        self.p = p

    def loads(self, Pa: np.ndarray) -> np.ndarray:
        loads = np.zeros_like(self.caps)
        np.add.at(loads, Pa, self.demands)
        return loads

    def full(self, Pa: np.ndarray) -> tuple[float, float]:
        comm = float(np.sum(self.Tm * self.Dm[Pa[:, None], Pa[None, :]]))
        overflow = np.maximum(self.loads(Pa) - self.caps, 0.0)
        return comm, float(overflow.sum()) * self.pf

    def candidate_totals(self, Pa: np.ndarray, u: int, v: int) -> np.ndarray:
        """p x p totals for moving u to row-node and v to column-node."""
        Dm, Tm, p = self.Dm, self.Tm, self.p
        others = np.array(
            [w for w in range(self.k) if w != u and w != v], dtype=np.intp
        )
        Pw = Pa[others]

        rest = float(np.sum(Tm[np.ix_(others, others)]
                            * Dm[Pw[:, None], Pw[None, :]]))
        f_u = Dm[:, Pw] @ Tm[u, others] + Tm[others, u] @ Dm[Pw, :].T
        f_v = Dm[:, Pw] @ Tm[v, others] + Tm[others, v] @ Dm[Pw, :].T
        comm = (rest + f_u[:, None] + f_v[None, :]
                + Tm[u, v] * Dm + Tm[v, u] * Dm.T)

        base_loads = self.loads(Pa)
        base_loads[Pa[u]] -= self.demands[u]
        base_loads[Pa[v]] -= self.demands[v]
        du, dv = self.demands[u], self.demands[v]
        over_base = np.maximum(base_loads - self.caps, 0.0).sum(axis=1)
        over_u = np.maximum(base_loads + du - self.caps, 0.0).sum(axis=1)
        over_v = np.maximum(base_loads + dv - self.caps, 0.0).sum(axis=1)
        over_uv = np.maximum(base_loads + du + dv - self.caps, 0.0).sum(axis=1)
        pen = (over_base.sum() - over_base[:, None] - over_base[None, :]
               + over_u[:, None] + over_v[None, :])
        pen[np.arange(p), np.arange(p)] = over_base.sum() - over_base + over_uv
        return comm + pen * self.pf


def _core(T: TrafficStressGraph, D: DelayMatrix, res, cap, w: CostWeights) -> _CostCore:
    demands = np.array([r.as_array() for r in res], dtype=float)
    caps = np.array([c.as_array() for c in cap], dtype=float)
    if demands.ndim == 1:
        demands = demands.reshape(len(res), -1)
    if caps.ndim == 1:
        caps = caps.reshape(len(cap), -1)
    return _CostCore(T.matrix, D.matrix, demands, caps, w.penalty_factor)


def calc_cost(
    T: TrafficStressGraph,
    P: Placement,
    D: DelayMatrix,
    res: list[ResourceVector],
    cap: list[ResourceVector],
    w: CostWeights,
) -> CostBreakdown:
    """Penalized total cost of a placement.

    Communication cost sums T[u][v] * D[P[u]][P[v]] over all ordered pairs;
    with the directional stress storage this covers both transfer directions
    of every dependency. The penalty charges every per-node, per-resource
    overflow with the penalty factor.
    """
    if len(P) != T.k:
        raise StructuralError(f"placement has {len(P)} services, graph has {T.k}")
    if P.num_nodes != D.p:
        raise StructuralError(
            f"placement over {P.num_nodes} nodes, delay matrix has {D.p}"
        )
    core = _core(T, D, res, cap, w)
    comm, pen = core.full(P.as_array())
    return CostBreakdown(comm, pen)


def adaptive_penalty_factor(
    T: TrafficStressGraph, D: DelayMatrix, cap: list[ResourceVector]
) -> float:
    """Penalty factor large enough that any overflow dominates any saving.

    Scales with the largest possible single-pair cost over the smallest
    positive capacity; falls back to 1e6 on degenerate (all-zero) inputs.
    """
    max_t = float(T.matrix.max()) if T.k else 0.0
    max_d = float(D.matrix.max()) if D.p else 0.0
    positive = [a for c in cap for a in c.amounts if a > 0]
    if max_t <= 0 or max_d <= 0 or not positive:
        return 1e6
    return 1e6 * max_t * max_d / min(positive)


def place_worker(
    T: TrafficStressGraph,
    D: DelayMatrix,
    P0: Placement,
    res: list[ResourceVector],
    cap: list[ResourceVector],
    tasks,
    w: CostWeights,
) -> PlacementResult:
    """Greedy pass over one chunk of stress-sorted pairs.

    For each pair (u, v) all node pairs except the current assignment are
    scored; the best candidate is adopted only when its exact recomputed
    total is strictly lower than the incumbent's, so the accepted-cost
    sequence is strictly decreasing and ties keep the incumbent.
    """
    start = time.perf_counter()
    core = _core(T, D, res, cap, w)
    Pa = P0.as_array().copy()
    comm, pen = core.full(Pa)
    evals = 0
    for u, v, _stress in tasks:
        totals = core.candidate_totals(Pa, u, v)
        totals[Pa[u], Pa[v]] = np.inf
        a, b = divmod(int(np.argmin(totals)), core.p)
        old_a, old_b = Pa[u], Pa[v]
        Pa[u], Pa[v] = a, b
        cand_comm, cand_pen = core.full(Pa)
        if cand_comm + cand_pen < comm + pen:
            comm, pen = cand_comm, cand_pen
        else:
            Pa[u], Pa[v] = old_a, old_b
        evals += 1
    return PlacementResult(
        Placement(tuple(int(n) for n in Pa), D.p),
        CostBreakdown(comm, pen),
        iterations=evals,
        elapsed=time.perf_counter() - start,
    )


def parallel_place(
    T: TrafficStressGraph,
    D: DelayMatrix,
    P0: Placement,
    res: list[ResourceVector],
    cap: list[ResourceVector],
    workers: int,
    w: CostWeights,
) -> PlacementResult:
    """One round of chunked greedy search with best-of reduction.

    Every worker starts from the same placement and explores only its own
    chunk; results are reduced by (total cost, assignment) so the outcome is
    identical whether chunks run threaded or serially.
    """
    start = time.perf_counter()
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    plan = chunk_pairs(sort_pairs(T), workers)

    if not plan.chunks:
        cost = calc_cost(T, P0, D, res, cap, w)
        return PlacementResult(P0, cost, 0, time.perf_counter() - start)

    if len(plan.chunks) == 1:
        results = [place_worker(T, D, P0, res, cap, plan.chunks[0], w)]
    else:
        with ThreadPoolExecutor(max_workers=len(plan.chunks)) as pool:
            futures = [
                pool.submit(place_worker, T, D, P0, res, cap, chunk, w)
                for chunk in plan.chunks
            ]
            results = [f.result() for f in futures]

    best = min(results, key=lambda r: (r.cost.total, r.placement.assignment))
    return PlacementResult(
        best.placement,
        best.cost,
        iterations=sum(r.iterations for r in results),
        elapsed=time.perf_counter() - start,
    )


def solve_placement(
    T: TrafficStressGraph,
    D: DelayMatrix,
    P0: Placement,
    res: list[ResourceVector],
    cap: list[ResourceVector],
    workers: int,
    w: CostWeights,
    max_rounds: int = 10,
) -> PlacementResult:
    """Iterate rounds of parallel_place until the cost stops improving."""
    start = time.perf_counter()
    best_p = P0
    best_cost = calc_cost(T, P0, D, res, cap, w)
    iterations = 0
    rounds = 0
    while rounds < max_rounds:
        result = parallel_place(T, D, best_p, res, cap, workers, w)
        iterations += result.iterations
        rounds += 1
        if result.cost.total < best_cost.total:
            best_p, best_cost = result.placement, result.cost
        else:
            break
    log.debug("solve finished after %d rounds, cost %.6g", rounds, best_cost.total)
    return PlacementResult(
        best_p, best_cost, iterations, time.perf_counter() - start
    )


def brute_force_oracle(
    T: TrafficStressGraph,
    D: DelayMatrix,
    res: list[ResourceVector],
    cap: list[ResourceVector],
    w: CostWeights,
    bound: int = ORACLE_DEFAULT_BOUND,
) -> PlacementResult:
    """Exact minimizer by exhaustive enumeration of all p^k placements.

    Ties resolve to the lexicographically smallest assignment. Instances
    with more than ``bound`` placements are refused outright.
    """
    start = time.perf_counter()
    k, p = T.k, D.p
    total = p**k
    if total > bound:
        raise InstanceTooLargeError(
            f"{p}^{k} = {total} placements exceeds the oracle bound {bound}"
        )
    core = _core(T, D, res, cap, w)
    best_assignment = None
    best = (math.inf, math.inf)
    Pa = np.zeros(k, dtype=np.intp)
    for flat in range(total):
        x = flat
        for i in range(k - 1, -1, -1):
            Pa[i] = x % p
            x //= p
        comm, pen = core.full(Pa)
        if comm + pen < best[0] + best[1]:
            best = (comm, pen)
            best_assignment = tuple(int(n) for n in Pa)
    return PlacementResult(
        Placement(best_assignment, p),
        CostBreakdown(*best),
        iterations=total,
        elapsed=time.perf_counter() - start,
    )
