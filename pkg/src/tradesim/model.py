"""Shared domain types for the placement engine and cluster simulator.

Everything here is immutable after construction and safe to share across
threads: matrices are stored as read-only numpy arrays, scalar containers
are frozen dataclasses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class StructuralError(ValueError):
    """Inputs are structurally inconsistent (shape, index, or kind mismatch)."""


class ResourceMismatchError(StructuralError):
    """Two resource vectors do not share the same ordered resource-kind list."""


def _readonly(matrix) -> np.ndarray:
    arr = np.array(matrix, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ServiceId:
    """Index + label of one microservice within a scenario."""

    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise StructuralError(f"service index must be >= 0, got {self.index}")
        if not self.name:
            raise StructuralError("service name must be non-empty")


@dataclass(frozen=True)
class NodeId:
    """Index + label of one server node within a scenario."""

    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise StructuralError(f"node index must be >= 0, got {self.index}")
        if not self.name:
            raise StructuralError("node name must be non-empty")


@dataclass(frozen=True)
class ResourceVector:
    """Multi-dimensional resource amounts, compared element-wise.

    All vectors in one scenario share the same ordered kind list, e.g.
    ("cpu", "memory"). Amounts are non-negative reals.
    """

    kinds: tuple[str, ...]
    amounts: tuple[float, ...]

    def __post_init__(self):
        if len(self.kinds) != len(self.amounts):
            raise StructuralError(
                f"{len(self.kinds)} resource kinds but {len(self.amounts)} amounts"
            )
        if any(a < 0 for a in self.amounts):
            raise StructuralError(f"resource amounts must be >= 0, got {self.amounts}")

    @classmethod
    def from_mapping(cls, kinds: tuple[str, ...], mapping: dict) -> "ResourceVector":
        return cls(kinds, tuple(float(mapping.get(k, 0.0)) for k in kinds))

    @classmethod
    def zeros(cls, kinds: tuple[str, ...]) -> "ResourceVector":
        return cls(kinds, (0.0,) * len(kinds))

    def _check_kinds(self, other: "ResourceVector"):
        if self.kinds != other.kinds:
            raise ResourceMismatchError(
                f"resource-kind lists differ: {self.kinds} vs {other.kinds}"
            )

    def add(self, other: "ResourceVector") -> "ResourceVector":
        self._check_kinds(other)
        return ResourceVector(
            self.kinds, tuple(a + b for a, b in zip(self.amounts, other.amounts))
        )

    def leq(self, other: "ResourceVector") -> bool:
        self._check_kinds(other)
        return all(a <= b for a, b in zip(self.amounts, other.amounts))

    def scale(self, factor: float) -> "ResourceVector":
        if factor < 0:
            raise StructuralError("scale factor must be >= 0")
        return ResourceVector(self.kinds, tuple(a * factor for a in self.amounts))

    def as_array(self) -> np.ndarray:
        return np.array(self.amounts, dtype=float)

    def total(self) -> float:
        """Sum of all amounts; the aggregate used for least-loaded ranking."""
        return float(sum(self.amounts))


def add(a: ResourceVector, b: ResourceVector) -> ResourceVector:
    """Component-wise sum of two resource vectors sharing a kind list."""
    return a.add(b)


def leq_elementwise(a: ResourceVector, b: ResourceVector) -> bool:
    """True iff every component of ``a`` is <= the matching component of ``b``."""
    return a.leq(b)


@dataclass(frozen=True)
class ServiceSpec:
    """One deployable microservice: demand, migratability, replica count.

    Replicas are modeled as a single logical service whose placement demand
    is ``demand * replicas``; per-replica placement is out of scope here.
    """

    id: ServiceId
    demand: ResourceVector
    migratable: bool = True
    replicas: int = 1

    def __post_init__(self):
        if self.replicas < 1:
            raise StructuralError(
                f"service {self.id.name}: replicas must be >= 1, got {self.replicas}"
            )

    @property
    def placement_demand(self) -> ResourceVector:
        return self.demand.scale(self.replicas)


@dataclass(frozen=True)
class NodeSpec:
    """One server node and its capacity vector."""

    id: NodeId
    capacity: ResourceVector


@dataclass(frozen=True)
class Placement:
    """Total mapping from service index to hosting node index."""

    assignment: tuple[int, ...]
    num_nodes: int

    def __post_init__(self):
        for i, n in enumerate(self.assignment):
            if not 0 <= n < self.num_nodes:
                raise StructuralError(
                    f"assignment[{i}] = {n} is not a valid node index (p={self.num_nodes})"
                )

    @classmethod
    def from_list(cls, assignment, num_nodes: int) -> "Placement":
        return cls(tuple(int(n) for n in assignment), num_nodes)

    def __len__(self) -> int:
        return len(self.assignment)

    def __getitem__(self, service: int) -> int:
        return self.assignment[service]

    def move(self, service: int, node: int) -> "Placement":
        new = list(self.assignment)
        new[service] = node
        return Placement(tuple(new), self.num_nodes)

    def as_array(self) -> np.ndarray:
        return np.array(self.assignment, dtype=np.intp)


def _check_square_nonneg_zerodiag(matrix: np.ndarray, what: str):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"{what} must be square, got shape {matrix.shape}")
    if np.any(matrix < 0):
        raise StructuralError(f"{what} entries must be >= 0")
    if np.any(np.diag(matrix) != 0):
        raise StructuralError(f"{what} diagonal entries must be 0")


@dataclass(frozen=True)
class TrafficStressGraph:
    """k x k matrix of stress values (bytes/s) between ordered service pairs.

    Entry [u][v] holds the stress attributed to the ordered pair (u upstream,
    v downstream) over a window of ``window_s`` seconds; [v][u] carries the
    reverse attribution, so summing the full matrix against the delay matrix
    covers both directions of every dependency.
    """

    matrix: np.ndarray
    window_s: float

    def __post_init__(self):
        object.__setattr__(self, "matrix", _readonly(self.matrix))
        _check_square_nonneg_zerodiag(self.matrix, "stress graph")
        if self.window_s <= 0:
            raise StructuralError(f"window must be > 0 s, got {self.window_s}")

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, uv: tuple[int, int]) -> float:
        return float(self.matrix[uv])

    def pair_stress(self, u: int, v: int) -> float:
        """Combined stress across both call directions of an unordered pair."""
        return float(self.matrix[u, v] + self.matrix[v, u])

    def stress_degree(self, service: int) -> float:
        """Sum of stress on all edges incident to ``service``."""
        return float(self.matrix[service, :].sum() + self.matrix[:, service].sum())


@dataclass(frozen=True)
class DelayMatrix:
    """p x p one-way cross-node delays in milliseconds; not necessarily symmetric."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _readonly(self.matrix))
        _check_square_nonneg_zerodiag(self.matrix, "delay matrix")

    @classmethod
    def zeros(cls, p: int) -> "DelayMatrix":
        return cls(np.zeros((p, p)))

    @classmethod
    def constant(cls, p: int, delay_ms: float) -> "DelayMatrix":
        m = np.full((p, p), float(delay_ms))
        np.fill_diagonal(m, 0.0)
        return cls(m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, ab: tuple[int, int]) -> float:
        return float(self.matrix[ab])


@dataclass(frozen=True)
class CostWeights:
    """Direction weights for the pairwise cost plus the overflow penalty factor."""

    w_f: float = 0.5
    w_b: float = 0.5
    penalty_factor: float = 1e6

    def __post_init__(self):
        if not 0.0 <= self.w_f <= 1.0:
            raise StructuralError(f"w_f must be in [0,1], got {self.w_f}")
        if not 0.0 <= self.w_b <= 1.0:
            raise StructuralError(f"w_b must be in [0,1], got {self.w_b}")
        if self.penalty_factor <= 0:
            raise StructuralError(
                f"penalty_factor must be > 0, got {self.penalty_factor}"
            )


def demands_matrix(services: list[ServiceSpec]) -> np.ndarray:
    """k x r array of placement demands (replica-aggregated), row per service."""
    return np.array([s.placement_demand.amounts for s in services], dtype=float)


def capacities_matrix(nodes: list[NodeSpec]) -> np.ndarray:
    """p x r array of node capacities, row per node."""
    return np.array([n.capacity.amounts for n in nodes], dtype=float)
