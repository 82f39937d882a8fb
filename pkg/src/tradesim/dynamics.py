"""Network dynamics model: scheduled delay injection and noisy measurement.

The cluster's true cross-node delays follow a time schedule of matrices.
Injection adds a destination-specific delay on top of the base matrix while
a reserved set of destinations is passed through untouched. Measurement
returns the truth plus a small seeded noise term, mimicking ping-style
probes that always read slightly above the injected value.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, replace

import numpy as np

from .model import DelayMatrix, StructuralError

MAX_NOISE_MS = 1.5


@dataclass(frozen=True)
class ScheduleEntry:
    activation_s: float
    matrix: DelayMatrix
    label: str


@dataclass(frozen=True)
class DelaySchedule:
    """Time-ordered delay matrices; the first entry activates at t = 0."""

    entries: tuple[ScheduleEntry, ...]
    update_period_s: float

    def __post_init__(self):
        if not self.entries:
            raise StructuralError("delay schedule must contain at least one entry")
        if self.update_period_s <= 0:
            raise StructuralError("update period must be > 0 s")
        if self.entries[0].activation_s != 0:
            raise StructuralError("first schedule entry must activate at t=0")
        times = [e.activation_s for e in self.entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise StructuralError("activation times must be strictly increasing")
        dims = {e.matrix.p for e in self.entries}
        if len(dims) > 1:
            raise StructuralError(f"schedule matrices differ in dimension: {dims}")

    @property
    def p(self) -> int:
        return self.entries[0].matrix.p


@dataclass(frozen=True)
class ReservedDestinations:
    """Destination node indices exempt from injected delay."""

    indices: frozenset[int]

    @classmethod
    def none(cls) -> "ReservedDestinations":
        return cls(frozenset())

    def __contains__(self, index: int) -> bool:
        return index in self.indices


@dataclass(frozen=True)
class MeasurementNoise:
    """Seeded additive noise applied to every measured off-diagonal delay."""

    distribution: str = "uniform"
    magnitude_ms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in ("uniform", "gaussian"):
            raise StructuralError(
                f"unknown noise distribution {self.distribution!r}"
            )
        if not 0.0 <= self.magnitude_ms <= MAX_NOISE_MS:
            raise StructuralError(
                f"noise magnitude must be in [0, {MAX_NOISE_MS}] ms, got {self.magnitude_ms}"
            )

    def for_step(self, step: int) -> "MeasurementNoise":
        """Derived noise for one control tick; deterministic per (seed, step)."""
        derived = np.random.SeedSequence([self.seed, step]).generate_state(1)[0]
        return replace(self, seed=int(derived))


def active_matrix(schedule: DelaySchedule, t: float) -> DelayMatrix:
    """The matrix of the latest schedule entry with activation_time <= t."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    times = [e.activation_s for e in schedule.entries]
    idx = bisect.bisect_right(times, t) - 1
    return schedule.entries[idx].matrix


def inject(
    base: DelayMatrix, injected: DelayMatrix, reserved: ReservedDestinations
) -> DelayMatrix:
    """Base delays plus injected delays, except toward reserved destinations.

    Columns named in ``reserved`` are copied from the base bit-exactly, so
    traffic toward those destinations is never perturbed.
    """
    if base.p != injected.p:
        raise StructuralError(
            f"dimension mismatch: base {base.p} vs injected {injected.p}"
        )
    out = base.matrix + injected.matrix
    for col in reserved.indices:
        if not 0 <= col < base.p:
            raise StructuralError(f"reserved destination {col} out of range")
        out[:, col] = base.matrix[:, col]
    np.fill_diagonal(out, 0.0)
    return DelayMatrix(out)


def measure(truth: DelayMatrix, noise: MeasurementNoise) -> DelayMatrix:
    """Noisy observation of the true delay matrix.

    Every off-diagonal cell gets an independent noise sample added, clamped
    at zero; the diagonal stays zero. The same seed always reproduces the
    same measurement.
    """
    rng = np.random.default_rng(noise.seed)
    p = truth.p
    if noise.distribution == "uniform":
        samples = rng.uniform(0.0, noise.magnitude_ms, size=(p, p))
    else:
        samples = rng.normal(0.0, noise.magnitude_ms, size=(p, p))
    out = np.maximum(truth.matrix + samples, 0.0)
    np.fill_diagonal(out, 0.0)
    return DelayMatrix(out)
