"""Domain types and single-slot queue dynamics.

Every queue belongs to a class ``k`` with holding weight ``a`` and service
rate ``R``.  Arrivals are uniform on ``{0, ..., R-1}`` and a scheduled queue
loses up to ``R`` packets before the slot's arrivals are added.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


@dataclass(frozen=True)
class ClassParams:
    class_id: int
    a: float
    R: int
    gamma: float = 1.0

    def __post_init__(self):
        if isinstance(self.R, bool) or int(self.R) != self.R:
            raise InvalidInputError(f"R must be an integer, got {self.R!r}")
        object.__setattr__(self, "R", int(self.R))
        if self.R < 2:
            raise InvalidInputError(f"R must be >= 2 (arrivals live in 0..R-1), got {self.R}")
        if not self.a > 0:
            raise InvalidInputError(f"a must be > 0, got {self.a}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def rho(self) -> float:
        """Probability of each arrival value."""
        return 1.0 / self.R

    @property
    def mean_arrival(self) -> float:
        return (self.R - 1) / 2.0


@dataclass(frozen=True)
class SystemConfig:
    """An N-queue, M-server experiment.

    ``counts[k]`` queues belong to ``classes[k]``; queues are laid out class
    by class in that order.  Class ``gamma`` values are rewritten from the
    counts so they always agree.
    """

    classes: tuple[ClassParams, ...]
    counts: tuple[int, ...]
    M: int
    horizon: int = 200_000
    warmup: int | None = None
    seed: int = 0
    replications: int = 20
    q0: tuple[int, ...] | None = None

    def __post_init__(self):
        classes = tuple(self.classes)
        counts = tuple(int(c) for c in self.counts)
        if not classes:
            raise InvalidInputError("at least one class is required")
        if len(counts) != len(classes):
            raise InvalidInputError("counts and classes differ in length")
        if any(c < 0 for c in counts):
            raise InvalidInputError("counts must be nonnegative")
        n = sum(counts)
        if not 0 < self.M < n:
            raise InvalidInputError(f"need 0 < M < N, got M={self.M}, N={n}")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be positive")
        warmup = self.horizon // 10 if self.warmup is None else int(self.warmup)
        if not 0 <= warmup < self.horizon:
            raise InvalidInputError("warmup must satisfy 0 <= warmup < horizon")
        if self.replications < 1:
            raise InvalidInputError("replications must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")
        ids = [c.class_id for c in classes]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("class ids must be distinct")
        if self.q0 is not None:
            q0 = tuple(int(x) for x in self.q0)
            if len(q0) != n or any(x < 0 for x in q0):
                raise InvalidInputError("q0 must hold N nonnegative integers")
            object.__setattr__(self, "q0", q0)
        classes = tuple(replace(c, gamma=cnt / n) for c, cnt in zip(classes, counts))
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "warmup", warmup)

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def alpha(self) -> float:
        return self.M / self.N

    @property
    def tail_scale(self) -> float:
        return tail_scale(self.classes)

    def queue_class_positions(self) -> np.ndarray:
        """Position in ``classes`` of every queue, in queue order."""
        return np.repeat(np.arange(len(self.classes)), self.counts)

    def initial_state(self) -> "SystemState":
        pos = self.queue_class_positions()
        q = np.zeros(self.N, dtype=np.int64) if self.q0 is None else np.array(self.q0, dtype=np.int64)
        ids = np.array([self.classes[p].class_id for p in pos], dtype=np.int64)
        return SystemState(q=q, class_ids=ids, t=0)


def tail_scale(classes: Sequence[ClassParams]) -> float:
    """max_j a_j R_j^2 over a class set."""
    return max(c.a * c.R**2 for c in classes)


@dataclass
class SystemState:
    q: np.ndarray
    class_ids: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.int64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.q.shape != self.class_ids.shape:
            raise InvalidInputError("q and class_ids must have equal length")
        if np.any(self.q < 0):
            raise InvalidInputError("queue lengths must be nonnegative")

    @property
    def N(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class Action:
    scheduled: frozenset = field(default_factory=frozenset)

    def check(self, M: int) -> None:
        if len(self.scheduled) > M:
            raise InvalidInputError(f"{len(self.scheduled)} queues scheduled with only {M} servers")

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n, dtype=bool)
        m[list(self.scheduled)] = True
        return m


@dataclass
class CostAccumulator:
    weighted_queue_sum: float = 0.0
    slots_counted: int = 0

    def add(self, cost: float) -> None:
        self.weighted_queue_sum += cost
        self.slots_counted += 1

    def average(self) -> float:
        if self.slots_counted == 0:
            raise ZeroDivisionError("no slots accumulated")
        return self.weighted_queue_sum / self.slots_counted


def step_queue(q: int, scheduled: bool, arrival: int, params: ClassParams) -> int:
    """One slot of ``q' = (q - R*s)^+ + A``."""
    if not 0 <= arrival <= params.R - 1:
        raise InvalidInputError(f"arrival {arrival} outside 0..{params.R - 1}")
    if q < 0:
        raise InvalidInputError(f"queue length must be nonnegative, got {q}")
    served = params.R if scheduled else 0
    return max(q - served, 0) + arrival


def arrival_stream(seed: int, replication: int, queue: int) -> np.random.Generator:
    """Deterministic generator owned by one queue in one replication.

    Streams are keyed only by (seed, replication, queue), so two policies run
    on the same seed see the same arrivals.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replication, queue))
    return np.random.Generator(np.random.PCG64(ss))


def sample_arrival(params: ClassParams, rng: np.random.Generator) -> int:
    return int(rng.integers(0, params.R))


def sample_arrivals(params: ClassParams, rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, params.R, size=size, dtype=np.int64)


def slot_cost(state: SystemState, classes: Sequence[ClassParams]) -> float:
    """Sum of a_k * q over all queues."""
    weight = {c.class_id: c.a for c in classes}
    a = np.array([weight[int(k)] for k in state.class_ids], dtype=float)
    return float(a @ state.q)
