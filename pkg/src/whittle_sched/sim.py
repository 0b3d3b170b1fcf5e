"""Slotted simulation of N queues sharing M servers.

Within a slot the order is: record the cost of the current state (if past
warmup), choose the queues to serve, remove up to R packets from each served
queue, then add the slot's arrivals.  The reported cost is the time average
of sum_k a_k q over the post-warmup slots, divided by N, which estimates the
long-run average cost per user.

Arrivals come from one generator per (replication, queue), so every policy
run on the same seed sees the same arrival sequences.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np

from .model import (Action, CostAccumulator, InvalidInputError, SystemConfig, SystemState,
                    arrival_stream, sample_arrivals, slot_cost, step_queue)
from .policies import PolicyKind, decide
from .relaxed import lagrangian_lower_bound

CHUNK = 4096
QUEUE_LIMIT = 2**40
_KIND_CODES = {"wi": 0, "md": 1, "md-rate": 2, "rand": 3}

ArrivalSource = Callable[[int, int, int], np.ndarray]


class InstabilityError(RuntimeError):
    def __init__(self, queue: int, replication: int, slot: int):
        super().__init__(f"queue {queue} exceeded the overflow guard in replication {replication} near slot {slot}")
        self.queue = queue
        self.replication = replication
        self.slot = slot


@dataclass
class SimResult:
    policy: str
    N: int
    M: int
    rep_means: list[float]
    mean: float
    stderr: float
    slots: int
    seed: int
    max_scheduled: int = 0

    @classmethod
    def from_reps(cls, policy, config: SystemConfig, rep_means, max_scheduled=0):
        rep_means = [float(x) for x in rep_means]
        n = len(rep_means)
        mean = float(np.mean(rep_means))
        se = float(np.std(rep_means, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        return cls(policy, config.N, config.M, rep_means, mean, se,
                   config.horizon - config.warmup, config.seed, max_scheduled)


@numba.njit(nogil=True, cache=True)
def _simulate_chunk(q, cls_pos, cls_rank, a, R, table, kind, M, arrivals, noise,
                    t0, warmup, queue_limit):
    """Advance ``q`` in place through ``len(arrivals)`` slots.

    Returns (cost sum, slots costed, max servers used, offending queue or -1,
    slot of the offence).
    """
    T, N = arrivals.shape
    K = a.shape[0]
    cost_sum = 0.0
    counted = 0
    max_used = 0
    cand = np.empty(N, dtype=np.int64)
    sc = np.empty(N, dtype=np.float64)
    tie = np.empty(N, dtype=np.int64)
    for s in range(T):
        if t0 + s >= warmup:
            c = 0.0
            for i in range(N):
                c += a[cls_pos[i]] * q[i]
            cost_sum += c
            counted += 1
        m = 0
        for i in range(N):
            if q[i] > 0:
                cand[m] = i
                m += 1
        if m > M:
            for j in range(m):
                i = cand[j]
                k = cls_pos[i]
                if kind == 0:
                    sc[j] = table[k, min(q[i], R[k])]
                elif kind == 1:
                    sc[j] = a[k] * q[i]
                elif kind == 2:
                    sc[j] = a[k] * min(q[i], R[k])
                else:
                    sc[j] = noise[s, i]
                tie[j] = (queue_limit - q[i]) * (K * N) + cls_rank[k] * N + i
            order = np.argsort(tie[:m])
            order = order[np.argsort(-sc[:m][order], kind="mergesort")]
            used = M
            for j in range(M):
                i = cand[order[j]]
                q[i] = max(q[i] - R[cls_pos[i]], 0)
        else:
            used = m
            for j in range(m):
                i = cand[j]
                q[i] = max(q[i] - R[cls_pos[i]], 0)
        if used > max_used:
            max_used = used
        for i in range(N):
            q[i] += arrivals[s, i]
            if q[i] >= queue_limit:
                return cost_sum, counted, max_used, i, t0 + s
    return cost_sum, counted, max_used, -1, -1


def _kernel_inputs(config: SystemConfig, kind: PolicyKind):
    classes = config.classes
    cls_pos = config.queue_class_positions().astype(np.int64)
    order = sorted(range(len(classes)), key=lambda k: classes[k].class_id)
    cls_rank = np.empty(len(classes), dtype=np.int64)
    cls_rank[order] = np.arange(len(classes))
    a = np.array([c.a for c in classes], dtype=np.float64)
    R = np.array([c.R for c in classes], dtype=np.int64)
    table = kind.index_table(classes)
    table = table.padded() if table is not None else np.zeros((len(classes), 1))
    return cls_pos, cls_rank, a, R, table


def default_arrivals(config: SystemConfig, replication: int) -> ArrivalSource:
    """Per-queue arrival streams, drawn in fixed chunks for reproducibility."""
    streams = [arrival_stream(config.seed, replication, i) for i in range(config.N)]
    params = [config.classes[p] for p in config.queue_class_positions()]

    def source(rep, t0, size):
        out = np.empty((size, config.N), dtype=np.int64)
        for i, (rng, c) in enumerate(zip(streams, params)):
            out[:, i] = sample_arrivals(c, rng, size)
        return out

    return source


def policy_stream(config: SystemConfig, replication: int) -> np.random.Generator:
    """Generator for randomised policies; distinct from every arrival stream."""
    return arrival_stream(config.seed, replication, config.N)


def run_replication(config: SystemConfig, kind: PolicyKind, replication: int,
                    arrivals: ArrivalSource | None = None, queue_limit: int = QUEUE_LIMIT) -> tuple[float, int]:
    """Average cost per user per slot for one replication, plus max servers used."""
    cls_pos, cls_rank, a, R, table = _kernel_inputs(config, kind)
    source = arrivals or default_arrivals(config, replication)
    prng = policy_stream(config, replication) if kind.name == "rand" else None
    q = config.initial_state().q.copy()
    total, counted, max_used = 0.0, 0, 0
    empty_noise = np.zeros((1, 1))
    for t0 in range(0, config.horizon, CHUNK):
        size = min(CHUNK, config.horizon - t0)
        arr = np.ascontiguousarray(source(replication, t0, size), dtype=np.int64)
        noise = prng.random((size, config.N)) if prng is not None else empty_noise
        c, n, used, bad, slot = _simulate_chunk(q, cls_pos, cls_rank, a, R, table, _KIND_CODES[kind.name],
                                                config.M, arr, noise, t0, config.warmup, queue_limit)
        if bad >= 0:
            raise InstabilityError(int(bad), replication, int(slot))
        total += c
        counted += n
        max_used = max(max_used, used)
    return total / (counted * config.N), max_used


def worker_count(requested: int | None = None) -> int:
    if requested is None:
        requested = int(os.environ.get("WHITTLE_SCHED_THREADS", "0") or 0)
    return requested if requested > 0 else (os.cpu_count() or 1)


def run(config: SystemConfig, kind: PolicyKind, arrivals: ArrivalSource | None = None,
        queue_limit: int = QUEUE_LIMIT, threads: int | None = None) -> SimResult:
    """Simulate every replication and pool the per-replication means."""
    reps = range(config.replications)
    workers = min(worker_count(threads), config.replications)

    def one(r):
        return run_replication(config, kind, r, arrivals, queue_limit)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(one, reps))
    else:
        outs = [one(r) for r in reps]
    return SimResult.from_reps(kind.label, config, [o[0] for o in outs], max(o[1] for o in outs))


@dataclass
class Trace:
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    accumulator: CostAccumulator = field(default_factory=CostAccumulator)


def run_reference(config: SystemConfig, kind: PolicyKind, replication: int = 0,
                  arrivals: ArrivalSource | None = None) -> Trace:
    """Slow slot-by-slot simulation through :func:`decide` and :func:`step_queue`.

    Records every state and action and asserts the server limit each slot.
    Follows the same stream layout as :func:`run_replication`, so the two
    agree exactly on the same seed.
    """
    source = arrivals or default_arrivals(config, replication)
    prng = policy_stream(config, replication) if kind.name == "rand" else None
    table = kind.index_table(config.classes)
    state = config.initial_state()
    params = [config.classes[p] for p in config.queue_class_positions()]
    trace = Trace()
    for t0 in range(0, config.horizon, CHUNK):
        size = min(CHUNK, config.horizon - t0)
        arr = source(replication, t0, size)
        noise = prng.random((size, config.N)) if prng is not None else None
        for s in range(size):
            t = t0 + s
            trace.states.append(state.q.copy())
            if t >= config.warmup:
                trace.accumulator.add(slot_cost(state, config.classes))
            slot_rng = _FixedNoise(noise[s]) if noise is not None else None
            act = decide(kind, state, config, table, slot_rng)
            act.check(config.M)
            trace.actions.append(act)
            served = act.mask(config.N)
            q = np.array([step_queue(int(state.q[i]), bool(served[i]), int(arr[s, i]), params[i])
                          for i in range(config.N)], dtype=np.int64)
            state = SystemState(q, state.class_ids, t + 1)
    return trace


class _FixedNoise:
    """Replays one pre-drawn row of uniforms through the Generator.random API."""

    def __init__(self, row):
        self.row = row

    def random(self, size=None):
        return self.row if size is not None else float(self.row[0])


def scale_config(config: SystemConfig, N: int) -> tuple[SystemConfig, list[str]]:
    """Same class mix and server ratio at a new population size.

    Counts use largest-remainder rounding and ``M = floor(alpha N)``; any
    rounding is reported in the returned notes.
    """
    notes = []
    shares = [c / config.N * N for c in config.counts]
    counts = [math.floor(x) for x in shares]
    rest = N - sum(counts)
    by_frac = sorted(range(len(shares)), key=lambda k: (-(shares[k] - counts[k]), k))
    for k in by_frac[:rest]:
        counts[k] += 1
    if any(abs(c - x) > 1e-9 for c, x in zip(counts, shares)):
        notes.append(f"N={N}: class counts rounded to {counts}")
    exact_M = config.M / config.N * N
    M = math.floor(exact_M + 1e-9)
    if abs(M - exact_M) > 1e-9:
        notes.append(f"N={N}: M rounded down from {exact_M:g} to {M}")
    return replace(config, counts=tuple(counts), M=M, q0=None), notes


@dataclass
class SweepRow:
    N: int
    M: int
    results: dict[str, SimResult]
    lower_bound: float

    def gap(self, policy: str = "wi") -> float:
        return (self.results[policy].mean - self.lower_bound) / self.lower_bound


@dataclass
class SweepResult:
    rows: list[SweepRow]
    notes: list[str]

    def gap_shrinks(self, policy: str = "wi") -> bool:
        return self.rows[-1].gap(policy) < self.rows[0].gap(policy)


def sweep(config: SystemConfig, N_list: Sequence[int], kinds: Sequence[PolicyKind] | None = None,
          threads: int | None = None) -> SweepResult:
    N_list = list(N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise InvalidInputError("N_list must be strictly increasing")
    kinds = list(kinds) if kinds else [PolicyKind("wi"), PolicyKind("md")]
    rows, notes = [], []
    for N in N_list:
        cfg, why = scale_config(config, N)
        notes.extend(why)
        results = {k.label: run(cfg, k, threads=threads) for k in kinds}
        bound = lagrangian_lower_bound(cfg).lower_bound_cost
        rows.append(SweepRow(N, cfg.M, results, bound))
    return SweepResult(rows, notes)
