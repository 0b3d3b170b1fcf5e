"""Relaxed-problem lower bound.

Replacing the per-slot server limit by a time-average limit decouples the
queues.  For a subsidy ``W`` every class then runs the threshold policy
picked out by the average-cost index table, and the subsidy is tuned until
the expected number of busy servers meets ``M``.  At the critical subsidy
the classes whose index jumps there randomise between their two adjacent
thresholds so that the budget is met exactly.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .model import ClassParams, InvalidInputError, SystemConfig
from .whittle import IndexTable

TAIL_MASS_LIMIT = 1e-8


class TruncationError(RuntimeError):
    """Too much stationary mass sits next to the truncation cap."""


class InfeasibleError(RuntimeError):
    """The server budget cannot keep every queue stable."""


@dataclass
class StationaryDistribution:
    class_id: int
    threshold: int
    u: np.ndarray
    activation_prob: float
    mean_weighted_q: float

    @property
    def mean_q(self) -> float:
        return float(np.arange(len(self.u)) @ self.u)


def default_q_cap(params: ClassParams, n: int) -> int:
    return n + max(20 * params.R, 200)


def threshold_kernel(params: ClassParams, n: int, q_cap: int) -> sp.csr_matrix:
    """Transition matrix of "passive iff q <= n", clamped at ``q_cap``."""
    R = params.R
    q = np.arange(q_cap + 1)
    base = np.where(q <= n, q, np.maximum(q - R, 0))
    rows = np.repeat(q, R)
    cols = np.minimum((base[:, None] + np.arange(R)).ravel(), q_cap)
    return sp.csr_matrix((np.full(rows.size, 1.0 / R), (rows, cols)), shape=(q_cap + 1, q_cap + 1))


def stationary_distribution(params: ClassParams, n: int, q_cap: int | None = None) -> StationaryDistribution:
    if n < -1 or n == math.inf:
        raise InvalidInputError("threshold must be a finite integer >= -1")
    n = int(n)
    R = params.R
    q_cap = default_q_cap(params, n) if q_cap is None else int(q_cap)
    if q_cap < n + 10 * R:
        raise InvalidInputError(f"q_cap must be at least n + 10R = {n + 10 * R}")
    P = threshold_kernel(params, n, q_cap)
    A = (P.T - sp.identity(q_cap + 1)).tolil()
    A[q_cap, :] = 1.0
    b = np.zeros(q_cap + 1)
    b[q_cap] = 1.0
    u = spla.spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(u)):
        raise np.linalg.LinAlgError(f"singular balance equations for threshold {n}")
    if np.min(u) < -1e-10:
        raise np.linalg.LinAlgError(f"negative stationary mass {np.min(u):.3e}")
    u = np.clip(u, 0.0, None)
    u /= u.sum()
    if u[q_cap - 2 * R + 1:].sum() > TAIL_MASS_LIMIT:
        raise TruncationError(f"mass near q_cap={q_cap} exceeds {TAIL_MASS_LIMIT}")
    q = np.arange(q_cap + 1)
    return StationaryDistribution(
        class_id=params.class_id,
        threshold=n,
        u=u,
        activation_prob=float(u[q > n].sum()),
        mean_weighted_q=float(params.a * (q @ u)),
    )


def activation_curve(params: ClassParams, n_range: Iterable[float]) -> list[tuple[float, float]]:
    """(threshold, long-run activation probability) pairs.

    ``math.inf`` stands for the all-passive policy, whose activation is 0.
    """
    out = []
    for n in n_range:
        if n == math.inf:
            out.append((n, 0.0))
        else:
            out.append((n, stationary_distribution(params, int(n)).activation_prob))
    if not out:
        raise InvalidInputError("n_range is empty")
    return out


@dataclass
class ClassAllocation:
    class_id: int
    count: int
    lower: int
    upper: int
    weight_lower: float
    activation: float
    cost: float


@dataclass
class RelaxedSolution:
    W_star: float
    allocations: list[ClassAllocation]
    achieved_activation: float
    budget: float
    binding: bool
    lower_bound_cost: float


def _class_curves(params: ClassParams) -> tuple[np.ndarray, np.ndarray]:
    stats = [stationary_distribution(params, n) for n in range(params.R)]
    act = np.array([s.activation_prob for s in stats])
    cost = np.array([s.mean_weighted_q for s in stats])
    return act, cost


def relaxed_bound(classes: Sequence[ClassParams], counts: Sequence[int], M: float) -> RelaxedSolution:
    """Lagrangian lower bound for explicit class counts and budget ``M``.

    ``M >= N`` is allowed here (the budget then never binds).
    """
    classes = tuple(classes)
    counts = [int(c) for c in counts]
    N = sum(counts)
    if N <= 0 or M <= 0:
        raise InvalidInputError("need N > 0 and M > 0")
    table = IndexTable(classes, "limit")
    curves = [_class_curves(c) for c in classes]

    def thresholds(W, strict=False):
        out = []
        for k, c in enumerate(classes):
            vals = table.values[k]
            below = vals[:-1] < W if strict else vals[:-1] <= W
            if (vals[-1] < W) if strict else (vals[-1] <= W):
                out.append(math.inf)
            else:
                out.append(int(np.flatnonzero(below).max()) if below.any() else -1)
        return out

    def activation(ths):
        total = 0.0
        for k, n in enumerate(ths):
            if n != math.inf:
                total += counts[k] * (curves[k][0][n] if n >= 0 else 1.0)
        return total

    def alloc(k, lo, hi, lam):
        act_k, cost_k = curves[k]
        if hi == math.inf:
            raise InfeasibleError(
                f"budget M={M} is below the stability requirement; class {classes[k].class_id} would go all-passive")
        a = lam * act_k[lo] + (1 - lam) * act_k[hi]
        cst = lam * cost_k[lo] + (1 - lam) * cost_k[hi]
        return ClassAllocation(classes[k].class_id, counts[k], lo, hi, lam, float(a), float(cst))

    def finish(W, allocs):
        used = sum(x.count * x.activation for x in allocs)
        bound = sum(x.count * x.cost for x in allocs) / N
        return RelaxedSolution(float(W), allocs, float(used), float(M), W > 0, float(bound))

    ths0 = thresholds(0.0)
    if activation(ths0) <= M:
        return finish(0.0, [alloc(k, n, min(n + 1, classes[k].R - 1), 1.0) for k, n in enumerate(ths0)])

    breakpoints = sorted({float(v) for row in table.values for v in row if v > 0})
    acts = [activation(thresholds(b)) for b in breakpoints]
    if any(y > x + 1e-12 for x, y in zip(acts, acts[1:])):
        raise RuntimeError("activation is not monotone in W; index table inconsistent")
    # smallest breakpoint at which the budget is met
    pos = bisect.bisect_left([-x for x in acts], -M)
    if pos == len(breakpoints):
        raise InfeasibleError("budget cannot be met at any subsidy")
    W_star = breakpoints[pos]
    left, right = thresholds(W_star, strict=True), thresholds(W_star)
    act_left, act_right = activation(left), activation(right)
    lam = (M - act_right) / (act_left - act_right) if act_left > act_right else 1.0
    lam = float(min(max(lam, 0.0), 1.0))
    allocs = []
    for k in range(len(classes)):
        if left[k] != right[k]:
            allocs.append(alloc(k, left[k], right[k], lam))
        else:
            n = right[k]
            allocs.append(alloc(k, n, n, 1.0))
    return finish(W_star, allocs)


def lagrangian_lower_bound(config: SystemConfig) -> RelaxedSolution:
    return relaxed_bound(config.classes, config.counts, config.M)


def occupation_measure_lp(
    classes: Sequence[ClassParams],
    counts: Sequence[int],
    M: float,
    q_cap: int | None = None,
) -> float:
    """Per-user optimum of the relaxed average-cost problem by linear programming.

    Variables are state-action frequencies x_k(q, s) on ``0..q_cap`` per
    class, with overflow clamped at the cap.  Independent of the index
    machinery; meant for small instances.
    """
    N = sum(counts)
    blocks = []
    for c in classes:
        cap = q_cap if q_cap is not None else 40 * c.R
        blocks.append(cap)
    sizes = [2 * (cap + 1) for cap in blocks]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    nvar = int(offsets[-1])
    cost = np.zeros(nvar)
    A_eq, b_eq = [], []
    budget = np.zeros(nvar)
    for k, (c, cap) in enumerate(zip(classes, blocks)):
        off = offsets[k]
        q = np.arange(cap + 1)
        # variable layout: x(q, 0) at off + q, x(q, 1) at off + cap + 1 + q
        cost[off: off + cap + 1] = counts[k] * c.a * q / N
        cost[off + cap + 1: off + 2 * (cap + 1)] = counts[k] * c.a * q / N
        budget[off + cap + 1: off + 2 * (cap + 1)] = counts[k]
        bal = np.zeros((cap + 1, nvar))
        for s in (0, 1):
            base = q if s == 0 else np.maximum(q - c.R, 0)
            col = off + s * (cap + 1) + q
            bal[q, col] += 1.0
            for j in range(c.R):
                np.add.at(bal, (np.minimum(base + j, cap), col), -1.0 / c.R)
        A_eq.append(bal)
        b_eq.append(np.zeros(cap + 1))
        norm = np.zeros((1, nvar))
        norm[0, off: off + 2 * (cap + 1)] = 1.0
        A_eq.append(norm)
        b_eq.append(np.ones(1))
    res = linprog(
        cost,
        A_ub=budget[None, :],
        b_ub=[M],
        A_eq=np.vstack(A_eq),
        b_eq=np.concatenate(b_eq),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleError(f"occupation-measure LP failed: {res.message}")
    return float(res.fun)
