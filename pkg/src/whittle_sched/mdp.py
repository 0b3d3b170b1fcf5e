"""Numerical oracle for the single-queue discounted subproblem.

The queue is solved on ``0..q_max``.  Arrivals that would push the state past
``q_max`` are clamped there, and each overflowing packet is charged
``a / (1 - beta)``, the exact marginal value of a packet that is never served.
This keeps the all-passive value function affine with slope ``a / (1 - beta)``
right up to the boundary, so the index at ``n >= R`` is not dragged down by
the artificial cap.  ``tail="clamp"`` drops the charge and gives plain
clamping.

Value iteration uses the span stopping rule: once the spread of
``T V - V`` is at most ``2 tol`` the iterate is shifted by the midpoint
extrapolation, which guarantees a sup-norm Bellman residual of at most
``tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ClassParams, InvalidInputError
from .whittle import _check_beta

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 1_000_000
DEFAULT_TOL_W = 1e-4


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class IndexabilityError(RuntimeError):
    """The passive set did not grow monotonically with the subsidy."""


def default_q_max(R: int) -> int:
    return max(50 * R, 500)


@dataclass
class TruncatedMdp:
    params: ClassParams
    W: float
    beta: float
    q_max: int | None = None
    tail: str = "affine"

    def __post_init__(self):
        _check_beta(self.beta)
        R = self.params.R
        q_max = default_q_max(R) if self.q_max is None else int(self.q_max)
        q_max = R * math.ceil(q_max / R)
        if q_max < 10 * R:
            raise InvalidInputError(f"q_max must be at least 10*R = {10 * R}, got {q_max}")
        if self.tail not in ("affine", "clamp"):
            raise InvalidInputError(f"unknown tail treatment {self.tail!r}")
        self.q_max = q_max
        self.states = np.arange(q_max + 1)
        self._holding = self.params.a * self.states.astype(float)
        self._active_base = np.maximum(self.states - R, 0)
        # expected overflow charge under the passive action, state by state
        j = np.arange(R)
        over = np.maximum(self.states[:, None] + j[None, :] - q_max, 0).sum(axis=1)
        slope = self.params.a / (1.0 - self.beta) if self.tail == "affine" else 0.0
        self._overflow = over * slope / R

    @property
    def n_states(self) -> int:
        return self.q_max + 1

    def expected_next(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """E[V(next) | q, s] for s = 0 and s = 1, including the overflow charge."""
        R = self.params.R
        ext = np.concatenate((V, np.full(R - 1, V[-1])))
        c = np.concatenate(([0.0], np.cumsum(ext)))
        passive = (c[R:] - c[:-R]) / R + self._overflow
        active = passive[self._active_base]
        return passive, active

    def q_values(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Ep, Ea = self.expected_next(V)
        Q0 = self._holding + self.beta * Ep
        Q1 = self._holding + self.W + self.beta * Ea
        return Q0, Q1

    def transition_matrix(self, action: int) -> sp.csr_matrix:
        """Row-stochastic kernel for a fixed action on all states."""
        R, n = self.params.R, self.n_states
        base = self.states if action == 0 else self._active_base
        rows = np.repeat(self.states, R)
        cols = np.minimum((base[:, None] + np.arange(R)[None, :]).ravel(), self.q_max)
        data = np.full(rows.size, 1.0 / R)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def overflow_charge(self, action: int) -> np.ndarray:
        if action == 1:
            return np.zeros(self.n_states)
        return self._overflow.copy()


@dataclass
class DiscountedMdpSolution:
    mdp: TruncatedMdp
    V: np.ndarray
    action: np.ndarray
    threshold: int | None
    residual: float
    iterations: int
    Q0: np.ndarray
    Q1: np.ndarray
    tol: float = DEFAULT_TOL


@dataclass
class PolicyEvaluation:
    mdp: TruncatedMdp
    n: float
    V: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    residual: float

    def gap(self, q: int) -> float:
        """C1(q) - C0(q)."""
        return float(self.C1[q] - self.C0[q])


def value_iteration(
    mdp: TruncatedMdp,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    V0: np.ndarray | None = None,
) -> DiscountedMdpSolution:
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    beta = mdp.beta
    V = np.zeros(mdp.n_states) if V0 is None else np.array(V0, dtype=float)
    spread = math.inf
    for it in range(1, max_iter + 1):
        Q0, Q1 = mdp.q_values(V)
        TV = np.minimum(Q0, Q1)
        d = TV - V
        lo, hi = d.min(), d.max()
        spread = hi - lo
        V = TV
        if spread <= 2.0 * tol:
            V = V + 0.5 * (lo + hi) * beta / (1.0 - beta)
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations", spread / 2)
    Q0, Q1 = mdp.q_values(V)
    residual = float(np.max(np.abs(np.minimum(Q0, Q1) - V)))
    # ties, up to the iteration error, go to the passive action
    tie = 2.0 * tol * beta / (1.0 - beta) + 1e-14 * float(np.max(np.abs(V)))
    action = (Q1 < Q0 - tie).astype(np.int8)
    sol = DiscountedMdpSolution(mdp, V, action, None, residual, it, Q0, Q1, tol)
    sol.threshold = extract_threshold(sol)
    return sol


def extract_threshold(solution, band: int | None = None) -> int | None:
    """Last passive state of a monotone action vector.

    ``solution`` is a :class:`DiscountedMdpSolution` or a bare 0/1 sequence.
    The top ``band`` states (default ``R``) are ignored.  Returns ``q_max``
    when every considered state is passive, ``-1`` when every one is active,
    and ``None`` if the actions are not of threshold form.
    """
    if isinstance(solution, DiscountedMdpSolution):
        action = solution.action
        q_max = solution.mdp.q_max
        band = solution.mdp.params.R if band is None else band
    else:
        action = np.asarray(solution)
        q_max = len(action) - 1
        band = 0 if band is None else band
    considered = np.asarray(action[: len(action) - band] if band else action)
    if considered.size == 0:
        return None
    if not np.any(considered):
        return q_max
    first_active = int(np.argmax(considered))
    if not np.all(considered[first_active:]):
        return None
    return first_active - 1


def evaluate_threshold_policy(mdp: TruncatedMdp, n: float | None, tol: float = DEFAULT_TOL) -> PolicyEvaluation:
    """Discounted value of "passive iff q <= n" on the truncated space.

    ``n = None`` or ``math.inf`` is the all-passive policy.
    """
    if n is None or n == math.inf:
        n = math.inf
        active = np.zeros(mdp.n_states, dtype=bool)
    else:
        if not -1 <= n <= mdp.q_max:
            raise InvalidInputError(f"threshold must lie in [-1, {mdp.q_max}], got {n}")
        active = mdp.states > n
    P0, P1 = mdp.transition_matrix(0), mdp.transition_matrix(1)
    act = sp.diags(active.astype(float))
    pas = sp.diags((~active).astype(float))
    P = (pas @ P0 + act @ P1).tocsc()
    cost = mdp._holding + mdp.W * active + mdp.beta * np.where(active, 0.0, mdp.overflow_charge(0))
    A = (sp.identity(mdp.n_states, format="csc") - mdp.beta * P).tocsc()
    lu = spla.splu(A)
    V = lu.solve(cost)
    residual = np.inf
    for _ in range(4):
        r = cost - A @ V
        residual = float(np.max(np.abs(r)))
        if residual <= tol:
            break
        V = V + lu.solve(r)
    else:
        raise ConvergenceError("fixed-policy solve did not reach tolerance", residual)
    C0, C1 = mdp.q_values(V)
    return PolicyEvaluation(mdp, n, V, C0, C1, residual)


def numeric_whittle_index(
    params: ClassParams,
    n: int,
    beta: float,
    tol_W: float = DEFAULT_TOL_W,
    q_max: int | None = None,
    tol: float = DEFAULT_TOL,
    grid_points: int = 5,
    tail: str = "affine",
) -> float:
    """Smallest subsidy making the passive action optimal at state ``n``.

    Bisection on ``[0, 2 a R beta / (1 - beta)]``.  ``grid_points`` extra
    subsidies spread over the bracket are checked for a monotone passive
    predicate before bisecting.
    """
    _check_beta(beta)
    if n < 0:
        raise InvalidInputError("state must be nonnegative")
    lo, hi = 0.0, 2.0 * params.a * params.R * beta / (1.0 - beta)
    mdp = TruncatedMdp(params, lo, beta, q_max, tail)
    if n > mdp.q_max - params.R:
        raise InvalidInputError(f"state {n} too close to the truncation bound {mdp.q_max}")
    V = None

    def passive_at(W):
        nonlocal V
        mdp.W = W
        sol = value_iteration(mdp, tol, V0=V)
        V = sol.V
        return sol.action[n] == 0

    seen = [(W, passive_at(W)) for W in np.linspace(lo, hi, max(grid_points, 2))]
    flags = [p for _, p in seen]
    if any(a and not b for a, b in zip(flags, flags[1:])):
        raise IndexabilityError(f"passive set shrinks with W at state {n}: {seen}")
    if not flags[-1]:
        raise IndexabilityError(f"state {n} still active at W={hi}")
    if flags[0]:
        return lo
    for (w0, p0), (w1, p1) in zip(seen, seen[1:]):
        if not p0 and p1:
            lo, hi = w0, w1
            break
    while hi - lo > tol_W:
        mid = 0.5 * (lo + hi)
        if passive_at(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class StructureReport:
    monotone: bool
    r_convex: bool
    submodular: bool
    interior_max: int
    evaluation_monotone: bool | None = None
    evaluation_r_convex: bool | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checks = [self.monotone, self.r_convex, self.submodular,
                  self.evaluation_monotone, self.evaluation_r_convex]
        return all(c for c in checks if c is not None)


def _monotone(V, hi, atol):
    return bool(np.all(np.diff(V[: hi + 1]) >= -atol))


def _r_convex(V, R, hi, atol):
    # V(y+R) - V(x+R) >= V(y) - V(x) for all x < y <= hi reduces to the
    # first differences D satisfying D(x+R) >= D(x).
    D = np.diff(V[: hi + R + 1])
    return bool(np.all(D[R:] - D[:-R] >= -atol))


def certify_structure(
    solution: DiscountedMdpSolution,
    evaluation: PolicyEvaluation | None = None,
    atol: float | None = None,
) -> StructureReport:
    """Check monotone V, R-convex V and submodular Q on ``[0, q_max - 2R]``.

    The default tolerance is four times the value-iteration error bound
    ``tol / (1 - beta)`` plus a rounding allowance.
    """
    mdp = solution.mdp
    R = mdp.params.R
    hi = mdp.q_max - 2 * R
    V = solution.V
    if atol is None:
        atol = 4.0 * solution.tol / (1.0 - mdp.beta) + 1e-13 * float(np.max(np.abs(V)))
    adv = solution.Q1 - solution.Q0
    report = StructureReport(
        monotone=_monotone(V, hi, atol),
        r_convex=_r_convex(V, R, hi, atol),
        submodular=bool(np.all(np.diff(adv[: hi + 1]) <= atol)),
        interior_max=hi,
    )
    if evaluation is not None:
        Ve = evaluation.V
        eatol = 1e-12 * float(np.max(np.abs(Ve))) + 10 * evaluation.residual / (1.0 - mdp.beta)
        report.evaluation_monotone = _monotone(Ve, hi, eatol)
        report.evaluation_r_convex = _r_convex(Ve, R, hi, eatol)
    for name in ("monotone", "r_convex", "submodular"):
        if not getattr(report, name):
            report.notes.append(f"{name} failed (W={mdp.W}, beta={mdp.beta}, R={R})")
    return report


def threshold_monotone_in_W(
    params: ClassParams,
    beta: float,
    W_grid: Sequence[float],
    q_max: int | None = None,
    tol: float = DEFAULT_TOL,
) -> tuple[bool, list[tuple[float, int | None]]]:
    """Optimal threshold along an increasing subsidy grid.

    A ``None`` entry (non-threshold policy) counts as a violation.
    """
    W_grid = list(W_grid)
    if any(b <= a for a, b in zip(W_grid, W_grid[1:])):
        raise InvalidInputError("W_grid must be strictly increasing")
    mdp = TruncatedMdp(params, W_grid[0], beta, q_max)
    table = []
    V = None
    for W in W_grid:
        mdp.W = W
        sol = value_iteration(mdp, tol, V0=V)
        V = sol.V
        table.append((W, sol.threshold))
    ths = [t for _, t in table]
    ok = all(t is not None for t in ths) and all(b >= a for a, b in zip(ths, ths[1:]))
    return ok, table


def shift_identity_error(params: ClassParams, W: float, beta: float, q_max: int | None = None) -> float:
    """max |V^p(R+i) - V^p(i) - (aR + W)| over 0 <= i <= p <= R-1."""
    mdp = TruncatedMdp(params, W, beta, q_max)
    R = params.R
    worst = 0.0
    for p in range(R):
        ev = evaluate_threshold_policy(mdp, p)
        i = np.arange(p + 1)
        err = np.abs(ev.V[R + i] - ev.V[i] - (params.a * R + W))
        worst = max(worst, float(err.max()))
    return worst


def passive_growth_ratio(params: ClassParams, W: float, beta: float, q_max: int | None = None,
                         tail: str = "affine") -> float:
    """min over interior q of (V_inf(q+R) - V_inf(q)) / (a R / (1 - beta)).

    Interior means ``q <= q_max / 2``; the all-passive value never pays
    ``W`` so the ratio does not depend on it.
    """
    mdp = TruncatedMdp(params, W, beta, q_max, tail)
    ev = evaluate_threshold_policy(mdp, math.inf)
    R = params.R
    q = np.arange(mdp.q_max // 2 + 1)
    diff = ev.V[q + R] - ev.V[q]
    return float(np.min(diff) / (params.a * R / (1.0 - beta)))
