import math

import numpy as np
import pytest

from whittle_sched.config import parse_config
from whittle_sched.model import ClassParams, InvalidInputError
from whittle_sched.relaxed import (InfeasibleError, TruncationError, activation_curve, lagrangian_lower_bound,
                                   occupation_measure_lp, relaxed_bound, stationary_distribution)
from whittle_sched.sim import scale_config

C12 = ClassParams(1, 1.0, 2)
C13 = ClassParams(1, 1.0, 3)
C25 = ClassParams(2, 2.0, 5)


def simulate_chain(params, n, slots, chains, seed):
    """Empirical occupation of the threshold chain from many parallel copies."""
    rng = np.random.default_rng(seed)
    q = np.zeros(chains, dtype=np.int64)
    hist = np.zeros(200, dtype=np.int64)
    for t in range(slots):
        q = np.where(q > n, np.maximum(q - params.R, 0), q) + rng.integers(0, params.R, chains)
        if t >= 100:
            np.add.at(hist, np.minimum(q, 199), 1)
    return hist / hist.sum()


@pytest.mark.parametrize("params, n", [(C12, 0), (C13, 1), (C25, 4)])
def test_stationary_distribution_matches_simulation(params, n):
    sd = stationary_distribution(params, n)
    assert sd.u.sum() == pytest.approx(1.0, abs=1e-12)
    emp = simulate_chain(params, n, 2100, 5000, seed=11)
    count = 2000 * 5000
    for q in range(min(len(sd.u), 40)):
        sigma = math.sqrt(max(sd.u[q] * (1 - sd.u[q]), 1e-12) / count) * 30  # correlated samples
        assert abs(emp[q] - sd.u[q]) <= 3 * sigma + 1e-6


def test_always_active_activation_is_one():
    # n = -1 is active in every state, the empty one included
    assert stationary_distribution(C13, -1).activation_prob == 1.0
    assert activation_curve(C13, [-1]) == [(-1, 1.0)]


def test_activation_and_cost_monotone():
    for params in (C12, C13, C25):
        stats = [stationary_distribution(params, n) for n in range(-1, params.R + 3)]
        acts = [s.activation_prob for s in stats]
        costs = [s.mean_weighted_q for s in stats]
        assert all(b <= a + 1e-12 for a, b in zip(acts, acts[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(costs, costs[1:]))


@pytest.mark.parametrize("params", [C12, C13, C25, ClassParams(3, 1.0, 20)])
def test_activation_above_R_minus_one(params):
    R = params.R
    for n in (R - 1, R, 2 * R + 1):
        assert stationary_distribution(params, n).activation_prob == pytest.approx((R - 1) / (2 * R), abs=1e-10)
    assert activation_curve(params, [math.inf]) == [(math.inf, 0.0)]


def test_stationary_distribution_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        stationary_distribution(C13, -2)
    with pytest.raises(InvalidInputError):
        stationary_distribution(C13, 1, q_cap=20)
    with pytest.raises(InvalidInputError):
        activation_curve(C13, [])


def test_truncation_guard(monkeypatch):
    from whittle_sched import relaxed
    monkeypatch.setattr(relaxed, "TAIL_MASS_LIMIT", 0.0)
    with pytest.raises(TruncationError):
        stationary_distribution(C25, 40, q_cap=90)


@pytest.mark.parametrize("M, expected", [(1, 0.5), (0.8, 0.7), (0.6, 0.9), (0.5, 1.0)])
def test_single_class_toy_against_lp(M, expected):
    sol = relaxed_bound([C12], [2], M)
    lp = occupation_measure_lp([C12], [2], M)
    assert lp == pytest.approx(expected, abs=1e-6)
    assert sol.lower_bound_cost == pytest.approx(lp, abs=1e-6)


@pytest.mark.parametrize("M", [4, 5, 7])
def test_two_class_against_lp(M):
    classes, counts = [ClassParams(1, 1.0, 3), ClassParams(2, 2.0, 5)], [4, 6]
    sol = relaxed_bound(classes, counts, M)
    assert sol.lower_bound_cost == pytest.approx(occupation_measure_lp(classes, counts, M), abs=1e-5)
    for a in sol.allocations:
        assert 0.0 <= a.weight_lower <= 1.0
    if sol.binding:
        assert sol.achieved_activation == pytest.approx(M, abs=1e-6)


def test_budget_never_binds_when_every_queue_has_a_server():
    sol = relaxed_bound([C13, C25], [2, 2], 4)
    assert sol.W_star == 0.0
    assert not sol.binding
    assert sol.achieved_activation <= 4


def test_fig1_bound_is_independent_of_N():
    base, _ = parse_config("fig1").system()
    values = []
    for N in (10, 20, 40, 80):
        cfg, _ = scale_config(base, N)
        values.append(lagrangian_lower_bound(cfg).lower_bound_cost)
    assert max(values) - min(values) < 1e-9
    assert values[0] == pytest.approx(8.0, abs=1e-9)


def test_fig2_bound_against_lp():
    base, _ = parse_config("fig2").system()
    sol = lagrangian_lower_bound(base)
    lp = occupation_measure_lp(base.classes, base.counts, base.M)
    assert sol.lower_bound_cost == pytest.approx(lp, rel=1e-4)


def test_infeasible_budget():
    with pytest.raises(InfeasibleError):
        relaxed_bound([C12], [2], 0.4)
    with pytest.raises(InvalidInputError):
        relaxed_bound([C12], [2], 0)
