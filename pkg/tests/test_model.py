import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from whittle_sched.model import (Action, ClassParams, CostAccumulator, InvalidInputError, SystemConfig,
                                 SystemState, arrival_stream, sample_arrival, sample_arrivals, slot_cost,
                                 step_queue)

R5 = ClassParams(1, 1.0, 5)


@pytest.mark.parametrize("q, s, arrival, expected", [(7, True, 3, 5), (2, True, 0, 0), (4, False, 2, 6)])
def test_step_queue_examples(q, s, arrival, expected):
    assert step_queue(q, s, arrival, R5) == expected


@pytest.mark.parametrize("arrival", [-1, 5, 9])
def test_step_queue_rejects_out_of_range_arrival(arrival):
    with pytest.raises(InvalidInputError):
        step_queue(3, False, arrival, R5)


@given(st.integers(2, 40), st.integers(0, 10**6), st.data())
def test_step_queue_properties(R, q, data):
    c = ClassParams(0, 1.0, R)
    A = data.draw(st.integers(0, R - 1))
    for s in (False, True):
        assert step_queue(q + 1, s, A, c) >= step_queue(q, s, A, c)
    assert step_queue(q, True, A, c) <= step_queue(q, False, A, c)
    if q >= R:
        assert step_queue(q, True, A, c) == q - R + A


def test_class_params_invariants():
    assert ClassParams(0, 1.0, 7).rho == 1 / 7
    for bad in (dict(a=1.0, R=1), dict(a=0.0, R=3), dict(a=-2.0, R=3), dict(a=1.0, R=2.5)):
        with pytest.raises(InvalidInputError):
            ClassParams(0, **bad)


def test_arrival_frequency_R2():
    draws = sample_arrivals(ClassParams(0, 1.0, 2), arrival_stream(1, 0, 0), 10**6)
    assert set(np.unique(draws)) == {0, 1}
    sigma = math.sqrt(0.25 / 10**6)
    assert abs(draws.mean() - 0.5) <= 3 * sigma


def test_arrival_mean_R5_and_uniformity():
    draws = sample_arrivals(R5, arrival_stream(2, 0, 3), 10**6)
    # E[A] = 2, Var[A] = (R^2 - 1) / 12 = 2
    assert abs(draws.mean() - 2.0) <= 3 * math.sqrt(2 / 10**6)
    counts = np.bincount(draws, minlength=5)
    assert stats.chisquare(counts).pvalue > 0.001


def test_arrival_streams_deterministic_and_distinct():
    s1, s2 = arrival_stream(9, 1, 4), arrival_stream(9, 1, 4)
    assert np.array_equal(sample_arrivals(R5, s1, 1000), sample_arrivals(R5, s2, 1000))
    other = sample_arrivals(R5, arrival_stream(9, 1, 5), 1000)
    assert not np.array_equal(sample_arrivals(R5, arrival_stream(9, 1, 4), 1000), other)
    assert sample_arrival(R5, arrival_stream(9, 1, 4)) in range(5)


def test_slot_cost_examples():
    one = ClassParams(1, 2.0, 3)
    assert slot_cost(SystemState([0, 0], [1, 1]), [one]) == 0
    assert slot_cost(SystemState([3, 1], [1, 1]), [one]) == 8
    c1, c2 = ClassParams(1, 1.0, 3), ClassParams(2, 3.0, 3)
    assert slot_cost(SystemState([4, 2], [1, 2]), [c1, c2]) == 10


def test_system_config_validation_and_gammas():
    cfg = SystemConfig((ClassParams(1, 1.0, 5), ClassParams(2, 1.0, 20)), (3, 1), M=2, horizon=100)
    assert cfg.N == 4 and cfg.alpha == 0.5 and cfg.warmup == 10
    assert [c.gamma for c in cfg.classes] == [0.75, 0.25]
    assert list(cfg.queue_class_positions()) == [0, 0, 0, 1]
    assert cfg.tail_scale == 400
    with pytest.raises(InvalidInputError):
        SystemConfig((R5,), (4,), M=4)
    with pytest.raises(InvalidInputError):
        SystemConfig((R5,), (4,), M=2, horizon=10, warmup=10)


def test_action_and_accumulator():
    Action(frozenset({0, 1})).check(2)
    with pytest.raises(InvalidInputError):
        Action(frozenset({0, 1, 2})).check(2)
    acc = CostAccumulator()
    for c in (1.0, 2.0, 6.0):
        acc.add(c)
    assert acc.average() == 3.0
