import pytest

from cpsfog.engine import (
    Bernoulli, Discrete, Engine, Exponential, RngFactory, RngStream, Uniform,
)
from cpsfog.errors import ScheduleError


def test_equal_time_events_run_in_insertion_order():
    eng = Engine()
    seen = []
    eng.on("tick", lambda ev: seen.append(ev.data))
    for i in range(5):
        eng.schedule(10, "n", "tick", i)
    eng.schedule(5, "n", "tick", "early")
    eng.run_until(100)
    assert seen == ["early", 0, 1, 2, 3, 4]


def test_dispatched_count_equals_scheduled_events():
    eng = Engine()
    scheduled = []

    def handler(ev):
        if ev.data < 50:
            eng.schedule_in(3, "n", "tick", ev.data + 1)
            scheduled.append(ev.data + 1)

    eng.on("tick", handler)
    eng.schedule(0, "n", "tick", 0)
    scheduled.append(0)
    assert eng.run_until(10_000) == len(scheduled) == 51
    assert eng.pending() == 0


def test_run_until_leaves_later_events_queued():
    eng = Engine()
    eng.on("tick", lambda ev: None)
    eng.schedule(5, "n", "tick")
    eng.schedule(50, "n", "tick")
    assert eng.run_until(10) == 1
    assert eng.now == 10 and eng.peek_time() == 50


def test_cannot_schedule_into_the_past():
    eng = Engine()
    eng.on("tick", lambda ev: None)
    eng.schedule(20, "n", "tick")
    eng.run_until(20)
    with pytest.raises(ScheduleError):
        eng.schedule(19, "n", "tick")
    with pytest.raises(ScheduleError):
        eng.run_until(5)


def test_unknown_event_kind_is_an_error():
    eng = Engine()
    eng.schedule(1, "n", "nobody")
    with pytest.raises(KeyError):
        eng.run_until(2)


def test_streams_are_reproducible_and_independent():
    a = [RngStream(7, "x").random() for _ in range(1)]
    f1, f2 = RngFactory(7), RngFactory(7)
    xs = [f1.stream("x").random() for _ in range(10)]
    f2.stream("y").random()  # touching another stream changes nothing
    ys = [f2.stream("x").random() for _ in range(10)]
    assert xs == ys and xs[0] == a[0]
    assert RngFactory(8).stream("x").random() != xs[0]


def test_uniform_mean_with_fixed_seed():
    s = RngStream(0, "stats")
    n = 100_000
    mean = sum(s.draw(Uniform(0, 1)) for _ in range(n)) / n
    assert abs(mean - 0.5) < 0.01


def test_every_draw_consumes_one_variate():
    s = RngStream(1, "count")
    for dist in (Uniform(0, 2), Exponential(3.0), Bernoulli(0.3), Discrete((1, 2, 3))):
        before = s.draws
        s.draw(dist)
        assert s.draws == before + 1
    s.gauss()
    s.randint(1, 6)
    assert s.draws == 6


def test_distribution_parameters_are_validated():
    with pytest.raises(ValueError):
        Uniform(2, 1)
    with pytest.raises(ValueError):
        Exponential(0)
    with pytest.raises(ValueError):
        Bernoulli(1.5)
    with pytest.raises(ValueError):
        Discrete((0, 0))


def test_discrete_and_exponential_statistics():
    s = RngStream(3, "d")
    counts = [0, 0, 0]
    for _ in range(30_000):
        counts[s.draw(Discrete((1, 2, 1)))] += 1
    assert abs(counts[1] / 30_000 - 0.5) < 0.02
    e = sum(s.exponential(4.0) for _ in range(30_000)) / 30_000
    assert abs(e - 4.0) < 0.15
