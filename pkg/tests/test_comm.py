import math

import pytest

from sparselb import ApproxAlgo, EnvConfig, MetricsLog, PolicyBundle, run_slot_engine
from sparselb.approx import EmulatedQueue
from sparselb.comm import (
    CommPattern,
    ServerCommState,
    emit_message,
    message_bound,
    relative_communication,
    should_message,
)


def slot_run(bundle, horizon=20_000, load=0.8, K=10, seed=3, **kw):
    return run_slot_engine(EnvConfig(K=K, horizon=horizon, load=load, seed=seed, **kw), bundle)


def test_dt_threshold():
    dt3 = CommPattern.dt(3)
    assert not should_message(dt3, ServerCommState(departures_since_message=2), 5, 10)
    assert should_message(dt3, ServerCommState(departures_since_message=3), 5, 10)


def test_et_quiet_right_after_own_message():
    state = ServerCommState(mirror=EmulatedQueue(ApproxAlgo.msr(), 2.0))
    msg = emit_message(0, state, 6, 4.0)
    assert msg.queue_length == 6 and msg.time == 4.0
    assert not should_message(CommPattern.et(2), state, 6, 4.0)
    assert should_message(CommPattern.et(2), state, 4, 4.0)


def test_et_without_mirror_is_an_error():
    with pytest.raises(ValueError):
        should_message(CommPattern.et(2), ServerCommState(), 1, 0)


def test_rt_period():
    rt = CommPattern.rt(0.5)
    assert should_message(rt, ServerCommState(last_message_time=1.0), 0, 3.0)
    assert not should_message(rt, ServerCommState(last_message_time=1.0), 0, 2.5)
    # r = load / (K x) in slots
    load, K, x = 0.8, 30, 4
    assert CommPattern.rt(load / (K * x)).period(slot=1) == round(K * x / load)
    assert CommPattern.rt(10.0).period(slot=1) == 1


def test_rt_messages_every_period_in_slot_engine():
    load, K, x = 0.8, 10, 3
    bundle = PolicyBundle.jsaq(CommPattern.rt(load / (K * x)), ApproxAlgo.msr())
    log = slot_run(bundle, horizon=1000, load=load, K=K, record_message_times=True)
    period = round(K * x / load)
    for times in log.message_times:
        assert times == list(range(period, 1001, period))


def test_emit_resets_and_counts():
    state = ServerCommState(departures_since_message=4, messages=2)
    emit_message(1, state, 3, 9)
    assert state.messages == 3
    assert state.departures_since_message == 0
    assert state.last_message_time == 9


def test_dt_messages_track_every_xth_departure():
    x = 3
    log = slot_run(PolicyBundle.jsaq(CommPattern.dt(x), ApproxAlgo.basic()), record_message_times=True)
    for i in range(log.K):
        assert log.messages[i] == log.departures[i] // x
        done = sorted(c for c, s in zip(log.completion_times, log.assigned) if s == i and c is not None)
        assert log.message_times[i] == done[x - 1 :: x]


def test_relative_communication_values():
    jsq = slot_run(PolicyBundle.baseline("jsq"))
    assert relative_communication(jsq) == 1.0
    dt = slot_run(PolicyBundle.jsaq(CommPattern.dt(3), ApproxAlgo.msrx(3)))
    assert relative_communication(dt) <= 1 / 3
    rr = slot_run(PolicyBundle.baseline("rr"))
    assert relative_communication(rr) == 0
    assert relative_communication(MetricsLog.empty(2, 10, 0, "slot")) is None


def test_message_bound():
    assert message_bound(CommPattern.dt(4), ApproxAlgo.msr(), 10, 100, 1.0) == 2.5
    assert message_bound(CommPattern.et(4), ApproxAlgo.basic(), 10, 100, 1.0) == 2.5
    assert message_bound(CommPattern.et(4), ApproxAlgo.msr(), 10, 100, 0.5) == 2.5 + 12.5
    assert message_bound(CommPattern.rt(1.0), ApproxAlgo.msr(), 10, 100, 1.0) == math.inf


def test_pattern_validation():
    with pytest.raises(ValueError):
        CommPattern.rt(0)
    with pytest.raises(ValueError):
        CommPattern.dt(0)
    with pytest.raises(ValueError):
        CommPattern.et(2.5)
    with pytest.raises(ValueError):
        CommPattern.dt(2).period()
    assert CommPattern.et(3).label == "et-3"
