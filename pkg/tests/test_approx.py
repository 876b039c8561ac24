import math

import pytest

from sparselb.approx import ApproxAlgo, EmulatedQueue, approximation_error


def anchored(algo, q, mean=1.0, rate=1.0, t=0):
    e = EmulatedQueue(algo, mean, rate)
    e.on_message(t, q)
    return e


def test_message_with_empty_queue_gives_empty_emulation():
    e = anchored(ApproxAlgo.msr(), 0)
    assert e.length == 0
    assert e.emu_fifo == []
    assert e.next_departure_time == math.inf


def test_msr_seeds_mean_requirement_for_each_reported_job():
    # service rate 1/2 -> mean requirement 2 work units
    e = anchored(ApproxAlgo.msr(), 3, mean=2)
    assert e.emu_fifo == [2, 2, 2]
    assert e.anchor_length == 3
    assert e.emu_departures == 0


def test_basic_never_departs():
    e = anchored(ApproxAlgo.basic(), 3)
    assert e.advance(10**6) == 0
    assert e.length == 3
    e.on_routed_arrival(e.clock)
    assert e.advance(10**6) == 0
    assert e.length == 4


def test_msrx_first_x_minus_one_arrivals_get_finite_estimates():
    e = anchored(ApproxAlgo.msrx(3), 0, mean=5)
    for _ in range(4):
        e.on_routed_arrival(0)
    assert e.emu_fifo == [5, 5, math.inf, math.inf]
    assert e.finite_assigned == 2


def test_msr_arrivals_all_get_mean():
    e = anchored(ApproxAlgo.msr(), 0, mean=3)
    for _ in range(5):
        e.on_routed_arrival(0)
    assert e.emu_fifo == [3] * 5


def test_advance_drains_fifo_in_order():
    e = anchored(ApproxAlgo.msr(), 2, mean=2)
    assert e.advance(3) == 1
    assert e.head_remaining == 1
    assert e.emu_fifo == [1]
    assert e.length == 1


def test_msrx_cap_stops_departures():
    e = anchored(ApproxAlgo.msrx(3), 5, mean=1)
    assert e.advance(2) == 2
    assert e.emu_departures == e.truncation_cap == 2
    assert e.advance(100) == 0
    assert e.length == 3


def test_rate_scales_emulated_service_time():
    e = anchored(ApproxAlgo.msr(), 2, mean=1.0, rate=4.0)
    assert e.next_departure_time == 0.25
    assert e.advance(0.5) == 2


def test_depart_and_advance_reach_same_state():
    a = anchored(ApproxAlgo.msr(), 3, mean=2)
    b = anchored(ApproxAlgo.msr(), 3, mean=2)
    a.on_routed_arrival(1)
    b.on_routed_arrival(1)
    while a.next_departure_time <= 7:
        a.depart(a.next_departure_time)
    b.advance_to(7)
    assert a == b


def test_depart_rejects_wrong_time():
    e = anchored(ApproxAlgo.msr(), 1, mean=2)
    with pytest.raises(ValueError):
        e.depart(1)


def test_arrival_to_empty_emulation_starts_service_at_arrival_time():
    e = anchored(ApproxAlgo.msr(), 0, mean=2)
    e.advance_to(10)
    e.on_routed_arrival(10)
    assert e.next_departure_time == 12


def test_message_resets_emulation():
    e = anchored(ApproxAlgo.msr(), 4, mean=1)
    e.advance(2)
    epoch = e.epoch
    e.on_message(2, 7)
    assert e.emu_departures == 0 and e.length == 7 and e.anchor_time == 2
    assert e.epoch == epoch + 1


def test_approximation_error():
    e = anchored(ApproxAlgo.basic(), 4)
    assert approximation_error(4, e) == 0
    # two actual departures since the message
    assert approximation_error(2, e) == 2


def test_invalid_algorithms():
    with pytest.raises(ValueError):
        ApproxAlgo.msrx(0)
    with pytest.raises(ValueError):
        ApproxAlgo("msr", 3)
    with pytest.raises(ValueError):
        EmulatedQueue(ApproxAlgo.msr(), 0)
    with pytest.raises(ValueError):
        anchored(ApproxAlgo.msr(), 2).advance(-1)


def test_labels():
    assert ApproxAlgo.basic().label == "basic"
    assert ApproxAlgo.msrx(4).label == "msr-4"
    assert ApproxAlgo.msrx(4).finite_budget == 3
