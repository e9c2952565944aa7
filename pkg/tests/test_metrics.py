import math
import random

import pytest
from hypothesis import given, strategies as st

from mergelane.demand import VClass
from mergelane.metrics import (
    EmptyInput,
    IncompleteRecord,
    RunResult,
    VehicleRecord,
    apd,
    depart_delay,
    group_time_loss,
    records_from_csv,
    records_to_csv,
    time_loss,
    vehicle_delay,
)


def rec(i=0, cls=VClass.HDV, pax=1, wanted=0.0, actual=0.0, exit_=40.0, dt=40.0):
    return VehicleRecord(i, cls, pax, wanted, actual, exit_, dt)


def test_time_loss():
    assert time_loss(rec(actual=0, exit_=40)) == 0
    assert time_loss(rec(actual=10, exit_=110)) == 60


def test_depart_delay():
    assert depart_delay(rec()) == 0
    assert depart_delay(rec(wanted=100, actual=130, exit_=170)) == 30


def test_vehicle_delay():
    r = rec(wanted=100, actual=130, exit_=230)
    assert time_loss(r) == 60 and depart_delay(r) == 30 and vehicle_delay(r) == 90
    assert vehicle_delay(rec()) == 0


def test_incomplete_records():
    with pytest.raises(IncompleteRecord):
        time_loss(rec(exit_=None))
    with pytest.raises(IncompleteRecord):
        depart_delay(rec(actual=None))


def test_apd_examples():
    assert apd([rec(pax=2, exit_=140)]) == 100
    two = [rec(0, pax=2, exit_=140), rec(1, pax=1, exit_=90)]
    assert apd(two) == pytest.approx(250 / 3, rel=1e-12)
    with pytest.raises(EmptyInput):
        apd([])


records = st.lists(
    st.builds(
        lambda i, pax, w, wait, tl: rec(i, VClass.CAV, pax, w, w + wait, w + wait + 40 + tl),
        st.integers(0, 10**6), st.integers(1, 5), st.floats(0, 1e4), st.floats(0, 1e3), st.floats(0, 1e3),
    ),
    min_size=1, max_size=50,
)


@given(records, st.randoms())
def test_apd_order_invariant_and_bounded(rs, rnd):
    a = apd(rs)
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert apd(shuffled) == pytest.approx(a, rel=1e-12, abs=1e-9)
    vds = [vehicle_delay(r) for r in rs]
    assert min(vds) - 1e-9 <= a <= max(vds) + 1e-9


@given(records, st.floats(0.1, 10))
def test_apd_scales_with_delay(rs, c):
    scaled = [VehicleRecord(r.id, r.vclass, r.passengers, r.depart_wanted * c, r.depart_actual * c,
                            (r.exit_time - r.free_flow_time) * c + r.free_flow_time, r.free_flow_time)
              for r in rs]
    assert apd(scaled) == pytest.approx(c * apd(rs), rel=1e-9, abs=1e-6)


def test_group_time_loss_layout():
    rs = [rec(0, VClass.HDV, 1, exit_=50), rec(1, VClass.HDV, 3, exit_=70)]
    assert group_time_loss(rs) == {("HDV", None): 20.0}
    rs += [rec(2 + p, VClass.CAV, p, exit_=40 + p) for p in range(1, 6)]
    g = group_time_loss(rs)
    assert list(g) == [("CAV", 1), ("CAV", 2), ("CAV", 3), ("CAV", 4), ("CAV", 5), ("HDV", None)]
    assert g[("CAV", 4)] == 4
    with pytest.raises(EmptyInput):
        group_time_loss([])


def test_group_time_loss_known_means():
    rs = [rec(0, VClass.CAV, 2, exit_=50), rec(1, VClass.CAV, 2, exit_=60), rec(2, VClass.BUS, 7, exit_=43)]
    g = group_time_loss(rs)
    assert g == {("Bus", 7): 3.0, ("CAV", 2): 15.0}
    assert group_time_loss(rs + [rec(3, VClass.CAV, 2, exit_=1000)], stat="median")[("CAV", 2)] == 20.0


def test_csv_round_trip():
    rnd = random.Random(3)
    rs = [rec(i, rnd.choice(list(VClass)), rnd.randint(1, 5), w := rnd.uniform(0, 100), w + 1.5,
              w + 1.5 + 40 + rnd.random(), 40.0) for i in range(20)]
    text = records_to_csv(rs)
    assert text.splitlines()[0] == "id,class,passengers,depart_wanted_s,depart_actual_s,exit_s,d_t_s," \
                                   "time_loss_s,depart_delay_s,vd_s"
    assert records_from_csv(text) == rs


def test_run_result_recomputes_apd():
    rs = [rec(0, pax=2, exit_=140), rec(1, pax=1, exit_=90)]
    r = RunResult.from_records(rs, {"generated": 2})
    assert r.apd == apd(rs)
    assert r.mean_vehicle_delay() == 75
    assert math.isnan(RunResult.from_records([], {}).apd)
