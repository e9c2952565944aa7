import math

import pytest
from hypothesis import given, strategies as st

from mergelane.network import (
    InvalidGeometry,
    OutOfRange,
    build_lane_drop_network,
    build_reference_network,
    network_from_dict,
    segment_at,
)


def test_ref_network_geometry(ref_net):
    assert ref_net.total_length == 1000
    assert ref_net.speed_limit == 25
    a, b = ref_net.segments
    assert (a.start, a.end, a.lane_count, a.restricted_lane) == (0, 500, 2, None)
    assert (b.start, b.end, b.lane_count, b.restricted_lane) == (500, 1000, 2, 0)
    assert ref_net.restricted_segment is b
    assert b.length == 500
    assert ref_net.merge_position == 1000


def test_ref_network_lane_topology(ref_net):
    # left lane ends at the exit merge, right lane leaves the road
    assert ref_net.lane_ends == (1000, 1000)
    assert ref_net.lane_exits == (False, True)
    assert ref_net.restricted == (0, 500, 1000)


def test_builder_matches_ref_network(ref_net):
    built = build_lane_drop_network([(500, 2, "-"), (500, 2, "left")], 25)
    assert built == ref_net


def test_case_study_family():
    net = build_lane_drop_network([(400, 5, None), (600, 4, "left")], 25)
    assert net.segments[0].lane_count == 5
    assert net.restricted == (0, 400, 1000)
    # rightmost lane (physical 4) is dropped at 400 m
    assert net.lane_ends[4] == 400 and not net.lane_exits[4]
    assert net.exit_lanes == 3
    assert net.lane_exits == (False, True, True, True, False)


@pytest.mark.parametrize("rows", [
    [(500, 2), (500, 3)],
    [(0, 2)],
    [(-5, 2)],
    [(500, 2, 2)],
    [(500, 2, "middle")],
    [],
])
def test_invalid_geometry(rows):
    with pytest.raises(InvalidGeometry):
        build_lane_drop_network(rows, 25)


def test_restricted_segment_must_end_at_drop():
    with pytest.raises(InvalidGeometry):
        build_lane_drop_network([(500, 2, "left"), (500, 2)], 25)


def test_bad_speed_limit():
    with pytest.raises(InvalidGeometry):
        build_lane_drop_network([(500, 2)], 0)


def test_segment_at_boundaries(ref_net):
    a, b = ref_net.segments
    assert segment_at(ref_net, 0) is a
    assert segment_at(ref_net, 499.999) is a
    assert segment_at(ref_net, 500) is b
    with pytest.raises(OutOfRange):
        segment_at(ref_net, 1000)
    with pytest.raises(OutOfRange):
        segment_at(ref_net, -0.1)


segments = st.lists(
    st.tuples(st.integers(1, 2000), st.integers(1, 5)), min_size=1, max_size=6,
).map(lambda rows: [(l, n) for l, n in zip([r[0] for r in rows], sorted((r[1] for r in rows), reverse=True))])


@given(segments, st.floats(0, 1))
def test_segment_at_round_trip(rows, u):
    net = build_lane_drop_network(rows, 25)
    pos = 0.0
    for seg, (length, lanes) in zip(net.segments, rows):
        assert seg.start == pos and seg.lane_count == lanes
        p = seg.start + u * (seg.end - seg.start)
        if p >= seg.end:
            p = math.nextafter(seg.end, -math.inf)
        assert segment_at(net, p) is seg
        pos = seg.end
    assert net.total_length == pos


@given(segments)
def test_every_position_in_exactly_one_segment(rows):
    net = build_lane_drop_network(rows, 25)
    for x in [0.0] + [s.end - 1e-6 for s in net.segments] + [s.start for s in net.segments]:
        hits = [s for s in net.segments if s.start <= x < s.end]
        assert len(hits) == 1


def test_restricted_lane_rules(ref_net):
    # upstream of the zone the left lane stops at 500 m for non-permitted vehicles
    assert ref_net.lane_usable_end(0, 450, permitted=False) == 500
    assert ref_net.lane_usable_end(0, 450, permitted=True) == 1000
    assert ref_net.lane_usable_end(1, 450, permitted=False) == math.inf
    assert not ref_net.lane_allowed(0, 600, permitted=False)
    assert ref_net.lane_allowed(0, 600, permitted=True)
    assert ref_net.lane_allowed(0, 400, permitted=False)


def test_lane_choosable(ref_net):
    assert not ref_net.lane_choosable(0, 0.0, False)
    assert not ref_net.lane_choosable(0, 700.0, False)
    assert ref_net.lane_choosable(0, 0.0, True)
    assert ref_net.lane_choosable(1, 0.0, False)
    assert ref_net.lane_allowed(0, 0.0, False)  # driving there is legal, choosing it is not


def test_local_lane_after_left_drop():
    net = build_lane_drop_network([(400, 5, None), (600, 4, "left")], 25)
    assert net.local_lane(1, 100) == 1
    assert net.local_lane(1, 500) == 1
    net2 = build_lane_drop_network([(300, 3, None, "left"), (300, 2)], 25)
    # physical lane 0 ends at 300; physical 1 becomes local 0
    assert net2.lane_ends[0] == 300
    assert net2.local_lane(1, 350) == 0


def test_network_dict_round_trip(ref_net):
    assert network_from_dict(ref_net.to_dict()) == ref_net
    with pytest.raises(InvalidGeometry):
        network_from_dict({"segments": [{"length": 1, "lanes": 1, "colour": "red"}]})
