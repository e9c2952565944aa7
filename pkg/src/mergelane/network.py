"""Lane-drop road geometry.

Lanes are indexed from the left (leftmost = 0) inside each segment.  The
simulator works with *physical* lane ids instead: the lanes of the first
segment, numbered left to right, which keep their id as long as they exist.
A lane that is dropped at a boundary simply ends there.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

LEFT = "left"
RIGHT = "right"


class InvalidGeometry(ValueError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class SegmentDef:
    start: float
    end: float
    lane_count: int
    restricted_lane: int | None = None
    # side that loses lanes at this segment's downstream end (if any are lost)
    drop_side: str = RIGHT

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class RoadNetwork:
    total_length: float
    segments: tuple[SegmentDef, ...]
    speed_limit: float
    merge_position: float
    exit_lanes: int = 1
    # derived, filled in __post_init__
    lane_ends: tuple[float, ...] = field(default=(), compare=False, repr=False)
    lane_exits: tuple[bool, ...] = field(default=(), compare=False, repr=False)
    offsets: tuple[int, ...] = field(default=(), compare=False, repr=False)
    restricted: tuple[int, float, float] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        _validate(self)
        ends, exits, offsets, restricted = _lane_topology(self)
        object.__setattr__(self, "lane_ends", ends)
        object.__setattr__(self, "lane_exits", exits)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "restricted", restricted)
        object.__setattr__(self, "n_lanes", len(ends))
        object.__setattr__(self, "_starts", [s.start for s in self.segments])
        # per-lane stop line for permitted / other vehicles upstream of the restriction
        open_end = tuple(math.inf if x else e for e, x in zip(ends, exits))
        closed_end = list(open_end)
        if restricted is not None:
            closed_end[restricted[0]] = min(closed_end[restricted[0]], restricted[1])
        object.__setattr__(self, "open_end", open_end)
        object.__setattr__(self, "closed_end", tuple(closed_end))

    @property
    def restricted_segment(self) -> SegmentDef | None:
        for seg in self.segments:
            if seg.restricted_lane is not None:
                return seg
        return None

    def segment_index(self, position: float) -> int:
        if not 0.0 <= position < self.total_length:
            raise OutOfRange(f"position {position} outside [0, {self.total_length})")
        return bisect.bisect_right(self._starts, position) - 1

    def lane_exists(self, lane: int, position: float) -> bool:
        return 0 <= lane < len(self.lane_ends) and position < self.lane_ends[lane]

    def local_lane(self, lane: int, position: float) -> int:
        """Segment-local index (leftmost = 0) of physical ``lane`` at ``position``."""
        idx = self.segment_index(min(position, self.total_length - 1e-9))
        return lane - self.offsets[idx]

    def physical_lane(self, segment_index: int, local: int) -> int:
        return local + self.offsets[segment_index]

    def lane_usable_end(self, lane: int, position: float, permitted: bool) -> float:
        """Distance horizon of ``lane`` for a vehicle at ``position``.

        ``inf`` when the lane reaches the exit and nothing forbids it.  A vehicle
        already inside the restricted zone was admitted on entry and keeps its
        access until it leaves.
        """
        end = math.inf if self.lane_exits[lane] else self.lane_ends[lane]
        r = self.restricted
        if r is not None and not permitted and lane == r[0] and position < r[1]:
            end = min(end, r[1])
        return end

    def lane_allowed(self, lane: int, position: float, permitted: bool) -> bool:
        """Whether a vehicle may move into ``lane`` at ``position``."""
        if not self.lane_exists(lane, position):
            return False
        return permitted or not self.in_restricted_zone(lane, position)

    def lane_choosable(self, lane: int, position: float, permitted: bool) -> bool:
        """Whether a vehicle may pick ``lane`` by choice (at entry or for speed).

        Stricter than :meth:`lane_allowed`: a vehicle without access also keeps
        out of the restricted lane upstream of the zone.
        """
        if not self.lane_allowed(lane, position, permitted):
            return False
        r = self.restricted
        return permitted or r is None or lane != r[0] or position >= r[2]

    def in_restricted_zone(self, lane: int, position: float) -> bool:
        r = self.restricted
        return r is not None and lane == r[0] and r[1] <= position < r[2]

    def entry_lanes(self) -> range:
        return range(self.segments[0].lane_count)

    def to_dict(self) -> dict[str, Any]:
        segs = []
        for seg in self.segments:
            d: dict[str, Any] = {"length": seg.length, "lanes": seg.lane_count}
            if seg.restricted_lane is not None:
                d["restricted_lane"] = seg.restricted_lane
            d["drop_side"] = seg.drop_side
            segs.append(d)
        return {"speed_limit": self.speed_limit, "exit_lanes": self.exit_lanes, "segments": segs}


def _validate(net: RoadNetwork) -> None:
    if not net.speed_limit > 0:
        raise InvalidGeometry("speed_limit must be positive")
    if not net.segments:
        raise InvalidGeometry("network needs at least one segment")
    pos = 0.0
    prev_lanes = None
    n_restricted = 0
    for i, seg in enumerate(net.segments):
        if not seg.start < seg.end:
            raise InvalidGeometry(f"segment {i}: start must be < end")
        if seg.start != pos:
            raise InvalidGeometry(f"segment {i}: gap or overlap at {seg.start}")
        if seg.lane_count < 1:
            raise InvalidGeometry(f"segment {i}: lane_count must be >= 1")
        if prev_lanes is not None and seg.lane_count > prev_lanes:
            raise InvalidGeometry(f"segment {i}: lane count increases downstream")
        if seg.drop_side not in (LEFT, RIGHT):
            raise InvalidGeometry(f"segment {i}: drop_side must be 'left' or 'right'")
        if seg.restricted_lane is not None:
            n_restricted += 1
            if not 0 <= seg.restricted_lane < seg.lane_count:
                raise InvalidGeometry(f"segment {i}: restricted_lane out of range")
            nxt = net.segments[i + 1].lane_count if i + 1 < len(net.segments) else net.exit_lanes
            if nxt >= seg.lane_count:
                raise InvalidGeometry(f"segment {i}: restricted segment must end at a lane drop")
        pos = seg.end
        prev_lanes = seg.lane_count
    if pos != net.total_length:
        raise InvalidGeometry("segments do not cover [0, total_length)")
    if n_restricted > 1:
        raise InvalidGeometry("at most one restricted segment is allowed")
    if not 1 <= net.exit_lanes <= net.segments[-1].lane_count:
        raise InvalidGeometry("exit_lanes must be between 1 and the last segment's lane count")


def _lane_topology(net: RoadNetwork):
    n = net.segments[0].lane_count
    ends = [net.total_length] * n
    exits = [False] * n
    offsets = []
    offset = 0
    restricted = None
    for i, seg in enumerate(net.segments):
        offsets.append(offset)
        if seg.restricted_lane is not None:
            restricted = (seg.restricted_lane + offset, seg.start, seg.end)
        nxt = net.segments[i + 1].lane_count if i + 1 < len(net.segments) else net.exit_lanes
        drop = seg.lane_count - nxt
        if drop > 0:
            if seg.drop_side == LEFT:
                dropped = range(offset, offset + drop)
                offset += drop
            else:
                dropped = range(offset + seg.lane_count - drop, offset + seg.lane_count)
            for p in dropped:
                ends[p] = seg.end
    last = net.segments[-1]
    first_exit = offsets[-1] + (last.lane_count - net.exit_lanes if last.drop_side == LEFT else 0)
    for p in range(first_exit, first_exit + net.exit_lanes):
        exits[p] = True
    return tuple(ends), tuple(exits), tuple(offsets), restricted


def _parse_restricted(value: Any, lane_count: int) -> int | None:
    if value is None or value in ("-", "", "none"):
        return None
    if value == LEFT:
        return 0
    if value == RIGHT:
        return lane_count - 1
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidGeometry(f"restricted_lane must be 'left', 'right' or an index, got {value!r}")
    if not 0 <= value < lane_count:
        raise InvalidGeometry(f"restricted_lane {value} out of range for {lane_count} lanes")
    return value


def build_lane_drop_network(
    spec: Sequence[Sequence[Any]],
    speed_limit: float,
    exit_lanes: int | None = None,
) -> RoadNetwork:
    """Build a network from ``(length, lane_count[, restricted_lane[, drop_side]])`` rows.

    ``exit_lanes`` defaults to one fewer lane than the last segment (at least 1),
    which reproduces the final merge of the two-lane test road.
    """
    if not spec:
        raise InvalidGeometry("empty segment list")
    segments = []
    pos = 0.0
    for i, row in enumerate(spec):
        if len(row) < 2:
            raise InvalidGeometry(f"segment {i}: expected (length, lane_count, ...)")
        length, lanes = float(row[0]), int(row[1])
        if not length > 0:
            raise InvalidGeometry(f"segment {i}: length must be positive")
        restricted = _parse_restricted(row[2] if len(row) > 2 else None, lanes)
        if len(row) > 3 and row[3] is not None:
            side = row[3]
        elif restricted is not None and restricted == 0:
            side = LEFT
        else:
            side = RIGHT
        segments.append(SegmentDef(pos, pos + length, lanes, restricted, side))
        pos += length
    if exit_lanes is None:
        exit_lanes = max(1, segments[-1].lane_count - 1)
    merge_position = _merge_position(segments, exit_lanes)
    return RoadNetwork(pos, tuple(segments), float(speed_limit), merge_position, exit_lanes)


def _merge_position(segments: Iterable[SegmentDef], exit_lanes: int) -> float:
    segs = list(segments)
    merge = 0.0
    for i, seg in enumerate(segs):
        nxt = segs[i + 1].lane_count if i + 1 < len(segs) else exit_lanes
        if nxt < seg.lane_count:
            merge = seg.end
    return merge


def build_reference_network() -> RoadNetwork:
    """Two 1 km GP lanes; the left lane is restricted over the last 500 m and
    then merges into the right lane at the exit.  Limit 25 m/s everywhere."""
    return build_lane_drop_network([(500, 2, None), (500, 2, LEFT)], 25.0)


def segment_at(network: RoadNetwork, position: float) -> SegmentDef:
    return network.segments[network.segment_index(position)]


def network_from_dict(data: dict[str, Any]) -> RoadNetwork:
    known = {"speed_limit", "exit_lanes", "segments"}
    unknown = set(data) - known
    if unknown:
        raise InvalidGeometry(f"unknown network keys: {sorted(unknown)}")
    rows = []
    for i, seg in enumerate(data.get("segments", [])):
        extra = set(seg) - {"length", "lanes", "restricted_lane", "drop_side"}
        if extra:
            raise InvalidGeometry(f"segment {i}: unknown keys {sorted(extra)}")
        try:
            rows.append((seg["length"], seg["lanes"], seg.get("restricted_lane"), seg.get("drop_side")))
        except KeyError as exc:
            raise InvalidGeometry(f"segment {i}: missing {exc.args[0]!r}") from None
    return build_lane_drop_network(rows, data.get("speed_limit", 25.0), data.get("exit_lanes"))
