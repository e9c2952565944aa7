"""Discrete-time microscopic dynamics on a lane-drop road.

One call to :func:`step` advances the world by ``dt`` in a fixed phase order:

1. controller update / speed sample (dynamic policies only)
2. lane-change decisions, downstream vehicles first
3. speed update (Krauss safe speed, bounded acceleration, random dawdling)
4. position update, downstream first, with a hard no-overlap clamp
5. zipper merge arbitration at lane-drop boundaries
6. exits
7. clock advance, release of due arrivals, FIFO insertion at the entry

Positions are front-bumper coordinates; a vehicle occupies ``[pos - length, pos]``.
Lanes are stored as lists sorted by ascending position.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from operator import attrgetter
from typing import Callable, Iterable

from .demand import ArrivalEvent, VClass
from .metrics import VehicleRecord
from .network import RoadNetwork
from .policy import (
    ControllerState,
    PolicyKind,
    PolicySpec,
    initial_controller,
    measure_restricted_lane_speed,
    permits,
    record_speed_sample,
    update_threshold,
)
from .rng import RandomStreams

_pos = attrgetter("pos")


@dataclass(frozen=True)
class DriverParams:
    max_accel: float = 2.6
    max_decel: float = 4.5
    reaction_time: float = 1.0
    min_gap: float = 2.5
    sigma: float = 0.5
    vehicle_length: float = 5.0

    def __post_init__(self) -> None:
        for name in ("max_accel", "max_decel", "reaction_time", "min_gap", "vehicle_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DriverParams.{name} must be positive")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("DriverParams.sigma must lie in [0, 1]")


CAR_PARAMS = DriverParams()
BUS_PARAMS = DriverParams(vehicle_length=12.0)


@dataclass(frozen=True)
class TrafficParams:
    lookahead: float = 200.0  # mandatory lane-change horizon
    hysteresis: float = 2.0  # speed advantage needed for a discretionary change, m/s
    merge_zone: float = 100.0  # stretch before a lane drop handled by zipper arbitration
    view: float = 100.0  # window ahead used for a lane's local mean speed
    violation_rate: float = 0.0  # share of HDVs ignoring occupancy rules under Plus_i
    car: DriverParams = CAR_PARAMS
    bus: DriverParams = BUS_PARAMS
    max_drain: float = 172800.0  # give up if the road has not emptied this long after the horizon

    def driver(self, vclass: VClass) -> DriverParams:
        return self.bus if vclass is VClass.BUS else self.car


class Vehicle:
    """Mutable per-vehicle state (the simulator's VehicleState)."""

    __slots__ = (
        "id", "vclass", "passengers", "depart_wanted", "depart_actual", "exit_time",
        "lane", "pos", "prev_pos", "speed", "next_speed",
        "length", "accel", "decel", "tau", "min_gap", "sigma",
        "access", "violator", "perm",
    )

    def __init__(self, vid: int, vclass: VClass, passengers: int, depart_wanted: float,
                 params: DriverParams = CAR_PARAMS, access: bool | None = None, violator: bool = False):
        self.id = vid
        self.vclass = vclass
        self.passengers = passengers
        self.depart_wanted = depart_wanted
        self.depart_actual: float | None = None
        self.exit_time: float | None = None
        self.lane = -1
        self.pos = 0.0
        self.prev_pos = 0.0
        self.speed = 0.0
        self.next_speed = 0.0
        self.length = params.vehicle_length
        self.accel = params.max_accel
        self.decel = params.max_decel
        self.tau = params.reaction_time
        self.min_gap = params.min_gap
        self.sigma = params.sigma
        self.access = access
        self.violator = violator
        self.perm = False

    def __repr__(self) -> str:
        return (f"Vehicle({self.id}, {self.vclass.value}, pax={self.passengers}, lane={self.lane}, "
                f"pos={self.pos:.2f}, v={self.speed:.2f})")


VehicleState = Vehicle

TrajectorySink = Callable[[int, int, int, float, float], None]
TickSink = Callable[[int, float, int, int, int, int], None]


@dataclass
class WorldState:
    network: RoadNetwork
    params: TrafficParams
    rng: object  # random.Random-compatible: .random()
    clock: float = 0.0
    lanes: list[list[Vehicle]] = field(default_factory=list)
    schedule: deque = field(default_factory=deque)  # created vehicles not yet due
    queue: deque = field(default_factory=deque)  # due vehicles waiting at the entry
    controller: ControllerState = field(default_factory=ControllerState)
    generated: int = 0
    exited: int = 0
    tick: int = 0
    completed: list[VehicleRecord] = field(default_factory=list)
    trajectory: TrajectorySink | None = None
    tick_log: TickSink | None = None
    # optional per-tick speed accumulation by road bin: bin -> [sum, count]
    speed_bins: dict[int, list[float]] | None = None
    bin_width: float = 100.0

    def __post_init__(self) -> None:
        if not self.lanes:
            self.lanes = [[] for _ in range(self.network.n_lanes)]

    @property
    def on_road(self) -> int:
        return sum(len(lane) for lane in self.lanes)

    def vehicles(self) -> Iterable[Vehicle]:
        for lane in self.lanes:
            yield from lane

    def drained(self) -> bool:
        return not self.schedule and not self.queue and not any(self.lanes)


def make_world(
    network: RoadNetwork,
    policy: PolicySpec,
    arrivals: list[ArrivalEvent],
    streams: RandomStreams,
    params: TrafficParams | None = None,
    start_time: float = 0.0,
    access_fraction: float | None = None,
) -> WorldState:
    """World at ``start_time`` with every arrival scheduled.

    ``access_fraction`` marks each vehicle permitted with that probability,
    independently of class, overriding the policy (buses stay permitted).
    """
    params = params or TrafficParams()
    n = len(arrivals)
    access = None
    if access_fraction is not None:
        access = (streams.generator("access").random(n) < access_fraction).tolist()
    violate = None
    if params.violation_rate > 0:
        violate = (streams.generator("violation").random(n) < params.violation_rate).tolist()
    world = WorldState(network, params, streams.py_random("imperfection"), clock=start_time)
    world.controller = initial_controller(policy, start_time)
    for i, ev in enumerate(arrivals):
        world.schedule.append(Vehicle(
            i, ev.vclass, ev.passengers, ev.depart_wanted, params.driver(ev.vclass),
            access=access[i] if access is not None else None,
            violator=bool(violate[i]) and ev.vclass is VClass.HDV if violate is not None else False,
        ))
    # arrivals due at the start time enter before the first movement
    release_and_insert(world, network, policy)
    return world


def safe_speed(gap: float, leader_speed: float | None, params: DriverParams,
               follower_speed: float | None = None, speed_limit: float = 25.0) -> float:
    """Krauss safe speed for a usable gap (bumper gap minus the minimum gap).

    ``leader_speed=None`` means no leader: the result is ``speed_limit``.
    ``follower_speed`` defaults to ``speed_limit``.
    """
    if leader_speed is None:
        return speed_limit
    v = speed_limit if follower_speed is None else follower_speed
    tau = params.reaction_time
    vs = leader_speed + (gap - leader_speed * tau) / (tau + (leader_speed + v) / (2.0 * params.max_decel))
    return vs if vs > 0.0 else 0.0


def _safe(gap: float, vl: float, v: Vehicle) -> float:
    vs = vl + (gap - vl * v.tau) / (v.tau + (vl + v.speed) / (2.0 * v.decel))
    return vs if vs > 0.0 else 0.0


def is_permitted(v: Vehicle, policy: PolicySpec, ctrl: ControllerState) -> bool:
    # an access-fraction override replaces the policy for cars; buses always keep the lane
    if v.access is not None and v.vclass is not VClass.BUS:
        return v.access
    if permits(policy, ctrl, v):
        return True
    return v.violator and policy.kind is PolicyKind.PLUS


# -- lane changing -----------------------------------------------------------

CELL = 25.0  # resolution of the local lane-speed table, m


class LaneSnapshot:
    """Local lane speeds at the start of a tick.

    Speeds are binned on ``CELL``-metre cells; the local speed at ``x`` is the
    mean over the vehicles in the cells covering ``view`` metres from the cell
    containing ``x``, or the speed limit if those cells are empty.  A vehicle
    reading its own lane leaves itself out (:meth:`own_speed`), so a lone
    vehicle never sees its own lane as slow.
    """

    __slots__ = ("table", "sums", "counts", "limit")

    def __init__(self, lanes: list[list[Vehicle]], length: float, view: float, limit: float):
        n_cells = int(length // CELL) + 1
        width = max(1, int(round(view / CELL)))
        self.limit = limit
        self.table = []
        self.sums = []
        self.counts = []
        for lane in lanes:
            sums = [0.0] * (n_cells + width)
            counts = [0] * (n_cells + width)
            for u in lane:
                k = int(u.pos // CELL)
                sums[k] += u.speed
                counts[k] += 1
            window = [limit] * n_cells
            wsum = [0.0] * n_cells
            wcnt = [0] * n_cells
            acc = 0.0
            cnt = 0
            for k in range(n_cells + width - 1, -1, -1):
                acc += sums[k]
                cnt += counts[k]
                if k + width < n_cells + width:
                    acc -= sums[k + width]
                    cnt -= counts[k + width]
                if k < n_cells and cnt:
                    window[k] = acc / cnt
                    wsum[k] = acc
                    wcnt[k] = cnt
            self.table.append(window)
            self.sums.append(wsum)
            self.counts.append(wcnt)

    def local_speed(self, lane: int, x: float) -> float:
        return self.table[lane][int(x // CELL)]

    def own_speed(self, v: Vehicle) -> float:
        k = int(v.pos // CELL)
        n = self.counts[v.lane][k] - 1
        return (self.sums[v.lane][k] - v.speed) / n if n > 0 else self.limit


def gap_admits(v: Vehicle, lane: list[Vehicle], x: float, dt: float, kinematic: bool) -> bool:
    """Whether ``v`` fits into ``lane`` at ``x`` with at least a minimum gap front and rear.

    ``kinematic`` additionally requires that neither ``v`` nor its new follower
    has to brake harder than its maximum deceleration.
    """
    i = bisect.bisect_left(lane, x, key=_pos)
    leader = lane[i] if i < len(lane) else None
    follower = lane[i - 1] if i > 0 else None
    if leader is not None:
        fg = leader.pos - leader.length - x
        if fg < v.min_gap:
            return False
        if kinematic and _safe(fg - v.min_gap, leader.speed, v) < v.speed - v.decel * dt:
            return False
    if follower is not None:
        rg = x - v.length - follower.pos
        if rg < follower.min_gap:
            return False
        if kinematic and _safe(rg - follower.min_gap, v.speed, follower) < follower.speed - follower.decel * dt:
            return False
    return True


def lane_change_decision(v: Vehicle, world: WorldState, network: RoadNetwork, permitted: bool,
                         dt: float = 1.0, snapshot: LaneSnapshot | None = None) -> int | None:
    """Target lane for ``v`` this tick, or None.

    Mandatory: the current lane ends, or becomes forbidden for ``v``, within the
    lookahead; the vehicle heads for the adjacent lane that lasts longer.  Lane
    ends inside the merge zone are left to :func:`merge_arbitration`.
    Discretionary: an adjacent lane open to ``v`` (a vehicle without access
    never picks the restricted lane) whose local mean speed beats the current
    lane's by more than the hysteresis, and which will not force the vehicle
    back within the lookahead.  Local mean speeds are read from
    ``snapshot`` (the lanes as they were at the start of the tick).
    """
    p = world.params
    x = v.pos
    lane = v.lane
    cur_end = network.lane_usable_end(lane, x, permitted)
    remaining = cur_end - x
    if remaining <= p.lookahead:
        if cur_end == network.lane_ends[lane] and remaining <= p.merge_zone:
            return None
        best = _longer_lane(network, lane, x, permitted, cur_end)
        if best is None:
            return None
        urgent = remaining <= p.merge_zone
        if gap_admits(v, world.lanes[best], x, dt, kinematic=not urgent):
            return best
        return None

    limit = network.speed_limit
    if snapshot is None:
        snapshot = LaneSnapshot(world.lanes, network.total_length, p.view, limit)
    table = snapshot.table
    k = int(x // CELL)
    current = snapshot.own_speed(v)
    if current >= limit - p.hysteresis:
        return None
    best = None
    best_speed = current + p.hysteresis
    for q in (lane - 1, lane + 1):
        if not 0 <= q < len(table) or table[q][k] <= best_speed:
            continue
        s = table[q][k]
        if not network.lane_choosable(q, x, permitted):
            continue
        if network.lane_usable_end(q, x, permitted) - x <= p.lookahead:
            continue
        if s > best_speed:
            best, best_speed = q, s
    if best is not None and gap_admits(v, world.lanes[best], x, dt, kinematic=True):
        return best
    return None


def _longer_lane(network: RoadNetwork, lane: int, x: float, permitted: bool, cur_end: float) -> int | None:
    """Adjacent allowed lane lasting longer than ``cur_end`` (the longer one if both do)."""
    best = None
    best_end = cur_end
    for q in (lane - 1, lane + 1):
        if network.lane_allowed(q, x, permitted):
            q_end = network.lane_usable_end(q, x, permitted)
            if q_end > best_end:
                best, best_end = q, q_end
    return best


def _move(world: WorldState, v: Vehicle, target: int) -> None:
    world.lanes[v.lane].remove(v)
    lane = world.lanes[target]
    lane.insert(bisect.bisect_left(lane, v.pos, key=_pos), v)
    v.lane = target


def merge_arbitration(world: WorldState, boundary: float, dt: float = 1.0) -> WorldState:
    """Zipper merge for every lane that ends at ``boundary``.

    Vehicles inside the merge zone of an ending lane are visited downstream
    first and moved one lane toward the surviving side whenever the target lane
    has at least a minimum gap front and rear; the others keep braking toward
    the boundary.
    """
    net = world.network
    zone_start = boundary - world.params.merge_zone
    candidates = []
    for lane_id, lane in enumerate(world.lanes):
        if net.lane_ends[lane_id] != boundary or net.lane_exits[lane_id]:
            continue
        for u in lane:
            if u.pos >= zone_start:
                candidates.append(u)
    candidates.sort(key=lambda u: (-u.pos, u.lane))
    for u in candidates:
        best = _longer_lane(net, u.lane, u.pos, u.perm, net.lane_usable_end(u.lane, u.pos, u.perm))
        if best is not None and gap_admits(u, world.lanes[best], u.pos, dt, kinematic=False):
            _move(world, u, best)
    return world


# -- insertion -------------------------------------------------------------------

def _insertion_speed(v: Vehicle, lane: list[Vehicle], limit: float) -> float | None:
    if not lane:
        return limit
    last = lane[0]
    gap = last.pos - last.length
    if gap < v.min_gap:
        return None
    vs = last.speed + (gap - v.min_gap - last.speed * v.tau) / (v.tau + (last.speed + limit) / (2.0 * v.decel))
    if vs < 0.0:
        vs = 0.0
    return vs if vs < limit else limit


def try_insert(world: WorldState, v: Vehicle, network: RoadNetwork, policy: PolicySpec) -> bool:
    """Place ``v`` at position 0 if any entry lane open to it has room.

    Picks the lane admitting the highest entry speed; ties go to the lane that
    lasts longest for this vehicle, then to the rightmost.
    """
    perm = is_permitted(v, policy, world.controller)
    limit = network.speed_limit
    best = None
    best_key = None
    for q in network.entry_lanes():
        if not network.lane_choosable(q, 0.0, perm):
            continue
        speed = _insertion_speed(v, world.lanes[q], limit)
        if speed is None:
            continue
        key = (speed, network.lane_usable_end(q, 0.0, perm), q)
        if best_key is None or key > best_key:
            best, best_key = q, key
    if best is None:
        return False
    v.lane = best
    v.pos = 0.0
    v.prev_pos = 0.0
    v.speed = best_key[0]
    v.perm = perm
    v.depart_actual = world.clock
    world.lanes[best].insert(0, v)
    return True


# -- the tick -------------------------------------------------------------------

def step(world: WorldState, network: RoadNetwork, policy: PolicySpec, dt: float) -> WorldState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = world.params
    ctrl = world.controller
    lanes = world.lanes
    limit = network.speed_limit

    # 1. controller
    if policy.dynamic and network.restricted is not None:
        if world.clock - ctrl.last_update >= policy.control_interval:
            update_threshold(ctrl, policy, world.clock)
        record_speed_sample(ctrl, measure_restricted_lane_speed(world, network))

    # 2. lane changes
    view = params.view
    snap = LaneSnapshot(lanes, network.total_length, view, limit)
    table = snap.table
    sums = snap.sums
    counts = snap.counts
    r = network.restricted
    r_lane, r_start, r_end = r if r is not None else (-1, math.inf, math.inf)
    open_end = network.open_end
    closed_end = network.closed_end
    lookahead = params.lookahead
    slow = limit - params.hysteresis
    n_lanes = network.n_lanes
    multi = n_lanes > 1
    hyst = params.hysteresis
    order = [u for lane in lanes for u in lane]
    order.sort(key=lambda u: (-u.pos, u.lane))
    for u in order:
        x = u.pos
        l = u.lane
        perm = is_permitted(u, policy, ctrl) or (l == r_lane and r_start <= x < r_end)
        u.perm = perm
        end = open_end[l] if (perm or l != r_lane or x >= r_start) else closed_end[l]
        if end - x > lookahead:
            if not multi:
                continue
            k = int(x // CELL)
            n = counts[l][k] - 1
            if n <= 0:
                continue
            cur = (sums[l][k] - u.speed) / n
            if cur >= slow:
                continue
            cur += hyst
            if not ((l > 0 and table[l - 1][k] > cur) or (l + 1 < n_lanes and table[l + 1][k] > cur)):
                continue
        target = lane_change_decision(u, world, network, perm, dt, snap)
        if target is not None:
            _move(world, u, target)

    # 3. speeds (synchronous: every vehicle sees the old state)
    rnd = world.rng.random
    for lane_id, lane in enumerate(lanes):
        n = len(lane)
        is_r = lane_id == r_lane
        o_end = open_end[lane_id]
        c_end = closed_end[lane_id]
        for i in range(n):
            u = lane[i]
            sp = u.speed
            vcap = sp + u.accel * dt
            if vcap > limit:
                vcap = limit
            tau = u.tau
            two_b = 2.0 * u.decel
            if i + 1 < n:
                ld = lane[i + 1]
                vl = ld.speed
                g = ld.pos - ld.length - u.pos - u.min_gap
                vs = vl + (g - vl * tau) / (tau + (vl + sp) / two_b)
                if vs < vcap:
                    vcap = vs if vs > 0.0 else 0.0
            stop = c_end if (is_r and not u.perm and u.pos < r_start) else o_end
            if stop != math.inf:
                g = stop - u.pos - u.min_gap
                vs = g / (tau + sp / two_b)
                if vs < vcap:
                    vcap = vs if vs > 0.0 else 0.0
            if vcap < limit:
                vn = vcap - u.sigma * u.accel * dt * rnd()
                floor = sp - u.decel * dt
                if floor > vcap:
                    floor = vcap
                if vn < floor:
                    vn = floor
                if vn < 0.0:
                    vn = 0.0
            else:
                vn = vcap
            u.next_speed = vn

    # 4. positions, downstream first, never overlapping the (already moved) leader
    for lane_id, lane in enumerate(lanes):
        is_r = lane_id == r_lane
        o_end = open_end[lane_id]
        c_end = closed_end[lane_id]
        leader = None
        for i in range(len(lane) - 1, -1, -1):
            u = lane[i]
            x = u.pos
            xn = x + u.next_speed * dt
            if leader is not None:
                lim = leader.pos - leader.length
                if xn > lim:
                    xn = lim
            stop = c_end if (is_r and not u.perm and x < r_start) else o_end
            if xn > stop - u.min_gap:
                xn = stop - u.min_gap
            if xn < x:
                xn = x
            u.prev_pos = x
            u.pos = xn
            u.speed = (xn - x) / dt
            leader = u

    # 5. zipper merges
    for boundary in _drop_boundaries(network):
        merge_arbitration(world, boundary, dt)

    # 6. exits
    total = network.total_length
    free_flow = total / limit
    for lane_id, lane in enumerate(lanes):
        if not network.lane_exits[lane_id]:
            continue
        while lane and lane[-1].pos >= total:
            u = lane.pop()
            frac = (total - u.prev_pos) / (u.pos - u.prev_pos)
            u.exit_time = world.clock + dt * frac
            world.exited += 1
            world.completed.append(VehicleRecord(
                u.id, u.vclass, u.passengers, u.depart_wanted, u.depart_actual, u.exit_time, free_flow,
            ))

    # 7. clock, arrivals, insertion
    world.clock += dt
    world.tick += 1
    clock = world.clock
    release_and_insert(world, network, policy)
    queue = world.queue

    if world.speed_bins is not None:
        bins = world.speed_bins
        w = world.bin_width
        for lane in lanes:
            for u in lane:
                acc = bins.setdefault(int(u.pos // w), [0.0, 0])
                acc[0] += u.speed
                acc[1] += 1
    if world.trajectory is not None:
        sink = world.trajectory
        for lane_id, lane in enumerate(lanes):
            for u in lane:
                sink(world.tick, u.id, network.local_lane(lane_id, u.pos), u.pos, u.speed)
    if world.tick_log is not None:
        world.tick_log(world.tick, clock, world.generated, world.on_road, len(queue), world.exited)
    return world


def release_and_insert(world: WorldState, network: RoadNetwork, policy: PolicySpec) -> None:
    """Move arrivals due by ``world.clock`` into the entry queue and insert FIFO."""
    schedule = world.schedule
    queue = world.queue
    clock = world.clock
    while schedule and schedule[0].depart_wanted <= clock:
        queue.append(schedule.popleft())
        world.generated += 1
    while queue and try_insert(world, queue[0], network, policy):
        queue.popleft()


def _drop_boundaries(network: RoadNetwork) -> tuple[float, ...]:
    cached = getattr(network, "_drop_boundaries", None)
    if cached is None:
        cached = tuple(sorted({network.lane_ends[p] for p in range(network.n_lanes) if not network.lane_exits[p]}))
        object.__setattr__(network, "_drop_boundaries", cached)
    return cached


class DrainTimeout(RuntimeError):
    pass


def run_until_drained(world: WorldState, network: RoadNetwork, policy: PolicySpec, dt: float,
                      horizon_end: float | None = None) -> WorldState:
    """Step until every scheduled vehicle has been inserted and has exited."""
    if horizon_end is None:
        horizon_end = world.schedule[-1].depart_wanted if world.schedule else world.clock
    deadline = horizon_end + world.params.max_drain
    while not world.drained():
        if world.clock > deadline:
            raise DrainTimeout(f"road not drained {world.params.max_drain:.0f} s after the demand horizon")
        step(world, network, policy, dt)
    return world
