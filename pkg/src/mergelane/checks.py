"""Post-hoc invariant checks over per-tick trajectory and count logs.

The checker consumes the same rows the simulator writes to its trajectory CSV
(``tick, vehicle_id, lane, position, speed`` with segment-local lane indices)
plus one count row per tick, so it can run either attached to a live run or
over files written earlier.  Legality is judged from vehicle attributes and the
controller log alone, never from the simulator's own permission flags.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

from .demand import ArrivalEvent, VClass
from .network import RoadNetwork
from .policy import ControllerState, PolicyKind, PolicySpec, permits
from .rng import RandomStreams, replicate_seed

TOL = 1e-9


@dataclass
class CheckReport:
    ticks: int = 0
    rows: int = 0
    gap_violations: list[tuple] = field(default_factory=list)
    speed_violations: list[tuple] = field(default_factory=list)
    illegal_entries: list[tuple] = field(default_factory=list)
    conservation_errors: list[tuple] = field(default_factory=list)
    zone_entries: int = 0

    @property
    def ok(self) -> bool:
        return not (self.gap_violations or self.speed_violations or self.illegal_entries or self.conservation_errors)

    def summary(self) -> str:
        return (f"ticks={self.ticks} rows={self.rows} gaps={len(self.gap_violations)} "
                f"speeds={len(self.speed_violations)} illegal={len(self.illegal_entries)} "
                f"conservation={len(self.conservation_errors)} zone_entries={self.zone_entries}")


@dataclass(frozen=True)
class VehicleInfo:
    vclass: VClass
    passengers: int
    length: float
    access: bool | None = None
    violator: bool = False


def vehicle_table(arrivals: list[ArrivalEvent], seed: int, access_fraction: float | None = None,
                  violation_rate: float = 0.0, car_length: float = 5.0, bus_length: float = 12.0
                  ) -> dict[int, VehicleInfo]:
    """Static attributes of every vehicle id, re-derived from the seed."""
    n = len(arrivals)
    streams = RandomStreams(seed)
    access = None
    if access_fraction is not None:
        access = streams.generator("access").random(n) < access_fraction
    violate = None
    if violation_rate > 0:
        violate = streams.generator("violation").random(n) < violation_rate
    out = {}
    for i, ev in enumerate(arrivals):
        out[i] = VehicleInfo(
            ev.vclass, ev.passengers, bus_length if ev.vclass is VClass.BUS else car_length,
            None if access is None else bool(access[i]),
            bool(violate[i]) and ev.vclass is VClass.HDV if violate is not None else False,
        )
    return out


class InvariantChecker:
    def __init__(self, network: RoadNetwork, vehicles: dict[int, VehicleInfo], policy: PolicySpec,
                 start_time: float = 0.0, tol: float = TOL):
        self.net = network
        self.vehicles = vehicles
        self.policy = policy
        self.tol = tol
        self.report = CheckReport()
        self._rows: list[tuple[int, int, float, float]] = []
        self._in_zone: set[int] = set()
        self._prev_clock = start_time
        self._entries: list[tuple[int, int, float]] = []  # (vehicle, tick, decision time)
        if network.restricted is not None:
            lane, r0, r1 = network.restricted
            seg = network.segment_index(r0)
            self._zone = (network.segments[seg].restricted_lane, r0, r1)
        else:
            self._zone = None

    def row(self, tick: int, vid: int, lane: int, pos: float, speed: float) -> None:
        self._rows.append((vid, lane, pos, speed))

    def tick(self, tick: int, clock: float, generated: int, on_road: int, queued: int, exited: int) -> None:
        rep = self.report
        rows = self._rows
        rep.ticks += 1
        rep.rows += len(rows)
        if generated != exited + on_road + queued or on_road != len(rows):
            rep.conservation_errors.append((tick, generated, exited, on_road, queued, len(rows)))

        limit = self.net.speed_limit
        by_lane: dict[int, list[tuple[float, int]]] = {}
        in_zone = set()
        for vid, lane, pos, speed in rows:
            if speed < -self.tol or speed > limit + self.tol:
                rep.speed_violations.append((tick, vid, speed))
            seg = self.net.segment_index(pos)
            by_lane.setdefault(self.net.physical_lane(seg, lane), []).append((pos, vid))
            z = self._zone
            if z is not None and lane == z[0] and z[1] <= pos < z[2]:
                in_zone.add(vid)
                if vid not in self._in_zone:
                    self._entries.append((vid, tick, self._prev_clock))
        for lane_rows in by_lane.values():
            lane_rows.sort()
            for (p_f, v_f), (p_l, v_l) in zip(lane_rows, lane_rows[1:]):
                if p_f > p_l - self.vehicles[v_l].length + self.tol:
                    rep.gap_violations.append((tick, v_f, v_l, p_l - self.vehicles[v_l].length - p_f))
        self._in_zone = in_zone
        self._prev_clock = clock
        self._rows = []

    def finish(self, controller_log: list[tuple[float, float, int, int]] | None = None) -> CheckReport:
        """Judge every restricted-zone entry against the threshold in force when it happened."""
        log = sorted(controller_log or [])
        times = [row[0] for row in log]
        for vid, tick, t in self._entries:
            i = bisect.bisect_right(times, t)
            threshold = log[i - 1][3] if i else self.policy.initial_threshold
            if not self.allowed(vid, threshold):
                self.report.illegal_entries.append((tick, vid, threshold))
        self.report.zone_entries = len(self._entries)
        return self.report

    def allowed(self, vid: int, threshold: int) -> bool:
        info = self.vehicles[vid]
        if info.access is not None and info.vclass is not VClass.BUS:
            return info.access
        veh = SimpleNamespace(vclass=info.vclass, passengers=info.passengers)
        if permits(self.policy, ControllerState(threshold=threshold), veh):
            return True
        return info.violator and self.policy.kind is PolicyKind.PLUS


def check_scenario(config, replicate_index: int = 0, trajectory_path: str | Path | None = None):
    """Run one replication with the checker attached; returns (RunResult, CheckReport).

    With ``trajectory_path`` the rows are also written to CSV.
    """
    from .experiment import run_scenario, scenario_arrivals

    seed = replicate_seed(config.master_seed, replicate_index)
    arrivals = scenario_arrivals(config, replicate_index)
    t = config.traffic
    table = vehicle_table(arrivals, seed, config.access_fraction, t.violation_rate,
                          t.car.vehicle_length, t.bus.vehicle_length)
    checker = InvariantChecker(config.network, table, config.policy, config.profile.start)
    row, tick = checker.row, checker.tick
    fh = None
    if trajectory_path is not None:
        fh = open(trajectory_path, "w", newline="", encoding="utf-8")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tick", "vehicle_id", "lane", "position", "speed"))

        def row(tk, vid, lane, pos, speed, _inner=checker.row):  # noqa: F811
            w.writerow((tk, vid, lane, repr(pos), repr(speed)))
            _inner(tk, vid, lane, pos, speed)
    try:
        result = run_scenario(config, replicate_index, trajectory=row, tick_log=tick)
    finally:
        if fh is not None:
            fh.close()
    return result, checker.finish(result.controller_log)


def check_files(config, replicate_index: int, trajectory_csv: str | Path, ticks_csv: str | Path,
                controller_csv: str | Path | None = None) -> CheckReport:
    """Same checks over files written by ``--trajectory-log``."""
    seed = replicate_seed(config.master_seed, replicate_index)
    from .experiment import scenario_arrivals

    arrivals = scenario_arrivals(config, replicate_index)
    t = config.traffic
    table = vehicle_table(arrivals, seed, config.access_fraction, t.violation_rate,
                          t.car.vehicle_length, t.bus.vehicle_length)
    checker = InvariantChecker(config.network, table, config.policy, config.profile.start)
    with open(trajectory_csv, newline="", encoding="utf-8") as ft, open(ticks_csv, newline="", encoding="utf-8") as fk:
        traj = csv.reader(ft)
        next(traj)
        ticks = csv.reader(fk)
        next(ticks)
        pending = next(traj, None)
        for tk in ticks:
            n = int(tk[0])
            while pending is not None and int(pending[0]) == n:
                checker.row(n, int(pending[1]), int(pending[2]), float(pending[3]), float(pending[4]))
                pending = next(traj, None)
            checker.tick(n, float(tk[1]), int(tk[2]), int(tk[3]), int(tk[4]), int(tk[5]))
    log = []
    if controller_csv is not None:
        with open(controller_csv, newline="", encoding="utf-8") as fc:
            for r in csv.DictReader(fc):
                log.append((float(r["interval_end_s"]), float(r["interval_mean_speed"]),
                            int(r["threshold_before"]), int(r["threshold_after"])))
    return checker.finish(log)
