"""Per-vehicle delay components and their aggregates (APD, grouped timeLoss)."""

from __future__ import annotations

import csv
import io
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .demand import VClass


class IncompleteRecord(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class VehicleRecord:
    id: int
    vclass: VClass
    passengers: int
    depart_wanted: float
    depart_actual: float | None
    exit_time: float | None
    free_flow_time: float


def time_loss(r: VehicleRecord) -> float:
    """D_a - D_t: time in the network beyond free-flow travel time."""
    if r.exit_time is None or r.depart_actual is None:
        raise IncompleteRecord(f"vehicle {r.id} has not exited")
    return (r.exit_time - r.depart_actual) - r.free_flow_time


def depart_delay(r: VehicleRecord) -> float:
    if r.depart_actual is None:
        raise IncompleteRecord(f"vehicle {r.id} was never inserted")
    return r.depart_actual - r.depart_wanted


def vehicle_delay(r: VehicleRecord) -> float:
    return time_loss(r) + depart_delay(r)


def apd(records: Iterable[VehicleRecord]) -> float:
    """Average passenger delay: passenger-weighted mean of vehicle delay."""
    num = 0.0
    den = 0
    for r in records:
        num += vehicle_delay(r) * r.passengers
        den += r.passengers
    if den == 0:
        raise EmptyInput("apd() needs at least one record")
    return num / den


def group_time_loss(records: Sequence[VehicleRecord], stat: str = "mean") -> dict[tuple[str, int | None], float]:
    """Mean timeLoss per (class, passengers); HDVs form a single row keyed (HDV, None).

    Buses are grouped by their (fixed) occupancy like CAVs.
    """
    if not records:
        raise EmptyInput("group_time_loss() needs records")
    groups: dict[tuple[str, int | None], list[float]] = defaultdict(list)
    for r in records:
        key = (r.vclass.value, None) if r.vclass is VClass.HDV else (r.vclass.value, r.passengers)
        groups[key].append(time_loss(r))
    agg = statistics.median if stat == "median" else statistics.fmean
    return {k: agg(v) for k, v in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0))}


@dataclass
class RunResult:
    records: list[VehicleRecord]
    apd: float
    per_class_time_loss: dict[tuple[str, int | None], float]
    counts: dict[str, int]
    seed: int = 0
    policy: str = ""
    proportion: float | None = None
    replicate: int = 0
    access_fraction: float | None = None
    controller_log: list[tuple[float, float, int, int]] = field(default_factory=list)
    speed_profile: list[tuple[float, float]] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: list[VehicleRecord], counts: dict[str, int], **kw) -> "RunResult":
        if records:
            value = apd(records)
            grouped = group_time_loss(records)
        else:
            value = float("nan")
            grouped = {}
        return cls(records, value, grouped, counts, **kw)

    def mean_vehicle_delay(self) -> float:
        return statistics.fmean(vehicle_delay(r) for r in self.records) if self.records else float("nan")


RECORD_HEADER = (
    "id", "class", "passengers", "depart_wanted_s", "depart_actual_s", "exit_s",
    "d_t_s", "time_loss_s", "depart_delay_s", "vd_s",
)


def records_to_csv(records: Iterable[VehicleRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_HEADER)
    for r in records:
        w.writerow((
            r.id, r.vclass.value, r.passengers, repr(r.depart_wanted), repr(r.depart_actual),
            repr(r.exit_time), repr(r.free_flow_time), repr(time_loss(r)), repr(depart_delay(r)),
            repr(vehicle_delay(r)),
        ))
    return buf.getvalue()


def records_from_csv(text: str) -> list[VehicleRecord]:
    rows = csv.DictReader(io.StringIO(text))
    return [
        VehicleRecord(
            int(row["id"]), VClass(row["class"]), int(row["passengers"]), float(row["depart_wanted_s"]),
            float(row["depart_actual_s"]), float(row["exit_s"]), float(row["d_t_s"]),
        )
        for row in rows
    ]
