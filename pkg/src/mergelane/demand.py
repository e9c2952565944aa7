"""Arrival streams: Poisson arrival times, vehicle classes, passenger counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .rng import RandomStreams

DEFAULT_CAR_PMF = (0.63, 0.22, 0.09, 0.04, 0.02)
DEFAULT_BUS_PASSENGERS = 7.05
DEFAULT_P_BUS = 0.01
_TOL = 1e-9


class VClass(str, Enum):
    HDV = "HDV"
    CAV = "CAV"
    BUS = "Bus"

    def __str__(self) -> str:
        return self.value


class ValidationError(ValueError):
    pass


class ParseError(ValueError):
    pass


class InvalidScale(ValueError):
    pass


def _rate(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class DemandProfile:
    intervals: tuple[tuple[float, float, Fraction], ...]
    class_dist: tuple[float, float, float] = (1.0 - DEFAULT_P_BUS, 0.0, DEFAULT_P_BUS)
    car_passenger_pmf: tuple[float, ...] = DEFAULT_CAR_PMF
    bus_passengers_mean: float = DEFAULT_BUS_PASSENGERS
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "intervals", tuple((float(a), float(b), _rate(r)) for a, b, r in self.intervals)
        )
        object.__setattr__(self, "class_dist", tuple(float(p) for p in self.class_dist))
        object.__setattr__(self, "car_passenger_pmf", tuple(float(p) for p in self.car_passenger_pmf))
        validate_profile(self)

    @property
    def start(self) -> float:
        return self.intervals[0][0]

    @property
    def end(self) -> float:
        return self.intervals[-1][1]

    @property
    def horizon(self) -> float:
        return self.end - self.start

    @property
    def p_bus(self) -> float:
        return self.class_dist[2]

    def expected_count(self) -> float:
        return float(sum(r * Fraction(repr(b - a)) for a, b, r in self.intervals) / 3600)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "intervals": [[a, b, _fraction_out(r)] for a, b, r in self.intervals],
            "p_hdv": self.class_dist[0],
            "p_cav": self.class_dist[1],
            "p_bus": self.class_dist[2],
            "car_passenger_pmf": list(self.car_passenger_pmf),
            "bus_passengers_mean": self.bus_passengers_mean,
        }


def _fraction_out(r: Fraction) -> int | float | str:
    if r.denominator == 1:
        return int(r)
    as_float = float(r)
    if Fraction(repr(as_float)) == r:
        return as_float
    return f"{r.numerator}/{r.denominator}"


def validate_profile(p: DemandProfile) -> None:
    if not p.intervals:
        raise ValidationError("intervals: at least one interval required")
    prev_end = None
    for i, (a, b, r) in enumerate(p.intervals):
        if not a < b:
            raise ValidationError(f"intervals[{i}]: start must be < end")
        if prev_end is not None and a != prev_end:
            raise ValidationError(f"intervals[{i}]: intervals must be contiguous and non-overlapping")
        if r < 0:
            raise ValidationError(f"intervals[{i}]: lambda_v must be >= 0")
        prev_end = b
    if len(p.class_dist) != 3 or any(not 0.0 <= x <= 1.0 for x in p.class_dist):
        raise ValidationError("class probabilities must each lie in [0, 1]")
    if abs(sum(p.class_dist) - 1.0) > _TOL:
        raise ValidationError(f"class probabilities must sum to 1 (got {sum(p.class_dist):.12g})")
    if not p.car_passenger_pmf or any(x < 0 for x in p.car_passenger_pmf):
        raise ValidationError("car_passenger_pmf must be non-empty and non-negative")
    if abs(sum(p.car_passenger_pmf) - 1.0) > _TOL:
        raise ValidationError(f"car_passenger_pmf must sum to 1 (got {sum(p.car_passenger_pmf):.12g})")
    if not p.bus_passengers_mean > 0:
        raise ValidationError("bus_passengers_mean must be > 0")


@dataclass(frozen=True)
class ArrivalEvent:
    depart_wanted: float
    vclass: VClass
    passengers: int


def constant_profile(veh_per_hour: float = 3000, hours: float = 1.0, **kw: Any) -> DemandProfile:
    return DemandProfile(((0.0, 3600.0 * hours, _rate(veh_per_hour)),), **kw)


def hourly_profile(counts: Sequence[Any], start_hour: int = 0, **kw: Any) -> DemandProfile:
    intervals = [
        (3600.0 * (start_hour + i), 3600.0 * (start_hour + i + 1), _rate(c)) for i, c in enumerate(counts)
    ]
    return DemandProfile(tuple(intervals), **kw)


def scale_profile(profile: DemandProfile, k: Any) -> DemandProfile:
    """Divide every hourly rate by ``k`` (exact rational arithmetic)."""
    try:
        kf = _rate(k)
    except (TypeError, ValueError) as exc:
        raise InvalidScale(f"invalid scale factor {k!r}") from exc
    if kf <= 0:
        raise InvalidScale(f"scale factor must be positive, got {k!r}")
    return replace(profile, intervals=tuple((a, b, r / kf) for a, b, r in profile.intervals))


def with_cav_proportion(profile: DemandProfile, proportion: float) -> DemandProfile:
    """Set P(CAV) to ``proportion`` of the cars; the bus share is kept."""
    if not 0.0 <= proportion <= 1.0:
        raise ValidationError(f"proportion must lie in [0, 1], got {proportion}")
    p_bus = profile.p_bus
    p_cav = proportion * (1.0 - p_bus)
    p_hdv = 1.0 - p_bus - p_cav
    return replace(profile, class_dist=(max(p_hdv, 0.0), p_cav, p_bus))


def arrival_times(profile: DemandProfile, gen: np.random.Generator) -> np.ndarray:
    """Non-homogeneous Poisson arrival times by inversion of the cumulative rate.

    Unit-rate exponential gaps are mapped through the piecewise-linear integrated
    rate, so a gap straddling an interval boundary carries its residual over,
    rescaled by the new rate.
    """
    rates = np.array([float(r) / 3600.0 for _, _, r in profile.intervals])
    starts = np.array([a for a, _, _ in profile.intervals])
    widths = np.array([b - a for a, b, _ in profile.intervals])
    hazard = np.concatenate(([0.0], np.cumsum(rates * widths)))
    total = hazard[-1]
    if total <= 0:
        return np.empty(0)
    chunk = int(total + 10.0 * math.sqrt(total) + 100)
    sums = np.cumsum(gen.standard_exponential(chunk))
    while sums[-1] < total:
        more = np.cumsum(gen.standard_exponential(chunk)) + sums[-1]
        sums = np.concatenate((sums, more))
    sums = sums[sums < total]
    idx = np.searchsorted(hazard, sums, side="left") - 1
    idx = np.clip(idx, 0, len(rates) - 1)
    times = starts[idx] + (sums - hazard[idx]) / rates[idx]
    return np.minimum(times, profile.end)


def class_key(profile: DemandProfile) -> int:
    """Extra stream key used when classes are re-drawn per proportion."""
    return int(round(profile.class_dist[1] * 1e9))


def sample_arrivals(
    profile: DemandProfile, rng: RandomStreams | int, class_coupling: str = "threshold"
) -> list[ArrivalEvent]:
    """Sorted arrival events over the profile horizon.

    Times, classes and passenger counts come from separate substreams.  With
    ``class_coupling="threshold"`` one uniform per arrival is compared with the
    cumulative class probabilities, so raising P(CAV) only relabels HDVs as CAVs;
    ``"resample"`` draws the class uniforms from a stream keyed by P(CAV).
    """
    streams = rng if isinstance(rng, RandomStreams) else RandomStreams(rng)
    times = arrival_times(profile, streams.generator("arrivals"))
    n = len(times)
    if class_coupling == "threshold":
        u_class = streams.generator("class").random(n)
    elif class_coupling == "resample":
        u_class = streams.generator("class", class_key(profile)).random(n)
    else:
        raise ValueError(f"unknown class_coupling {class_coupling!r}")
    u_pass = streams.generator("passengers").random(n)

    p_hdv, p_cav, p_bus = profile.class_dist
    cdf = np.cumsum(profile.car_passenger_pmf)
    cdf[-1] = 1.0
    car_pax = np.searchsorted(cdf, u_pass, side="right") + 1
    bus_pax = max(1, int(round(profile.bus_passengers_mean)))
    events = []
    for t, uc, pax in zip(times.tolist(), u_class.tolist(), car_pax.tolist()):
        if uc < p_bus:
            events.append(ArrivalEvent(t, VClass.BUS, bus_pax))
        elif uc < p_bus + p_cav:
            events.append(ArrivalEvent(t, VClass.CAV, int(pax)))
        else:
            events.append(ArrivalEvent(t, VClass.HDV, int(pax)))
    return events


_PROFILE_KEYS = {"name", "description", "intervals", "p_hdv", "p_cav", "p_bus", "car_passenger_pmf", "bus_passengers_mean"}


def profile_from_dict(data: dict[str, Any], source: str = "<profile>") -> DemandProfile:
    unknown = set(data) - _PROFILE_KEYS
    if unknown:
        raise ParseError(f"{source}: unknown field(s) {sorted(unknown)}")
    if "intervals" not in data:
        raise ParseError(f"{source}: missing field 'intervals'")
    intervals = []
    for i, row in enumerate(data["intervals"]):
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise ParseError(f"{source}: intervals[{i}] must be [start_s, end_s, veh_per_hour]")
        try:
            intervals.append((float(row[0]), float(row[1]), _rate(row[2])))
        except (TypeError, ValueError, ZeroDivisionError):
            raise ParseError(f"{source}: intervals[{i}] has a non-numeric entry") from None
    try:
        p_bus = float(data.get("p_bus", DEFAULT_P_BUS))
        p_cav = float(data.get("p_cav", 0.0))
        p_hdv = float(data.get("p_hdv", 1.0 - p_bus - p_cav))
        pmf = tuple(float(x) for x in data.get("car_passenger_pmf", DEFAULT_CAR_PMF))
        bus_mean = float(data.get("bus_passengers_mean", DEFAULT_BUS_PASSENGERS))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{source}: non-numeric probability or count field ({exc})") from None
    return DemandProfile(
        tuple(intervals),
        class_dist=(p_hdv, p_cav, p_bus),
        car_passenger_pmf=pmf,
        bus_passengers_mean=bus_mean,
        name=str(data.get("name", "")),
    )


def load_profile(path: str | Path) -> DemandProfile:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return profile_from_dict(data, str(path))
