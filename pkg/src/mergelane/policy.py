"""Restricted-lane access rules and the speed-feedback threshold controller."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from .demand import VClass

if TYPE_CHECKING:
    from .network import RoadNetwork

MIN_THRESHOLD = 1
MAX_THRESHOLD = 5


class PolicyKind(str, Enum):
    DBL = "DBL"
    PLUS = "Plus"
    CAV_STATIC = "CAVStaticPlus"
    CAV_DYNAMIC = "CAVDynamic"


class NoRestrictedLane(ValueError):
    pass


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    threshold: int | None = None  # i for Plus / CAVStaticPlus
    v_param: float | None = None  # m/s for CAVDynamic
    control_interval: float = 60.0
    initial_threshold: int = MIN_THRESHOLD

    def __post_init__(self) -> None:
        if self.kind in (PolicyKind.PLUS, PolicyKind.CAV_STATIC):
            if self.threshold is None or not MIN_THRESHOLD <= self.threshold <= MAX_THRESHOLD:
                raise ValueError(f"{self.kind.value} needs a threshold in 1..5, got {self.threshold}")
        if self.kind is PolicyKind.CAV_DYNAMIC:
            if self.v_param is None or not self.v_param > 0:
                raise ValueError("CAVDynamic needs a positive speed parameter")
        if not self.control_interval > 0:
            raise ValueError("control_interval must be positive")
        if not MIN_THRESHOLD <= self.initial_threshold <= MAX_THRESHOLD:
            raise ValueError("initial_threshold must be in 1..5")

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.DBL:
            return "DBL"
        if self.kind is PolicyKind.CAV_DYNAMIC:
            v = self.v_param
            return f"CAVDynamic_{int(v) if float(v).is_integer() else v:g}"
        return f"{self.kind.value}_{self.threshold}"

    @property
    def dynamic(self) -> bool:
        return self.kind is PolicyKind.CAV_DYNAMIC

    def validate_for(self, network: RoadNetwork) -> None:
        if self.dynamic and self.v_param > network.speed_limit:
            raise ValueError(f"{self.name}: speed parameter exceeds the speed limit")

    def __str__(self) -> str:
        return self.name


_NAME_RE = re.compile(r"^(DBL|Plus|CAVStaticPlus|CAVDynamic)(?:_(\d+(?:\.\d+)?))?$")


def parse_policy(name: str, control_interval: float = 60.0, initial_threshold: int = MIN_THRESHOLD) -> PolicySpec:
    """``DBL``, ``Plus_3``, ``CAVStaticPlus_2``, ``CAVDynamic_24`` (24 m/s)."""
    m = _NAME_RE.match(name.strip())
    if not m:
        raise ValueError(f"unknown policy name {name!r}")
    kind = PolicyKind(m.group(1))
    arg = m.group(2)
    if kind is PolicyKind.DBL:
        if arg is not None:
            raise ValueError("DBL takes no parameter")
        return PolicySpec(kind, control_interval=control_interval, initial_threshold=initial_threshold)
    if arg is None:
        raise ValueError(f"{kind.value} needs a parameter, e.g. {kind.value}_3")
    if kind is PolicyKind.CAV_DYNAMIC:
        return PolicySpec(kind, v_param=float(arg), control_interval=control_interval,
                          initial_threshold=initial_threshold)
    if "." in arg:
        raise ValueError(f"{kind.value} threshold must be an integer")
    return PolicySpec(kind, threshold=int(arg), control_interval=control_interval,
                      initial_threshold=initial_threshold)


ALL_POLICIES = (
    ["DBL"]
    + [f"Plus_{i}" for i in range(1, 6)]
    + [f"CAVStaticPlus_{i}" for i in range(1, 6)]
    + [f"CAVDynamic_{v}" for v in (22, 23, 24, 25)]
)
# the 9 rows of the CAV-proportion tables
CAV_POLICIES = [f"CAVStaticPlus_{i}" for i in range(1, 6)] + [f"CAVDynamic_{v}" for v in (22, 23, 24, 25)]


@dataclass
class ControllerState:
    threshold: int = MIN_THRESHOLD
    last_update: float = 0.0
    speed_sum: float = 0.0
    sample_count: int = 0
    log: list[tuple[float, float, int, int]] = field(default_factory=list)

    @property
    def interval_mean(self) -> float | None:
        return self.speed_sum / self.sample_count if self.sample_count else None


def initial_controller(policy: PolicySpec, start_time: float = 0.0) -> ControllerState:
    return ControllerState(threshold=policy.initial_threshold, last_update=start_time)


def permits(policy: PolicySpec, state: ControllerState | None, vehicle) -> bool:
    vclass = vehicle.vclass
    if vclass is VClass.BUS:
        return True
    kind = policy.kind
    if kind is PolicyKind.DBL:
        return False
    if kind is PolicyKind.PLUS:
        return vehicle.passengers >= policy.threshold
    if vclass is not VClass.CAV:
        return False
    if kind is PolicyKind.CAV_STATIC:
        return vehicle.passengers >= policy.threshold
    threshold = state.threshold if state is not None else policy.initial_threshold
    return vehicle.passengers >= threshold


def record_speed_sample(state: ControllerState, mean_speed: float) -> ControllerState:
    if mean_speed < 0:
        raise ValueError("speed sample must be non-negative")
    state.speed_sum += mean_speed
    state.sample_count += 1
    return state


def update_threshold(state: ControllerState, policy: PolicySpec, now: float) -> ControllerState:
    """One feedback step: slower than ``v_param`` tightens, faster loosens, by one."""
    if not policy.dynamic:
        raise ValueError("update_threshold applies to CAVDynamic policies only")
    if now - state.last_update < policy.control_interval:
        return state
    before = state.threshold
    mean = state.interval_mean
    if mean is not None:
        if mean < policy.v_param:
            state.threshold = min(before + 1, MAX_THRESHOLD)
        elif mean > policy.v_param:
            state.threshold = max(before - 1, MIN_THRESHOLD)
    state.log.append((now, mean if mean is not None else float("nan"), before, state.threshold))
    state.speed_sum = 0.0
    state.sample_count = 0
    state.last_update = now
    return state


def measure_restricted_lane_speed(world, network: RoadNetwork) -> float:
    """Mean speed on the restricted lane inside the restricted segment.

    An empty restricted lane reads as the speed limit.
    """
    if network.restricted is None:
        raise NoRestrictedLane("network has no restricted lane")
    lane, start, end = network.restricted
    total = 0.0
    n = 0
    for v in world.lanes[lane]:
        if start <= v.pos < end:
            total += v.speed
            n += 1
    return total / n if n else network.speed_limit
