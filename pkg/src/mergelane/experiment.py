"""Scenario configs, replications, sweeps, the access-fraction study and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import __version__
from .demand import (
    DemandProfile,
    ParseError,
    ValidationError,
    load_profile,
    profile_from_dict,
    sample_arrivals,
    scale_profile,
    with_cav_proportion,
)
from .metrics import RECORD_HEADER, RunResult, records_to_csv
from .network import InvalidGeometry, RoadNetwork, build_reference_network, network_from_dict
from .policy import PolicySpec, parse_policy
from .rng import RandomStreams, replicate_seed
from .traffic import DriverParams, TrafficParams, make_world, run_until_drained, step

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

COUPLINGS = ("threshold", "resample")


class ConfigError(ValueError):
    """A scenario config that cannot be used as given."""


@dataclass(frozen=True)
class ScenarioConfig:
    network: RoadNetwork
    demand: DemandProfile  # already scaled
    policy: PolicySpec
    demand_ref: str = ""
    demand_scale: float = 1.0
    proportion: float | None = None
    master_seed: int = 1
    replications: int = 10
    dt: float = 1.0
    out_dir: str | None = None
    access_fraction: float | None = None
    class_coupling: str = "threshold"
    traffic: TrafficParams = field(default_factory=TrafficParams)
    name: str = ""

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.access_fraction is not None and not 0.0 <= self.access_fraction <= 1.0:
            raise ConfigError("access_fraction must lie in [0, 1]")
        if self.proportion is not None and not 0.0 <= self.proportion <= 1.0:
            raise ConfigError("proportion must lie in [0, 1]")
        if self.class_coupling not in COUPLINGS:
            raise ConfigError(f"class_coupling must be one of {COUPLINGS}")
        try:
            self.policy.validate_for(self.network)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def profile(self) -> DemandProfile:
        """Demand actually simulated (proportion applied)."""
        if self.proportion is None:
            return self.demand
        return with_cav_proportion(self.demand, self.proportion)

    def seeds(self) -> list[int]:
        return [replicate_seed(self.master_seed, i) for i in range(self.replications)]


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    policies: tuple[str, ...]
    cav_proportions: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.policies:
            raise ConfigError("sweep needs at least one policy")
        for p in self.cav_proportions:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"proportion {p} outside [0, 1]")
        for name in self.policies:
            _policy(name, self.base.policy)

    def cells(self) -> list[ScenarioConfig]:
        props: Sequence[float | None] = self.cav_proportions or (self.base.proportion,)
        return [
            replace(self.base, policy=_policy(name, self.base.policy), proportion=p)
            for name in self.policies
            for p in props
        ]


def _policy(name: str, like: PolicySpec) -> PolicySpec:
    try:
        return parse_policy(name, like.control_interval, like.initial_threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- config files ----------------------------------------------------------------

_TOP_KEYS = {
    "name", "seed", "replications", "dt", "policy", "proportion", "out_dir", "access_fraction",
    "class_coupling", "network", "demand", "controller", "traffic",
}
_TRAFFIC_KEYS = {"lookahead", "hysteresis", "merge_zone", "view", "violation_rate", "max_drain", "car", "bus"}
_DRIVER_KEYS = {"max_accel", "max_decel", "reaction_time", "min_gap", "sigma", "vehicle_length"}


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("mergelane") / "data" / name))


def _resolve_demand(ref: str, base_dir: Path) -> tuple[DemandProfile, str]:
    if ref.startswith("builtin:"):
        path = builtin_path(ref.split(":", 1)[1] + ".toml")
    else:
        path = Path(ref)
        if not path.is_absolute():
            path = base_dir / path
    if not path.exists():
        raise ConfigError(f"demand profile not found: {ref}")
    return load_profile(path), ref


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def config_from_dict(data: dict[str, Any], base_dir: Path | str = ".") -> ScenarioConfig:
    base_dir = Path(base_dir)
    _check_keys(data, _TOP_KEYS, "config")
    try:
        network = network_from_dict(data["network"]) if "network" in data else build_reference_network()

        dem = data.get("demand")
        if dem is None:
            raise ConfigError("config: missing [demand] table")
        _check_keys(dem, {"profile", "scale"}, "demand")
        src = dem.get("profile")
        if isinstance(src, str):
            profile, ref = _resolve_demand(src, base_dir)
        elif isinstance(src, dict):
            profile, ref = profile_from_dict(src, "demand.profile"), ""
        else:
            raise ConfigError("demand.profile must be a file reference or an inline table")
        scale = dem.get("scale", 1)
        profile = scale_profile(profile, scale)

        ctrl = data.get("controller", {})
        _check_keys(ctrl, {"interval", "initial_threshold"}, "controller")
        policy = parse_policy(
            str(data.get("policy", "DBL")),
            float(ctrl.get("interval", 60.0)),
            int(ctrl.get("initial_threshold", 1)),
        )

        tr = dict(data.get("traffic", {}))
        _check_keys(tr, _TRAFFIC_KEYS, "traffic")
        drivers = {}
        for kind, default in (("car", TrafficParams().car), ("bus", TrafficParams().bus)):
            d = tr.pop(kind, {})
            _check_keys(d, _DRIVER_KEYS, f"traffic.{kind}")
            drivers[kind] = replace(default, **{k: float(v) for k, v in d.items()})
        traffic = TrafficParams(**{k: float(v) for k, v in tr.items()}, **drivers)

        prop = data.get("proportion")
        frac = data.get("access_fraction")
        return ScenarioConfig(
            network=network,
            demand=profile,
            policy=policy,
            demand_ref=ref,
            demand_scale=float(scale),
            proportion=None if prop is None else float(prop),
            master_seed=int(data.get("seed", 1)),
            replications=int(data.get("replications", 10)),
            dt=float(data.get("dt", 1.0)),
            out_dir=data.get("out_dir"),
            access_fraction=None if frac is None else float(frac),
            class_coupling=str(data.get("class_coupling", "threshold")),
            traffic=traffic,
            name=str(data.get("name", "")),
        )
    except ConfigError:
        raise
    except (InvalidGeometry, ParseError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a TOML scenario config, or the ``config`` echo of a results manifest."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")  # OSError propagates: an I/O failure, not a bad config
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        data = data.get("config", data)
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Self-contained echo (demand inlined) that :func:`config_from_dict` reads back."""
    profile = cfg.demand.to_dict()
    out: dict[str, Any] = {
        "name": cfg.name,
        "seed": cfg.master_seed,
        "replications": cfg.replications,
        "dt": cfg.dt,
        "policy": cfg.policy.name,
        "class_coupling": cfg.class_coupling,
        "network": cfg.network.to_dict(),
        "demand": {"profile": profile, "scale": 1},
        "controller": {
            "interval": cfg.policy.control_interval,
            "initial_threshold": cfg.policy.initial_threshold,
        },
        "traffic": _traffic_dict(cfg.traffic),
    }
    if cfg.proportion is not None:
        out["proportion"] = cfg.proportion
    if cfg.access_fraction is not None:
        out["access_fraction"] = cfg.access_fraction
    return out


def _traffic_dict(t: TrafficParams) -> dict[str, Any]:
    def drv(d: DriverParams) -> dict[str, float]:
        return {k: getattr(d, k) for k in sorted(_DRIVER_KEYS)}

    return {
        "lookahead": t.lookahead,
        "hysteresis": t.hysteresis,
        "merge_zone": t.merge_zone,
        "view": t.view,
        "violation_rate": t.violation_rate,
        "max_drain": t.max_drain,
        "car": drv(t.car),
        "bus": drv(t.bus),
    }


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- running -------------------------------------------------------------------------

def scenario_arrivals(config: ScenarioConfig, replicate_index: int):
    seed = replicate_seed(config.master_seed, replicate_index)
    return sample_arrivals(config.profile, RandomStreams(seed), config.class_coupling)


def run_scenario(
    config: ScenarioConfig,
    replicate_index: int = 0,
    trajectory: Callable[[int, int, int, float, float], None] | None = None,
    tick_log: Callable[[int, float, int, int, int, int], None] | None = None,
    speed_profile: bool = False,
) -> RunResult:
    """One replication, drained to empty.

    The seed depends only on ``(master_seed, replicate_index)``, so every
    policy sees the same arrivals and the same driver randomness stream.
    """
    seed = replicate_seed(config.master_seed, replicate_index)
    streams = RandomStreams(seed)
    profile = config.profile
    arrivals = sample_arrivals(profile, streams, config.class_coupling)
    net = config.network
    world = make_world(net, config.policy, arrivals, streams, config.traffic, profile.start, config.access_fraction)
    world.trajectory = trajectory
    world.tick_log = tick_log
    if speed_profile:
        world.speed_bins = {}
    while world.clock < profile.end and not world.drained():
        step(world, net, config.policy, config.dt)
    counts = {
        "generated_at_horizon": world.generated,
        "queued_at_horizon": len(world.queue),
        "on_road_at_horizon": world.on_road,
    }
    run_until_drained(world, net, config.policy, config.dt, profile.end)
    counts.update(generated=world.generated, exited=world.exited, queued_at_end=len(world.queue))
    bins = []
    if world.speed_bins is not None:
        w = world.bin_width
        bins = [(k * w, s / n) for k, (s, n) in sorted(world.speed_bins.items()) if n]
    records = sorted(world.completed, key=lambda r: r.id)
    return RunResult.from_records(
        records, counts,
        seed=seed,
        policy=config.policy.name,
        proportion=config.proportion,
        replicate=replicate_index,
        access_fraction=config.access_fraction,
        controller_log=list(world.controller.log),
        speed_profile=bins,
    )


def run_logged(config: ScenarioConfig, replicate_index: int, log_dir: str | Path,
               speed_profile: bool = False) -> RunResult:
    """:func:`run_scenario` writing ``<rep>.csv`` (trajectory) and ``<rep>_ticks.csv`` (counts)."""
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    with open(log_dir / f"{replicate_index}.csv", "w", newline="", encoding="utf-8") as ft, \
            open(log_dir / f"{replicate_index}_ticks.csv", "w", newline="", encoding="utf-8") as fk:
        wt = csv.writer(ft, lineterminator="\n")
        wk = csv.writer(fk, lineterminator="\n")
        wt.writerow(("tick", "vehicle_id", "lane", "position", "speed"))
        wk.writerow(("tick", "clock_s", "generated", "on_road", "queued", "exited"))
        row = wt.writerow

        def traj(tick, vid, lane, pos, speed):
            row((tick, vid, lane, repr(pos), repr(speed)))

        def ticks(tick, clock, generated, on_road, queued, exited):
            wk.writerow((tick, repr(clock), generated, on_road, queued, exited))

        return run_scenario(config, replicate_index, traj, ticks, speed_profile)


def _run_task(args: tuple[ScenarioConfig, int, bool, str | None]) -> RunResult:
    cfg, rep, speeds, log_root = args
    if log_root is None:
        return run_scenario(cfg, rep, speed_profile=speeds)
    sub = (f"access_{label(cfg.access_fraction)}" if cfg.access_fraction is not None else cfg.policy.name)
    return run_logged(cfg, rep, Path(log_root) / sub / label(cfg.proportion), speeds)


def _execute(tasks: list[tuple[ScenarioConfig, int, bool, str | None]], jobs: int) -> list[RunResult]:
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps submission order, so output never depends on completion order
        return list(pool.map(_run_task, tasks, chunksize=1))


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and empirical (n - 1) standard deviation; std is 0 for a single value."""
    if not values:
        return math.nan, math.nan
    m = statistics.fmean(values)
    return m, (statistics.stdev(values) if len(values) > 1 else 0.0)


@dataclass
class ExperimentResult:
    kind: str  # simulate | sweep | access-study
    config: ScenarioConfig
    runs: list[RunResult]
    policies: list[str] = field(default_factory=list)
    proportions: list[float | None] = field(default_factory=list)
    fractions: list[float] = field(default_factory=list)

    def cell(self, policy: str, proportion: float | None) -> list[RunResult]:
        return [r for r in self.runs if r.policy == policy and r.proportion == proportion]

    def table(self) -> dict[tuple[str, float | None], tuple[float, float]]:
        """(policy, proportion) -> (mean APD, std APD)."""
        return {
            (p, q): mean_std([r.apd for r in self.cell(p, q)])
            for p in self.policies
            for q in self.proportions
        }

    def fraction_runs(self, f: float) -> list[RunResult]:
        return [r for r in self.runs if r.access_fraction == f]

    def vd_by_fraction(self) -> dict[float, tuple[float, float]]:
        return {f: mean_std([r.mean_vehicle_delay() for r in self.fraction_runs(f)]) for f in self.fractions}

    def speed_by_fraction(self) -> dict[float, list[tuple[float, float]]]:
        out = {}
        for f in self.fractions:
            acc: dict[float, list[float]] = {}
            for r in self.fraction_runs(f):
                for x, s in r.speed_profile:
                    acc.setdefault(x, []).append(s)
            out[f] = [(x, statistics.fmean(v)) for x, v in sorted(acc.items())]
        return out


def run_replications(config: ScenarioConfig, jobs: int = 1, log_dir: str | Path | None = None) -> ExperimentResult:
    log = None if log_dir is None else str(log_dir)
    runs = _execute([(config, i, False, log) for i in range(config.replications)], jobs)
    return ExperimentResult("simulate", config, runs, [config.policy.name], [config.proportion])


def run_sweep(sweep: SweepSpec, jobs: int = 1, log_dir: str | Path | None = None) -> ExperimentResult:
    """Every (policy, proportion) cell with ``base.replications`` common-seed runs."""
    cells = sweep.cells()
    log = None if log_dir is None else str(log_dir)
    tasks = [(cfg, i, False, log) for cfg in cells for i in range(cfg.replications)]
    runs = _execute(tasks, jobs)
    props = list(sweep.cav_proportions) or [sweep.base.proportion]
    return ExperimentResult("sweep", sweep.base, runs, list(sweep.policies), props)


def run_access_fraction_study(config: ScenarioConfig, fractions: Iterable[float], jobs: int = 1,
                              log_dir: str | Path | None = None) -> ExperimentResult:
    """Admit each vehicle to the restricted lane with probability f, class-agnostic.

    Collects per-run mean VD and mean speed per road bin (100 m by default).
    """
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"access fraction {f} outside [0, 1]")
    log = None if log_dir is None else str(log_dir)
    tasks = [
        (replace(config, access_fraction=f), i, True, log)
        for f in fractions
        for i in range(config.replications)
    ]
    runs = _execute(tasks, jobs)
    return ExperimentResult("access-study", config, runs, [config.policy.name], [config.proportion], fractions)


# -- persistence --------------------------------------------------------------------------

def fmt(x: float | None) -> str:
    if x is None:
        return ""
    return repr(float(x))


def label(x: float | None) -> str:
    """Directory-safe name for a proportion or fraction."""
    return "base" if x is None else f"{x:g}"


def manifest(result: ExperimentResult, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = result.config
    return {
        "tool": "mergelane",
        "version": __version__,
        "kind": result.kind,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "demand_ref": cfg.demand_ref,
        "demand_scale": cfg.demand_scale,
        "class_coupling": cfg.class_coupling,
        "policies": result.policies,
        "proportions": result.proportions,
        "fractions": result.fractions,
        "replications": cfg.replications,
        "seeds": [{"replicate": i, "seed": s} for i, s in enumerate(cfg.seeds())],
        "overrides": overrides or {},
    }


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _run_dir(r: RunResult) -> str:
    if r.access_fraction is not None:
        return f"access_{label(r.access_fraction)}/{label(r.proportion)}"
    return f"{r.policy}/{label(r.proportion)}"


def write_results(result: ExperimentResult, out_dir: str | Path, overrides: dict[str, Any] | None = None,
                  figures: bool = True) -> list[Path]:
    """Persist everything needed to recompute and rerun ``result``; returns the files written."""
    out = Path(out_dir)
    written: list[Path] = []

    def put(rel: str, text: str) -> None:
        p = out / rel
        _write(p, text)
        written.append(p)

    put("manifest.json", json.dumps(manifest(result, overrides), indent=2, sort_keys=True) + "\n")
    if not result.runs:
        return written

    summary = [(
        "policy", "proportion", "access_fraction", "replicate", "seed", "vehicles", "passengers",
        "apd_s", "mean_vd_s", "generated", "exited", "queued_at_horizon", "on_road_at_horizon",
    )]
    time_loss_rows = [("policy", "proportion", "access_fraction", "replicate", "class", "passengers", "mean_time_loss_s")]
    for r in result.runs:
        d = _run_dir(r)
        put(f"runs/{d}/{r.replicate}.csv", records_to_csv(r.records))
        summary.append((
            r.policy, fmt(r.proportion), fmt(r.access_fraction), r.replicate, r.seed, len(r.records),
            sum(x.passengers for x in r.records), fmt(r.apd), fmt(r.mean_vehicle_delay()),
            r.counts.get("generated", ""), r.counts.get("exited", ""),
            r.counts.get("queued_at_horizon", ""), r.counts.get("on_road_at_horizon", ""),
        ))
        for (cls, pax), tl in r.per_class_time_loss.items():
            time_loss_rows.append((r.policy, fmt(r.proportion), fmt(r.access_fraction), r.replicate, cls,
                                   "" if pax is None else pax, fmt(tl)))
        if r.controller_log:
            rows = [("interval_end_s", "interval_mean_speed", "threshold_before", "threshold_after")]
            rows += [(fmt(t), fmt(m), b, a) for t, m, b, a in r.controller_log]
            put(f"controller/{d}/{r.replicate}.csv", _csv(rows))
        if r.speed_profile:
            rows = [("bin_start_m", "mean_speed_mps")] + [(fmt(x), fmt(s)) for x, s in r.speed_profile]
            put(f"runs/{d}/{r.replicate}_speed.csv", _csv(rows))
    put("summary.csv", _csv(summary))
    put("time_loss.csv", _csv(time_loss_rows))

    if result.kind == "access-study":
        vd = result.vd_by_fraction()
        rows = [("access_fraction", "mean_vd_s", "std_vd_s", "replications")]
        rows += [(fmt(f), fmt(m), fmt(s), len(result.fraction_runs(f))) for f, (m, s) in vd.items()]
        put("plots/vd_vs_fraction.csv", _csv(rows))
        rows = [("access_fraction", "bin_start_m", "mean_speed_mps")]
        for f, prof in result.speed_by_fraction().items():
            rows += [(fmt(f), fmt(x), fmt(s)) for x, s in prof]
        put("plots/speed_vs_position.csv", _csv(rows))
    else:
        table = result.table()
        head = ["policy"] + [label(q) for q in result.proportions]
        means = [head] + [[p] + [fmt(table[p, q][0]) for q in result.proportions] for p in result.policies]
        stds = [head] + [[p] + [fmt(table[p, q][1]) for q in result.proportions] for p in result.policies]
        put("sweep_table.csv", _csv(means))
        put("sweep_table_std.csv", _csv(stds))
        rows = [("policy", "proportion", "replications", "apd_mean_s", "apd_std_s")]
        for (p, q), (m, s) in table.items():
            rows.append((p, fmt(q), len(result.cell(p, q)), fmt(m), fmt(s)))
        put("cells.csv", _csv(rows))
        put("plots/apd_vs_proportion.csv", _csv(rows))
        put("plots/time_loss_by_group.csv", _csv(_grouped_time_loss(result)))

    if figures:
        from .plotting import render_figures

        written += render_figures(result, out / "plots")
    return written


def _grouped_time_loss(result: ExperimentResult) -> list[tuple]:
    """Mean over replications of each run's per-group mean timeLoss."""
    rows: list[tuple] = [("policy", "proportion", "class", "passengers", "mean_time_loss_s", "replications")]
    for p in result.policies:
        for q in result.proportions:
            acc: dict[tuple[str, int | None], list[float]] = {}
            for r in result.cell(p, q):
                for key, tl in r.per_class_time_loss.items():
                    acc.setdefault(key, []).append(tl)
            for (cls, pax), vals in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
                rows.append((p, fmt(q), cls, "" if pax is None else pax, fmt(statistics.fmean(vals)), len(vals)))
    return rows


def read_run_csv(path: str | Path) -> list[float]:
    """Per-vehicle VD column of a persisted run file (for recomputation checks)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0]) != list(RECORD_HEADER):
        raise ValueError(f"{path}: unexpected header")
    return [float(r["vd_s"]) for r in rows]


__all__ = [
    "ConfigError", "ScenarioConfig", "SweepSpec", "ExperimentResult", "load_config", "config_from_dict",
    "config_to_dict", "config_hash", "run_scenario", "run_replications", "run_sweep",
    "run_access_fraction_study", "write_results", "scenario_arrivals", "mean_std",
]
