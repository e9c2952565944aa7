"""``mergelane`` command line: simulate, sweep, access-study, validate-config."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .experiment import (
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    builtin_path,
    load_config,
    mean_std,
    run_access_fraction_study,
    run_replications,
    run_sweep,
    write_results,
)
from .policy import CAV_POLICIES, ALL_POLICIES, parse_policy

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

POLICY_HELP = (
    "Policies (restricted-lane access rules): "
    "DBL (buses only); "
    "Plus_i, i=1..5 (any vehicle with >= i passengers); "
    "CAVStaticPlus_i, i=1..5 (buses and CAVs with >= i passengers); "
    "CAVDynamic_v (CAV occupancy threshold adjusted every control interval "
    "toward restricted-lane mean speed v m/s, e.g. CAVDynamic_24). "
    "Named sets for --policies: all = " + ", ".join(ALL_POLICIES) + "; cav = the CAV policies only; "
    "baseline = DBL and Plus_1..Plus_5."
)

POLICY_SETS = {
    "all": list(ALL_POLICIES),
    "cav": list(CAV_POLICIES),
    "baseline": ["DBL"] + [f"Plus_{i}" for i in range(1, 6)],
}


class UsageError(ValueError):
    pass


def parse_range(text: str) -> list[float]:
    """``0.1:1.0:0.1`` (inclusive) or ``0.1,0.2,0.5``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise UsageError(f"range must be start:stop:step with step > 0, got {text!r}")
            start, stop, step = parts
            n = int(round((stop - start) / step))
            if n < 0 or abs(start + n * step - stop) > 1e-9 * max(1.0, abs(stop)):
                raise UsageError(f"range {text!r} does not land on its end point")
            return [round(start + i * step, 10) for i in range(n + 1)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"not a number list: {text!r}") from None


def parse_policies(text: str) -> list[str]:
    key = text.strip()
    if key in POLICY_SETS:
        return POLICY_SETS[key]
    names = [p.strip() for p in key.split(",") if p.strip()]
    for n in names:
        try:
            parse_policy(n)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return names


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, metavar="PATH",
                   help="scenario config (TOML) or a results manifest.json; shipped names such as "
                        "daily3.cfg are found even outside the data directory")
    p.add_argument("--policy", metavar="NAME", help="override the config's policy")
    p.add_argument("--proportion", type=float, metavar="F", help="CAV proportion P(CAV) of cars")
    p.add_argument("--seed", type=int, metavar="N", help="master seed")
    p.add_argument("--replications", type=int, metavar="N")
    p.add_argument("--dt", type=float, metavar="S", help="time step in seconds")
    p.add_argument("--out-dir", metavar="PATH", help="results directory (fallback: $MERGELANE_OUT)")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes (default 1)")
    p.add_argument("--trajectory-log", action="store_true",
                   help="write per-tick trajectory CSVs under <out-dir>/trajectories")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergelane",
        description="Lane-drop traffic microsimulation of restricted-lane access policies.",
        epilog=POLICY_HELP,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sim = sub.add_parser("simulate", help="replications of one scenario", epilog=POLICY_HELP)
    _common(sim)

    sw = sub.add_parser("sweep", help="policy x CAV-proportion grid", epilog=POLICY_HELP)
    _common(sw)
    sw.add_argument("--policies", default="all", help="comma list or all | cav | baseline (default all)")
    sw.add_argument("--proportions", default="0.1:1.0:0.1", help="start:stop:step or comma list")

    st = sub.add_parser("access-study", help="VD and speed profile vs admitted fraction", epilog=POLICY_HELP)
    _common(st)
    st.add_argument("--fractions", default="0.1:1.0:0.1", help="start:stop:step or comma list")

    val = sub.add_parser("validate-config", help="parse and validate a config, then exit")
    val.add_argument("--config", required=True, metavar="PATH")
    return parser


def resolve_config_path(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    shipped = builtin_path(p.name)
    if not p.parent.parts and shipped.exists():
        return shipped
    raise FileNotFoundError(f"config file not found: {path}")


def apply_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> tuple[ScenarioConfig, dict[str, Any]]:
    changes: dict[str, Any] = {}
    shown: dict[str, Any] = {}
    if args.policy is not None:
        try:
            changes["policy"] = parse_policy(args.policy, cfg.policy.control_interval, cfg.policy.initial_threshold)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        shown["policy"] = args.policy
    for key, attr in (("proportion", "proportion"), ("seed", "master_seed"), ("replications", "replications"),
                      ("dt", "dt")):
        value = getattr(args, key)
        if value is not None:
            changes[attr] = value
            shown[key] = value
    out_dir = args.out_dir or os.environ.get("MERGELANE_OUT") or cfg.out_dir
    if out_dir:
        changes["out_dir"] = str(out_dir)
        shown["out_dir"] = str(out_dir)
    return replace(cfg, **changes), shown


def _print_cell(policy: str, prop: float | None, values: Sequence[float], what: str = "APD") -> None:
    m, s = mean_std(values)
    p = "-" if prop is None else f"{prop:g}"
    print(f"{policy:<16} proportion={p:<5} n={len(values):<3} {what} = {m:.2f} ± {s:.2f} s")


def _run(args: argparse.Namespace) -> int:
    cfg = load_config(resolve_config_path(args.config))
    if args.command == "validate-config":
        print(f"ok: {args.config} ({cfg.policy.name}, {cfg.demand.expected_count():.0f} expected vehicles, "
              f"{cfg.network.n_lanes} lanes, {cfg.replications} replications)")
        return EXIT_OK

    cfg, shown = apply_overrides(cfg, args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    out = Path(cfg.out_dir) if cfg.out_dir else None
    log_dir = None
    if args.trajectory_log:
        if out is None:
            raise ConfigError("--trajectory-log needs --out-dir or MERGELANE_OUT")
        log_dir = out / "trajectories"

    if args.command == "simulate":
        result = run_replications(cfg, args.jobs, log_dir)
        _print_cell(cfg.policy.name, cfg.proportion, [r.apd for r in result.runs])
    elif args.command == "sweep":
        try:
            policies = parse_policies(args.policies)
            props = parse_range(args.proportions)
        except UsageError as exc:
            raise ConfigError(str(exc)) from None
        shown.update(policies=policies, proportions=props)
        result = run_sweep(SweepSpec(cfg, tuple(policies), tuple(props)), args.jobs, log_dir)
        for p in result.policies:
            for q in result.proportions:
                _print_cell(p, q, [r.apd for r in result.cell(p, q)])
    else:
        try:
            fractions = parse_range(args.fractions)
        except UsageError as exc:
            raise ConfigError(str(exc)) from None
        shown["fractions"] = fractions
        result = run_access_fraction_study(cfg, fractions, args.jobs, log_dir)
        for f in result.fractions:
            _print_cell(f"f={f:g}", cfg.proportion, [r.mean_vehicle_delay() for r in result.fraction_runs(f)], "VD")

    if out is not None:
        write_results(result, out, shown, figures=not args.no_figures)
        print(f"results written to {out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
