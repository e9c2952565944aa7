import csv
import json
import statistics
from dataclasses import replace
from pathlib import Path

import pytest

from mergelane.demand import constant_profile
from mergelane.experiment import (
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    builtin_path,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    mean_std,
    read_run_csv,
    run_access_fraction_study,
    run_replications,
    run_scenario,
    run_sweep,
    scenario_arrivals,
    write_results,
    ExperimentResult,
)
from mergelane.metrics import apd, records_from_csv
from mergelane.network import build_lane_drop_network, build_reference_network
from mergelane.policy import parse_policy


def small(**kw):
    base = dict(network=build_reference_network(), demand=constant_profile(2600, hours=0.1),
                policy=parse_policy("DBL"), master_seed=3, replications=2)
    base.update(kw)
    return ScenarioConfig(**base)


def test_shipped_configs_load():
    d3 = load_config(builtin_path("daily3.cfg"))
    assert d3.demand_scale == 3 and len(d3.demand.intervals) == 14
    assert d3.network == build_reference_network()
    assert d3.replications == 10
    c = load_config(builtin_path("constant3000.cfg"))
    assert c.demand.expected_count() == 3000
    cs = load_config(builtin_path("case_study.cfg"))
    assert cs.network.segments[0].lane_count == 5 and cs.network.exit_lanes == 3


@pytest.mark.parametrize("patch, msg", [
    ({"replications": 0}, "replications"),
    ({"dt": 0}, "dt"),
    ({"access_fraction": 1.5}, "access_fraction"),
    ({"policy": "Plus_9"}, "threshold"),
    ({"colour": 1}, "unknown"),
    ({"class_coupling": "both"}, "class_coupling"),
    ({"policy": "CAVDynamic_26"}, "speed limit"),
])
def test_config_validation(patch, msg):
    data = {"demand": {"profile": {"intervals": [[0, 60, 100]]}}}
    data.update(patch)
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(data)


def test_config_round_trip():
    cfg = load_config(builtin_path("daily3.cfg"))
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again.demand == cfg.demand
    assert again.network == cfg.network
    assert again.traffic == cfg.traffic
    assert config_hash(again) == config_hash(cfg)


def test_run_is_deterministic():
    cfg = small()
    a, b = run_scenario(cfg, 1), run_scenario(cfg, 1)
    assert a.records == b.records and a.apd == b.apd


def test_common_random_numbers_across_policies():
    cfg = small(proportion=0.2)
    dyn = replace(cfg, policy=parse_policy("CAVDynamic_24"))
    assert scenario_arrivals(cfg, 0) == scenario_arrivals(dyn, 0)
    r1, r2 = run_scenario(cfg, 0), run_scenario(dyn, 0)
    assert [r.depart_wanted for r in r1.records] == [r.depart_wanted for r in r2.records]
    assert r1.records != r2.records


def test_replications_get_distinct_seeds():
    cfg = small(replications=10)
    assert len(set(cfg.seeds())) == 10
    res = run_replications(replace(cfg, demand=constant_profile(600, hours=0.05)))
    assert len(res.runs) == 10 and len({r.seed for r in res.runs}) == 10


def test_run_drains_every_vehicle():
    r = run_scenario(small(demand=constant_profile(4000, hours=0.1)), 0)
    assert r.counts["exited"] == r.counts["generated"] == len(r.records)
    assert r.counts["queued_at_end"] == 0


def test_degenerate_sweep_is_mean_of_runs():
    cfg = small(replications=3)
    res = run_sweep(SweepSpec(cfg, ("DBL",), (0.0,)))
    m, s = res.table()[("DBL", 0.0)]
    apds = [run_scenario(replace(cfg, proportion=0.0), i).apd for i in range(3)]
    assert m == statistics.fmean(apds)
    assert s == statistics.stdev(apds)


def test_sweep_cells_are_order_independent():
    cfg = small(replications=1)
    a = run_sweep(SweepSpec(cfg, ("DBL", "CAVDynamic_24"), (0.1, 0.3)))
    b = run_sweep(SweepSpec(cfg, ("CAVDynamic_24", "DBL"), (0.3, 0.1)))
    assert a.table() == b.table()


def test_parallel_matches_serial():
    cfg = small(replications=2)
    sweep = SweepSpec(cfg, ("DBL", "Plus_2"), (0.2,))
    assert run_sweep(sweep, jobs=2).table() == run_sweep(sweep, jobs=1).table()


def test_write_results_layout_and_recomputation(tmp_path):
    cfg = small(replications=2)
    res = run_sweep(SweepSpec(cfg, ("DBL", "CAVDynamic_24"), (0.1, 0.2)))
    write_results(res, tmp_path, figures=False)
    with open(tmp_path / "sweep_table.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["policy", "0.1", "0.2"]
    assert [r[0] for r in rows[1:]] == ["DBL", "CAVDynamic_24"]
    # each persisted cell mean equals a recomputation from per-vehicle files
    for row in rows[1:]:
        for label, value in zip(rows[0][1:], row[1:]):
            apds = [apd(records_from_csv((tmp_path / "runs" / row[0] / label / f"{i}.csv").read_text()))
                    for i in range(2)]
            assert float(value) == statistics.fmean(apds)
    assert (tmp_path / "controller" / "CAVDynamic_24" / "0.1" / "0.csv").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(cfg)
    assert man["class_coupling"] == "threshold"
    assert [s["seed"] for s in man["seeds"]] == cfg.seeds()
    vds = read_run_csv(tmp_path / "runs" / "DBL" / "0.1" / "0.csv")
    assert len(vds) == len(res.cell("DBL", 0.1)[0].records)


def test_manifest_rerun_is_byte_identical(tmp_path):
    cfg = small(replications=1)
    sweep = SweepSpec(cfg, ("DBL", "Plus_3"), (0.0, 0.5))
    write_results(run_sweep(sweep), tmp_path / "a", figures=False)
    again = load_config(tmp_path / "a" / "manifest.json")
    write_results(run_sweep(SweepSpec(again, sweep.policies, sweep.cav_proportions)), tmp_path / "b", figures=False)
    assert (tmp_path / "a" / "sweep_table.csv").read_bytes() == (tmp_path / "b" / "sweep_table.csv").read_bytes()


def test_empty_results_write_only_manifest(tmp_path):
    res = ExperimentResult("sweep", small(), [])
    written = write_results(res, tmp_path)
    assert written == [tmp_path / "manifest.json"]
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.json"]


def test_access_study_outputs(tmp_path):
    cfg = small(replications=1)
    res = run_access_fraction_study(cfg, [0.0, 1.0])
    vd = res.vd_by_fraction()
    assert set(vd) == {0.0, 1.0}
    speeds = res.speed_by_fraction()[1.0]
    assert [x for x, _ in speeds] == [0, 100, 200, 300, 400, 500, 600, 700, 800, 900]
    assert all(0 <= s <= 25 for _, s in speeds)
    files = write_results(res, tmp_path)
    names = {p.name for p in files}
    assert {"vd_vs_fraction.csv", "speed_vs_position.csv", "vd_vs_fraction.png", "speed_vs_position.png"} <= names


def test_full_access_equals_bus_free_unrestricted_road():
    cfg = small(demand=constant_profile(3000, hours=0.1), replications=1)
    open_road = replace(cfg, network=build_lane_drop_network([(500, 2), (500, 2, None, "left")], 25))
    assert run_scenario(replace(cfg, access_fraction=1.0), 0).records == run_scenario(open_road, 0).records


def test_zero_access_equals_bus_only_lane():
    cfg = small(demand=constant_profile(3000, hours=0.1), replications=1)
    dbl = run_scenario(cfg, 0)
    assert any(r.vclass.value == "Bus" for r in dbl.records)
    assert run_scenario(replace(cfg, access_fraction=0.0), 0).records == dbl.records


def test_mean_std():
    assert mean_std([5.0]) == (5.0, 0.0)
    m, s = mean_std([1.0, 3.0])
    assert (m, s) == (2.0, statistics.stdev([1.0, 3.0]))
