from mergelane.checks import InvariantChecker, VehicleInfo, check_files, check_scenario
from mergelane.demand import VClass, constant_profile
from mergelane.experiment import ScenarioConfig, run_logged
from mergelane.network import build_reference_network
from mergelane.policy import parse_policy


def info(cls=VClass.HDV, pax=1, length=5.0, access=None):
    return VehicleInfo(cls, pax, length, access)


def test_detects_overlap_and_speed():
    net = build_reference_network()
    chk = InvariantChecker(net, {0: info(), 1: info()}, parse_policy("DBL"))
    chk.row(1, 0, 1, 100.0, 10.0)
    chk.row(1, 1, 1, 103.0, 26.0)  # leader rear at 98 < follower front at 100
    chk.tick(1, 1.0, 2, 2, 0, 0)
    rep = chk.finish()
    assert len(rep.gap_violations) == 1 and len(rep.speed_violations) == 1 and not rep.ok


def test_detects_conservation_break():
    chk = InvariantChecker(build_reference_network(), {0: info()}, parse_policy("DBL"))
    chk.row(1, 0, 1, 50.0, 10.0)
    chk.tick(1, 1.0, 3, 1, 0, 1)
    assert chk.finish().conservation_errors


def test_detects_illegal_entry_and_grandfathering():
    net = build_reference_network()
    pol = parse_policy("CAVDynamic_22")
    chk = InvariantChecker(net, {0: info(VClass.CAV, 1)}, pol)
    chk.row(1, 0, 0, 510.0, 20.0)   # enters while threshold is 1: legal
    chk.tick(1, 1.0, 1, 1, 0, 0)
    chk.row(2, 0, 0, 530.0, 20.0)   # still inside after a tightening: not a new entry
    chk.tick(2, 2.0, 1, 1, 0, 0)
    assert chk.finish([(1.0, 10.0, 1, 2)]).ok

    late = InvariantChecker(net, {0: info(VClass.CAV, 1)}, pol)
    late.row(2, 0, 1, 490.0, 20.0)   # upstream, outside the zone
    late.tick(2, 2.0, 1, 1, 0, 0)
    late.row(3, 0, 0, 505.0, 20.0)   # decided at t=2, after the threshold rose to 2
    late.tick(3, 3.0, 1, 1, 0, 0)
    rep = late.finish([(1.0, 10.0, 1, 2)])
    assert rep.illegal_entries == [(3, 0, 2)]


def test_bus_is_always_allowed():
    chk = InvariantChecker(build_reference_network(), {0: info(VClass.BUS, 7, 12.0, access=False)}, parse_policy("DBL"))
    assert chk.allowed(0, 5)


def test_live_and_file_checks_agree(tmp_path):
    cfg = ScenarioConfig(build_reference_network(), constant_profile(3000, hours=0.1), parse_policy("CAVDynamic_23"),
                         proportion=0.3, replications=1)
    res, live = check_scenario(cfg, 0, tmp_path / "live.csv")
    assert live.ok, live.summary()
    run_logged(cfg, 0, tmp_path / "logs")
    ctrl = tmp_path / "ctrl.csv"
    ctrl.write_text("interval_end_s,interval_mean_speed,threshold_before,threshold_after\n" +
                    "".join(f"{t!r},{m!r},{b},{a}\n" for t, m, b, a in res.controller_log))
    from_files = check_files(cfg, 0, tmp_path / "logs" / "0.csv", tmp_path / "logs" / "0_ticks.csv", ctrl)
    assert from_files.summary() == live.summary()
    assert (tmp_path / "live.csv").read_text() == (tmp_path / "logs" / "0.csv").read_text()


def test_access_study_runs_are_legal():
    cfg = ScenarioConfig(build_reference_network(), constant_profile(3000, hours=0.1), parse_policy("DBL"),
                         replications=1, access_fraction=0.3)
    _, rep = check_scenario(cfg, 0)
    assert rep.ok and rep.zone_entries > 0
