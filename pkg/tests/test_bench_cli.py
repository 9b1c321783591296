import json
from pathlib import Path

import numpy as np
import pytest

from slungload.bench import (
    STANDARD_COM_TORQUE,
    BenchSuite,
    ScenarioFile,
    bench_planning,
    figure_eight,
    peak_kinematics,
    plan_and_audit,
    standard_rows,
)
from slungload.cli import main
from slungload.esdf import Box, build_esdf, rasterize
from slungload.minco import load_trajectory
from slungload.worlds import FAMILIES, make_world

SCENARIOS = Path(__file__).resolve().parent.parent / "demos" / "scenarios"


def test_figure_eight_shape():
    poly = figure_eight(v_max=4.0)
    v, a = peak_kinematics(poly)
    assert v == pytest.approx(4.0, rel=1e-3)
    ends = poly.sample(np.array([0.0, poly.total_duration]), 1)
    np.testing.assert_allclose(ends, 0.0, atol=1e-9)
    x = poly.sample(np.linspace(0, poly.total_duration, 400))
    # one closed loop through both lobes at constant height
    np.testing.assert_allclose(x[0], x[-1], atol=1e-9)
    assert x[:, 0].min() < -2.9 and x[:, 0].max() > 2.9
    np.testing.assert_allclose(x[:, 2], 1.5, atol=1e-9)
    assert figure_eight(v_max=2.0).total_duration == pytest.approx(2 * poly.total_duration, rel=1e-6)


def test_worlds_are_seeded():
    for fam in FAMILIES:
        a, b = make_world(fam, 3), make_world(fam, 3)
        assert a.primitives == b.primitives
        assert make_world(fam, 4).primitives != a.primitives
    with pytest.raises(ValueError):
        make_world("forest", 0)


def test_standard_rows():
    rows = standard_rows()
    assert rows["none"] == ()
    for name in ("+50g", "+200g", "wind 4.5", "wind 9"):
        assert rows[name][0].kind == "com_torque" and rows[name][0].vector == STANDARD_COM_TORQUE
    assert rows["+200g"][1].mass == 0.2 and rows["+200g"][1].t == 3.0


def test_plan_rejects_goal_inside_obstacle():
    esdf = build_esdf(rasterize([Box((5, 0, 1.5), (1, 1, 3))], ((-1, -3, 0), (11, 3, 3)), 0.1))
    out = plan_and_audit(esdf, [0, 0, 1.2], [5, 0, 1.2])
    assert not out.feasible and out.poly is None and "goal" in out.reason


def test_small_benchmark():
    suite = bench_planning("random-gap", count=2, seed_base=0)
    assert len(suite.results) == 2 and suite.successes == 2
    assert all(r.length_m > 10.0 and r.plan_ms > 0 for r in suite.results)
    with pytest.raises(ValueError):
        BenchSuite("forest")


def test_scenario_file_round_trip(tmp_path):
    sf = ScenarioFile.load(SCENARIOS / "figure_eight_200g.json")
    sf.save(tmp_path / "s.json")
    again = ScenarioFile.load(tmp_path / "s.json")
    assert again.to_dict() == sf.to_dict()
    events = again.event_list()
    assert [e.kind for e in events] == ["com_torque", "attach_mass"]
    sc = again.scenario(figure_eight(), "+force")
    assert sc.force_comp and not sc.indi and sc.events == events


def test_scenario_file_validation(tmp_path):
    with pytest.raises(ValueError):
        ScenarioFile.from_dict({"trajectory": {"hover": [0, 0, 1]}, "colour": "red"})
    with pytest.raises(ValueError):
        ScenarioFile.from_dict({"events": [{"kind": "earthquake", "t": 1.0}]})
    with pytest.raises(ValueError):
        ScenarioFile.from_dict({"limits": {"f_l": 5.0, "f_u": 1.0}})


# --- command line -------------------------------------------------------------------

def test_cli_plan_success_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["plan", "--scenario", str(SCENARIOS / "empty_map.json"), "--out", str(a)]) == 0
    assert main(["plan", "--scenario", str(SCENARIOS / "empty_map.json"), "--out", str(b)]) == 0
    rep = json.loads((a / "report.json").read_text())
    assert rep["feasible"] and max(rep["max_violation"].values()) <= 1e-3
    assert (a / "trajectory.txt").read_bytes() == (b / "trajectory.txt").read_bytes()
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert load_trajectory(a / "trajectory.txt").M >= 1


def test_cli_plan_domain_failure(tmp_path):
    assert main(["plan", "--scenario", str(SCENARIOS / "goal_in_obstacle.json"), "--out", str(tmp_path)]) == 1
    assert "inside an obstacle" in json.loads((tmp_path / "report.json").read_text())["reason"]


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["plan", "--out", str(tmp_path)]) == 2
    assert main(["plan", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sim", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["teleport"]) == 2
    assert main(["sim", "--variant", "turbo"]) == 2


def test_cli_sim_is_bitwise_reproducible(tmp_path):
    sc = tmp_path / "hover.json"
    sc.write_text(json.dumps({"trajectory": {"hover": [0, 0, 1]}, "duration": 1.0,
                              "events": [{"kind": "attach_mass", "t": 0.5, "mass": 0.05}]}))
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["sim", "--scenario", str(sc), "--seed", "5", "--out", str(o)]) == 0
    for name in ("log.csv", "diag.csv", "metrics.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert "solve_ms" not in json.loads((outs[0] / "metrics.json").read_text())
    assert main(["sim", "--scenario", str(sc), "--seed", "6", "--out", str(tmp_path / "r3")]) == 0
    assert (tmp_path / "r3" / "log.csv").read_bytes() != (outs[0] / "log.csv").read_bytes()


def test_cli_sim_reports_slack_abort(tmp_path):
    sc = tmp_path / "updraft.json"
    sc.write_text(json.dumps({"trajectory": {"hover": [0, 0, 1]}, "duration": 2.0, "force_comp": False,
                              "events": [{"kind": "wind", "t": 0.5, "vector": [0, 0, 80.0]}]}))
    assert main(["sim", "--scenario", str(sc), "--out", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "metrics.json").read_text())["aborted"]


def test_cli_bench_small(tmp_path):
    code = main(["bench", "--family", "12-squares", "--count", "1", "--seed", "2", "--out", str(tmp_path)])
    data = json.loads((tmp_path / "bench.json").read_text())
    assert data["summary"]["12-squares"]["instances"] == 1
    assert code == (0 if data["summary"]["12-squares"]["successes"] == 1 else 1)
    assert "plan_ms" in json.loads((tmp_path / "timing.json").read_text())["12-squares"]
