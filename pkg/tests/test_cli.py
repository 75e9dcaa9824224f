import json

import numpy as np
import pytest

from yoss.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, main
from yoss.formats import ProjectError, controller_from_json, controller_to_json, load_controller, parse_project
from yoss.synthesis import controller_realize_output

from conftest import CONTROLLER, PROJECT

SMALL = {
    "format": "yoss-project/1",
    "name": "scalar pair",
    "nodes": [
        {"A": [[1.1]], "B1": [[1.0]], "B2": [[1.0]], "C1": [[1.0]], "D12": [[0.5]], "C2": [[1.0]], "D21": [[1.0]],
         "C3": {"1": [[0.3]]}},
        {"A": [[0.5]], "B2": [[1.0]], "C1": [[1.0]], "D12": [[0.5]], "C2": [[1.0]], "D21": [[1.0]],
         "B3": {"0": [[1.0]]}},
    ],
    "links": [{"from": 0, "to": 1, "delay": 1}],
    "synthesis": {"N_schedule": [2, 3], "observer_order": 2, "time_budget": 60},
    "simulation": {"T": 200, "trials": 1},
}


def write(tmp_path, data, name="p.yoss"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_aggregate_and_estimate(tmp_path, capsys):
    proj = write(tmp_path, SMALL)
    assert main(["aggregate", str(proj), "--out", str(tmp_path)]) == EXIT_OK
    plant = json.loads((tmp_path / "plant.json").read_text())
    assert plant["ok"] and plant["dims"]["x"] == [1, 1] and plant["mask"] == [[0, "inf"], [1, 0]]
    assert main(["estimate", str(proj), "--out", str(tmp_path)]) == EXIT_OK
    obs = json.loads((tmp_path / "observer.json").read_text())
    assert obs["eps"] <= 0.1


def test_synthesize_simulate_verify_small(tmp_path):
    proj = write(tmp_path, SMALL)
    assert main(["synthesize", str(proj), "--out", str(tmp_path), "-q"]) == EXIT_OK
    ctrl = tmp_path / "controller.json"
    header = (tmp_path / "bounds.csv").read_text().splitlines()[0]
    assert header == "rho2,N,gamma_lower,gamma_upper,epsilon,seconds"
    assert main(["verify", str(proj), str(ctrl)]) == EXIT_OK
    assert main(["simulate", str(proj), str(ctrl), "--out", str(tmp_path), "--noise", "0.1"]) == EXIT_OK
    run = json.loads((tmp_path / "run.json").read_text())
    assert not run["diverged"]
    first = (tmp_path / "signals.csv").read_text()
    assert first.splitlines()[0] == "t,w0,w1,x0,x1,y0,y1,u0,u1,z0,z1,xK0,xK1,xK2,xK3,xK4,xK5"
    assert main(["simulate", str(proj), str(ctrl), "--out", str(tmp_path), "--noise", "0.1"]) == EXIT_OK
    assert (tmp_path / "signals.csv").read_text() == first


def test_nonsubspace_route(tmp_path):
    proj = write(tmp_path, SMALL)
    assert main(["synthesize", str(proj), "--route", "nonsubspace", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["verify", str(proj), str(tmp_path / "controller.json")]) == EXIT_OK


def test_verify_shipped_controller(capsys):
    assert main(["verify", str(PROJECT), str(CONTROLLER)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS realizability audit" in out


def test_verify_rejects_tampered_controller(tmp_path):
    data = json.loads(CONTROLLER.read_text())
    data["certificate"]["gamma_upper"] = 1.0
    bad = write(tmp_path, data, "c.json")
    assert main(["verify", str(PROJECT), str(bad)]) == 4


@pytest.mark.parametrize("edit, where", [
    (lambda d: d["links"].append({"from": 0, "to": 5}), "links[1].to"),
    (lambda d: d["nodes"][0].update(Bogus=[[1.0]]), "nodes[0].Bogus"),
    (lambda d: d["synthesis"].update(rho3=1), "synthesis.rho3"),
    (lambda d: d["nodes"][1].update(A="x"), "nodes[1].A"),
])
def test_parse_errors(tmp_path, capsys, edit, where):
    data = json.loads(json.dumps(SMALL))
    edit(data)
    assert main(["aggregate", str(write(tmp_path, data))]) == EXIT_PARSE
    assert where in capsys.readouterr().err


def test_json_syntax_error_location(tmp_path, capsys):
    path = tmp_path / "broken.yoss"
    path.write_text('{\n "format": "yoss-project/1",\n "nodes": [,]\n}')
    assert main(["aggregate", str(path)]) == EXIT_PARSE
    assert f"{path}:3:" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["aggregate", str(tmp_path / "none.yoss")]) == EXIT_PARSE


def test_infeasible_exit(tmp_path):
    data = json.loads(json.dumps(SMALL))
    data["synthesis"].update(observer_order=0, observer_eps=1e-6)
    assert main(["estimate", str(write(tmp_path, data)), "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_controller_json_round_trip(nested_plant, nested_observer, nested_pair):
    k = controller_realize_output(nested_pair, nested_observer, nested_plant)
    data = json.loads(json.dumps(controller_to_json(k, nested_pair, {"certificate": {"N": 2}})))
    k2, pair2, extra = controller_from_json(data)
    assert k2.equals(k, 0.0) and k2.kind == k.kind and k2.labels == k.labels
    assert pair2.Qf.equals(nested_pair.Qf, 0.0) and pair2.Zf.equals(nested_pair.Zf, 0.0)
    assert extra["certificate"] == {"N": 2}


def test_shipped_controller_loads():
    k, pair, extra = load_controller(CONTROLLER)
    assert extra["certificate"]["route"] == "output-feedback"
    assert np.isfinite(extra["certificate"]["gamma_upper"])


def test_parse_project_dims_mismatch():
    data = json.loads(json.dumps(SMALL))
    data["nodes"][0]["B2"] = [[1.0], [2.0]]
    with pytest.raises(ProjectError):
        parse_project(data)
