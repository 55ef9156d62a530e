import json

import numpy as np
import pytest

from srx.cli import main
from srx.scenario import (ScenarioError, bundled_scenario_path, load_scenario,
                          parse_scenario)


def _load_bundled_dict(name):
    return json.loads(bundled_scenario_path(name).read_text())


def _write_scenario(tmp_path, data, name="case.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# -- scenario loading -----------------------------------------------------------

def test_bundled_scenarios_load():
    for name in ("euclidean_line", "heisenberg_line", "heisenberg_arc",
                 "jump_control"):
        scenario = load_scenario(name)
        assert scenario.name == name
        assert len(scenario.sha256) == 64


def test_unknown_bundled_name():
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario")


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(str(path))


def test_missing_required_key(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    del data["domain"]
    with pytest.raises(ScenarioError):
        load_scenario(_write_scenario(tmp_path, data))


def test_unknown_key_rejected(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["frobnicate"] = 1
    with pytest.raises(ScenarioError):
        load_scenario(_write_scenario(tmp_path, data))


def test_q0_outside_domain_rejected(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["q0"] = [10.0, 0.0]
    with pytest.raises(ScenarioError):
        load_scenario(_write_scenario(tmp_path, data))


def test_control_and_hamiltonian_exclusive(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["hamiltonian"] = {"p0": [1.0, 0.0], "T": 1.0, "N_t": 10}
    with pytest.raises(ScenarioError):
        load_scenario(_write_scenario(tmp_path, data))


def test_segments_expansion():
    scenario = load_scenario("jump_control")
    u = scenario.control
    assert u.n_cells == 1000
    assert np.array_equal(u.samples[0], [1.0, 0.0])
    assert np.array_equal(u.samples[499], [1.0, 0.0])
    assert np.array_equal(u.samples[500], [0.0, 1.0])
    assert np.array_equal(u.samples[-1], [0.0, 1.0])


def test_delta_u_inherits_grid():
    scenario = load_scenario("heisenberg_line")
    assert scenario.delta_u is not None
    assert scenario.delta_u.n_cells == scenario.control.n_cells
    assert scenario.delta_u.horizon == scenario.control.horizon


def test_dependent_frame_rejected(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["frame"]["fields"][1] = data["frame"]["fields"][0]
    with pytest.raises(ScenarioError):
        load_scenario(_write_scenario(tmp_path, data))


def test_parse_requires_object():
    with pytest.raises(ScenarioError):
        parse_scenario([1, 2, 3], "0" * 64)


# -- CLI ------------------------------------------------------------------------

def test_cli_integrate_euclidean(tmp_path):
    code = main(["integrate", "--config", "euclidean_line", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# srx ")
    assert lines[1] == "t,q1,q2"
    last = [float(x) for x in lines[-1].split(",")]
    assert last[0] == 1.0
    assert abs(last[1] - 1.0) < 1e-12 and abs(last[2]) < 1e-12


def test_cli_integrate_heisenberg(tmp_path):
    code = main(["integrate", "--config", "heisenberg_line", "--out", str(tmp_path)])
    assert code == 0
    last = [float(x)
            for x in (tmp_path / "trajectory.csv").read_text().splitlines()[-1].split(",")]
    assert np.allclose(last, [1.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_cli_integrate_domain_exit(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["control"]["T"] = 4.0  # runs past x = 2
    code = main(["integrate", "--config", _write_scenario(tmp_path, data),
                 "--out", str(tmp_path)])
    assert code == 3


def test_cli_malformed_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{]")
    assert main(["integrate", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_cli_nsre_exit_codes(tmp_path):
    assert main(["nsre-check", "--config", "heisenberg_line",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "nsre_report.json").read_text())
    assert report["c"] == pytest.approx(1.0, abs=1e-9)
    assert report["meta"]["tool"] == "srx"

    assert main(["nsre-check", "--config", "jump_control",
                 "--out", str(tmp_path)]) == 3

    data = _load_bundled_dict("heisenberg_line")
    data["tolerances"] = {"theta_min": 4.0}  # above pi/2: forced inconclusive
    code = main(["nsre-check", "--config", _write_scenario(tmp_path, data),
                 "--out", str(tmp_path)])
    assert code == 4


def test_cli_homotopy_euclidean(tmp_path):
    code = main(["homotopy", "--config", "euclidean_line", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "endpoints.csv").read_text().splitlines()[2:]
    curve = np.array([[float(x) for x in line.split(",")] for line in lines])
    # endpoint curve is the segment s -> (1, s)
    assert np.allclose(curve[:, 1], 1.0, atol=1e-12)
    assert np.allclose(curve[:, 2], curve[:, 0], atol=1e-12)
    slacks = json.loads((tmp_path / "lemma_slacks.json").read_text())
    assert slacks["bounds"]["spread"]["slack"] >= 0.0
    # du = (0,1) raises the energy: drift/variation bounds not applicable
    assert not slacks["energy_comparison"]["applicable"]
    assert not slacks["bounds"]["drift"]["applicable"]


def test_cli_homotopy_zero_du(tmp_path):
    data = _load_bundled_dict("heisenberg_line")
    data["homotopy"]["delta_u"] = {"constant": [0.0, 0.0]}
    data["control"]["N_t"] = 200
    code = main(["homotopy", "--config", _write_scenario(tmp_path, data),
                 "--out", str(tmp_path)])
    assert code == 0
    slacks = json.loads((tmp_path / "lemma_slacks.json").read_text())
    assert slacks["separation"] == 0.0


def test_cli_homotopy_admissible_heisenberg(tmp_path):
    data = _load_bundled_dict("heisenberg_line")
    data["control"]["N_t"] = 200
    code = main(["homotopy", "--config", _write_scenario(tmp_path, data),
                 "--out", str(tmp_path)])
    assert code == 0
    slacks = json.loads((tmp_path / "lemma_slacks.json").read_text())
    assert slacks["energy_comparison"]["applicable"]
    assert slacks["energy_comparison"]["slack"] >= -1e-12
    for entry in slacks["bounds"].values():
        if entry["applicable"] and "slack" in entry:
            assert entry["slack"] >= -1e-9
    assert slacks["bounds"]["b0_lower"]["min_slack"] >= -1e-9


def _quick_certify_scenario(tmp_path, n_trials=6, n_cells=500):
    data = _load_bundled_dict("heisenberg_line")
    data["control"]["N_t"] = n_cells
    data["certify"]["n_trials"] = n_trials
    data["certify"]["grid_resolution"] = 7
    return _write_scenario(tmp_path, data)


def test_cli_certify_heisenberg(tmp_path):
    cfg = _quick_certify_scenario(tmp_path)
    code = main(["certify", "--config", cfg, "--out", str(tmp_path)])
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["certified"] is True
    assert cert["epsilon"] > 0.0
    assert cert["conditions"]["domain"] and cert["conditions"]["angle"]
    assert cert["verification"]["violations"] == 0
    lines = (tmp_path / "verification.csv").read_text().splitlines()
    assert lines[1] == "trial,norm_du,separation,bound,slack"
    assert len(lines) == 2 + cert["verification"]["n_trials"]


def test_cli_certify_not_certifiable(tmp_path):
    code = main(["certify", "--config", "jump_control", "--out", str(tmp_path)])
    assert code == 3
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["certified"] is False
    assert cert["nsre"]["status"] == "failed"


def test_cli_certify_deterministic_across_threads(tmp_path):
    cfg = _quick_certify_scenario(tmp_path)
    outputs = []
    for threads in (1, 2, 8):
        out = tmp_path / f"t{threads}"
        code = main(["certify", "--config", cfg, "--out", str(out),
                     "--seed", "5", "--threads", str(threads)])
        assert code == 0
        outputs.append(((out / "certificate.json").read_bytes(),
                        (out / "verification.csv").read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_cli_outputs_byte_stable(tmp_path):
    data = _load_bundled_dict("heisenberg_line")
    data["control"]["N_t"] = 100
    cfg = _write_scenario(tmp_path, data)
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["integrate", "--config", cfg, "--out", str(out)]) == 0
        assert main(["nsre-check", "--config", cfg, "--out", str(out)]) == 0
        assert main(["homotopy", "--config", cfg, "--out", str(out)]) == 0
        blobs.append(tuple((out / f).read_bytes() for f in
                           ("trajectory.csv", "nsre_report.json",
                            "homotopy.csv", "endpoints.csv", "lemma_slacks.json")))
    assert blobs[0] == blobs[1]


def test_cli_output_header_carries_version_and_hash(tmp_path):
    import srx
    from srx.scenario import load_scenario
    scenario = load_scenario("euclidean_line")
    assert main(["integrate", "--config", "euclidean_line",
                 "--out", str(tmp_path)]) == 0
    first = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert srx.__version__ in first
    assert scenario.sha256 in first


def test_cli_seed_override_changes_provenance(tmp_path):
    cfg = _quick_certify_scenario(tmp_path, n_trials=2, n_cells=200)
    out = tmp_path / "s"
    assert main(["certify", "--config", cfg, "--out", str(out), "--seed", "9"]) == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["provenance"]["seed"] == 9


def test_scenario_out_dir_used_when_no_flag(tmp_path):
    data = _load_bundled_dict("euclidean_line")
    data["control"]["N_t"] = 50
    data["out_dir"] = str(tmp_path / "from_scenario")
    cfg = _write_scenario(tmp_path, data)
    assert main(["integrate", "--config", cfg]) == 0
    assert (tmp_path / "from_scenario" / "trajectory.csv").exists()
