import copy
import csv
import json

import numpy as np
import pytest

from wavefront import cli
from wavefront.errors import InputError, ScenarioError
from wavefront.scenario import builtin_names, load_scenario, scenario_from_dict

SMALL_CIRCLE = {
    "name": "small_ellipse",
    "n": 2,
    "model": {"lagrangian": "((1+0.3*sin(x1))*v1^2 + (1+0.3*sin(x2))*v2^2)/2"},
    "level": 0.5,
    "surface": {
        "maps": ["1.3*cos(y1)", "sin(y1)"],
        "grid": [{"min": 0, "max": 6.283185307179586, "count": 128, "topology": "periodic"}],
    },
    "nu_seed": 1.0,
    "t_end": 0.5,
    "tolerances": {"phi": 1e-3, "omega_phidot": 1e-2},
}


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# loading -----------------------------------------------------------------------

def test_builtin_scenarios_load():
    sc = load_scenario("eikonal_c1_plane.json")
    assert sc.n == 3
    assert sc.surface.shape == (64, 64)
    for name in builtin_names():
        assert load_scenario(name).name == name


def test_surface_maps_only_see_surface_parameters():
    doc = copy.deepcopy(load_scenario("eikonal_c1_plane").raw)
    doc["surface"]["maps"][2] = "y3"
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert err.value.path == "surface.maps[2]"


def test_model_kinds_are_exclusive():
    doc = copy.deepcopy(SMALL_CIRCLE)
    doc["model"]["hamiltonian"] = "p1^2/2 + p2^2/2"
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert err.value.path == "model"


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d.update(colour="red"), ""),
    (lambda d: d["surface"].update(maps=["cos(y1)"]), "surface.maps"),
    (lambda d: d["surface"]["grid"][0].update(count=2), "surface.grid[0].count"),
    (lambda d: d.update(nu_seed=0), "nu_seed"),
    (lambda d: d["model"].update(lagrangian="v1 + * v2"), "model.lagrangian"),
    (lambda d: d.update(tolerances={"phi": -1}), "tolerances.phi"),
])
def test_schema_errors_carry_field_paths(mutate, path):
    doc = copy.deepcopy(SMALL_CIRCLE)
    mutate(doc)
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert err.value.path == path


def test_missing_scenario_and_bad_json(tmp_path):
    with pytest.raises(InputError, match="neither a file nor a built-in"):
        load_scenario("no_such_scenario")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(str(bad))


def test_scaled_scenario():
    sc = scenario_from_dict(SMALL_CIRCLE).scaled(2.0, 10.0)
    assert sc.surface.shape == (256,)
    assert sc.tolerances["phi"] == pytest.approx(1e-2)


# running -----------------------------------------------------------------------

def test_reruns_write_byte_identical_files(tmp_path):
    path = write(tmp_path, SMALL_CIRCLE)
    for out in ("a", "b"):
        cli.run("check-normality", path, tmp_path / out)
    for name in ("fronts.csv", "deviations.csv", "diagnostics.csv", "deviations_perturbed.csv",
                 "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_layout_and_report_recomputation(tmp_path):
    report = cli.run("simulate", write(tmp_path, SMALL_CIRCLE), tmp_path)
    header, fronts = read_csv(tmp_path / "fronts.csv")
    assert header == ["t", "j1", "x1", "x2", "p1", "p2", "H", "Omega"]
    header, dev = read_csv(tmp_path / "deviations.csv")
    assert header == ["t", "j1", "i", "phi_i", "phidot_i", "omega_phidot_i"]
    saved = json.loads((tmp_path / "report.json").read_text())
    m = saved["metrics"]
    assert m == pytest.approx(report.metrics)
    assert np.max(np.abs(dev[:, 3])) == m["max_abs_phi"]
    # H drift per node from the fronts table
    H = fronts[:, 6].reshape(-1, 128)
    assert np.max(np.abs(H - H[0])) == pytest.approx(m["max_H_drift"], rel=1e-12, abs=1e-18)
    q = dev[:, 5].reshape(-1, 128)
    assert np.max(np.abs(q - q[0])) == pytest.approx(m["max_omega_phidot_abs_drift"], rel=1e-12)
    assert m["first_integral"] == pytest.approx(np.max(np.abs(H[0] - 0.5)), abs=1e-18)
    _, diag = read_csv(tmp_path / "diagnostics.csv")
    assert np.max(diag[:, 2]) == m["max_H_drift"]


def test_check_normality_report_recomputation(tmp_path):
    report = cli.run("check-normality", write(tmp_path, SMALL_CIRCLE), tmp_path)
    _, dev = read_csv(tmp_path / "deviations_perturbed.csv")
    q = dev[:, 5].reshape(-1, 128)
    sel = np.abs(q[0]) > 0
    scale = np.max(np.abs(q[0, sel]))
    drift = np.max(np.abs(q[:, sel] - q[0, sel])) / scale
    assert drift == pytest.approx(report.max_omega_phidot_drift, rel=1e-12)


def test_outputs_can_be_switched_off(tmp_path):
    doc = copy.deepcopy(SMALL_CIRCLE)
    doc["outputs"] = {"fronts": False, "deviations": False}
    report = cli.run("simulate", write(tmp_path, doc), tmp_path / "o")
    assert sorted(report.files) == ["diagnostics.csv", "report.json"]


def test_missing_sections_are_reported(tmp_path):
    with pytest.raises(ScenarioError, match="riemann"):
        cli.run("residuals", write(tmp_path, SMALL_CIRCLE), tmp_path)


# exit codes --------------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    path = write(tmp_path, SMALL_CIRCLE)
    assert cli.main(["simulate", "--scenario", path, "--out", str(tmp_path / "ok")]) == cli.EXIT_PASS
    assert "PASS" in capsys.readouterr().out
    code = cli.main(["simulate", "--scenario", path, "--out", str(tmp_path / "t"), "--tol-scale", "1e-12"])
    assert code == cli.EXIT_TOLERANCE
    assert "FAIL" in capsys.readouterr().out

    no_root = copy.deepcopy(SMALL_CIRCLE)
    no_root["model"] = {"hamiltonian": "(p1^2+p2^2)/2 + 1/2"}
    no_root["level"] = 0
    code = cli.main(["pfaff", "--scenario", write(tmp_path, no_root, "nr.json"), "--out", str(tmp_path / "m")])
    assert code == cli.EXIT_MODEL

    bad = copy.deepcopy(SMALL_CIRCLE)
    bad["surface"]["maps"] = ["y2", "y1"]
    code = cli.main(["simulate", "--scenario", write(tmp_path, bad, "bad.json"), "--out", str(tmp_path / "i")])
    assert code == cli.EXIT_INPUT
    assert cli.main(["legendre", "--scenario", "nowhere", "--out", str(tmp_path)]) == cli.EXIT_INPUT
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate", "--scenario", path, "--out", str(tmp_path)])
    assert err.value.code == cli.EXIT_INPUT
    assert cli.main(["simulate", "--scenario", path, "--out", str(tmp_path), "--grid-scale", "-1"]) == cli.EXIT_INPUT


def test_thread_cap_variable(tmp_path, monkeypatch):
    path = write(tmp_path, SMALL_CIRCLE)
    monkeypatch.setenv("WAVEFRONT_THREADS", "zero")
    assert cli.main(["legendre", "--scenario", path, "--out", str(tmp_path)]) == cli.EXIT_INPUT
    monkeypatch.setenv("WAVEFRONT_THREADS", "0")
    with pytest.raises(InputError):
        cli.thread_cap()
    monkeypatch.setenv("WAVEFRONT_THREADS", "4")
    assert cli.run("legendre", path, tmp_path).metrics["threads_requested"] == 4


def test_figures_are_optional(tmp_path):
    pytest.importorskip("matplotlib")
    report = cli.run("check-normality", write(tmp_path, SMALL_CIRCLE), tmp_path, figures=True)
    for name in ("fronts.png", "deviations.png", "checks.png"):
        assert name in report.files
        assert (tmp_path / name).stat().st_size > 0


# built-in scenario runs ----------------------------------------------------------

def test_simulate_eikonal_speed_two(tmp_path):
    report = cli.run("simulate", "eikonal_c2_plane", tmp_path)
    assert report.metrics["max_front_error"] <= 1e-6
    assert report.passed


def test_check_normality_quartic_circle(tmp_path):
    report = cli.run("check-normality", "quartic_circle", tmp_path)
    assert report.max_abs_phi <= 1e-6
    assert report.max_omega_phidot_drift <= 1e-6
    assert report.passed


def test_residuals_euclid_quartic(tmp_path):
    assert cli.main(["residuals", "--scenario", "euclid_W_quartic", "--out", str(tmp_path)]) == 0
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["metrics"]["max_weak_residual"] <= 1e-5
    assert saved["metrics"]["max_additional_residual"] <= 1e-5
    header, rows = read_csv(tmp_path / "residuals.csv")
    assert len(rows) == 100
    assert np.max(rows[:, header.index("weak1")]) <= saved["metrics"]["max_weak_residual"] * 1.8


@pytest.mark.parametrize("name", ["anisotropic_circle", "quartic_circle", "eikonal_c1_plane"])
def test_legendre_and_pfaff_commands(tmp_path, name):
    assert cli.run("legendre", name, tmp_path / "l").passed
    assert cli.run("pfaff", name, tmp_path / "p").passed
