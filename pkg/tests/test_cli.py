"""Command-line entry point: exit codes, outputs, reproducibility and resume."""

import json

import jsonschema
import numpy as np
import pytest

from neuralbodies import __version__
from neuralbodies.cli import main, metrics_schema, read_config_file
from neuralbodies.eclipse import SlicePlane, mesh_eclipse_source, save_contours, zero_level_slice
from neuralbodies.geometry import make_cube


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def gravity_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("gravity")
    assert run("gen", "gravity", "--n", 60, "--spacing", 0.2, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def constant_eclipse(tmp_path_factory):
    out = tmp_path_factory.mktemp("const")
    rng = np.random.default_rng(0)
    sun = rng.normal(size=(200, 3))
    sun /= np.linalg.norm(sun, axis=1, keepdims=True)
    data = np.column_stack([rng.uniform(-3, 3, size=(200, 3)), sun, np.full(200, 0.5)])
    np.savetxt(out / "eclipse.csv", data, fmt="%.17g", delimiter=",", header="x,y,z,sx,sy,sz,F",
               comments="")
    return out / "eclipse.csv"


# usage errors ------------------------------------------------------------------

def test_bad_usage_exit_codes(tmp_path):
    assert run("gen", "gravity", "--n", 0, "--out", tmp_path) == 2
    assert run("gen", "nonsense") == 2
    assert run("train", "eclipse", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 2
    assert run("export", "mesh", "--out", tmp_path) == 2


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nn = 10\nbogus = 3\n")
    assert run("gen", "lidar", "--config", cfg, "--out", tmp_path) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 10  # inline\nseed = 4\n")
    assert read_config_file(cfg) == {"n": "10", "seed": "4"}
    assert run("gen", "lidar", "--config", cfg, "--n", 7, "--out", tmp_path) == 0
    rows = (tmp_path / "lidar.csv").read_text().splitlines()
    assert len(rows) == 8
    assert read_json(tmp_path / "run.json")["settings"]["seed"] == 4


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("NEURALBODIES_OUTPUT_DIR", str(tmp_path / "env"))
    assert run("gen", "lidar", "--n", 5) == 0
    assert (tmp_path / "env" / "lidar.csv").exists()


# gen -----------------------------------------------------------------------------

def test_gen_eclipse_row_count(tmp_path):
    assert run("gen", "eclipse", "--views", 30, "--points", 600, "--out", tmp_path) == 0
    rows = (tmp_path / "eclipse.csv").read_text().splitlines()
    assert rows[0] == "x,y,z,sx,sy,sz,F" and len(rows) == 601


def test_gen_records_run_and_manifest(gravity_data):
    record = read_json(gravity_data / "run.json")
    assert record["version"] == __version__ and record["command"] == "gen"
    manifest = read_json(gravity_data / "manifest.json")
    assert manifest["counts"]["samples"] == 60 and len(manifest["body_sha256"]) == 64


@pytest.mark.parametrize("kind, args, name", [
    ("lidar", ("--n", 200), "lidar.csv"),
    ("eclipse", ("--views", 10, "--points", 100), "eclipse.csv"),
    ("gravity", ("--n", 20, "--spacing", 0.25), "gravity.csv"),
])
def test_gen_deterministic(tmp_path, kind, args, name):
    assert run("gen", kind, *args, "--seed", 3, "--out", tmp_path / "a") == 0
    assert run("gen", kind, *args, "--seed", 3, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# train ---------------------------------------------------------------------------

def test_train_constant_eclipse(tmp_path, constant_eclipse):
    assert run("train", "eclipse", "--data", constant_eclipse, "--hidden", "8,8", "--lr", 1e-2,
               "--iterations", 1500, "--out", tmp_path) == 0
    metrics = read_json(tmp_path / "metrics.json")
    jsonschema.validate(metrics, metrics_schema())
    assert metrics["metrics"]["train"]["rmse"] < 1e-3
    for name in ("checkpoint.json", "loss_history.csv", "loss_history.png", "run.json"):
        assert (tmp_path / name).exists()


def test_train_deterministic(tmp_path, gravity_data):
    args = ("train", "geodesy", "--data", gravity_data / "gravity.csv", "--hidden", "6",
            "--grid-n", 8, "--iterations", 4, "--batch-size", 20, "--monitor-every", 2)
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for name in ("checkpoint.json", "loss_history.csv", "metrics.json", "loss_history.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_resume_matches_uninterrupted(tmp_path, constant_eclipse):
    base = ("train", "eclipse", "--data", constant_eclipse, "--hidden", "5,5", "--batch-size", 32,
            "--monitor-every", 4)
    assert run(*base, "--iterations", 12, "--out", tmp_path / "full") == 0
    assert run(*base, "--iterations", 6, "--out", tmp_path / "half") == 0
    assert run(*base, "--iterations", 12, "--resume", tmp_path / "half" / "checkpoint.json",
               "--out", tmp_path / "resumed") == 0
    full, resumed = tmp_path / "full", tmp_path / "resumed"
    assert (full / "loss_history.csv").read_bytes() == (resumed / "loss_history.csv").read_bytes()
    assert (full / "metrics.json").read_bytes() == (resumed / "metrics.json").read_bytes()
    a, b = read_json(full / "checkpoint.json"), read_json(resumed / "checkpoint.json")
    assert a["net"] == b["net"] and a["training"] == b["training"]


def test_numerical_failure_exit_code(tmp_path, constant_eclipse):
    assert run("train", "eclipse", "--data", constant_eclipse, "--hidden", "4", "--lr", 1e300,
               "--iterations", 50, "--out", tmp_path) == 3


# propagate, eval, export -----------------------------------------------------------

def test_propagate_kepler(tmp_path):
    assert run("propagate", "--t-end", 20, "--out", tmp_path) == 0
    t = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)[:, 0]
    assert t[0] == 0.0 and t[-1] == 20.0 and np.all(np.diff(t) > 0)
    assert (tmp_path / "events.csv").read_text().splitlines() == ["t,kind,x,y,z"]
    assert (tmp_path / "trajectory.png").exists()


def test_propagate_sphere_shadow(tmp_path):
    assert run("propagate", "--t-end", 12, "--eclipse", "sphere:1", "--body", "sphere:1",
               "--out", tmp_path) == 0
    rows = (tmp_path / "events.csv").read_text().splitlines()[1:]
    n = np.sqrt(1 / 8)
    assert [r.split(",")[1] for r in rows] == ["shadow_entry", "shadow_exit"]
    assert abs(float(rows[0].split(",")[0]) - 5 * np.pi / 6 / n) < 1e-6


def test_eval_geodesy(tmp_path, gravity_data):
    run("train", "geodesy", "--data", gravity_data / "gravity.csv", "--hidden", "6", "--grid-n", 8,
        "--iterations", 2, "--out", tmp_path / "t")
    assert run("eval", "geodesy", "--checkpoint", tmp_path / "t" / "checkpoint.json",
               "--data", gravity_data / "gravity.csv", "--out", tmp_path / "e") == 0
    metrics = read_json(tmp_path / "e" / "metrics.json")
    jsonschema.validate(metrics, metrics_schema())
    assert metrics["command"] == "eval" and metrics["metrics"]


def test_density_slice_of_zero_network(tmp_path, gravity_data):
    # differential mode has an identity output, so zero weights give exactly zero density
    run("train", "geodesy", "--data", gravity_data / "gravity.csv", "--hidden", "6", "--grid-n", 8,
        "--iterations", 1, "--mode", "differential", "--body", "icosphere", "--body-scale", 0.8,
        "--out", tmp_path / "t")
    ck = read_json(tmp_path / "t" / "checkpoint.json")
    ck["net"]["model"]["parameters"] = [0.0] * len(ck["net"]["model"]["parameters"])
    (tmp_path / "zero.json").write_text(json.dumps(ck))
    assert run("export", "density-slice", "--checkpoint", tmp_path / "zero.json", "--resolution", 9,
               "--out", tmp_path / "s") == 0
    lines = (tmp_path / "s" / "density_slice.csv").read_text().splitlines()
    assert lines[0] == "u,v,x,y,z,rho" and len(lines) == 82
    rho = np.loadtxt(tmp_path / "s" / "density_slice.csv", delimiter=",", skiprows=1)[:, -1]
    assert np.all(rho == 0.0)


def test_export_contour_passes_through(tmp_path):
    assert run("export", "contour", "--body", "cube", "--resolution", 41, "--out", tmp_path) == 0
    plane = SlicePlane.axis_aligned("z", 0.0, 3.0)
    curves = zero_level_slice(mesh_eclipse_source(make_cube(1.0), allow_inside=True),
                              np.array([1.0, 0.0, 0.0]), plane, 41)
    save_contours(curves, tmp_path / "expected.csv")
    assert (tmp_path / "contour.csv").read_bytes() == (tmp_path / "expected.csv").read_bytes()
    assert (tmp_path / "contour.png").exists()


def test_selftest(tmp_path, capsys):
    assert run("selftest", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 6
    jsonschema.validate(read_json(tmp_path / "metrics.json"), metrics_schema())
