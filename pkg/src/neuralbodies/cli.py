"""``neuralbodies`` command line: generate, train, propagate, evaluate, export.

Every command takes ``key = value`` settings from an optional ``--config``
file, overridden by flags of the same name (``--batch-size`` for
``batch_size``).  Unknown keys are rejected.  Each output directory receives
``run.json`` (tool version, command and the fully resolved settings).

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, GeometryDegeneracyError, NumericalError, SingularityError

log = logging.getLogger("neuralbodies")

OUTPUT_DIR_ENV = "NEURALBODIES_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

SIX_BY_FIFTY = ",".join(["50"] * 6)

_COMMON = {"seed": 0}

SETTINGS = {
    ("gen", "gravity"): {"body": "icosphere", "body_scale": 0.8, "n": 1000, "shell_min": 1.5,
                         "shell_max": 3.0, "spacing": 0.05, "total_mass": 1.0, "noise": 0.0},
    ("gen", "eclipse"): {"body": "cube", "body_scale": 1.0, "views": 300, "points": 10000,
                         "radius": 3.0, "balance": False},
    ("gen", "lidar"): {"body": "icosphere", "body_scale": 0.8, "n": 5000},
    ("train", "geodesy"): {"data": "", "test_data": "", "iterations": 3000, "batch_size": 100,
                           "lr": 1e-3, "hidden": "50,50,50", "output_transform": "abs",
                           "grid_n": 32, "halfwidth": 1.0, "mode": "absolute", "body": "",
                           "body_scale": 1.0, "rho_u": 0.0, "monitor_every": 100, "resume": ""},
    ("train", "eclipse"): {"data": "", "iterations": 4000, "batch_size": 0, "lr": 1e-3,
                           "hidden": SIX_BY_FIFTY, "holdout": 0.1, "monitor_every": 100,
                           "resume": ""},
    ("train", "sdf"): {"data": "", "iterations": 2000, "batch_size": 2500, "lr": 1e-3,
                       "hidden": SIX_BY_FIFTY, "eikonal_weight": 0.1, "halfwidth": 1.0,
                       "n_eval": 5000, "monitor_every": 100, "resume": ""},
    ("propagate", None): {"r0": "2,0,0", "v0": "0,0.7071067811865476,0", "t0": 0.0,
                          "t_end": 10.0, "tol": 1e-12, "event_tol": 1e-10, "omega": "0,0,0",
                          "eta": 0.0, "sun": "1,0,0", "gravity": "point:1",
                          "eclipse": "none", "body": "none", "max_steps": 5000000},
    ("eval", "geodesy"): {"checkpoint": "", "data": "", "body": "", "body_scale": 1.0},
    ("eval", "eclipse"): {"checkpoint": "", "data": ""},
    ("eval", "sdf"): {"checkpoint": "", "data": "", "body": "", "body_scale": 1.0,
                      "resolution": 32, "n_truth": 5000},
    ("export", "contour"): {"checkpoint": "", "body": "", "body_scale": 1.0, "sun": "1,0,0",
                            "normal": "z", "offset": 0.0, "half_size": 3.0, "resolution": 200},
    ("export", "mesh"): {"checkpoint": "", "resolution": 32},
    ("export", "density-slice"): {"checkpoint": "", "body": "", "body_scale": 1.0,
                                  "normal": "z", "offset": 0.0, "resolution": 64},
    ("selftest", None): {},
}

KINDS = {
    "gen": ("gravity", "eclipse", "lidar"),
    "train": ("geodesy", "eclipse", "sdf"),
    "eval": ("geodesy", "eclipse", "sdf"),
    "export": ("contour", "mesh", "density-slice"),
}


# configuration --------------------------------------------------------------

def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(key, raw, default):
    if isinstance(raw, str) and not isinstance(default, str):
        try:
            if isinstance(default, bool):
                low = raw.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError
                return low in ("true", "1", "yes")
            if isinstance(default, int):
                return int(raw)
            return float(raw)
        except ValueError:
            raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw


def resolve_settings(command, kind, file_values, flag_values):
    defaults = dict(_COMMON, **SETTINGS[(command, kind)])
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(defaults)
    for source in (file_values, flag_values):
        for key, raw in source.items():
            if raw is not None:
                merged[key] = _coerce(key, raw, defaults[key])
    return merged


def _vec(text, name):
    try:
        v = np.array([float(x) for x in str(text).split(",")])
    except ValueError:
        raise ConfigurationError(f"{name} must be three comma-separated numbers") from None
    if v.shape != (3,):
        raise ConfigurationError(f"{name} must be three comma-separated numbers")
    return v


def _hidden(text):
    try:
        h = tuple(int(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigurationError("hidden must be comma-separated layer widths") from None
    if not h or min(h) < 1:
        raise ConfigurationError("hidden must list positive layer widths")
    return h


def _require(cfg, *keys):
    for k in keys:
        if not cfg[k]:
            raise ConfigurationError(f"missing required setting {k}")


def _positive(cfg, *keys):
    for k in keys:
        if cfg[k] < 1:
            raise ConfigurationError(f"{k} must be at least 1")


# files ----------------------------------------------------------------------

def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def load_body(spec, scale=1.0):
    """Body from an OBJ path or a built-in name (``cube``, ``icosphere``)."""
    from .geometry import load_obj, make_cube, make_icosphere

    if spec == "cube":
        mesh = make_cube(1.0)
    elif spec == "icosphere":
        mesh = make_icosphere(1.0, 3)
    else:
        try:
            mesh = load_obj(_existing(spec))
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"cannot parse body mesh {spec}: {exc}") from exc
    if scale != 1.0:
        mesh = mesh.transformed(np.eye(3) * scale)
    if not mesh.is_watertight():
        raise ConfigurationError(f"body mesh {spec} is not watertight")
    return mesh


def body_hash(mesh):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.hexdigest()


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_run_record(out, command, kind, cfg):
    _dump({"tool": "neuralbodies", "version": __version__, "command": command, "kind": kind,
           "settings": cfg}, out / "run.json")


def metrics_schema():
    return json.loads(resources.files("neuralbodies").joinpath("schemas/metrics.schema.json").read_text())


def _finite(obj):
    """NaN and infinity become null so the file is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_metrics(out, command, kind, payload):
    import jsonschema

    doc = {"tool": "neuralbodies", "version": __version__, "command": command, "kind": kind}
    doc.update(payload)
    doc = _finite(doc)
    jsonschema.validate(doc, metrics_schema())
    _dump(doc, out / "metrics.json")
    return doc


def _save_history(result, monitor, out):
    with open(out / "loss_history.csv", "w") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(result.history):
            fh.write(f"{i},{float(v)!r}\n")
    from .plotting import plot_loss_history

    plot_loss_history(result.history, out / "loss_history.png", monitor)


# checkpoints ----------------------------------------------------------------

def _params_to_json(model, params):
    m = model.copy()
    m.set_parameters(params)
    return m.to_dict()


def _params_from_json(data):
    from .diffcore import MlpModel

    return MlpModel.from_dict(data).parameters()


def save_checkpoint(path, kind, net_dict, model, result, monitor, last, state, settings):
    _dump({
        "format": "neuralbodies-checkpoint",
        "version": __version__,
        "kind": kind,
        "net": net_dict,
        "settings": settings,
        "training": {
            "iteration": len(result.history),
            "history": [float(x) for x in result.history],
            "monitor": [[int(i), float(v)] for i, v in monitor],
            "best_loss": result.best_loss,
            "best_iteration": result.best_iteration,
            "resume_best": {"loss": result.resume_best[0], "iteration": result.resume_best[1],
                            "params": _params_to_json(model, result.resume_best[2])},
            "last_params": _params_to_json(model, last),
            "optimizer": state.to_dict(),
        },
    }, path)


def load_checkpoint(path, kind=None):
    try:
        data = json.loads(_existing(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not a checkpoint: {exc}") from exc
    if data.get("format") != "neuralbodies-checkpoint":
        raise ConfigurationError(f"{path} is not a neuralbodies checkpoint")
    if kind is not None and data["kind"] != kind:
        raise ConfigurationError(f"{path} holds a {data['kind']} model, expected {kind}")
    return data


def _resume_args(cfg, model):
    """Starting point for a training run: fresh, or the saved state of ``cfg['resume']``."""
    from .diffcore import OptimizerState

    if not cfg["resume"]:
        return {"state": OptimizerState(lr=cfg["lr"])}, []
    ck = load_checkpoint(cfg["resume"])
    tr = ck["training"]
    if tr["iteration"] > cfg["iterations"]:
        raise ConfigurationError("checkpoint is already past the requested iteration count")
    model.set_parameters(_params_from_json(tr["last_params"]))
    rb = tr["resume_best"]
    best = (rb["loss"], rb["iteration"], _params_from_json(rb["params"]))
    return {"state": OptimizerState.from_dict(tr["optimizer"]), "start": tr["iteration"],
            "history": tr["history"], "best": best}, [tuple(m) for m in tr["monitor"]]


# commands -------------------------------------------------------------------

def cmd_gen(kind, cfg, out):
    mesh = None
    if kind == "gravity":
        _positive(cfg, "n")
        if not 0 < cfg["shell_min"] < cfg["shell_max"]:
            raise ConfigurationError("need 0 < shell_min < shell_max")
        from .geometry import mesh_to_mascons, save_mascons
        from .gravity import generate_acceleration_dataset

        mesh = load_body(cfg["body"], cfg["body_scale"])
        truth = mesh_to_mascons(mesh, cfg["spacing"], cfg["total_mass"])
        data = generate_acceleration_dataset(truth, cfg["n"], (cfg["shell_min"], cfg["shell_max"]),
                                             cfg["seed"], mesh.circumscribing_radius(), cfg["noise"])
        data.save_csv(out / "gravity.csv")
        save_mascons(truth, out / "mascons.csv")
        counts = {"samples": len(data), "mascons": len(truth.masses)}
    elif kind == "eclipse":
        _positive(cfg, "views", "points")
        from .eclipse import generate_eclipse_dataset

        mesh = load_body(cfg["body"], cfg["body_scale"])
        data = generate_eclipse_dataset(mesh, cfg["views"], cfg["points"], cfg["radius"],
                                        cfg["seed"], cfg["balance"])
        data.save_csv(out / "eclipse.csv")
        counts = {"samples": len(data), "views": cfg["views"],
                  "shadowed": int(np.sum(data.values < 0))}
    else:
        _positive(cfg, "n")
        from .shape import sample_lidar

        mesh = load_body(cfg["body"], cfg["body_scale"])
        cloud = sample_lidar(mesh, cfg["n"], cfg["seed"])
        cloud.save_csv(out / "lidar.csv")
        counts = {"points": len(cloud)}
    _dump({"kind": kind, "seed": cfg["seed"], "counts": counts, "body": cfg["body"],
           "body_sha256": body_hash(mesh)}, out / "manifest.json")
    print(f"wrote {kind} dataset to {out}")


def cmd_train(kind, cfg, out):
    _require(cfg, "data")
    _positive(cfg, "iterations")
    hidden = _hidden(cfg["hidden"])
    if kind == "geodesy":
        from .gravity import (AccelerationDataset, DensityField, GeodesyConfig, QuadratureGrid,
                              dataset_loss, evaluate_field_error, train_geodesynet)

        data = AccelerationDataset.load_csv(_existing(cfg["data"]))
        shape = None
        if cfg["mode"] == "differential":
            _require(cfg, "body")
            shape = load_body(cfg["body"], cfg["body_scale"])
        field = DensityField.create(hidden, cfg["seed"], cfg["output_transform"],
                                    domain_halfwidth=cfg["halfwidth"], mode=cfg["mode"],
                                    rho_u=cfg["rho_u"], shape=shape)
        grid = QuadratureGrid.regular(cfg["halfwidth"], cfg["grid_n"])
        conf = GeodesyConfig(cfg["iterations"], cfg["batch_size"], cfg["lr"], cfg["seed"],
                             cfg["monitor_every"])
        resume, monitor0 = _resume_args(cfg, field.model)
        field, result, last = train_geodesynet(data, field, grid, conf, **resume)
        metrics = {"train_loss": dataset_loss(field, data, grid)}
        if cfg["test_data"]:
            test = AccelerationDataset.load_csv(_existing(cfg["test_data"]))
            metrics["heldout"] = evaluate_field_error(field, None, test, grid)
        net_dict, model = field.to_dict(), field.model
    elif kind == "eclipse":
        from .eclipse import EclipseConfig, EclipseDataset, EclipseNet, train_eclipsenet

        data = EclipseDataset.load_csv(_existing(cfg["data"]))
        net = EclipseNet.create(hidden, cfg["seed"])
        conf = EclipseConfig(cfg["iterations"], cfg["lr"], cfg["batch_size"], cfg["holdout"],
                             cfg["seed"], cfg["monitor_every"])
        resume, monitor0 = _resume_args(cfg, net.model)
        net, result, metrics, last = train_eclipsenet(data, net, conf, **resume)
        metrics = {k: v for k, v in metrics.items() if k not in ("best_loss", "best_iteration")}
        net_dict, model = net.to_dict(), net.model
    else:
        from .shape import PointCloud, SdfConfig, SdfNetwork, train_sdf

        cloud = PointCloud.load(_existing(cfg["data"]))
        net = SdfNetwork.create(hidden, cfg["seed"])
        conf = SdfConfig(cfg["iterations"], cfg["batch_size"], cfg["eikonal_weight"], cfg["lr"],
                         cfg["halfwidth"], cfg["seed"], cfg["monitor_every"], cfg["n_eval"])
        resume, monitor0 = _resume_args(cfg, net.model)
        net, result, metrics, last = train_sdf(cloud, net, conf, **resume)
        metrics = {k: v for k, v in metrics.items() if k not in ("best_loss", "best_iteration")}
        net_dict, model = net.to_dict(), net.model
        net_dict["domain_halfwidth"] = cfg["halfwidth"]

    monitor = list(monitor0) + list(result.monitor)
    state = resume["state"]
    save_checkpoint(out / "checkpoint.json", kind, net_dict, model, result, monitor, last, state, cfg)
    _save_history(result, monitor, out)
    write_metrics(out, "train", kind, {
        "iterations": len(result.history), "best_loss": result.best_loss,
        "best_iteration": result.best_iteration, "metrics": metrics,
    })
    print(f"trained {kind} model: best loss {result.best_loss:.6e} at iteration {result.best_iteration}")


def _gravity_source(spec, grid_n=32):
    from .geometry import MasconModel, load_mascons
    from .gravity import DensityField

    if spec.startswith("point:"):
        mass = float(spec.split(":", 1)[1])
        return MasconModel(np.zeros((1, 3)), np.array([mass])), None
    if spec.endswith(".csv"):
        return load_mascons(_existing(spec)), None
    ck = load_checkpoint(spec, "geodesy")
    shape = None
    if ck["net"]["mode"] == "differential":
        s = ck["settings"]
        shape = load_body(s["body"], s["body_scale"])
    from .gravity import QuadratureGrid

    field = DensityField.from_dict(ck["net"], shape)
    return field, QuadratureGrid.regular(field.domain_halfwidth, ck["settings"].get("grid_n", grid_n))


def _eclipse_source(spec):
    from .eclipse import EclipseNet, sphere_eclipse_source

    if spec == "none":
        return None
    if spec.startswith("sphere:"):
        return sphere_eclipse_source(float(spec.split(":", 1)[1]))
    if spec.endswith(".obj"):
        return load_body(spec)
    return EclipseNet.from_dict(load_checkpoint(spec, "eclipse")["net"])


def _body_spec(spec):
    if spec == "none":
        return None
    if spec.startswith("sphere:"):
        return float(spec.split(":", 1)[1])
    return load_body(spec)


def cmd_propagate(cfg, out):
    from .dynamics import RotatingFrameConfig, State, propagate
    from .plotting import plot_trajectory

    gravity, grid = _gravity_source(cfg["gravity"])
    rf = RotatingFrameConfig(omega=_vec(cfg["omega"], "omega"), eta=cfg["eta"],
                             sun0=_vec(cfg["sun"], "sun") / np.linalg.norm(_vec(cfg["sun"], "sun")),
                             gravity=gravity, eclipse=_eclipse_source(cfg["eclipse"]),
                             body=_body_spec(cfg["body"]), grid=grid)
    s0 = State(cfg["t0"], _vec(cfg["r0"], "r0"), _vec(cfg["v0"], "v0"))
    traj = propagate(s0, cfg["t_end"], rf, cfg["tol"], cfg["event_tol"], max_steps=cfg["max_steps"])
    traj.save_csv(out / "trajectory.csv")
    traj.save_events_csv(out / "events.csv")
    plot_trajectory(traj, out / "trajectory.png", traj.events)
    write_metrics(out, "propagate", None, {"metrics": {
        "steps": {k: int(v) for k, v in traj.stats.items()},
        "events": len(traj.events), "t_final": float(traj.t[-1]),
    }})
    print(f"propagated to t = {float(traj.t[-1])!r} with {len(traj.events)} events")


def cmd_eval(kind, cfg, out):
    _require(cfg, "checkpoint", "data")
    ck = load_checkpoint(cfg["checkpoint"], kind)
    if kind == "geodesy":
        from .gravity import AccelerationDataset, dataset_loss, evaluate_field_error

        field, grid = _gravity_source(cfg["checkpoint"])
        test = AccelerationDataset.load_csv(_existing(cfg["data"]))
        metrics = {"relative_error": evaluate_field_error(field, None, test, grid),
                   "loss": dataset_loss(field, test, grid)}
    elif kind == "eclipse":
        from .eclipse import EclipseDataset, EclipseNet, eclipse_metrics

        net = EclipseNet.from_dict(ck["net"])
        metrics = eclipse_metrics(net, EclipseDataset.load_csv(_existing(cfg["data"])))
    else:
        from .shape import PointCloud, SdfNetwork, chamfer_distance, marching_cubes, sample_lidar

        _require(cfg, "body")
        net = SdfNetwork.from_dict(ck["net"])
        hw = ck["net"].get("domain_halfwidth", 1.0)
        cloud = PointCloud.load(_existing(cfg["data"]))
        mesh = load_body(cfg["body"], cfg["body_scale"])
        rec = marching_cubes(net, hw, cfg["resolution"])
        phi = net(cloud.points)
        metrics = {"surface_rms": float(np.sqrt(np.mean(phi ** 2))), "faces": len(rec.faces)}
        if rec.is_empty():
            metrics["chamfer"] = None
        else:
            truth = sample_lidar(mesh, cfg["n_truth"], cfg["seed"], "lidar-truth")
            recon = sample_lidar(rec, cfg["n_truth"], cfg["seed"], "lidar-reconstruction")
            metrics["chamfer"] = chamfer_distance(recon, truth)
        cell_diag = 2 * hw / (cfg["resolution"] - 1) * np.sqrt(3)
        metrics["chamfer_budget"] = float((2 * cell_diag) ** 2)
    write_metrics(out, "eval", kind, {"metrics": metrics})
    print(json.dumps(metrics, sort_keys=True))


def cmd_export(kind, cfg, out):
    from . import plotting

    if kind == "contour":
        from .eclipse import EclipseNet, SlicePlane, mesh_eclipse_source, save_contours, zero_level_slice

        if cfg["checkpoint"]:
            net = EclipseNet.from_dict(load_checkpoint(cfg["checkpoint"], "eclipse")["net"])
            fn = net
        else:
            _require(cfg, "body")
            fn = mesh_eclipse_source(load_body(cfg["body"], cfg["body_scale"]), allow_inside=True)
        sun = _vec(cfg["sun"], "sun")
        sun = sun / np.linalg.norm(sun)
        plane = SlicePlane.axis_aligned(cfg["normal"], cfg["offset"], cfg["half_size"])
        curves = zero_level_slice(fn, sun, plane, cfg["resolution"])
        save_contours(curves, out / "contour.csv")
        plotting.plot_contours(curves, out / "contour.png", cfg["half_size"])
        print(f"wrote {len(curves)} contour curves")
    elif kind == "mesh":
        from .geometry import save_obj
        from .shape import SdfNetwork, marching_cubes

        _require(cfg, "checkpoint")
        ck = load_checkpoint(cfg["checkpoint"], "sdf")
        net = SdfNetwork.from_dict(ck["net"])
        mesh = marching_cubes(net, ck["net"].get("domain_halfwidth", 1.0), cfg["resolution"])
        save_obj(mesh, out / "mesh.obj")
        plotting.plot_mesh(mesh, out / "mesh.png")
        print(f"wrote mesh with {len(mesh.faces)} faces")
    else:
        from .eclipse import SlicePlane
        from .gravity import evaluate_density

        _require(cfg, "checkpoint")
        field, _ = _gravity_source(cfg["checkpoint"])
        hw = field.domain_halfwidth
        plane = SlicePlane.axis_aligned(cfg["normal"], cfg["offset"], hw)
        c, pts = plane.grid(cfg["resolution"])
        rho = evaluate_density(field, pts)
        a, b = np.meshgrid(c, c, indexing="ij")
        np.savetxt(out / "density_slice.csv", np.column_stack([a.ravel(), b.ravel(), pts, rho]),
                   fmt="%.17g", delimiter=",", header="u,v,x,y,z,rho", comments="")
        plotting.plot_density_slice(rho.reshape(len(c), len(c)), (-hw, hw, -hw, hw),
                                    out / "density_slice.png")
        print(f"wrote {len(rho)} density samples")


def cmd_selftest(cfg, out):
    from .selftest import run_selftest

    results = run_selftest()
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    write_metrics(out, "selftest", None, {"metrics": {name: ok for name, ok, _ in results}})
    if not all(ok for _, ok, _ in results):
        raise NumericalError("self-test failed")


# argument parsing -----------------------------------------------------------

def _add_setting_flags(parser, command, kind):
    for key in dict(_COMMON, **SETTINGS[(command, kind)]):
        parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="VALUE")
    parser.add_argument("--config", dest="_config", default=None, help="key = value settings file")
    parser.add_argument("--out", dest="_out", default=None,
                        help=f"output directory (default ${OUTPUT_DIR_ENV} or the current directory)")
    parser.add_argument("-v", "--verbose", dest="_verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="neuralbodies", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"neuralbodies {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in ("gen", "train", "eval", "export"):
        p = sub.add_parser(command)
        kinds = p.add_subparsers(dest="kind", required=True)
        for kind in KINDS[command]:
            _add_setting_flags(kinds.add_parser(kind), command, kind)
    for command in ("propagate", "selftest"):
        _add_setting_flags(sub.add_parser(command), command, None)
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    command, kind = args.command, getattr(args, "kind", None)
    logging.basicConfig(level=logging.INFO if args._verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    file_values = read_config_file(args._config) if args._config else {}
    flags = {k: v for k, v in vars(args).items() if not k.startswith("_") and k not in ("command", "kind")}
    cfg = resolve_settings(command, kind, file_values, flags)
    out = Path(args._out or os.environ.get(OUTPUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_run_record(out, command, kind, cfg)
    if command == "gen":
        cmd_gen(kind, cfg, out)
    elif command == "train":
        cmd_train(kind, cfg, out)
    elif command == "eval":
        cmd_eval(kind, cfg, out)
    elif command == "export":
        cmd_export(kind, cfg, out)
    elif command == "propagate":
        cmd_propagate(cfg, out)
    else:
        cmd_selftest(cfg, out)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except SystemExit as exc:  # argparse usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (NumericalError, SingularityError) as exc:
        where = f" (iteration {exc.iteration})" if getattr(exc, "iteration", None) is not None else ""
        print(f"neuralbodies: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, GeometryDegeneracyError, FileNotFoundError) as exc:
        print(f"neuralbodies: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
