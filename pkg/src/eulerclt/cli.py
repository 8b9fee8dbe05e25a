"""Command-line entry point.

    eulerclt SUBCOMMAND [--config FILE] [--out DIR] [--seed N] [--threads N] [key.path=value ...]

Configuration is merged as defaults <- JSON file <- overrides; unknown keys
are rejected. Every run writes ``config.resolved.json`` into the output
directory. Exit status: 0 all assertions pass, 1 computation failed or an
assertion failed (see ``error.json`` / the report), 2 usage error.
"""
import argparse
import copy
import json
import math
import os
import sys
import traceback

import numpy as np

from . import chaos, euler, experiments, fieldgen, targets
from ._accel import default_threads
from .covariance import model_from_config, tameness_report

MODEL = {"kind": "gaussian", "scale": 1.0}

DEFAULTS = {
    "sample": {"model": MODEL, "n": 1, "m": 10.0, "h": 0.1, "seed": 0, "replicates": 1,
               "format": "csv", "lags": [0, 1, 5]},
    "euler": {"model": MODEL, "n": 1, "m": 10.0, "h": 0.1, "seed": 0, "input": None,
              "morse": True, "tolerance": 0.02},
    "clt": {"model": MODEL, "n": 1, "m": [25.0, 50.0, 100.0], "h": 0.1, "R": 500, "seed": 0, "Q": 8,
            "variance_series": True},
    "mean": {"model": MODEL, "n": 2, "m": [4.0, 8.0], "h": 0.1, "R": 400, "seed": 0, "faces": True},
    "variance": {"model": MODEL, "n": 1, "Q": 8, "placement": "both", "lag_domain": None,
                 "mc": {"R": 0, "m": 50.0, "h": 0.1, "seed": 0, "tolerance": 0.10}},
    "targets": {"scene": None, "random": {"count": 0, "m": 10.0, "h": 0.05, "max_disks": 10},
                "noise": {"model": MODEL, "seeds": 0, "amplitude": 1.0, "check_bias": False},
                "seed": 0},
    "tameness": {"model": MODEL, "n": 2},
}

SUBCOMMANDS = sorted(DEFAULTS)


class UsageError(Exception):
    pass


class CliConfig:
    def __init__(self, subcommand, values, out_dir, threads, config_path=None, overrides=()):
        self.subcommand = subcommand
        self.values = values
        self.out_dir = out_dir
        self.threads = threads
        self.config_path = config_path
        self.overrides = list(overrides)

    def snapshot(self):
        return {"subcommand": self.subcommand, "config": self.values, "threads": self.threads}


def _merge(base, extra, path=""):
    for key, val in extra.items():
        where = path + key
        if key not in base:
            raise UsageError("unknown config key '%s'" % where)
        if key == "model":
            if not isinstance(val, dict):
                raise UsageError("config key 'model' must be an object")
            bad = set(val) - {"kind", "scale", "dim"}
            if bad:
                raise UsageError("unknown config key 'model.%s'" % sorted(bad)[0])
            base[key] = dict(base[key], **val)
        elif isinstance(base[key], dict) and isinstance(val, dict):
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _apply_override(values, item):
    if "=" not in item:
        raise UsageError("override '%s' is not of the form key.path=value" % item)
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = values
    for i, part in enumerate(parts[:-1]):
        if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
            raise UsageError("unknown config key '%s'" % ".".join(parts[:i + 1]))
        node = node[part]
    leaf = parts[-1]
    allowed = ("kind", "scale", "dim") if parts[:-1] and parts[-2] == "model" else None
    if leaf not in node and not (allowed and leaf in allowed):
        raise UsageError("unknown config key '%s'" % key)
    node[leaf] = _parse_value(raw)


def build_parser():
    parser = argparse.ArgumentParser(prog="eulerclt", description="Euler integrals of Gaussian random fields.")
    sub = parser.add_subparsers(dest="subcommand", metavar="{%s}" % ",".join(SUBCOMMANDS))
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (default: out/<subcommand>)")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--threads", type=int, help="worker threads (default: $EULERCLT_THREADS or 1)")
        p.add_argument("overrides", nargs="*", help="key.path=value overrides")
    return parser


def parse_config(argv):
    """Parse arguments into a :class:`CliConfig`; raises ``SystemExit(2)`` on usage errors."""
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    values = copy.deepcopy(DEFAULTS[args.subcommand])
    try:
        if args.config:
            try:
                with open(args.config) as fh:
                    loaded = json.load(fh)
            except (OSError, ValueError) as exc:
                raise UsageError("cannot read config file %s: %s" % (args.config, exc))
            if not isinstance(loaded, dict):
                raise UsageError("config file must hold a JSON object")
            _merge(values, loaded)
        for item in args.overrides:
            _apply_override(values, item)
        if args.seed is not None:
            if "seed" not in values:
                raise UsageError("subcommand %s takes no seed" % args.subcommand)
            values["seed"] = args.seed
        _validate(args.subcommand, values)
    except UsageError as exc:
        parser.error(str(exc))
    out = args.out or os.path.join("out", args.subcommand)
    threads = args.threads if args.threads is not None else default_threads()
    return CliConfig(args.subcommand, values, out, max(1, threads), args.config, args.overrides)


def _validate(sub, values):
    if "model" in values:
        model = dict(values["model"])
        model.setdefault("dim", values.get("n", 1))
        try:
            model_from_config(model)
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError("invalid model: %s" % exc)
    if sub in ("clt", "mean"):
        m = values["m"]
        values["m"] = [float(x) for x in (m if isinstance(m, list) else [m])]
    if sub == "variance" and values["placement"] not in ("single", "double", "both"):
        raise UsageError("placement must be single, double or both")


def _model(values, n=None):
    cfg = dict(values["model"])
    cfg["dim"] = int(n if n is not None else values.get("n", cfg.get("dim", 1)))
    return model_from_config(cfg)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=experiments._json_default)
        fh.write("\n")


# ---------------------------------------------------------------------------
# pipelines; each returns True when every assertion passes


def run_sample(cfg):
    v = cfg.values
    model = _model(v)
    spec = fieldgen.GridSpec(int(v["n"]), float(v["m"]), float(v["h"]))
    R = int(v["replicates"])
    fields = [fieldgen.sample_field(model, spec, experiments.derive_seed(v["seed"], spec.m, r) if R > 1 else v["seed"])
              for r in range(R)]
    first = fields[0]
    if v["format"] in ("csv", "both"):
        fieldgen.write_csv(first, os.path.join(cfg.out_dir, "field.csv"))
    if v["format"] in ("binary", "both"):
        fieldgen.write_binary(first, os.path.join(cfg.out_dir, "field.bin"))
    out = {"embedding": fieldgen.embedding_info(model, spec), "seed": first.seed}
    ok = True
    if R > 1:
        diag = fieldgen.validate_sample(fields, model, tuple(v["lags"]))
        out["validation"] = diag
        ok = not (diag["mean_flag"] or diag["variance_flag"] or diag["covariance_flag"])
    _write_json(os.path.join(cfg.out_dir, "sample.json"), out)
    return ok


def run_euler(cfg):
    v = cfg.values
    if v["input"]:
        path = v["input"]
        field = fieldgen.read_binary(path) if path.endswith(".bin") else fieldgen.read_csv(path, float(v["h"]))
    else:
        spec = fieldgen.GridSpec(int(v["n"]), float(v["m"]), float(v["h"]))
        field = fieldgen.sample_field(_model(v), spec, v["seed"])
    curve = euler.ec_curve(field)
    curve.write_csv(os.path.join(cfg.out_dir, "curve.csv"))
    integral = euler.upper_euler_integral(curve)
    out = {"upper_euler_integral": integral, "breakpoints": int(curve.breakpoints.size)}
    ok = True
    if v["morse"]:
        pts = euler.classify_critical_points(field)
        euler.write_critical_points_csv(pts, os.path.join(cfg.out_dir, "critical_points.csv"))
        morse = euler.morse_euler_integral(field, pts)
        gap = abs(morse - integral) / (1.0 + abs(integral))
        out.update({"morse_euler_integral": morse, "relative_gap": gap, "tolerance": v["tolerance"]})
        ok = gap < float(v["tolerance"])
    _write_json(os.path.join(cfg.out_dir, "euler.json"), out)
    return ok


def _experiment_config(cfg, **extra):
    v = cfg.values
    return experiments.ExperimentConfig(model=dict(v["model"], dim=int(v["n"])), n=int(v["n"]),
                                        m_values=v["m"], h=float(v["h"]), R=int(v["R"]),
                                        base_seed=int(v["seed"]), out_dir=cfg.out_dir,
                                        threads=cfg.threads, **extra)


def run_clt(cfg):
    v = cfg.values
    conf = _experiment_config(cfg, Q=int(v["Q"]))
    report = experiments.run_clt_experiment(conf, variance_series=bool(v["variance_series"]))
    report.write(cfg.out_dir)
    return report.passed


def run_mean(cfg):
    conf = _experiment_config(cfg, faces=bool(cfg.values["faces"]))
    report = experiments.run_mean_experiment(conf)
    report.write(cfg.out_dir)
    experiments.write_mean_csv(report, os.path.join(cfg.out_dir, "mean.csv"))
    return report.passed


def run_variance(cfg):
    v = cfg.values
    model = _model(v)
    placements = ["single", "double"] if v["placement"] == "both" else [v["placement"]]
    out = {"series": {}}
    for pl in placements:
        series = chaos.truncated_variance(model, int(v["Q"]), v["lag_domain"], placement=pl)
        series.write_csv(os.path.join(cfg.out_dir, "variance_%s.csv" % pl))
        out["series"][pl] = series.to_dict()
    ok = all(min(s["terms"]) >= -1e-10 for s in out["series"].values())
    mc = v["mc"]
    if int(mc["R"]) > 0:
        conf = experiments.ExperimentConfig(model=dict(v["model"], dim=int(v["n"])), n=int(v["n"]),
                                            m_values=[float(mc["m"])], h=float(mc["h"]), R=int(mc["R"]),
                                            base_seed=int(mc["seed"]), threads=cfg.threads)
        rep = experiments.run_clt_experiment(conf, check_tameness=False, variance_series=False)
        emp = rep.summary[conf.m_values[0]]["variance"]
        verdict = {}
        for pl, s in out["series"].items():
            rel = abs(s["sigma2"] - emp) / emp
            verdict[pl] = {"sigma2": s["sigma2"], "relative_error": rel, "pass": rel < float(mc["tolerance"])}
        out["monte_carlo"] = {"variance": emp, "m": conf.m_values[0], "R": conf.R, "placements": verdict}
        winners = [pl for pl, r in verdict.items() if r["pass"]]
        out["placement_outcome"] = winners
        ok = ok and bool(winners)
    _write_json(os.path.join(cfg.out_dir, "variance.json"), out)
    return ok


def run_targets(cfg):
    v = cfg.values
    ok = True
    summary = {}
    scenes = []
    if v["scene"]:
        scenes.append(("scene", targets.TargetScene.load(v["scene"])))
    rnd = v["random"]
    if int(rnd["count"]) > 0:
        rng = np.random.Generator(np.random.Philox(int(v["seed"])))
        for i in range(int(rnd["count"])):
            scenes.append(("random%d" % i, targets.random_scene(rng, float(rnd["m"]), float(rnd["h"]),
                                                                int(rnd["max_disks"]))))
    rows = []
    for name, scene in scenes:
        hf = targets.rasterize_sensor_field(scene)
        try:
            k = targets.count_targets_exact(hf)
        except targets.RasterizationError as exc:
            k = None
            summary.setdefault("errors", []).append("%s: %s" % (name, exc))
        rows.append((name, len(scene.disks), k))
        ok = ok and k == len(scene.disks)
    with open(os.path.join(cfg.out_dir, "counts.csv"), "w") as fh:
        fh.write("scene,disks,count\n")
        for name, n, k in rows:
            fh.write("%s,%d,%s\n" % (name, n, "" if k is None else k))
    summary["exact_counts_correct"] = ok
    noise = v["noise"]
    if int(noise["seeds"]) > 0 and scenes:
        name, scene = scenes[0]
        hf = targets.rasterize_sensor_field(scene)
        model = model_from_config(dict(noise["model"], dim=2))
        ests = [targets.estimate_targets_noisy(hf, model, experiments.derive_seed(v["seed"], scene.domain.m, s),
                                               float(noise["amplitude"]))
                for s in range(int(noise["seeds"]))]
        targets.write_results_csv(ests, os.path.join(cfg.out_dir, "results.csv"))
        nh = np.array([e.N_hat for e in ests])
        res = np.array([e.additivity_residual for e in ests])
        se = float(nh.std(ddof=1) / math.sqrt(nh.size)) if nh.size > 1 else float("nan")
        bias = float(nh.mean() - len(scene.disks))
        summary["noisy"] = {"scene": name, "N": len(scene.disks), "mean_N_hat": float(nh.mean()), "se": se,
                            "bias": bias, "additivity_residual_mean": float(res.mean()),
                            "additivity_residual_sd": float(res.std(ddof=1)) if res.size > 1 else 0.0}
        if noise["check_bias"]:
            summary["noisy"]["bias_pass"] = abs(bias) < 3 * se
            ok = ok and abs(bias) < 3 * se
    _write_json(os.path.join(cfg.out_dir, "targets.json"), summary)
    return ok


def run_tameness(cfg):
    v = cfg.values
    rep = tameness_report(_model(v))
    _write_json(os.path.join(cfg.out_dir, "tameness.json"), rep.to_dict())
    return rep.checkable_pass


PIPELINES = {"sample": run_sample, "euler": run_euler, "clt": run_clt, "mean": run_mean,
             "variance": run_variance, "targets": run_targets, "tameness": run_tameness}


def dispatch(cfg):
    """Run the pipeline; 0 if every assertion passes, 1 on failure or error."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_json(os.path.join(cfg.out_dir, "config.resolved.json"), cfg.snapshot())
    err_path = os.path.join(cfg.out_dir, "error.json")
    if os.path.exists(err_path):
        os.remove(err_path)
    try:
        ok = PIPELINES[cfg.subcommand](cfg)
    except Exception as exc:
        _write_json(err_path, {"subcommand": cfg.subcommand, "type": type(exc).__name__,
                               "message": str(exc), "traceback": traceback.format_exc()})
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1
    print("%s: %s" % (cfg.subcommand, "pass" if ok else "FAIL"))
    return 0 if ok else 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
