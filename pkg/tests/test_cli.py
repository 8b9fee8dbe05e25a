import json
import os
import subprocess
import sys

import pytest

from eulerclt import cli


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def csv_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            if f.endswith(".csv"):
                full = os.path.join(dirpath, f)
                with open(full, "rb") as fh:
                    out[os.path.relpath(full, root)] = fh.read()
    return out


def test_override_after_config(tmp_path):
    base = write_json(tmp_path / "base.json", {"R": 50, "h": 0.2})
    cfg = cli.parse_config(["clt", "--config", base, "m=50"])
    assert cfg.values["m"] == [50.0] and cfg.values["R"] == 50 and cfg.values["h"] == 0.2
    cfg = cli.parse_config(["clt", "model.scale=2.0", "--seed", "9", "--threads", "2"])
    assert cfg.values["model"]["scale"] == 2.0 and cfg.values["seed"] == 9 and cfg.threads == 2


def test_usage_errors(capsys):
    assert cli.main([]) == 2
    assert cli.main(["frobnicate"]) == 2
    err = capsys.readouterr().err
    for sub in cli.SUBCOMMANDS:
        assert sub in err


@pytest.mark.parametrize("args,key", [
    (["clt", "bogus=1"], "bogus"),
    (["variance", "mc.Rx=3"], "mc.Rx"),
    (["clt", "model.colour=red"], "model.colour"),
    (["clt", "nokeyvalue"], "nokeyvalue"),
])
def test_unknown_keys_named(args, key, capsys):
    assert cli.main(args) == 2
    assert key in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    assert cli.main(["clt", "--config", str(tmp_path / "missing.json")]) == 2
    bad = write_json(tmp_path / "bad.json", {"model": {"kind": "gaussian", "shape": 2}})
    assert cli.main(["clt", "--config", bad]) == 2
    assert "model.shape" in capsys.readouterr().err


def test_tameness_run(tmp_path):
    cfg = write_json(tmp_path / "gaussian.json", {"model": {"kind": "gaussian", "scale": 1.0}})
    out = tmp_path / "t"
    assert cli.main(["tameness", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "tameness.json").read_text())
    assert "conditions" in rep
    snap = json.loads((out / "config.resolved.json").read_text())
    assert snap["subcommand"] == "tameness" and snap["config"]["model"]["kind"] == "gaussian"


def test_tameness_exponential_fails(tmp_path):
    assert cli.main(["tameness", "model.kind=\"exponential\"", "--out", str(tmp_path)]) == 1


def test_mean_run(tmp_path):
    cfg = write_json(tmp_path / "n2.json", {"n": 2, "m": [3.0], "R": 30, "faces": False})
    assert cli.main(["mean", "--config", cfg, "--out", str(tmp_path / "o")]) in (0, 1)
    text = (tmp_path / "o" / "mean.csv").read_text().splitlines()
    assert text[0] == "m,mc_mean,se,analytic_mean,pass" and len(text) == 2


def test_compute_error_writes_record(tmp_path):
    out = tmp_path / "e"
    assert cli.main(["variance", "Q=2", "lag_domain=1.0", "placement=\"single\"", "--out", str(out)]) == 1
    rec = json.loads((out / "error.json").read_text())
    assert rec["type"] == "DomainTooSmallError" and "enlarge" in rec["message"]


def test_sample_and_euler(tmp_path):
    assert cli.main(["sample", "n=2", "m=3.0", "--out", str(tmp_path / "s")]) == 0
    field = tmp_path / "s" / "field.csv"
    assert cli.main(["euler", "input=\"%s\"" % field, "--out", str(tmp_path / "e")]) == 0
    res = json.loads((tmp_path / "e" / "euler.json").read_text())
    assert res["relative_gap"] < 0.02
    assert (tmp_path / "e" / "curve.csv").exists() and (tmp_path / "e" / "critical_points.csv").exists()


@pytest.mark.parametrize("args", [
    ["clt", "m=[10.0, 20.0]", "R=30", "Q=4"],
    ["targets", "random.count=3", "noise.seeds=4", "random.h=0.1"],
    ["variance", "Q=4", "mc.R=30", "mc.m=10.0"],
    ["sample", "replicates=4", "m=5.0"],
])
def test_rerun_byte_identical(tmp_path, args):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(args + ["--threads", "1", "--out", str(a)])
    cli.main(args + ["--threads", "3", "--out", str(b)])
    ca, cb = csv_bytes(a), csv_bytes(b)
    assert ca and ca == cb


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "eulerclt", "tameness", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "tameness: pass" in proc.stdout
