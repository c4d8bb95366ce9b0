import json
import subprocess
import sys

import numpy as np
import pytest

from cdgcn.cli import main
from cdgcn.dataset import load_mask, load_readings, load_stations

FAST = ["--max-epochs", "40", "--bandwidth", "6"]


def cli(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse rejects bad flags this way
        return exc.code


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert cli("gen", "--n", 6, "--f", 2, "--t", 24, "--seed", 7, "--out", root / "gen") == 0
    assert cli("mask", "--in", root / "gen", "--ratio", 0.5, "--seed", 1,
               "--out", root / "mask") == 0
    assert cli("recover", "--in", root / "mask", "--out", root / "rec", *FAST) == 0
    return root


def test_gen_writes_files(runs):
    names = sorted(p.name for p in (runs / "gen").iterdir())
    assert names == ["manifest.json", "readings.csv", "stations.csv", "truth.csv"]


def test_gen_is_byte_identical(runs, tmp_path):
    assert cli("gen", "--n", 6, "--f", 2, "--t", 24, "--seed", 7, "--out", tmp_path) == 0
    for name in ("stations.csv", "readings.csv", "truth.csv"):
        assert (tmp_path / name).read_bytes() == (runs / "gen" / name).read_bytes()


def test_gen_rejects_zero_time_steps(tmp_path, capsys):
    assert cli("gen", "--t", 0, "--out", tmp_path) == 2


def test_gen_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli("gen", "--n", 2, "--f", 1, "--t", 3, "--out", blocker / "sub") == 2


def test_mask_blanks_requested_fraction(runs):
    stations = load_stations(runs / "mask" / "stations.csv")
    _, obs = load_readings(runs / "mask" / "readings.csv", stations)
    hidden = load_mask(runs / "mask" / "hidden.csv", stations)
    assert abs((~obs).mean() - 0.5) <= 0.005
    assert np.array_equal(hidden, ~obs)


def test_mask_ratio_zero_copies_readings(runs, tmp_path):
    assert cli("mask", "--in", runs / "gen", "--ratio", 0, "--out", tmp_path) == 0
    assert (tmp_path / "readings.csv").read_bytes() == (runs / "gen" / "readings.csv").read_bytes()


@pytest.mark.parametrize("ratio", ["1.0", "-0.1"])
def test_mask_rejects_bad_ratio(runs, tmp_path, ratio):
    assert cli("mask", "--in", runs / "gen", "--ratio", ratio, "--out", tmp_path) == 2


def test_recover_outputs_and_report(runs):
    rec = runs / "rec"
    report = json.loads((rec / "report.json").read_text())
    assert report["schema_version"] == 1
    assert set(report["scopes"]) == {"hidden", "test", "whole"}
    assert {"rse", "rmse"} <= set(report["scopes"]["hidden"])
    assert {"config", "seeds", "wall_seconds"} <= set(report)
    stations = load_stations(runs / "mask" / "stations.csv")
    out, obs = load_readings(rec / "recovered.csv", stations)
    assert obs.all()
    vals, mobs = load_readings(runs / "mask" / "readings.csv", stations)
    np.testing.assert_allclose(out[mobs], vals[mobs], rtol=1e-12, atol=1e-12)


def test_recover_manifest_digests_match_outputs(runs):
    import hashlib
    man = json.loads((runs / "rec" / "manifest.json").read_text())
    assert man["command"] == "recover" and man["config"]["bandwidth"] == 6
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((runs / "rec" / name).read_bytes()).hexdigest() == digest


@pytest.mark.parametrize("flags,key,value", [(["--lambda", "0"], "lam", 0.0),
                                             (["--adjacency", "sym-norm"], "adjacency",
                                              "sym-norm")])
def test_recover_flags_reach_config(runs, tmp_path, flags, key, value):
    assert cli("recover", "--in", runs / "mask", "--out", tmp_path, *FAST, *flags) == 0
    assert json.loads((tmp_path / "report.json").read_text())["config"][key] == value


def test_recover_divergence_exit_code(runs, tmp_path):
    code = cli("recover", "--in", runs / "mask", "--out", tmp_path, *FAST,
               "--optimizer", "gd", "--learning-rate", "1e200")
    assert code == 3


def test_recover_malformed_input(tmp_path):
    (tmp_path / "stations.csv").write_text("station_id,lat,lon\nA,99,0\n")
    (tmp_path / "readings.csv").write_text("t,station_id,a\n0,A,1\n")
    assert cli("recover", "--in", tmp_path, "--out", tmp_path / "o") == 2


def eval_json(capsys, *argv):
    assert cli("eval", *argv) == 0
    return json.loads(capsys.readouterr().out)


def test_eval_perfect_recovery(runs, capsys):
    truth = runs / "gen" / "truth.csv"
    doc = eval_json(capsys, "--recovered", truth, "--truth", truth, "--scope", "whole")
    assert doc["rse"] == 0 and doc["rmse"] == 0


def test_eval_scopes_differ(runs, capsys):
    args = ["--recovered", runs / "rec" / "recovered.csv", "--truth", runs / "gen" / "truth.csv",
            "--stations", runs / "gen" / "stations.csv"]
    hidden = eval_json(capsys, *args, "--scope", "hidden", "--mask", runs / "mask" / "hidden.csv")
    whole = eval_json(capsys, *args, "--scope", "whole")
    assert hidden["rmse"] != whole["rmse"]
    assert hidden["n_entries"] < whole["n_entries"]


def test_eval_missing_mask(runs, tmp_path):
    truth = runs / "gen" / "truth.csv"
    assert cli("eval", "--recovered", truth, "--truth", truth, "--scope", "hidden",
               "--mask", tmp_path / "nope.csv") == 2
    assert cli("eval", "--recovered", truth, "--truth", truth, "--scope", "hidden") == 2


def test_eval_shape_mismatch(runs, tmp_path):
    assert cli("gen", "--n", 6, "--f", 2, "--t", 12, "--seed", 7, "--out", tmp_path) == 0
    assert cli("eval", "--recovered", tmp_path / "truth.csv", "--truth",
               runs / "gen" / "truth.csv", "--scope", "whole") == 2


def test_ablate_writes_all_arms(runs, tmp_path, capsys):
    assert cli("ablate", "--in", runs / "mask", "--out", tmp_path, *FAST) == 0
    doc = json.loads((tmp_path / "ablation.json").read_text())
    assert set(doc) == {"full", "no_regularization", "symmetric_normalized_adjacency",
                        "no_regularization+symmetric_normalized_adjacency"}
    assert "full" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cdgcn", "gen", "--n", "2", "--f", "1",
                          "--t", "3", "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "manifest.json").exists()
