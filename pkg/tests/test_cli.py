import json
import math

import pytest

from fraccap.cli import main
from fraccap.geometry import GridSet

HALFDISK = {"region": {"op": "intersect", "args": [{"shape": "ball", "r": 1.0},
                                                  {"shape": "halfspace"}]},
            "window": [[-1.0, 1.0], [0.0, 1.0]], "res": 16}


def _json_file(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_young_prints_solution(capsys):
    assert main(["young", "--sigma", "0", "--s", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["theta"] == pytest.approx(math.pi / 2)
    assert out["residual"] == 0.0


def test_young_table_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "young.csv"
    assert main(["young-table", "--sigmas", "-0.4:0.4:3", "--s-values", "0.5",
                 "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "s,sigma,theta,degrees,residual" and len(rows) == 4
    man = json.loads((tmp_path / "young.csv.manifest.json").read_text())
    assert man["command"] == "young-table" and man["outputs"] == [str(out)]
    assert len(man["config_sha256"]) == 64


def test_verify_identities_passes(tmp_path):
    out = tmp_path / "ids.json"
    assert main(["verify-identities", "--trials", "2", "--res", "16", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["checks"] == 6


def test_missing_input_is_a_config_error(tmp_path, capsys):
    assert main(["energy", "--set", str(tmp_path / "nope.json"),
                 "--container", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = _json_file(tmp_path / "cfg.json", {"kernel": {"s": 0.5, "bogus": 1}})
    assert main(["young", "--config", cfg]) == 2


def test_invalid_parameter_rejected():
    assert main(["young", "--sigma", "1.5"]) == 2


def test_no_bracket_exit_code():
    assert main(["young", "--sigma", "0.999999", "--s", "0.75"]) == 3


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = _json_file(tmp_path / "cfg.json", {"kernel": {"sigma": 0.4}})
    assert main(["young", "--config", cfg, "--sigma", "0"]) == 0
    assert json.loads(capsys.readouterr().out)["sigma"] == 0.0


def test_energy_of_region_files(tmp_path):
    drop = _json_file(tmp_path / "drop.json", dict(HALFDISK, region={
        "op": "intersect", "args": [{"shape": "ball", "r": 0.5}, {"shape": "halfspace"}]}))
    cont = _json_file(tmp_path / "cont.json", HALFDISK)
    out = tmp_path / "e.json"
    assert main(["energy", "--set", drop, "--container", cont, "--sigma", "0.3",
                 "--out", str(out)]) == 0
    br = json.loads(out.read_text())
    assert set(br["terms"]) == {"I_s(E, E^c ω)", "I_s(E, ω^c)"}


def test_minimize_and_blowup_are_reproducible(tmp_path):
    cont = _json_file(tmp_path / "cont.json", dict(HALFDISK, res=32))
    runs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        args = ["minimize", "--container", cont, "--sweeps", "5", "--seed", "7",
                "--out", str(d / "drop.bin"), "--trace", str(d / "trace.csv"),
                "--svg", str(d / "drop.svg")]
        assert main(args) == 0
        runs.append(d)
    for name in ("drop.bin", "trace.csv", "drop.svg"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    assert GridSet.load(str(runs[0] / "drop.bin")).count > 0
    assert (runs[0] / "drop.bin.manifest.json").exists()
    out = tmp_path / "blow.json"
    assert main(["blowup", "--set", str(runs[0] / "drop.bin"), "--radii", "0.5,0.25",
                 "--no-phi", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert 0 < rep["fitted_angle"] < math.pi
