import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from notchkit.cli import main
from notchkit.exceptions import ParseError, ValidationError
from notchkit.scenario import load_scenario, shipped_scenarios, validate_scenario

MINIMAL = {"waveform": {"baud": 95e9}, "plan": {"width_hz": 2e9}}


def dump(tmp_path, data, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def run_cli(argv):
    return main([str(a) for a in argv])


def report(out):
    return json.loads((Path(out) / "report.json").read_text())


class TestScenario:
    def test_minimal_defaults(self):
        sc = validate_scenario(MINIMAL)
        assert sc.kind == "stitch"
        assert sc.stage == "Card2OSA" and sc.rbw_hz == 500e6 and sc.averaging == 16
        assert sc.seed == 0 and sc.normalize and sc.pol == "x"
        assert sc.waveform.rolloff == 0.05 and sc.waveform.n_symbols == 32768 and sc.waveform.oversampling == 4
        boi = sc.band_of_interest()
        assert (boi.f_lo, boi.f_hi) == (-44e9, 44e9)
        plan = sc.stitch_plan()
        assert plan.kind == "dual" and len(plan.notches) == 22
        echo = sc.echo()
        assert echo["rbw_hz"] == 500e6 and echo["impairments"]["skew_ps"] == 0.0

    def test_kind_inference(self):
        assert validate_scenario({"waveform": {"baud": 95e9}}).kind == "psd"
        assert validate_scenario({"waveform": {"baud": 95e9}, "skew": {}}).kind == "skew"

    def test_notch_outside_boi_named(self):
        data = {
            "waveform": {"baud": 95e9},
            "boi": {"f_lo_hz": 0.0, "f_hi_hz": 4e9},
            "plan": {"kind": "single", "notches": [
                {"center_hz": 1e9, "width_hz": 2e9},
                {"center_hz": 9e9, "width_hz": 2e9},
            ]},
        }
        with pytest.raises(ValidationError) as exc:
            validate_scenario(data)
        assert any("notch 1" in p for p in exc.value.problems)

    def test_shipped_wlai(self):
        assert "wlai-dn-2ghz" in shipped_scenarios()
        sc = load_scenario("wlai-dn-2ghz")
        plan = sc.stitch_plan()
        assert plan.kind == "dual"
        assert {n.width_nw for n in plan.notches} == {2e9}
        assert sc.impairments.nfl_tx_db == -21 and sc.waveform.n_symbols == 2**15

    def test_all_shipped_validate(self):
        names = shipped_scenarios()
        assert len(names) >= 6
        for name in names:
            load_scenario(name)

    def test_unknown_keys_listed(self):
        data = dict(MINIMAL, colour="blue")
        data["waveform"] = {"baud": 95e9, "bogus": 1}
        with pytest.raises(ValidationError) as exc:
            validate_scenario(data)
        text = " ".join(exc.value.problems)
        assert "colour" in text and "bogus" in text

    def test_every_problem_listed(self):
        data = {"waveform": {"baud": -1, "rolloff": 2}, "rbw_hz": 0, "averaging": 0}
        with pytest.raises(ValidationError) as exc:
            validate_scenario(data)
        assert len(exc.value.problems) >= 4

    def test_cross_field(self):
        bad = dict(MINIMAL, stage="Bench")
        with pytest.raises(ValidationError, match="stage"):
            validate_scenario(bad)
        with pytest.raises(ValidationError, match="skew_ps"):
            validate_scenario({"waveform": {"baud": 95e9}, "skew": {}, "impairments": {"skew_ps": 2.0}})
        with pytest.raises(ValidationError, match="exactly one"):
            validate_scenario({"waveform": {"baud": 95e9}, "plan": {}})
        xt = {"freqs_hz": [0.0], "c_qi": [[0.0, 0.1]], "c_iq": [0.0]}
        with pytest.raises(ValidationError, match="impairments"):
            validate_scenario(dict(MINIMAL, impairments={"crosstalk": xt}))

    def test_complex_crosstalk(self):
        xt = {"freqs_hz": [0.0, 20e9], "c_qi": [0.01, [0.02, 0.01]], "c_iq": [0.0, 0.0]}
        cfg = validate_scenario(dict(MINIMAL, impairments={"crosstalk": xt})).impairment_config()
        assert cfg.crosstalk.c_qi[1] == 0.02 + 0.01j

    def test_yaml_syntax_line(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("waveform:\n  baud: 95e9\nplan: {width_hz: 2e9\n")
        with pytest.raises(ParseError) as exc:
            load_scenario(p)
        assert exc.value.line is not None

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_scenario("/nonexistent/scenario.yaml")


class TestExitCodes:
    def test_usage(self, tmp_path, capsys):
        assert run_cli([]) == 1
        assert run_cli(["frobnicate"]) == 1
        assert run_cli(["stitch"]) == 1
        # kind mismatch
        assert run_cli(["skew", "--scenario", "wlai-dn-2ghz", "--out", tmp_path]) == 1
        assert run_cli(["stitch", "--scenario", "wlai-dn-2ghz", "--seed", "-1", "--out", tmp_path]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_parse(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("waveform: [1, 2\n")
        assert run_cli(["psd", "--scenario", p, "--out", tmp_path / "o"]) == 2
        assert "line" in capsys.readouterr().err

    def test_validation(self, tmp_path, capsys):
        p = dump(tmp_path, dict(MINIMAL, nonsense=1))
        assert run_cli(["stitch", "--scenario", p, "--out", tmp_path / "o"]) == 3
        assert "nonsense" in capsys.readouterr().err

    def test_numeric(self, tmp_path, capsys):
        data = {
            "waveform": {"baud": 95e9, "n_symbols": 4096},
            "impairments": {"nfl_tx_db": -5.0},
            "skew": {"center_hz": 2e9, "width_hz": 2e9, "repeats": 2, "traces_avg": 1},
        }
        assert run_cli(["skew", "--scenario", dump(tmp_path, data), "--out", tmp_path / "o"]) == 4
        err = capsys.readouterr().err
        assert "not unimodal" in err and err.count(" ps ") == 12

    def test_io(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run_cli(["psd", "--scenario", "psd-rrc", "--out", blocker / "sub"]) == 5
        assert run_cli(["psd", "--scenario", tmp_path / "missing.yaml", "--out", tmp_path]) == 5


@pytest.fixture(scope="module")
def small_stitch(tmp_path_factory):
    d = tmp_path_factory.mktemp("stitch")
    data = {
        "name": "small", "seed": 3,
        "waveform": {"baud": 95e9, "n_symbols": 8192},
        "boi": {"f_lo_hz": -44e9, "f_hi_hz": 44e9},
        "plan": {"width_hz": 2e9},
        "averaging": 16,
        "impairments": {"nfl_tx_db": -21.0},
    }
    return dump(d, data)


class TestCommands:
    def test_stitch_report(self, small_stitch, tmp_path):
        out = tmp_path / "o"
        assert run_cli(["stitch", "--scenario", small_stitch, "--out", out, "--export-traces"]) == 0
        rep = report(out)
        assert rep["command"] == "stitch" and rep["scenario"]["name"] == "small"
        assert rep["toolkit"]["name"] == "notchkit" and "run" in rep["timing_s"]
        assert rep["truth"]["nfl"]["rms_error_db"] <= 0.3
        assert rep["outputs"]["n_traces"] == 22
        for name in ("nfl", "signal_psd", "sndr"):
            arr = rep["outputs"][name]
            assert "freq_hz" in arr and len(arr["freq_hz"]) == len(next(v for k, v in arr.items() if k != "freq_hz"))
            head = (out / f"{name}.csv").read_text().splitlines()[0]
            assert head.startswith("freq_hz,")
        assert len(list((out / "traces").glob("*.csv"))) == 22
        assert len(list((out / "traces").glob("*.yaml"))) == 22

    def test_import_stitches_exports(self, small_stitch, tmp_path):
        out = tmp_path / "o"
        assert run_cli(["stitch", "--scenario", small_stitch, "--out", out, "--export-traces"]) == 0
        traces = sorted((out / "traces").glob("*.csv"))
        imp = tmp_path / "imp"
        assert run_cli(["import", *traces, "--out", imp]) == 0
        a, b = report(out), report(imp)
        assert "truth" not in b
        assert np.allclose(a["outputs"]["nfl"]["nfl_db"], b["outputs"]["nfl"]["nfl_db"], atol=1e-9)
        assert b["outputs"]["n_traces"] == 22

    def test_import_gap_is_numeric_error(self, small_stitch, tmp_path):
        out = tmp_path / "o"
        run_cli(["stitch", "--scenario", small_stitch, "--out", out, "--export-traces"])
        traces = sorted((out / "traces").glob("*.csv"))
        assert run_cli(["import", *traces[:-1], "--out", tmp_path / "imp"]) == 4

    def test_byte_identical_payload(self, small_stitch, tmp_path):
        for k in ("a", "b"):
            assert run_cli(["stitch", "--scenario", small_stitch, "--out", tmp_path / k]) == 0
        a, b = report(tmp_path / "a"), report(tmp_path / "b")
        for r in (a, b):
            r.pop("timing_s")
            r.pop("toolkit")
        assert json.dumps(a) == json.dumps(b)
        for csv in ("nfl.csv", "sndr.csv", "signal_psd.csv"):
            assert (tmp_path / "a" / csv).read_bytes() == (tmp_path / "b" / csv).read_bytes()

    def test_seed_override(self, small_stitch, tmp_path):
        run_cli(["stitch", "--scenario", small_stitch, "--out", tmp_path / "a"])
        run_cli(["stitch", "--scenario", small_stitch, "--out", tmp_path / "b", "--seed", "9"])
        a, b = report(tmp_path / "a"), report(tmp_path / "b")
        assert b["scenario"]["seed"] == 9
        assert a["outputs"]["nfl"]["nfl_db"] != b["outputs"]["nfl"]["nfl_db"]

    def test_env_out(self, small_stitch, tmp_path, monkeypatch):
        monkeypatch.setenv("NOTCHKIT_OUT", str(tmp_path / "env"))
        assert run_cli(["psd", "--scenario", "psd-rrc"]) == 0
        assert (tmp_path / "env" / "report.json").exists()

    def test_psd(self, tmp_path):
        assert run_cli(["psd", "--scenario", "psd-rrc", "--out", tmp_path]) == 0
        out = report(tmp_path)["outputs"]
        assert out["parseval_rel_error"] <= 1e-3
        assert 0 < out["max_peak_to_rms_change"] < 0.3

    def test_xtalk_off(self, tmp_path):
        assert run_cli(["xtalk", "--scenario", "xtalk-off", "--out", tmp_path]) == 0
        rep = report(tmp_path)
        sigma = rep["truth"]["dn_nfl"]["rms_error_db"]
        assert abs(rep["outputs"]["mean_discrepancy_db"]) < 0.05
        disc = np.array(rep["outputs"]["discrepancy"]["sndr_dn_minus_sn_db"])
        assert np.sqrt(np.mean(disc**2)) <= 2 * np.sqrt(2) * sigma

    def test_xtalk_flat(self, tmp_path):
        assert run_cli(["xtalk", "--scenario", "xtalk-flat", "--out", tmp_path]) == 0
        rep = report(tmp_path)
        assert rep["outputs"]["mean_discrepancy_db"] > 1.0
        assert abs(rep["truth"]["sn_nfl"]["mean_error_db"]) < 0.1

    def test_skew_small(self, tmp_path):
        assert run_cli(["skew", "--scenario", "skew-0p75ps", "--out", tmp_path, "--repeats", "2"]) == 0
        rep = report(tmp_path)
        out = rep["outputs"]
        assert len(out["repeats_ps"]) == 2
        assert abs(out["tau_hat_ps"] - 0.75) <= 0.1
        assert rep["truth"]["skew_ps"] == 0.75
        assert (tmp_path / "cost_curve.csv").read_text().startswith("tau_ps,")


@pytest.mark.slow
def test_skew_full_scenario(tmp_path):
    assert run_cli(["skew", "--scenario", "skew-0p75ps", "--out", tmp_path]) == 0
    out = report(tmp_path)["outputs"]
    assert len(out["repeats_ps"]) == 8
    assert out["std_ps"] <= 0.1
    assert abs(out["tau_hat_ps"] - 0.75) <= 0.1


def test_console_script(tmp_path):
    env = dict(os.environ, NOTCHKIT_OUT=str(tmp_path))
    r = subprocess.run([sys.executable, "-m", "notchkit.cli", "psd", "--scenario", "psd-rrc"],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert Path(r.stdout.strip()) == tmp_path / "report.json"
    r = subprocess.run([sys.executable, "-m", "notchkit.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "notchkit" in r.stdout
