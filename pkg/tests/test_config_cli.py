import json
import math
import subprocess
import sys

import pytest

from qdwstate import __version__
from qdwstate.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from qdwstate.config import DEFAULTS, PRESETS, ConfigError, preset, schema, validate_config
from qdwstate.core import HBAR


def write(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_defaults_resolve():
    res = validate_config({}, "wstate", seed=1)
    assert res.spec.seq.d == 3 and res.spec.seed == 1
    assert res.document["simulation"]["seed"] == 1


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_resolve(name):
    validate_config(preset(name), None, seed=7)


def test_errors_are_aggregated():
    doc = {"params": {"gamma_enh": -1, "bogus": 2}, "simulation": {"n_traj": 0, "estimator": "magic"},
           "analysis": {"far_peaks": [3]}, "extra": {}}
    with pytest.raises(ConfigError) as exc:
        validate_config(doc, "wstate", seed=1)
    text = "\n".join(exc.value.errors)
    for fragment in ("extra", "gamma_enh", "bogus", "n_traj", "estimator", "far_peaks"):
        assert fragment in text
    assert len(exc.value.errors) >= 6


def test_missing_seed():
    with pytest.raises(ConfigError, match="--seed"):
        validate_config({}, "hbt")
    # master-equation W-state runs need no seed
    validate_config({"simulation": {"estimator": "master"}}, "wstate")


def test_t2star_shorthand():
    res = validate_config({"params": {"t2star_ns": 4.0}}, "interference")
    assert res.spec.params.gamma_deph == pytest.approx(0.25)


def test_enhanced_target():
    res = validate_config({"params": {"enhanced_target": "hbar"}}, "spin-pumping")
    assert res.spec.params.enhanced_target == HBAR


def test_hbt_needs_enough_reps():
    with pytest.raises(ConfigError, match="n_reps"):
        validate_config({"simulation": {"n_reps": 3}}, "hbt", seed=1)


def test_pulses_must_fit_period():
    with pytest.raises(ConfigError, match="rep_period"):
        validate_config({"sequence": {"d": 8}}, "wstate", seed=1)


def test_schema_covers_defaults():
    sch = schema()
    for sec in ("params", "cw", "simulation", "analysis"):
        assert set(DEFAULTS[sec]) <= set(sch["properties"][sec]["properties"])
    json.dumps(sch)


def test_compile_pulses_areas(tmp_path):
    cfg = write(tmp_path, {"sequence": {"scheme": "deterministic", "d": 3}})
    assert main(["compile-pulses", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    seq = json.loads((tmp_path / "o" / "sequence.json").read_text())
    areas = [round(p["area_rad"], 6) for p in seq["pulses"]]
    assert areas == [round(2 * math.asin(math.sqrt(1 / 3)), 6), 1.570796, 3.141593]
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert {e["path"] for e in manifest["files"]} == {"inputs.json", "sequence.json"}


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, {"params": {"gamma_enh": "fast"}})
    assert main(["wstate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "1"]) == EXIT_INVALID
    assert "gamma_enh" in capsys.readouterr().err


def test_missing_seed_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, {})
    assert main(["hbt", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "--seed" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["wstate"], ["nope"], ["wstate", "--config", "x.json", "--out", "o",
                                                              "--seed", "-3"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_INVALID


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["wstate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, {"cw": {"omega_rad_per_ns": 0.0, "duration_ns": 2.0}})
    assert main(["spin-pumping", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_thread_count_does_not_change_artifacts(tmp_path):
    doc = {"sequence": {"pulse_duration_ns": 0.01}, "simulation": {"n_traj": 300, "n_reps": 2}}
    cfg = write(tmp_path, doc)
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}"
        assert main(["wstate", "--config", str(cfg), "--out", str(out), "--seed", "42",
                     "--threads", str(threads)]) == EXIT_OK
        outs.append(out)
    for name in ("clicks.csv", "histogram.csv", "state.json", "inputs.json", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, {"sequence": {"d": 2}})
    proc = subprocess.run([sys.executable, "-m", "qdwstate", "compile-pulses", "--config", str(cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
