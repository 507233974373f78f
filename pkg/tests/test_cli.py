"""CLI behaviour: artifacts, manifests, exit codes, reproducibility."""

import hashlib
import json

import pytest

from chaoswalk.cli import main
from chaoswalk.config import ConfigError, build_config, config_hash, validate_config

BASE_CONFIG = {
    "map": "markov4",
    "kernel": {"support": [-1, 1], "base_weights": [0.5, 0.5], "epsilon": 0.0},
    "seed": 7,
    "estimators": {
        "spectrum": {"n_bins": 16},
        "drift": {"N": 128, "M": 2000},
        "gambler": {"p": 0.6, "alpha1": 0, "alpha": 1, "alpha2": 3, "M": 5000},
        "ellipticity-check": {"sample_count": 200},
    },
}


def write_config(tmp_path, overrides=None, name="cfg.json"):
    cfg = json.loads(json.dumps(BASE_CONFIG))
    for key, val in (overrides or {}).items():
        cfg[key] = val
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def read_outputs(out_dir):
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.name != "manifest.json"
    }


def test_all_subcommand_writes_artifacts_and_manifest(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["all", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["seed"] == 7
    names = {a["name"] for a in manifest["artifacts"]}
    assert {"spectrum.json", "spectrum_density.csv", "drift.json",
            "gambler.json", "ellipticity.json"} <= names
    for a in manifest["artifacts"]:
        data = (out / a["name"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == a["sha256"]
        assert len(data) == a["size"]


def test_single_subcommand_runs_only_that_estimator(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["gambler", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    files = read_outputs(out)
    assert set(files) == {"gambler.json"}
    payload = json.loads(files["gambler.json"])
    assert payload["within_3se"]
    assert abs(payload["closed_form"] - 9 / 19) < 1e-12


def test_runs_are_byte_identical_across_threads(tmp_path):
    cfg = write_config(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, threads in ((a, "1"), (b, "8"), (c, "1")):
        assert main(
            ["all", "--config", str(cfg), "--out", str(out),
             "--threads", threads, "--quiet"]
        ) == 0
    assert read_outputs(a) == read_outputs(b) == read_outputs(c)


def test_seed_override_changes_outputs_and_hash(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["drift", "--config", str(cfg), "--out", str(a), "--quiet"])
    main(["drift", "--config", str(cfg), "--out", str(b), "--seed", "8", "--quiet"])
    assert read_outputs(a) != read_outputs(b)
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_hash"] != mb["config_hash"]
    assert mb["seed"] == 8


def test_invalid_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"bogus_key": 1})
    assert main(["all", "--config", str(cfg), "--quiet"]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_negative_epsilon_rejected(tmp_path):
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["kernel"]["epsilon"] = -0.2
    violations = validate_config(raw)
    assert any("epsilon" in v for v in violations)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(raw))
    assert main(["drift", "--config", str(cfg), "--quiet"]) == 2


def test_unknown_estimator_name_rejected_with_hint():
    raw = json.loads(json.dumps(BASE_CONFIG))
    raw["estimators"]["driftt"] = {}
    violations = validate_config(raw)
    assert any("driftt" in v and "valid names" in v for v in violations)


def test_missing_config_file_exits_2(tmp_path):
    assert main(["all", "--config", str(tmp_path / "nope.json"), "--quiet"]) == 2


def test_malformed_json_exits_2(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["all", "--config", str(p), "--quiet"]) == 2


def test_runtime_failure_exits_1_and_flags_manifest(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "estimators": {
                "drift": {"N": 64, "M": 500},
                # degenerate interval: raises a runtime error mid-run
                "gambler": {"p": 0.6, "alpha1": 0, "alpha": 1, "alpha2": 1, "M": 10},
            }
        },
    )
    out = tmp_path / "out"
    assert main(["all", "--config", str(cfg), "--out", str(out), "--quiet"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert "gambler" in manifest["failure"]
    # artifacts from the successful estimator are kept
    assert (out / "drift.json").exists()


def test_config_hash_is_canonical():
    a = {"map": "markov4", "seed": 1}
    b = {"seed": 1, "map": "markov4"}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"map": "markov4", "seed": 2})


def test_build_config_materializes_experiment():
    cfg = build_config(BASE_CONFIG)
    assert cfg.experiment.map.name == "markov4"
    assert cfg.experiment.kernel.epsilon == 0.0
    assert cfg.seed == 7
    with pytest.raises(ConfigError):
        build_config({"map": "markov4", "kernel": BASE_CONFIG["kernel"],
                      "estimators": {}})


def test_timestamp_only_in_manifest(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    main(["spectrum", "--config", str(cfg), "--out", str(out), "--quiet"])
    for name, data in read_outputs(out).items():
        assert b"time" not in data or name == "spectrum.json"  # no timestamps
    manifest = json.loads((out / "manifest.json").read_text())
    assert "generated_unix_time" in manifest
