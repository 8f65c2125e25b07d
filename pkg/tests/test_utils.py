"""
Tests for manifests, JSON helpers and result tables
"""

import numpy as np
import pytest

from src.errors import ConfigError
from src.sweeps import ContagionMethod, FitRecord
from src.utils import (
    check_replay,
    config_hash,
    create_boundary_table,
    create_fit_table,
    create_preset_table,
    format_duration,
    load_json,
    load_manifest,
    run_manifest,
    save_json,
)


def test_config_hash_ignores_key_order() -> None:
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_save_json_handles_numpy(tmp_path) -> None:
    path = tmp_path / "nested" / "data.json"
    save_json({"n": np.int64(3), "x": np.array([0.5, 1.0]), "p": tmp_path}, path)
    data = load_json(path)
    assert data == {"n": 3, "x": [0.5, 1.0], "p": str(tmp_path)}


def test_load_json_errors(tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        load_json(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_json(tmp_path / "bad.json")


def test_run_manifest_fields() -> None:
    config = {"n": 10, "kappa": 0.3}
    manifest = run_manifest("generate", config, 7, ["out/a.csv"], 75.0)
    assert manifest["subcommand"] == "generate"
    assert manifest["config_hash"] == config_hash(config)
    assert manifest["seed"] == 7
    assert manifest["duration"] == "1.2m"
    assert manifest["outputs"] == ["out/a.csv"]
    assert manifest["code_version"]


def test_manifest_round_trip_and_edit_detection(tmp_path) -> None:
    path = tmp_path / "manifest.json"
    save_json(run_manifest("fit", {"inputs": ["a.csv"]}, None, []), path)
    assert load_manifest(path)["config"] == {"inputs": ["a.csv"]}

    data = load_json(path)
    data["config"]["inputs"] = ["b.csv"]
    save_json(data, path)
    with pytest.raises(ConfigError):
        load_manifest(path)

    save_json({"config": {}}, path)
    with pytest.raises(ConfigError):
        load_manifest(path)


def test_check_replay() -> None:
    manifest = run_manifest("generate", {"n": 10, "seed": 1}, 1, [])
    check_replay(manifest, {"seed": 1, "n": 10})
    with pytest.raises(ConfigError, match="n"):
        check_replay(manifest, {"n": 12, "seed": 1})
    check_replay(manifest, {"n": 12, "seed": 1}, force=True)


@pytest.mark.parametrize(
    "seconds, text", [(5.0, "5.0s"), (90.0, "1.5m"), (5400.0, "1.5h")]
)
def test_format_duration(seconds: float, text: str) -> None:
    assert format_duration(seconds) == text


def test_tables() -> None:
    fits = [
        FitRecord(
            n=50,
            kappa=k,
            method=ContagionMethod.TRUE,
            theta_star=0.1,
            beta=20.0,
            residual=1e-3,
        )
        for k in (0.05, 0.1)
    ]
    assert create_fit_table(fits).row_count == 2
    rows = [
        {"n": 25, "kappa_star": 0.28, "boundary": None, "step": 0.02, "rms": np.nan}
    ]
    assert create_boundary_table(rows).row_count == 1


def test_preset_table() -> None:
    info = {
        "name": "tiny",
        "n_values": [5, 10],
        "kappa_values": None,
        "steps": 20,
        "trials": 3,
        "delta": 1e-7,
        "epsilon_star": 0.005,
        "has_seed": False,
        "has_theta_grid": True,
    }
    listed = dict(info, name="listed", kappa_values=[0.1, 0.2])
    assert create_preset_table([info, listed]).row_count == 2
