import os

import numpy as np
import pytest

from main import main
from src.config import (
    SensorSystemConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    experiment_dict,
    load_config,
    load_config_from_env,
    parse_quantity,
    validate_pattern,
)
from src.sensor.engine import ExperimentEngine
from src.services.dataset_store import DatasetStore
from src.utils.errors import (
    ConfigError,
    DataError,
    EstimationError,
    OccupancyError,
    OutOfWindowError,
    PlanningError,
)

SMALL = {"grid_rows": 3, "grid_cols": 6, "pattern_rect": [0, 1, 2, 2]}


# ==================== CONFIG ====================

def test_quantity_suffixes():
    assert parse_quantity("2 us", "s", "t_min") == pytest.approx(2e-6)
    assert parse_quantity("283 µT", "T", "quantization_field") == pytest.approx(283e-6)
    assert parse_quantity("77.3 nT/um", "T/m", "test_gradient") == pytest.approx(77.3e-3)
    assert parse_quantity("9.2777 kHz/uT", "Hz/T", "detuning_slope") == pytest.approx(9.2777e9)
    assert parse_quantity(["1 um", 2e-6], "m", "grid_origin") == pytest.approx([1e-6, 2e-6])
    assert parse_quantity(5, "s", "t_min") == 5.0


def test_wrong_unit_names_the_key():
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict({"t_max": "110 uT"})
    assert excinfo.value.key == "t_max"
    with pytest.raises(ConfigError):
        parse_quantity("3 furlongs", "m", "grid_pitch")


def test_config_round_trip(default_config):
    assert config_from_dict(config_to_dict(default_config)) == default_config
    cfg = config_from_dict({"t_min": "4 us", "grid_pitch": "7 um", "repetitions": 12})
    assert cfg.t_min == pytest.approx(4e-6)
    assert cfg.repetitions == 12 and isinstance(cfg.repetitions, int)


@pytest.mark.parametrize(
    "data, key",
    [
        ({"bogus": 1}, "bogus"),
        ({"grid_rows": "x"}, "grid_rows"),
        ({"load_probability": 1.5}, "load_probability"),
        ({"sensor_pair": "clock"}, "sensor_pair"),
        ({"repetitions": 2.5}, "repetitions"),
        ({"pattern_rect": [1, 2, 3]}, "pattern_rect"),
    ],
)
def test_invalid_values_name_the_key(data, key):
    with pytest.raises(ConfigError) as excinfo:
        config_from_dict(data)
    assert excinfo.value.key == key
    assert excinfo.value.exit_code == 2


def test_derived_quantities(default_config):
    assert default_config.repetitions_per_state() == 87
    np.testing.assert_allclose(default_config.t_values()[[0, -1]], [2e-6, 110e-6])
    assert len(default_config.t_values()) == 55
    assert SensorSystemConfig(event_counting="loaded").repetitions_per_state() == 26
    assert len(default_config.pattern()) == 9


def test_config_hash(default_config):
    assert config_hash(default_config) == config_hash(SensorSystemConfig())
    assert config_hash(default_config) != config_hash(SensorSystemConfig(master_seed=1))


def test_run_only_keys_leave_the_hash_alone(default_config):
    elsewhere = SensorSystemConfig(jobs=6, out_dir="elsewhere")
    assert config_hash(elsewhere) == config_hash(default_config)
    assert not {"jobs", "out_dir"} & set(experiment_dict(elsewhere))
    assert experiment_dict(elsewhere)["master_seed"] == default_config.master_seed


def test_pattern_checked_only_when_assembling():
    cfg = config_from_dict({"grid_rows": 2, "grid_cols": 3})
    with pytest.raises(ConfigError) as excinfo:
        validate_pattern(cfg)
    assert excinfo.value.key == "pattern_rect"
    validate_pattern(config_from_dict({"grid_rows": 2, "grid_cols": 3, "pattern_rect": [0, 0, 2, 2]}))


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("k", "m"), 2),
        (DataError("m"), 3),
        (EstimationError("m"), 4),
        (OccupancyError("m"), 3),
        (PlanningError("m"), 3),
        (OutOfWindowError("m"), 2),
    ],
)
def test_error_exit_codes(error, code):
    assert error.exit_code == code


def test_config_files(write_config, tmp_path):
    cfg = load_config(write_config({"master_seed": 9, "quantization_field": "283 uT"}))
    assert cfg.master_seed == 9
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("SENSOR_MASTER_SEED", "7")
    monkeypatch.setenv("SENSOR_OUT_DIR", "elsewhere")
    cfg = load_config_from_env(SensorSystemConfig())
    assert cfg.master_seed == 7
    assert cfg.out_dir == "elsewhere"
    monkeypatch.setenv("SENSOR_JOBS", "many")
    with pytest.raises(ConfigError):
        load_config_from_env(SensorSystemConfig())


# ==================== DATASET FILES ====================

@pytest.fixture
def store():
    return DatasetStore()


@pytest.fixture
def written(store, small_config, tmp_path):
    small_config.repetitions = 3
    dataset = ExperimentEngine(small_config).run_experiment(diagnostic=True)
    path = str(tmp_path / "dataset.txt")
    digest = store.write_dataset(dataset, path)
    return dataset, path, digest


def test_dataset_file_round_trip(store, written):
    dataset, path, digest = written
    assert store.file_sha256(path) == digest
    loaded = store.read_dataset(path)
    assert len(loaded) == len(dataset)
    for name in ("cycle", "key", "test_on", "occupied", "detected", "prepared", "final_down", "rows", "cols"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(dataset, name))
    np.testing.assert_allclose(loaded.t_seconds, dataset.t_seconds, rtol=1e-9)
    np.testing.assert_array_equal(loaded.positions, dataset.positions)
    np.testing.assert_array_equal(loaded.truth["delta_b"], dataset.truth["delta_b"])
    assert loaded.config == dataset.config
    assert loaded.metadata == dataset.metadata


def test_dataset_writes_are_byte_identical_and_atomic(store, written, tmp_path):
    dataset, path, digest = written
    assert store.write_dataset(dataset, path) == digest
    assert sorted(os.listdir(tmp_path)) == ["dataset.txt"]


def _lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def _rewrite(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def test_truncated_dataset_reports_line(store, written):
    dataset, path, _ = written
    lines = _lines(path)
    n_header = sum(1 for line in lines if line.startswith("#"))
    _rewrite(path, lines[:-5])
    with pytest.raises(DataError) as excinfo:
        store.read_dataset(path)
    assert excinfo.value.line == n_header + len(dataset) - 5
    assert "truncated" in str(excinfo.value)


def test_malformed_row_reports_line(store, written):
    _, path, _ = written
    lines = _lines(path)
    n_header = sum(1 for line in lines if line.startswith("#"))
    fields = lines[n_header + 2].split()
    fields[4] = "x"
    lines[n_header + 2] = " ".join(fields)
    _rewrite(path, lines)
    with pytest.raises(DataError) as excinfo:
        store.read_dataset(path)
    assert excinfo.value.line == n_header + 3


def test_out_of_range_flag_reports_line(store, written):
    _, path, _ = written
    lines = _lines(path)
    n_header = sum(1 for line in lines if line.startswith("#"))
    fields = lines[n_header].split()
    fields[3] = "2"
    lines[n_header] = " ".join(fields)
    _rewrite(path, lines)
    with pytest.raises(DataError) as excinfo:
        store.read_dataset(path)
    assert excinfo.value.line == n_header + 1


def test_unknown_schema_version(store, written):
    _, path, _ = written
    lines = [line.replace("# schema_version=1", "# schema_version=2") for line in _lines(path)]
    _rewrite(path, lines)
    with pytest.raises(DataError):
        store.read_dataset(path)


def test_missing_file(store, tmp_path):
    with pytest.raises(DataError):
        store.read_dataset(str(tmp_path / "nothing.txt"))


# ==================== COMMAND LINE ====================

def test_simulate_and_estimate(write_config, tmp_path):
    config = write_config({**SMALL, "repetitions": 87})
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", config, "--out", out, "--jobs", "1"]) == 0
    dataset_path = os.path.join(out, "dataset.txt")
    assert os.path.exists(dataset_path)

    assert main(["estimate", dataset_path, "--config", config, "--out", out, "--jobs", "2"]) == 0
    digest = DatasetStore().file_sha256(dataset_path)
    for name in ("field_map.txt", "gradients.txt", "summary.txt"):
        assert f"# source_sha256={digest}" in _lines(os.path.join(out, name))
    summary = "\n".join(_lines(os.path.join(out, "summary.txt")))
    assert "resolution_nT=" in summary
    assert "sensitivity_nT_per_rtHz=" in summary


def test_simulate_is_reproducible(write_config, tmp_path):
    config = write_config({**SMALL, "repetitions": 4})
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", config, "--out", first, "--seed", "5"]) == 0
    assert main(["simulate", "--config", config, "--out", second, "--seed", "5", "--jobs", "3"]) == 0
    store = DatasetStore()
    assert store.file_sha256(os.path.join(first, "dataset.txt")) == store.file_sha256(
        os.path.join(second, "dataset.txt")
    )
    header = [line for line in _lines(os.path.join(first, "dataset.txt")) if line.startswith("# config")]
    assert all('"jobs"' not in line and '"out_dir"' not in line for line in header)


def test_zero_repetitions_write_header_only(write_config, tmp_path):
    config = write_config({**SMALL, "repetitions": 0})
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", config, "--out", out]) == 0
    path = os.path.join(out, "dataset.txt")
    assert all(line.startswith("#") for line in _lines(path))
    assert len(DatasetStore().read_dataset(path)) == 0
    assert main(["estimate", path, "--out", out]) == 3


def test_exit_codes(write_config, tmp_path):
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", write_config({"load_probability": 2}), "--out", out]) == 2
    assert main(["estimate", str(tmp_path / "missing.txt"), "--out", out]) == 3

    dark = write_config({**SMALL, "repetitions": 10, "prepare_up_probability": 0.0, "detection_false_positive": 0.0})
    assert main(["simulate", "--config", dark, "--out", out]) == 0
    assert main(["estimate", os.path.join(out, "dataset.txt"), "--out", out]) == 4


def test_small_grid_simulates_but_cannot_assemble_default_pattern(write_config, tmp_path):
    config = write_config({"grid_rows": 2, "grid_cols": 3, "repetitions": 1})
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", config, "--out", out]) == 0
    assert main(["rearrange", "--config", config, "--out", out]) == 2


def test_rearrange(write_config, tmp_path):
    config = write_config({
        "grid_rows": 5, "grid_cols": 5, "pattern_rect": [1, 1, 2, 2],
        "load_probability": 1.0, "retention_probability": 1.0, "assembly_cycles": 3,
    })
    out = str(tmp_path / "out")
    assert main(["rearrange", "--config", config, "--out", out]) == 0
    summary = _lines(os.path.join(out, "assembly_summary.txt"))
    assert "duty_cycle=1.000000" in summary
    plan = _lines(os.path.join(out, "assembly_plan.txt"))
    assert plan[0].startswith("# config_sha256=")
    assert plan[-1] == "total_length_um=0.000 moves=0"


def test_scan(write_config, tmp_path):
    config = write_config({**SMALL, "repetitions": 87})
    out = str(tmp_path / "out")
    assert main(["scan", "--config", config, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "scan_dataset.txt"))
    summary = "\n".join(_lines(os.path.join(out, "scan_summary.txt")))
    assert "scan_gradient_nT_per_um=" in summary
