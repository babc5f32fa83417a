import json

import pytest

from shelfnet.config import ExperimentConfig, config_from_dict, load_config
from shelfnet.errors import ConfigError


def test_defaults_build():
    cfg = config_from_dict({})
    assert cfg.variant == "shelfnet" and cfg.backbone == "mini"
    net = cfg.net()
    assert net.graph.meta["num_classes"] == 4


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown config field 'variannt'"):
        config_from_dict({"variannt": "shelfnet"})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="training.base_lrr"):
        config_from_dict({"training": {"base_lrr": 0.1}})


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="wrong type"):
        config_from_dict({"num_classes": "four"})


def test_spec_constraints_checked_at_load():
    with pytest.raises(ConfigError):
        config_from_dict({"channels": [8, 16, 32, 65]})
    with pytest.raises(ConfigError):
        config_from_dict({"training": {"total_iter": 0}})
    with pytest.raises(ConfigError):
        config_from_dict({"backbone": "resnet7"})
    with pytest.raises(ConfigError):
        config_from_dict({"dtype": "float16"})


def test_input_size_scalar_expands():
    cfg = config_from_dict({"input_size": 96})
    assert cfg.input_size == (96, 96)


def test_roundtrip_idempotent():
    cfg = config_from_dict({"variant": "segnet", "training": {"base_lr": 0.01}})
    doc = cfg.to_json_dict()
    cfg2 = config_from_dict(doc)
    assert cfg2.to_json_dict() == doc


def test_file_loading_and_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"variant": "segnet", "num_classes": 5}))
    cfg = load_config(str(path), {"num_classes": 6, "training.total_iter": 7})
    assert cfg.variant == "segnet"
    assert cfg.num_classes == 6
    assert cfg.training.total_iter == 7


def test_bad_json_reports_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"variant": }')
    with pytest.raises(ConfigError, match="line 1"):
        load_config(str(path))


def test_missing_file_reported():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/exp.json")


def test_directory_dataset_requires_dir():
    cfg = config_from_dict({"dataset": {"kind": "directory"}})
    with pytest.raises(ConfigError, match="dataset.dir"):
        cfg.train_source()
