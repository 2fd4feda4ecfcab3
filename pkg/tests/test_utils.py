import json
import math

import numpy as np
import pytest

from utils import (
    NumericalFailure, RunLogger, SeldValidationError, chunked, format_duration, load_flat_config,
    merge_config, parse_override, save_json, section,
)


# =========================
# 配置
# =========================

def test_merge_config_layers_and_unknown_keys():
    defaults = {"a.x": 1, "a.y": 2}
    assert merge_config(defaults, {"a.x": 3}, None, {"a.y": None}) == {"a.x": 3, "a.y": 2}
    with pytest.raises(SeldValidationError) as info:
        merge_config(defaults, {"a.z": 0})
    assert info.value.field == "a.z"


@pytest.mark.parametrize("item, expected", [
    ("train.lr=0.01", ("train.lr", 0.01)),
    ("model.kind=dualq", ("model.kind", "dualq")),
    ("model.time_pooling=[2,1]", ("model.time_pooling", [2, 1])),
    ("data.normalize_6dof=true", ("data.normalize_6dof", True)),
])
def test_parse_override(item, expected):
    assert parse_override(item) == expected


def test_parse_override_needs_equals():
    with pytest.raises(SeldValidationError):
        parse_override("train.lr")


def test_load_flat_config_rejects_nested(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"model": {"kind": "dualq"}}), encoding="utf-8")
    with pytest.raises(SeldValidationError) as info:
        load_flat_config(str(path))
    assert info.value.field == "model"
    assert load_flat_config(None) == {}


def test_section():
    assert section({"train.lr": 1, "model.kind": "real"}, "train") == {"lr": 1}


# =========================
# 其它工具
# =========================

def test_save_json_is_sorted_and_handles_numpy(tmp_path):
    path = tmp_path / "out" / "report.json"
    save_json(str(path), {"b": np.float32(1.5), "a": np.arange(3), "c": math.inf})
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [0, 1, 2], "b": 1.5, "c": "inf"}


def test_run_logger_writes_json_events(tmp_path):
    run_logger = RunLogger(str(tmp_path), "unit")
    run_logger.log_event("epoch", {"epoch": 1, "loss": np.float64(0.25)})
    run_logger.close()
    logs = json.loads(open(run_logger.json_log_file, encoding="utf-8").read())
    assert logs[0]["kind"] == "epoch"
    assert logs[0]["payload"] == {"epoch": 1, "loss": 0.25}


@pytest.mark.parametrize("seconds, expected", [
    (5.0, "5.00秒"),
    (125.5, "2分钟5.50秒"),
    (3725.0, "1小时2分钟5.00秒"),
])
def test_format_duration(seconds, expected):
    assert format_duration(seconds) == expected


def test_chunked():
    assert list(chunked([1, 2, 3, 4, 5], 2)) == [[1, 2], [3, 4], [5]]


def test_numerical_failure_exit_code():
    error = NumericalFailure("boom", epoch=3, batch=1, term="doa_loss")
    assert error.exit_code == 2
    assert (error.epoch, error.batch, error.term) == (3, 1, "doa_loss")
    assert SeldValidationError("bad").exit_code == 1
