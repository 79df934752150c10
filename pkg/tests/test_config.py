import json

import pytest
from pydantic import ValidationError

from tempoaudio.config import PipelineConfig, load_config


def test_defaults_match_desk_scale():
    cfg = PipelineConfig()
    assert cfg.simulate.split_sizes == (500, 40, 20)
    assert cfg.train.steps == 50 and cfg.generate.guidance_scale == 3.0
    t = cfg.train_config()
    assert t.batch_size == 16 and t.cond_dropout == 0.1 and t.seed == 0
    assert cfg.sim_config().master_seed == 0


def test_yaml_and_json(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 4\ntrain:\n  epochs: 3\n")
    (tmp_path / "c.json").write_text(json.dumps({"seed": 4, "train": {"epochs": 3}}))
    a, b = load_config(tmp_path / "c.yaml"), load_config(tmp_path / "c.json")
    assert a == b and a.train_config().epochs == 3 and a.train_config().seed == 4
    assert a.digest() == b.digest()


def test_unknown_keys_rejected(tmp_path):
    (tmp_path / "c.yaml").write_text("trian:\n  epochs: 3\n")
    with pytest.raises(ValidationError):
        load_config(tmp_path / "c.yaml")


def test_invalid_values_rejected():
    with pytest.raises(ValidationError):
        PipelineConfig.model_validate({"train": {"cond_dropout": 1.5}})


def test_empty_file(tmp_path):
    (tmp_path / "c.yaml").write_text("")
    assert load_config(tmp_path / "c.yaml") == PipelineConfig()


def test_canonical_json_stable():
    assert PipelineConfig().canonical_json() == PipelineConfig().canonical_json()
    assert PipelineConfig(seed=1).digest() != PipelineConfig().digest()
