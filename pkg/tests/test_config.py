"""Configuration dataclasses: validation rules, strict JSON parsing, and the
desk profile."""
import json

import pytest

from crossseg.config import (AugmentConfig, CliConfig, DatasetSpec,
                             ModelConfig, TrainConfig, config_from_dict,
                             config_to_dict, dataclass_from_dict, desk_config,
                             load_config)
from crossseg.errors import ConfigError


def test_defaults_validate():
    for cls in (ModelConfig, TrainConfig, DatasetSpec, AugmentConfig, CliConfig):
        cls().validate()


@pytest.mark.parametrize("kwargs", [
    {"input_size": 60},            # not a multiple of 32
    {"input_size": 0},
    {"channels": (8, 16, 32)},     # needs four stages
    {"channels": (8, 16, 32, 0)},
    {"state_size": 0},
    {"shuffle_groups": 0},
    {"shuffle_groups": 3},         # must divide 2*c for every stage width
    {"attention_reduction": 0},
    {"attention": "se"},
])
def test_model_config_rejections(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs).validate()


@pytest.mark.parametrize("kwargs", [
    {"epochs": 0}, {"batch_size": 0}, {"lr": 0.0}, {"lr": -1.0},
    {"lr_half_period": 0}, {"weight_decay": -0.1},
    {"head_weights": (1.0, 1.0)}, {"head_weights": (1.0, 1.0, 1.0, -1.0)},
    {"grad_clip": 0.0}, {"max_steps": 0},
])
def test_train_config_rejections(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs).validate()


@pytest.mark.parametrize("kwargs", [
    {"count": 0}, {"image_size": 4}, {"lesion_count": (0, 2)},
    {"lesion_count": (3, 2)}, {"lesion_radius": (0.0, 0.3)},
    {"lesion_radius": (0.3, 0.6)}, {"texture_noise": -0.1}, {"edge_blur": -1.0},
])
def test_dataset_spec_rejections(kwargs):
    with pytest.raises(ConfigError):
        DatasetSpec(**kwargs).validate()


@pytest.mark.parametrize("kwargs", [
    {"flip_prob": -0.1}, {"flip_prob": 1.5}, {"rotation_degrees": -5.0},
    {"brightness": -0.2}, {"contrast": -0.2},
])
def test_augment_config_rejections(kwargs):
    with pytest.raises(ConfigError):
        AugmentConfig(**kwargs).validate()


def test_roundtrip_through_dict():
    cfg = desk_config()
    doc = config_to_dict(cfg)
    back = config_from_dict(doc)
    assert back == cfg
    # the document is JSON-serializable as-is
    assert config_from_dict(json.loads(json.dumps(doc))) == cfg


def test_channels_coerced_to_tuple():
    cfg = config_from_dict({"model": {"channels": [4, 8, 16, 32], "input_size": 32}})
    assert cfg.model.channels == (4, 8, 16, 32)
    assert isinstance(cfg.model.channels, tuple)


def test_unknown_section_and_key_are_rejected_by_name():
    with pytest.raises(ConfigError, match="optimizer"):
        config_from_dict({"optimizer": {}})
    with pytest.raises(ConfigError, match="learning_rate"):
        config_from_dict({"train": {"learning_rate": 1e-3}})
    with pytest.raises(ConfigError):
        config_from_dict([1, 2, 3])
    with pytest.raises(ConfigError):
        dataclass_from_dict(TrainConfig, {"epochs": "ten"})


def test_partial_sections_start_from_class_defaults():
    cfg = config_from_dict({"train": {"epochs": 3}})
    assert cfg.train.epochs == 3
    assert cfg.train.lr == TrainConfig().lr
    assert cfg.model == ModelConfig()


def test_load_config_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ConfigError):
        load_config(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"train": {"epochs": 2}}))
    assert load_config(good).train.epochs == 2


def test_desk_profile_is_self_consistent():
    cfg = desk_config()
    assert cfg.model.input_size == cfg.dataset.image_size == 64
    assert cfg.train.epochs == 10
    assert cfg.train.lr == pytest.approx(5e-3)
    assert cfg.augment.rotation_degrees == 0.0
    cfg.validate()


def test_full_scale_train_defaults():
    cfg = TrainConfig()
    assert cfg.epochs == 150
    assert cfg.lr == pytest.approx(1e-4)
    assert cfg.lr_half_period == 50
    assert cfg.head_weights == (1.0, 1.0, 1.0, 1.0)
