import json

import numpy as np
import pytest

from cipher_vit.config import RunConfig, config_from_dict, load_config
from cipher_vit.errors import ConfigError
from cipher_vit.vit import TOY_CONFIG


def test_empty_config_gives_defaults():
    cfg = config_from_dict({})
    assert cfg.vit.image_size == 224
    assert cfg.vit.embed_dim == 768
    assert cfg.lora.rank == 8
    assert cfg.train.lr == 1e-4
    assert cfg.preprocess.target_size == 224


def test_partial_sections():
    cfg = config_from_dict({"train": {"lr": 0.01, "epochs": 2}})
    assert cfg.train.lr == 0.01
    assert cfg.train.epochs == 2
    assert cfg.train.batch_size == 32  # untouched default
    assert cfg.vit.depth == 12


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"optimizer": {}})
    assert "optimizer" in str(err.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"train": {"learning_rate": 0.1}})
    assert "learning_rate" in str(err.value)
    assert "train" in str(err.value)


def test_non_object_section_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"train": [1, 2]})


def test_json_lists_become_tuples():
    cfg = config_from_dict({"lora": {"targets": ["q"]},
                            "preprocess": {"mean": [0.1, 0.2, 0.3]}})
    assert cfg.lora.targets == ("q",)
    assert cfg.preprocess.mean == (0.1, 0.2, 0.3)


def test_roundtrip_through_dict():
    cfg = config_from_dict({"vit": {"image_size": 32, "patch_size": 8,
                                    "embed_dim": 32, "num_heads": 4,
                                    "depth": 2, "mlp_dim": 64},
                            "train": {"precision": "f64"}})
    again = config_from_dict(cfg.to_dict())
    assert again == cfg
    json.dumps(cfg.to_dict())  # serializable as-is


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"seed": 9}}))
    cfg = load_config(path)
    assert cfg.train.seed == 9


def test_load_config_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_toy_swap(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"vit": {"image_size": 224}}))
    cfg = load_config(path, toy=True)
    assert cfg.vit == TOY_CONFIG
    assert cfg.vit.image_size == 32


def test_shipped_configs_parse():
    from pathlib import Path
    configs = Path(__file__).parent.parent / "configs"
    b16 = load_config(configs / "vit_b16.json")
    assert b16.vit.embed_dim == 768
    assert b16.train.epochs == 200
    toy = load_config(configs / "toy.json")
    assert toy.vit == TOY_CONFIG
    tiny = load_config(configs / "tiny_gradcheck.json")
    assert tiny.vit.embed_dim == 16
    assert tiny.train.dtype == np.float64


def test_replace_section():
    cfg = config_from_dict({})
    swapped = cfg.replace(vit=TOY_CONFIG)
    assert isinstance(swapped, RunConfig)
    assert swapped.vit == TOY_CONFIG
    assert swapped.train == cfg.train
