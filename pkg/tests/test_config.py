import json

import pytest

from vlatrainer.errors import ConfigError
from vlatrainer.utils.config import RunConfig, load_run_config, parse_override
from vlatrainer.utils.logging_config import setup_logging


def test_defaults():
    config = RunConfig()

    assert config.ppo.gamma == 0.99
    assert config.ppo.lr == 2e-5
    assert config.ppo.temperature == 1.5
    assert config.ppo.num_envs == 16
    assert config.rprm.beta == 0.1
    assert config.curriculum.tau == 0.25
    assert config.ppo.value_clip is None
    assert config.shard_count() == 4


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_flat({"ppo.learning_rate": 1e-3})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"ppo.nope": 1})


def test_invalid_value_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_flat({"ppo.clip_eps": 1.5})


def test_flat_round_trip():
    config = RunConfig.from_flat({"seed": 3, "ppo.lr": 1e-4, "suite.suites": ["goal"]})

    assert RunConfig.from_flat(config.to_flat()) == config


def test_parse_override():
    assert parse_override("ppo.lr=2e-4") == ("ppo.lr", 0.0002)
    assert parse_override("tag=ablation") == ("tag", "ablation")
    assert parse_override("curriculum.uniform=true") == ("curriculum.uniform", True)
    with pytest.raises(ConfigError):
        parse_override("ppo.lr")


@pytest.mark.parametrize("overrides, tag", [
    ({}, "default"),
    ({"rprm.beta": 0.0}, "no-rprm"),
    ({"curriculum.uniform": True}, "no-curriculum"),
    ({"ppo.warmup_iters": 0, "ppo.temperature": 1.0}, "warmup0+temp1.0"),
    ({"tag": "mine", "rprm.beta": 0.0}, "mine"),
])
def test_run_tag(overrides, tag):
    assert RunConfig().with_overrides(overrides).run_tag() == tag


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert RunConfig().digest() != RunConfig().with_overrides({"seed": 1}).digest()


def test_load_from_file_with_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"seed": 4, "ppo.iterations": 2}))

    config = load_run_config(path, {"ppo.iterations": 7})

    assert (config.seed, config.ppo.iterations) == (4, 7)


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")

    with pytest.raises(ConfigError):
        load_run_config(path)


def test_setup_logging_rejects_unknown_level():
    with pytest.raises(ConfigError):
        setup_logging("chatty")
