import pytest
import yaml

from defog2refog.config import ConfigError, TrainConfig, load_config
from defog2refog.losses import LossWeights


def test_defaults_mirror_published_settings():
    c = TrainConfig()
    assert c.image_size == 512
    assert c.learning_rate == 2e-4
    assert c.batch_size == 1
    assert c.adam_betas == (0.5, 0.999)
    assert c.weights.as_tuple() == (10, 10, 8, 5, 2)
    assert c.gan_mode == "least_squares"


def test_all_problems_listed():
    raw = {"image_size": 30, "learning_rate": -1, "gan_mode": "wgan", "bogus": 1, "weights": {"gamma9": 1}}
    with pytest.raises(ConfigError) as err:
        TrainConfig.from_dict(raw)
    probs = err.value.problems
    assert len(probs) == 5
    for key in ("bogus", "weights", "image_size", "learning_rate", "gan_mode"):
        assert any(key in p for p in probs), key


def test_round_trip_dict():
    c = TrainConfig(image_size=64, weights=LossWeights(gamma5=0.5), adam_betas=(0.9, 0.99))
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_load_yaml_with_overrides(tmp_path):
    (tmp_path / "f").mkdir()
    (tmp_path / "c").mkdir()
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({"foggy_dir": str(tmp_path / "f"), "clear_dir": str(tmp_path / "c"), "image_size": 64}))
    c = load_config(path, iterations=7, seed=None)
    assert (c.image_size, c.iterations, c.seed) == (64, 7, 0)


def test_load_yaml_reports_every_problem(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({"foggy_dir": str(tmp_path / "missing"), "image_size": 33, "typo_key": 1}))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    probs = err.value.problems
    assert any("typo_key" in p for p in probs)
    assert any("image_size" in p for p in probs)
    assert any(str(tmp_path / "missing") in p for p in probs)
    assert any("clear_dir is required" in p for p in probs)


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        load_config("/nonexistent/cfg.yaml")


def test_pretrained_backend_needs_weights():
    assert any("perceptual_weights" in p for p in TrainConfig(perceptual_backend="pretrained_16layer").problems())
