import json

import pytest

from csnet.config import (
    DataSource,
    EvalSettings,
    RunConfig,
    load_data,
    load_run_config,
    save_run_config,
)
from csnet.episodes import SynthFamilyConfig
from csnet.errors import ConfigError
from csnet.storage import save_dataset


class TestRunConfig:
    def test_round_trip(self, tiny_config_file, tmp_path):
        config = load_run_config(tiny_config_file)
        again = load_run_config(save_run_config(config, tmp_path / "copy" / "config.json"))
        assert again.to_dict() == config.to_dict()
        assert again.train == config.train
        assert again.ablation.shots == (1, 2)

    def test_defaults(self, tiny_run_dict):
        del tiny_run_dict["aeml"]
        config = RunConfig.from_dict(tiny_run_dict)
        assert config.aeml.t == 5
        assert config.aeml.mode == "prob_avg"

    def test_unknown_section(self, tiny_run_dict):
        tiny_run_dict["plots"] = {}
        with pytest.raises(ConfigError, match="plots"):
            RunConfig.from_dict(tiny_run_dict)

    def test_unknown_eval_key(self, tiny_run_dict):
        tiny_run_dict["eval"]["ways"] = 5
        with pytest.raises(ConfigError, match="ways"):
            RunConfig.from_dict(tiny_run_dict)

    def test_missing_train(self, tiny_run_dict):
        del tiny_run_dict["train"]
        with pytest.raises(ConfigError):
            RunConfig.from_dict(tiny_run_dict)

    def test_eval_shot_must_match_support(self, tiny_run_dict):
        tiny_run_dict["eval"]["shot"] = 5
        with pytest.raises(ConfigError, match="must match"):
            RunConfig.from_dict(tiny_run_dict).validate()

    def test_bypassed_support_allows_any_shot(self, tiny_run_dict):
        tiny_run_dict["eval"]["shot"] = 5
        tiny_run_dict["train"]["bypass_support"] = True
        RunConfig.from_dict(tiny_run_dict).validate()

    def test_dataset_capacity(self, tiny_run_dict, tiny_dataset):
        tiny_run_dict["eval"]["way"] = 7
        tiny_run_dict["train"]["bypass_support"] = True
        with pytest.raises(ConfigError, match="test split has 6 classes"):
            RunConfig.from_dict(tiny_run_dict).validate(tiny_dataset)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON"):
            load_run_config(path)

    @pytest.mark.parametrize(
        "section, key, value",
        [("eval", "episodes", 1), ("aeml", "t", 0), ("aeml", "mode", "median"),
         ("ablation", "shots", [0])],
    )
    def test_invalid_values(self, tiny_run_dict, section, key, value):
        tiny_run_dict[section][key] = value
        with pytest.raises(ConfigError):
            RunConfig.from_dict(tiny_run_dict).validate()


class TestDataSource:
    def test_synth(self, tiny_family):
        ds = load_data(DataSource("synth", tiny_family))
        assert len(ds) == 24

    def test_cache(self, tiny_dataset, tmp_path):
        path = save_dataset(tiny_dataset, tmp_path / "tiny.csds")
        assert len(load_data(DataSource("cache", path=str(path)))) == 24

    def test_cache_needs_path(self):
        with pytest.raises(ConfigError, match="path"):
            load_data(DataSource("cache"))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DataSource("imagenet").validate()

    def test_dict_round_trip(self):
        source = DataSource("synth", SynthFamilyConfig(dim=3, seed=4))
        assert DataSource.from_dict(json.loads(json.dumps(source.to_dict()))) == source


def test_eval_settings_split():
    with pytest.raises(ConfigError):
        EvalSettings(split="holdout").validate()
