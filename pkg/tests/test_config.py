import json

import pytest

from acoustic_pretrain.config import ExperimentConfig, load_config, parse_override, write_resolved
from acoustic_pretrain.errors import ConfigError

def test_defaults_validate():
  config = ExperimentConfig()
  config.validate()

  assert config.frame_params().n_bins == 129
  assert config.pair_budget(0).positives_per_speaker == 50
  assert config.net_spec().input_shape == (120, 129, 1)
  assert config.corpus_path.as_posix() == "runs/default/corpus"

def test_unknown_keys_are_rejected():
  with pytest.raises(ConfigError, match="training.mystery"):
    ExperimentConfig.from_dict({"training": {"mystery": 1}})
  with pytest.raises(ConfigError):
    ExperimentConfig.from_dict({"bogus": 1})

def test_types_are_checked_and_ints_widen_to_floats():
  config = ExperimentConfig.from_dict({"training": {"main_lr": 1}})
  assert config.training.main_lr == 1.0

  with pytest.raises(ConfigError):
    ExperimentConfig.from_dict({"training": {"main_epochs": "ten"}})
  with pytest.raises(ConfigError):
    ExperimentConfig.from_dict({"pairs": {"resample_each_epoch": 1}})

def test_parse_override():
  assert parse_override("training.main_lr=1e-4") == ("training.main_lr", 1e-4)
  assert parse_override("training.freeze_upto=block2") == ("training.freeze_upto", "block2")
  assert parse_override("net.block_channels=[4,8]") == ("net.block_channels", [4, 8])
  with pytest.raises(ConfigError):
    parse_override("no-equals-sign")

def test_with_overrides_rejects_unknown_paths():
  with pytest.raises(ConfigError):
    ExperimentConfig().with_overrides({"training.nope": 1})

@pytest.mark.parametrize("override", [
  {"training.main_epochs": 0},
  {"training.pre_epochs": 101},
  {"training.main_batch": 0},
  {"training.pre_lr": 0.0},
  {"training.freeze_upto": "output"},
  {"training.freeze_upto": "no-such-layer"},
  {"features.fft_size": 128},
  {"features.cache_utterances": -1},
  {"seeds": []},
])
def test_invalid_values_fail_validation(override):
  with pytest.raises(ConfigError):
    ExperimentConfig().with_overrides(override).validate()

def test_load_config_applies_file_overrides_and_seed(tmp_path):
  path = tmp_path / "c.json"
  path.write_text(json.dumps({"training": {"main_epochs": 3}}), encoding="utf-8")

  config = load_config(path, ["training.main_lr=0.001"], seed=9)

  assert config.training.main_epochs == 3
  assert config.training.main_lr == 0.001
  assert config.seed == 9
  assert config.corpus_spec().seed == 9

def test_load_config_errors(tmp_path):
  with pytest.raises(ConfigError):
    load_config(tmp_path / "missing.json")
  bad = tmp_path / "bad.json"
  bad.write_text("{not json", encoding="utf-8")
  with pytest.raises(ConfigError):
    load_config(bad)

def test_resolved_config_roundtrips(tmp_path, micro_config):
  path = write_resolved(micro_config, tmp_path / "out")

  reloaded = load_config(path)

  assert reloaded == micro_config
