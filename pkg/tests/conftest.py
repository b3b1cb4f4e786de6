import json

import numpy as np
import pytest

from acoustic_pretrain.config import ExperimentConfig
from acoustic_pretrain.nn.network import desk_netspec

def micro_config_dict(output_dir) -> dict:
  """
  A configuration small enough to run the whole pipeline in seconds.
  """
  return {
    "corpus": {
      "n_speakers": 3,
      "configs_per_speaker": 2,
      "utterances_per_config": 2,
      "utterance_seconds": [0.6, 0.8],
      "main_speakers_per_split": [2, 1, 1],
      "bonafide_per_speaker": 2,
      "spoof_ratio": 1.0,
    },
    "pairs": {"pairs_per_speaker": 4, "crop_frames": 16},
    "net": {
      "conv1_channels": 2,
      "block_channels": [2, 4],
      "time_strides": [2, 2],
      "freq_strides": [4, 4],
      "embedding_dim": 8,
      "crop_frames": 12,
    },
    "training": {
      "pre_epochs": 2,
      "main_epochs": 2,
      "pre_batch": 4,
      "main_batch": 4,
      "eval_batch": 2,
      "sweep_main_epochs": 1,
    },
    "seeds": [0],
    "output_dir": str(output_dir),
  }

@pytest.fixture
def micro_config(tmp_path) -> ExperimentConfig:
  config = ExperimentConfig.from_dict(micro_config_dict(tmp_path / "run"))
  config.validate()
  return config

@pytest.fixture
def small_config(tmp_path) -> ExperimentConfig:
  """
  The micro configuration with enough main-training data and epochs for a
  random-init network to learn the task.
  """
  data = micro_config_dict(tmp_path / "run")
  data["corpus"].update({
    "main_speakers_per_split": [4, 2, 2],
    "bonafide_per_speaker": 4,
    "utterance_seconds": [0.8, 1.0],
  })
  data["training"].update({"main_epochs": 8, "main_lr": 3e-3, "main_batch": 8})
  config = ExperimentConfig.from_dict(data)
  config.validate()
  return config

@pytest.fixture
def micro_config_file(tmp_path):
  path = tmp_path / "micro.json"
  path.write_text(json.dumps(micro_config_dict(tmp_path / "run")), encoding="utf-8")
  return path

def tiny_spec(head: bool = True):
  """
  Every layer type, few enough parameters for element-wise gradient checks.
  """
  return desk_netspec(
    n_frames=8,
    n_bins=9,
    conv1_channels=2,
    block_channels=(2, 3),
    embedding_dim=4,
    head=head,
  )

@pytest.fixture
def rng() -> np.random.Generator:
  return np.random.default_rng(1234)
