from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from .errors import ConfigError, ContractError
from .models import CorpusSpec, FrameParams, MainCorpusSpec, PairBudget
from .nn.network import NetSpec, desk_netspec

MAX_EPOCHS = 100

@dataclass
class CorpusConfig:
  n_speakers: int = 20
  configs_per_speaker: int = 4
  utterances_per_config: int = 3
  utterance_seconds: list[float] = field(default_factory=lambda: [6.5, 9.0])
  sample_rate: int = 4000
  dev_speaker_fraction: float = 0.2
  main_speakers_per_split: list[int] = field(default_factory=lambda: [8, 4, 4])
  """
  Main-training speakers in the train, dev and eval splits.
  """
  bonafide_per_speaker: int = 4
  spoof_ratio: float = 9.0
  workers: int = 1

@dataclass
class FeatureConfig:
  fft_size: int = 256
  window_ms: float = 50.0
  shift_ms: float = 30.0
  window_fn: str = "hann"
  log_compress: bool = False
  cache_utterances: int = 0
  """
  Spectrograms kept in memory per corpus; 0 keeps every utterance.
  """

@dataclass
class PairsConfig:
  pairs_per_speaker: int = 100
  target_fraction: float = 0.5
  crop_frames: int = 200
  resample_each_epoch: bool = False

@dataclass
class NetConfig:
  conv1_channels: int = 4
  block_channels: list[int] = field(default_factory=lambda: [8, 16, 32])
  time_strides: list[int] = field(default_factory=lambda: [2, 2, 2])
  freq_strides: list[int] = field(default_factory=lambda: [2, 2, 2])
  embedding_dim: int = 64
  negative_slope: float = 0.3
  crop_frames: int = 120

@dataclass
class TrainingConfig:
  pre_lr: float = 1e-4
  main_lr: float = 5e-4
  pre_batch: int = 16
  main_batch: int = 32
  pre_epochs: int = 3
  main_epochs: int = 8
  freeze_upto: Optional[Union[int, str]] = None
  pretrain_speaker_scale: float = 1.0
  """
  Fraction (or multiple) of the configured pre-training speakers used.
  """
  sweep: bool = False
  sweep_main_epochs: int = 2
  eval_batch: int = 8

_SECTIONS = {
  "corpus": CorpusConfig,
  "features": FeatureConfig,
  "pairs": PairsConfig,
  "net": NetConfig,
  "training": TrainingConfig,
}

@dataclass
class ExperimentConfig:
  """
  Every knob of a run. Loaded from one JSON document; missing keys keep
  their defaults.
  """

  corpus: CorpusConfig = field(default_factory=CorpusConfig)
  features: FeatureConfig = field(default_factory=FeatureConfig)
  pairs: PairsConfig = field(default_factory=PairsConfig)
  net: NetConfig = field(default_factory=NetConfig)
  training: TrainingConfig = field(default_factory=TrainingConfig)
  seed: int = 0
  seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
  output_dir: str = "runs/default"
  corpus_dir: Optional[str] = None

  # --- Serialization ---

  def to_dict(self) -> dict[str, Any]:
    return asdict(self)

  @classmethod
  def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
      raise ConfigError("config document must be a JSON object")
    top = _check_keys(cls, data, "")
    for name, section_cls in _SECTIONS.items():
      section = data.get(name, {})
      if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be an object")
      top[name] = section_cls(**_check_keys(section_cls, section, f"{name}."))
    return cls(**top)

  def with_overrides(self, overrides: dict[str, Any]) -> ExperimentConfig:
    data = self.to_dict()
    for key, value in overrides.items():
      _set_dotted(data, key, value)
    return ExperimentConfig.from_dict(data)

  # --- Derived objects ---

  @property
  def output_path(self) -> Path:
    return Path(self.output_dir)

  @property
  def corpus_path(self) -> Path:
    return Path(self.corpus_dir) if self.corpus_dir else self.output_path / "corpus"

  def corpus_spec(self) -> CorpusSpec:
    c = self.corpus
    return CorpusSpec(
      n_speakers=c.n_speakers,
      configs_per_speaker=c.configs_per_speaker,
      utterances_per_config=c.utterances_per_config,
      utterance_seconds=(float(c.utterance_seconds[0]), float(c.utterance_seconds[1])),
      sample_rate=c.sample_rate,
      seed=self.seed,
      dev_speaker_fraction=c.dev_speaker_fraction,
      main=MainCorpusSpec(
        speakers_per_split=tuple(c.main_speakers_per_split),
        bonafide_per_speaker=c.bonafide_per_speaker,
        spoof_ratio=c.spoof_ratio,
      ),
    )

  def frame_params(self) -> FrameParams:
    f = self.features
    return FrameParams(
      fft_size=f.fft_size,
      window_ms=f.window_ms,
      shift_ms=f.shift_ms,
      window_fn=f.window_fn,
      log_compress=f.log_compress,
    )

  def pair_budget(self, seed: int) -> PairBudget:
    return PairBudget(self.pairs.pairs_per_speaker, self.pairs.target_fraction, seed)

  def net_spec(self, head: bool = True) -> NetSpec:
    n = self.net
    return desk_netspec(
      n_frames=n.crop_frames,
      n_bins=self.features.fft_size // 2 + 1,
      conv1_channels=n.conv1_channels,
      block_channels=tuple(n.block_channels),
      time_strides=tuple(n.time_strides),
      freq_strides=tuple(n.freq_strides),
      embedding_dim=n.embedding_dim,
      negative_slope=n.negative_slope,
      head=head,
    )

  # --- Validation ---

  def validate(self) -> None:
    """
    Checks every constraint before any work starts; raises ConfigError.
    """
    t = self.training
    if t.pre_batch < 1 or t.main_batch < 1 or t.eval_batch < 1:
      raise ConfigError("batch sizes must be >= 1")
    if t.pre_lr <= 0 or t.main_lr <= 0:
      raise ConfigError("learning rates must be > 0")
    for name in ("pre_epochs", "main_epochs", "sweep_main_epochs"):
      value = getattr(t, name)
      if not 1 <= value <= MAX_EPOCHS:
        raise ConfigError(f"training.{name} must lie in [1, {MAX_EPOCHS}], got {value}")
    if t.pretrain_speaker_scale <= 0:
      raise ConfigError("training.pretrain_speaker_scale must be > 0")
    if len(self.corpus.utterance_seconds) != 2:
      raise ConfigError("corpus.utterance_seconds must be [min, max]")
    if len(self.corpus.main_speakers_per_split) != 3:
      raise ConfigError("corpus.main_speakers_per_split must list train, dev and eval counts")
    if not 0.0 <= self.corpus.dev_speaker_fraction < 1.0:
      raise ConfigError("corpus.dev_speaker_fraction must lie in [0, 1)")
    if self.corpus.workers < 1:
      raise ConfigError("corpus.workers must be >= 1")
    if self.features.cache_utterances < 0:
      raise ConfigError("features.cache_utterances must be >= 0")
    if self.pairs.crop_frames < 1 or self.net.crop_frames < 1:
      raise ConfigError("crop lengths must be >= 1")
    if not self.seeds:
      raise ConfigError("seeds must list at least one seed")

    try:
      self.corpus_spec()
      self.frame_params().check_rate(self.corpus.sample_rate)
      self.pair_budget(self.seed)
      spec = self.net_spec()
    except ContractError as e:
      raise ConfigError(str(e)) from e
    if t.freeze_upto is not None:
      idx = spec.layer_index(t.freeze_upto)
      if idx > spec.embedding_layer_index:
        raise ConfigError("training.freeze_upto must not reach past the embedding layer")

def _default_of(f: Any) -> Any:
  if f.default_factory is not MISSING:
    return f.default_factory()
  return f.default

def _coerce(key: str, value: Any, default: Any) -> Any:
  if default is None or value is None:
    return value
  if isinstance(default, bool):
    ok = isinstance(value, bool)
  elif isinstance(default, int):
    ok = isinstance(value, int) and not isinstance(value, bool)
  elif isinstance(default, float):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    value = float(value) if ok else value
  else:
    ok = isinstance(value, type(default))
  if not ok:
    raise ConfigError(f"config key '{key}' expects {type(default).__name__}, got {value!r}")
  return value

def _check_keys(cls: type, data: dict[str, Any], prefix: str) -> dict[str, Any]:
  known = {f.name: f for f in fields(cls)}
  unknown = sorted(set(data) - set(known))
  if unknown:
    raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
  return {
    k: _coerce(prefix + k, v, _default_of(known[k]))
    for k, v in data.items()
    if k not in _SECTIONS
  }

def _set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
  parts = key.split(".")
  node = data
  for part in parts[:-1]:
    child = node.get(part)
    if not isinstance(child, dict):
      raise ConfigError(f"unknown config key '{key}'")
    node = child
  if parts[-1] not in node:
    raise ConfigError(f"unknown config key '{key}'")
  node[parts[-1]] = value

def parse_override(text: str) -> tuple[str, Any]:
  """
  'dotted.key=value'; the value is parsed as JSON and taken verbatim as a
  string when that fails.
  """
  key, sep, raw = text.partition("=")
  if not sep or not key.strip():
    raise ConfigError(f"override must look like key=value, got '{text}'")
  try:
    value = json.loads(raw)
  except json.JSONDecodeError:
    value = raw
  return key.strip(), value

def load_config(
  path: Optional[str | Path] = None,
  overrides: Optional[list[str]] = None,
  seed: Optional[int] = None,
) -> ExperimentConfig:
  data: dict[str, Any] = {}
  if path is not None:
    p = Path(path)
    if not p.is_file():
      raise ConfigError(f"config file not found: {p}")
    try:
      data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
      raise ConfigError(f"{p}: invalid JSON: {e}") from e

  config = ExperimentConfig.from_dict(data)
  if overrides:
    config = config.with_overrides(dict(parse_override(o) for o in overrides))
  if seed is not None:
    config = config.with_overrides({"seed": seed})
  config.validate()
  return config

def write_resolved(config: ExperimentConfig, out_dir: str | Path) -> Path:
  p = Path(out_dir) / "config.resolved.json"
  p.parent.mkdir(parents=True, exist_ok=True)
  p.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
  return p
