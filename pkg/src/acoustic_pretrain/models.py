from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ContractError, ManifestError

class UtteranceClass(str, Enum):
  BONAFIDE = "bonafide"
  SPOOF = "spoof"

  @property
  def index(self) -> int:
    """
    Position of the class in the network's 2-logit output.
    """
    return 0 if self is UtteranceClass.BONAFIDE else 1

class Split(str, Enum):
  TRAIN = "train"
  DEV = "dev"
  EVAL = "eval"

# --- Audio and features ---

@dataclass(frozen=True)
class Waveform:
  samples: np.ndarray
  sample_rate: int

  def __post_init__(self) -> None:
    samples = np.asarray(self.samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
      raise ContractError("waveform must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(samples)):
      raise ContractError("waveform contains non-finite samples")
    if self.sample_rate <= 0:
      raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")
    object.__setattr__(self, "samples", samples)

  def __len__(self) -> int:
    return int(self.samples.size)

  @property
  def duration(self) -> float:
    return len(self) / self.sample_rate

  def rms(self) -> float:
    return float(np.sqrt(np.mean(self.samples * self.samples)))

@dataclass(frozen=True)
class FrameParams:
  fft_size: int = 2048
  window_ms: float = 50.0
  shift_ms: float = 30.0
  window_fn: str = "hann"
  log_compress: bool = False

  def __post_init__(self) -> None:
    if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
      raise ContractError(f"fft_size must be a power of two, got {self.fft_size}")
    if self.window_ms <= 0 or self.shift_ms <= 0:
      raise ContractError("window_ms and shift_ms must be positive")
    if self.shift_ms > self.window_ms:
      raise ContractError("shift_ms must not exceed window_ms")

  @property
  def n_bins(self) -> int:
    return self.fft_size // 2 + 1

  def window_length(self, sample_rate: int) -> int:
    return int(round(self.window_ms * sample_rate / 1000.0))

  def shift_length(self, sample_rate: int) -> int:
    return int(round(self.shift_ms * sample_rate / 1000.0))

  def check_rate(self, sample_rate: int) -> None:
    win = self.window_length(sample_rate)
    if win > self.fft_size:
      raise ContractError(
        f"window of {win} samples at {sample_rate} Hz does not fit fft_size {self.fft_size}"
      )
    if self.shift_length(sample_rate) < 1:
      raise ContractError(f"shift of {self.shift_ms} ms is below one sample at {sample_rate} Hz")

@dataclass(frozen=True)
class Spectrogram:
  """
  Magnitude spectrogram, frames x bins.
  """

  data: np.ndarray

  def __post_init__(self) -> None:
    data = np.asarray(self.data)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
      raise ContractError(f"spectrogram must be a non-empty frames x bins matrix, got {data.shape}")
    object.__setattr__(self, "data", data)

  @property
  def n_frames(self) -> int:
    return int(self.data.shape[0])

  @property
  def n_bins(self) -> int:
    return int(self.data.shape[1])

# --- Corpus ---

@dataclass(frozen=True)
class AcousticConfig:
  """
  One recording channel: impulse response, additive noise, band limit and gain.

  `noise_db` is the signal-to-noise ratio; None disables the noise term.
  """

  impulse_response: tuple[float, ...]
  noise_db: Optional[float]
  lowpass_hz: Optional[float]
  gain_db: float

  def __post_init__(self) -> None:
    taps = np.asarray(self.impulse_response, dtype=np.float64)
    if taps.size == 0 or taps.size > 256 or not np.all(np.isfinite(taps)):
      raise ContractError("impulse_response must hold 1..256 finite taps")
    if self.noise_db is not None and not 0.0 <= self.noise_db <= 60.0:
      raise ContractError(f"noise_db must lie in [0, 60], got {self.noise_db}")
    if self.lowpass_hz is not None and self.lowpass_hz <= 0.0:
      raise ContractError(f"lowpass_hz must be positive, got {self.lowpass_hz}")
    if not math.isfinite(self.gain_db):
      raise ContractError("gain_db must be finite")

  @classmethod
  def identity(cls) -> AcousticConfig:
    return cls(impulse_response=(1.0,), noise_db=None, lowpass_hz=None, gain_db=0.0)

  def taps(self) -> np.ndarray:
    return np.asarray(self.impulse_response, dtype=np.float64)

@dataclass(frozen=True)
class MainCorpusSpec:
  speakers_per_split: tuple[int, int, int] = (8, 4, 4)
  """
  Number of speakers in the train, dev and eval splits.
  """
  bonafide_per_speaker: int = 4
  spoof_ratio: float = 9.0

@dataclass(frozen=True)
class CorpusSpec:
  n_speakers: int = 24
  configs_per_speaker: int = 4
  utterances_per_config: int = 3
  utterance_seconds: tuple[float, float] = (6.5, 9.0)
  sample_rate: int = 8000
  seed: int = 0
  dev_speaker_fraction: float = 0.2
  main: MainCorpusSpec = field(default_factory=MainCorpusSpec)

  def __post_init__(self) -> None:
    counts = (self.n_speakers, self.configs_per_speaker, self.utterances_per_config)
    if min(counts) < 1:
      raise ContractError("corpus counts must all be >= 1")
    lo, hi = self.utterance_seconds
    if lo <= 0 or hi < lo:
      raise ContractError(f"utterance_seconds must be a positive range, got {self.utterance_seconds}")
    if self.sample_rate <= 0:
      raise ContractError("sample_rate must be positive")
    if min(self.main.speakers_per_split) < 1 or self.main.bonafide_per_speaker < 1:
      raise ContractError("main corpus counts must all be >= 1")
    if self.main.spoof_ratio < 0:
      raise ContractError("spoof_ratio must be non-negative")

@dataclass(frozen=True)
class ManifestEntry:
  utterance_id: str
  speaker_id: str
  config_id: str
  utt_class: UtteranceClass
  split: Split
  path: str
  """
  Path of the WAV file relative to the manifest root.
  """

  def to_row(self) -> list[str]:
    return [
      self.utterance_id,
      self.speaker_id,
      self.config_id,
      self.utt_class.value,
      self.split.value,
      self.path,
    ]

@dataclass
class Manifest:
  entries: list[ManifestEntry]
  root: Path

  def __post_init__(self) -> None:
    seen: set[str] = set()
    for e in self.entries:
      if e.utterance_id in seen:
        raise ManifestError(f"duplicate utterance id '{e.utterance_id}'")
      seen.add(e.utterance_id)
    self._by_id = {e.utterance_id: e for e in self.entries}

  def __len__(self) -> int:
    return len(self.entries)

  def __iter__(self):
    return iter(self.entries)

  def get(self, utterance_id: str) -> ManifestEntry:
    try:
      return self._by_id[utterance_id]
    except KeyError:
      raise ManifestError(f"unknown utterance id '{utterance_id}'") from None

  def resolve(self, entry: ManifestEntry) -> Path:
    return self.root / entry.path

  def for_split(self, split: Split) -> Manifest:
    return Manifest([e for e in self.entries if e.split is split], self.root)

  def speakers(self) -> list[str]:
    """
    Speaker ids in first-appearance order.
    """
    return list(dict.fromkeys(e.speaker_id for e in self.entries))

  def by_speaker(self) -> dict[str, list[ManifestEntry]]:
    groups: dict[str, list[ManifestEntry]] = {}
    for e in self.entries:
      groups.setdefault(e.speaker_id, []).append(e)
    return groups

  def with_speakers(self, speaker_ids: Iterable[str]) -> Manifest:
    keep = set(speaker_ids)
    return Manifest([e for e in self.entries if e.speaker_id in keep], self.root)

# --- Pairs ---

@dataclass(frozen=True)
class PairBudget:
  pairs_per_speaker: int = 100
  target_fraction: float = 0.5
  seed: int = 0

  def __post_init__(self) -> None:
    if self.pairs_per_speaker < 2:
      raise ContractError("pairs_per_speaker must be >= 2")
    if not 0.0 < self.target_fraction < 1.0:
      raise ContractError("target_fraction must lie in (0, 1)")

  @property
  def positives_per_speaker(self) -> int:
    return int(math.floor(self.target_fraction * self.pairs_per_speaker + 0.5))

@dataclass(frozen=True)
class SegmentPair:
  """
  Index form of a segment pair: the crops are materialized on demand.
  """

  speaker_id: str
  utt_a_id: str
  offset_a: int
  utt_b_id: str
  offset_b: int
  label: int

  def to_row(self) -> list[str]:
    return [self.utt_a_id, str(self.offset_a), self.utt_b_id, str(self.offset_b), str(self.label)]

# --- Scores ---

@dataclass(frozen=True)
class ScoreRecord:
  trial_id: str
  truth: UtteranceClass
  score: float
  """
  Higher means more bona-fide.
  """

@dataclass
class ScoreSet:
  records: list[ScoreRecord]
  failures: int = 0

  def __post_init__(self) -> None:
    seen: set[str] = set()
    for r in self.records:
      if r.trial_id in seen:
        raise ContractError(f"duplicate trial id '{r.trial_id}'")
      if not math.isfinite(r.score):
        raise ContractError(f"trial '{r.trial_id}' has a non-finite score")
      seen.add(r.trial_id)

  def __len__(self) -> int:
    return len(self.records)

  def scores_of(self, truth: UtteranceClass) -> np.ndarray:
    return np.array([r.score for r in self.records if r.truth is truth], dtype=np.float64)

  @classmethod
  def from_arrays(cls, bonafide: Iterable[float], spoof: Iterable[float]) -> ScoreSet:
    records = [
      ScoreRecord(f"b{i:06d}", UtteranceClass.BONAFIDE, float(s)) for i, s in enumerate(bonafide)
    ]
    records += [
      ScoreRecord(f"s{i:06d}", UtteranceClass.SPOOF, float(s)) for i, s in enumerate(spoof)
    ]
    return cls(records)
