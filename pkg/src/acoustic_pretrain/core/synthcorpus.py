from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from ..errors import ContractError
from ..input.manifest_loader import ManifestLoader
from ..input.wav_reader import write_wav
from ..models import (
  AcousticConfig,
  CorpusSpec,
  Manifest,
  ManifestEntry,
  Split,
  UtteranceClass,
  Waveform,
)

logger = logging.getLogger(__name__)

SOURCE_RMS = 0.1
LOWPASS_ORDER = 6

PRETRAIN_DIR = "pretrain"
MAIN_DIR = "main"
MANIFEST_NAME = "manifest.tsv"

def derive_rng(seed: int, *keys: str | int) -> np.random.Generator:
  """
  Independent stream for (seed, keys...). Streams do not depend on the
  order in which they are requested.
  """
  h = hashlib.sha256()
  for k in keys:
    h.update(str(k).encode("utf-8"))
    h.update(b"\x00")
  words = np.frombuffer(h.digest()[:16], dtype="<u4").tolist()
  return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *words]))

def derive_seed(seed: int, *keys: str | int) -> int:
  return int(derive_rng(seed, *keys).integers(2**62))

# --- Source and channel ---

def speaker_f0(speaker_id: str) -> float:
  return float(derive_rng(0, "f0", speaker_id).uniform(90.0, 240.0))

def make_source_utterance(
  speaker_id: str,
  duration: float,
  seed: int,
  sample_rate: int = 8000,
) -> Waveform:
  """
  Harmonic voice-like source: the speaker's fixed F0 with per-utterance
  jitter and a slow syllabic amplitude envelope, RMS-normalized.
  """
  n = int(round(duration * sample_rate))
  if n <= 0:
    raise ContractError(f"duration {duration} s yields no samples")

  rng = derive_rng(seed, "source", speaker_id)
  t = np.arange(n, dtype=np.float64) / sample_rate
  nyquist = sample_rate / 2.0

  f0 = speaker_f0(speaker_id) * (1.0 + rng.uniform(-0.05, 0.05))
  vibrato = 1.0 + 0.02 * np.sin(2.0 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
  phase = 2.0 * np.pi * np.cumsum(f0 * vibrato) / sample_rate

  formants = rng.uniform([400.0, 1000.0, 2200.0], [900.0, 1900.0, 3200.0])
  signal = np.zeros(n)
  n_harm = int(nyquist * 0.95 // (f0 * 1.02))
  for k in range(1, n_harm + 1):
    fk = k * f0
    emphasis = sum(np.exp(-0.5 * ((fk - fm) / 150.0) ** 2) for fm in formants)
    amp = (0.3 + emphasis) / k
    signal += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

  syllable_rate = rng.uniform(3.0, 5.0)
  envelope = 0.55 + 0.45 * np.sin(2.0 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
  signal *= envelope

  rms = np.sqrt(np.mean(signal * signal))
  return Waveform(signal * (SOURCE_RMS / rms), sample_rate)

def apply_channel(w: Waveform, c: AcousticConfig, seed: int) -> Waveform:
  """
  lowpass(conv(w, ir)) * gain + noise at the configured SNR.

  The convolution tail is truncated so the length is preserved.
  """
  x = lfilter(c.taps(), [1.0], w.samples)

  if c.lowpass_hz is not None:
    nyquist = w.sample_rate / 2.0
    if c.lowpass_hz >= nyquist:
      raise ContractError(f"lowpass {c.lowpass_hz} Hz is not below Nyquist {nyquist} Hz")
    sos = butter(LOWPASS_ORDER, c.lowpass_hz, btype="low", fs=w.sample_rate, output="sos")
    x = sosfilt(sos, x)

  x = x * 10.0 ** (c.gain_db / 20.0)

  if c.noise_db is not None:
    noise = derive_rng(seed, "noise").standard_normal(x.size)
    p_signal = float(np.mean(x * x))
    p_noise = float(np.mean(noise * noise))
    if p_signal > 0.0:
      x = x + noise * math.sqrt(p_signal / (p_noise * 10.0 ** (c.noise_db / 10.0)))

  return Waveform(x, w.sample_rate)

def simulate_replay(
  w: Waveform,
  playback: AcousticConfig,
  rerecord: AcousticConfig,
  seed: int,
) -> Waveform:
  played = apply_channel(w, playback, derive_seed(seed, "playback"))
  return apply_channel(played, rerecord, derive_seed(seed, "rerecord"))

# --- Device families ---

def _decaying_ir(rng: np.random.Generator, n_taps: int, decay: float) -> np.ndarray:
  taps = rng.standard_normal(n_taps) * np.exp(-np.arange(n_taps) / decay)
  taps[0] = 1.0
  return taps / np.sqrt(np.sum(taps * taps))

def sample_microphone_config(rng: np.random.Generator, sample_rate: int) -> AcousticConfig:
  """
  Recording-side channel: a room/microphone IR, ambient noise, optional
  band limit and level.
  """
  n_taps = int(rng.integers(8, 97))
  ir = _decaying_ir(rng, n_taps, decay=rng.uniform(3.0, n_taps / 2.0))
  nyquist = sample_rate / 2.0
  lowpass = float(rng.uniform(0.55, 0.95) * nyquist) if rng.random() < 0.4 else None
  return AcousticConfig(
    impulse_response=tuple(float(v) for v in ir),
    noise_db=float(rng.uniform(15.0, 45.0)),
    lowpass_hz=lowpass,
    gain_db=float(rng.uniform(-6.0, 6.0)),
  )

def sample_loudspeaker_config(rng: np.random.Generator, sample_rate: int) -> AcousticConfig:
  """
  Playback-side channel: a short resonant IR and a strong band limit.
  """
  n_taps = int(rng.integers(4, 33))
  ir = _decaying_ir(rng, n_taps, decay=rng.uniform(1.5, 6.0))
  # one damped resonance per device
  f_res = rng.uniform(0.05, 0.35) * sample_rate
  k = np.arange(n_taps)
  ir = ir + 0.5 * np.exp(-k / 4.0) * np.cos(2.0 * np.pi * f_res * k / sample_rate)
  ir = ir / np.sqrt(np.sum(ir * ir))
  nyquist = sample_rate / 2.0
  return AcousticConfig(
    impulse_response=tuple(float(v) for v in ir),
    noise_db=float(rng.uniform(30.0, 55.0)),
    lowpass_hz=float(rng.uniform(0.35, 0.85) * nyquist),
    gain_db=float(rng.uniform(-3.0, 3.0)),
  )

# --- Corpus generation ---

@dataclass(frozen=True)
class _Job:
  entry: ManifestEntry
  render: Callable[[], Waveform]

@dataclass
class CorpusManifests:
  pretrain: Manifest
  main: Manifest

def pretrain_speaker_id(index: int) -> str:
  return f"pspk{index:04d}"

def main_speaker_id(split: Split, index: int) -> str:
  return f"m{split.value}{index:04d}"

def _duration(rng: np.random.Generator, spec: CorpusSpec) -> float:
  lo, hi = spec.utterance_seconds
  return float(rng.uniform(lo, hi)) if hi > lo else lo

def _pretrain_split(spec: CorpusSpec, index: int) -> Split:
  n_dev = 0
  if spec.n_speakers >= 2:
    n_dev = max(1, int(round(spec.dev_speaker_fraction * spec.n_speakers)))
    n_dev = min(n_dev, spec.n_speakers - 1)
  return Split.DEV if index >= spec.n_speakers - n_dev else Split.TRAIN

def _pretrain_jobs(spec: CorpusSpec) -> list[_Job]:
  jobs: list[_Job] = []
  for s in range(spec.n_speakers):
    speaker = pretrain_speaker_id(s)
    split = _pretrain_split(spec, s)
    for c in range(spec.configs_per_speaker):
      config_id = f"{speaker}-c{c:02d}"
      config = sample_microphone_config(derive_rng(spec.seed, "config", config_id), spec.sample_rate)
      for u in range(spec.utterances_per_config):
        utt_id = f"{config_id}-u{u:02d}"
        entry = ManifestEntry(
          utterance_id=utt_id,
          speaker_id=speaker,
          config_id=config_id,
          utt_class=UtteranceClass.BONAFIDE,
          split=split,
          path=f"wav/{utt_id}.wav",
        )
        jobs.append(_Job(entry, _bind_recording(spec, speaker, utt_id, config)))
  return jobs

def _bind_recording(
  spec: CorpusSpec,
  speaker: str,
  utt_id: str,
  config: AcousticConfig,
  source_key: str | None = None,
) -> Callable[[], Waveform]:
  source_key = source_key or utt_id

  def render() -> Waveform:
    rng = derive_rng(spec.seed, "utterance", source_key)
    src = make_source_utterance(speaker, _duration(rng, spec), int(rng.integers(2**62)), spec.sample_rate)
    return apply_channel(src, config, derive_seed(spec.seed, "channel", utt_id))

  return render

def _bind_replay(
  spec: CorpusSpec,
  speaker: str,
  utt_id: str,
  source_key: str,
  playback: AcousticConfig,
  rerecord: AcousticConfig,
) -> Callable[[], Waveform]:
  def render() -> Waveform:
    rng = derive_rng(spec.seed, "utterance", source_key)
    src = make_source_utterance(speaker, _duration(rng, spec), int(rng.integers(2**62)), spec.sample_rate)
    return simulate_replay(
      src, playback, rerecord, derive_seed(spec.seed, "replay", utt_id)
    )

  return render

def _main_jobs(spec: CorpusSpec) -> list[_Job]:
  m = spec.main
  n_spoof = int(math.floor(m.spoof_ratio * m.bonafide_per_speaker + 0.5))
  jobs: list[_Job] = []

  for split, n_speakers in zip((Split.TRAIN, Split.DEV, Split.EVAL), m.speakers_per_split):
    for s in range(n_speakers):
      speaker = main_speaker_id(split, s)
      sources = [f"{speaker}-src{b:02d}" for b in range(m.bonafide_per_speaker)]

      for b, source_key in enumerate(sources):
        utt_id = f"{speaker}-bona{b:02d}"
        config_id = f"{utt_id}-mic"
        mic = sample_microphone_config(derive_rng(spec.seed, "config", config_id), spec.sample_rate)
        entry = ManifestEntry(utt_id, speaker, config_id, UtteranceClass.BONAFIDE, split, f"wav/{utt_id}.wav")
        jobs.append(_Job(entry, _bind_recording(spec, speaker, utt_id, mic, source_key)))

      for r in range(n_spoof):
        source_key = sources[r % len(sources)]
        utt_id = f"{speaker}-spoof{r:02d}"
        config_id = f"{utt_id}-replay"
        playback = sample_loudspeaker_config(
          derive_rng(spec.seed, "config", config_id, "playback"), spec.sample_rate
        )
        rerecord = sample_microphone_config(
          derive_rng(spec.seed, "config", config_id, "rerecord"), spec.sample_rate
        )
        entry = ManifestEntry(utt_id, speaker, config_id, UtteranceClass.SPOOF, split, f"wav/{utt_id}.wav")
        jobs.append(_Job(entry, _bind_replay(spec, speaker, utt_id, source_key, playback, rerecord)))

  return jobs

def _write_corpus(jobs: Sequence[_Job], root: Path, workers: int) -> Manifest:
  root.mkdir(parents=True, exist_ok=True)

  def run(job: _Job) -> None:
    write_wav(job.render(), root / job.entry.path)

  if workers > 1:
    with ThreadPoolExecutor(max_workers=workers) as pool:
      list(pool.map(run, jobs))
  else:
    for job in jobs:
      run(job)

  manifest = Manifest([j.entry for j in jobs], root)
  ManifestLoader().write(manifest, root / MANIFEST_NAME)
  return manifest

def generate_pretrain_corpus(spec: CorpusSpec, out_dir: str | Path, workers: int = 1) -> Manifest:
  root = Path(out_dir) / PRETRAIN_DIR
  logger.info("Generating pre-training corpus: %d speakers -> %s", spec.n_speakers, root)
  return _write_corpus(_pretrain_jobs(spec), root, workers)

def generate_main_corpus(spec: CorpusSpec, out_dir: str | Path, workers: int = 1) -> Manifest:
  root = Path(out_dir) / MAIN_DIR
  logger.info("Generating main-training corpus: %s speakers per split -> %s", spec.main.speakers_per_split, root)
  return _write_corpus(_main_jobs(spec), root, workers)

def generate_corpus(spec: CorpusSpec, out_dir: str | Path, workers: int = 1) -> CorpusManifests:
  """
  Writes both corpora under out_dir (pretrain/ and main/), each with a
  manifest.tsv and its WAV files. Output depends only on `spec`.
  """
  return CorpusManifests(
    pretrain=generate_pretrain_corpus(spec, out_dir, workers),
    main=generate_main_corpus(spec, out_dir, workers),
  )

def speaker_subset(manifest: Manifest, fraction: float) -> Manifest:
  """
  Keeps the first `fraction` of each split's speakers (at least one).
  """
  if not 0.0 < fraction <= 1.0:
    raise ContractError(f"fraction must lie in (0, 1], got {fraction}")
  keep: list[str] = []
  for split in Split:
    speakers = manifest.for_split(split).speakers()
    if speakers:
      keep += speakers[:max(1, int(round(fraction * len(speakers))))]
  return manifest.with_speakers(keep)
