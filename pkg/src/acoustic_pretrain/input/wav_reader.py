from __future__ import annotations

from pathlib import Path

import numpy as np
import soundfile as sf

from ..errors import AudioFormatError, CorpusWriteError, UnsupportedAudioError
from ..models import Waveform

SUPPORTED_SUBTYPES = ("PCM_16", "PCM_32")

def read_wav(path: str | Path) -> Waveform:
  """
  Reads a PCM16/PCM32 RIFF/WAVE file into a mono waveform.

  Samples are scaled by the integer full-scale (32768 or 2**31);
  multi-channel files are downmixed by averaging.
  """
  p = Path(path)
  if not p.is_file():
    raise FileNotFoundError(f"WAV file not found: {p}")

  try:
    info = sf.info(str(p))
  except RuntimeError as e:
    raise AudioFormatError(f"malformed WAV header in {p}: {e}") from e

  if info.format != "WAV":
    raise UnsupportedAudioError(f"{p}: container {info.format} is not RIFF/WAVE")
  if info.subtype not in SUPPORTED_SUBTYPES:
    raise UnsupportedAudioError(f"{p}: codec {info.subtype} is not PCM16 or PCM32")
  if info.frames == 0:
    raise AudioFormatError(f"{p}: no audio frames")

  try:
    data, rate = sf.read(str(p), dtype="float64", always_2d=True)
  except RuntimeError as e:
    raise AudioFormatError(f"could not decode {p}: {e}") from e

  return Waveform(samples=data.mean(axis=1), sample_rate=int(rate))

def write_wav(w: Waveform, path: str | Path, subtype: str = "PCM_16") -> None:
  if subtype not in SUPPORTED_SUBTYPES:
    raise UnsupportedAudioError(f"cannot write codec {subtype}")

  p = Path(path)
  try:
    p.parent.mkdir(parents=True, exist_ok=True)
    # libsndfile wraps out-of-range floats instead of saturating
    sf.write(str(p), np.clip(w.samples, -1.0, 1.0), w.sample_rate, subtype=subtype, format="WAV")
  except (OSError, RuntimeError) as e:
    raise CorpusWriteError(f"could not write {p}: {e}") from e
