from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from ..errors import AudioFormatError, ContractError, SampleRateMismatchError, TooShortError
from ..input.wav_reader import read_wav
from ..models import FrameParams, Manifest, Spectrogram, Waveform

SPEC_MAGIC = b"ACSPEC1"

CROP_MODES = ("random", "center", "tile")

def analysis_window(p: FrameParams, sample_rate: int) -> np.ndarray:
  # fftbins=True gives the periodic variant
  return get_window(p.window_fn, p.window_length(sample_rate), fftbins=True).astype(np.float64)

def stft_magnitude(w: Waveform, p: FrameParams) -> Spectrogram:
  """
  Frame t covers samples [t*shift, t*shift + window); no edge padding.

  Each tapered frame is zero-padded to fft_size and the magnitude of the
  one-sided DFT is kept, giving fft_size/2 + 1 bins.
  """
  p.check_rate(w.sample_rate)
  win_len = p.window_length(w.sample_rate)
  shift = p.shift_length(w.sample_rate)

  if len(w) < win_len:
    raise TooShortError(
      f"waveform of {len(w)} samples is shorter than one {win_len}-sample window"
    )

  frames = sliding_window_view(w.samples, win_len)[::shift]
  tapered = frames * analysis_window(p, w.sample_rate)
  mag = np.abs(np.fft.rfft(tapered, n=p.fft_size, axis=1))

  if p.log_compress:
    mag = np.log1p(mag)

  return Spectrogram(mag)

def frame_count(n_samples: int, p: FrameParams, sample_rate: int) -> int:
  win_len = p.window_length(sample_rate)
  if n_samples < win_len:
    return 0
  return (n_samples - win_len) // p.shift_length(sample_rate) + 1

def crop_at(s: Spectrogram, n_frames: int, offset: int) -> Spectrogram:
  """
  Takes n_frames frames starting at `offset`, wrapping cyclically when the
  crop runs past the end of the source.
  """
  if n_frames <= 0:
    raise ContractError(f"n_frames must be positive, got {n_frames}")
  if not 0 <= offset < s.n_frames:
    raise ContractError(f"offset {offset} outside [0, {s.n_frames})")

  if offset + n_frames <= s.n_frames:
    return Spectrogram(s.data[offset:offset + n_frames])

  idx = (offset + np.arange(n_frames)) % s.n_frames
  return Spectrogram(s.data[idx])

def crop_frames(
  s: Spectrogram,
  n_frames: int,
  mode: str = "center",
  rng: Optional[np.random.Generator] = None,
) -> Spectrogram:
  """
  Returns exactly n_frames frames.

  Sources shorter than n_frames are always tiled from frame 0. `random`
  draws its start offset uniformly from `rng`.
  """
  if n_frames <= 0:
    raise ContractError(f"n_frames must be positive, got {n_frames}")
  if mode not in CROP_MODES:
    raise ContractError(f"unknown crop mode '{mode}'")

  if s.n_frames <= n_frames or mode == "tile":
    return crop_at(s, n_frames, 0)

  if mode == "center":
    return crop_at(s, n_frames, (s.n_frames - n_frames) // 2)

  if rng is None:
    raise ContractError("random crop needs a seeded generator")
  return crop_at(s, n_frames, int(rng.integers(0, s.n_frames - n_frames + 1)))

def load_spectrogram(path: str | Path, p: FrameParams, expected_rate: int) -> Spectrogram:
  w = read_wav(path)
  if w.sample_rate != expected_rate:
    raise SampleRateMismatchError(
      f"{path}: sample rate {w.sample_rate} Hz, expected {expected_rate} Hz (no resampling)"
    )
  return stft_magnitude(w, p)

# --- Binary matrix dump ---

def dump_spectrogram(s: Spectrogram, path: str | Path) -> None:
  p = Path(path)
  p.parent.mkdir(parents=True, exist_ok=True)
  data = np.ascontiguousarray(s.data, dtype="<f4")
  with p.open("wb") as f:
    f.write(SPEC_MAGIC)
    f.write(struct.pack("<QQ", *data.shape))
    f.write(data.tobytes(order="C"))

def load_spectrogram_dump(path: str | Path) -> Spectrogram:
  raw = Path(path).read_bytes()
  head = len(SPEC_MAGIC) + 16
  if len(raw) < head or raw[:len(SPEC_MAGIC)] != SPEC_MAGIC:
    raise AudioFormatError(f"{path}: not a spectrogram dump")
  rows, cols = struct.unpack("<QQ", raw[len(SPEC_MAGIC):head])
  if len(raw) - head != rows * cols * 4:
    raise AudioFormatError(f"{path}: payload size does not match {rows}x{cols}")
  data = np.frombuffer(raw, dtype="<f4", offset=head).reshape(rows, cols)
  return Spectrogram(data.astype(np.float64))

class SpectrogramStore:
  """
  Loads utterance spectrograms from a manifest on first use and keeps them.

  `capacity` bounds the number of cached utterances (None = unbounded).
  """

  def __init__(
    self,
    manifest: Manifest,
    params: FrameParams,
    sample_rate: int,
    capacity: Optional[int] = None,
  ) -> None:
    self._manifest = manifest
    self._params = params
    self._sample_rate = sample_rate
    self._capacity = capacity
    self._cache: OrderedDict[str, Spectrogram] = OrderedDict()

  @property
  def params(self) -> FrameParams:
    return self._params

  @property
  def capacity(self) -> Optional[int]:
    return self._capacity

  def __len__(self) -> int:
    return len(self._cache)

  def get(self, utterance_id: str) -> Spectrogram:
    spec = self._cache.get(utterance_id)
    if spec is not None:
      self._cache.move_to_end(utterance_id)
      return spec

    entry = self._manifest.get(utterance_id)
    spec = load_spectrogram(self._manifest.resolve(entry), self._params, self._sample_rate)
    self._cache[utterance_id] = spec
    if self._capacity is not None and len(self._cache) > self._capacity:
      self._cache.popitem(last=False)
    return spec

  def n_frames(self, utterance_id: str) -> int:
    return self.get(utterance_id).n_frames
