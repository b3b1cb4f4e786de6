import numpy as np
import pytest

from acoustic_pretrain.core.dsp import (
  SpectrogramStore,
  analysis_window,
  crop_at,
  crop_frames,
  dump_spectrogram,
  frame_count,
  load_spectrogram,
  load_spectrogram_dump,
  stft_magnitude,
)
from acoustic_pretrain.errors import AudioFormatError, ContractError, SampleRateMismatchError, TooShortError
from acoustic_pretrain.input.wav_reader import write_wav
from acoustic_pretrain.models import FrameParams, Manifest, ManifestEntry, Spectrogram, Split, UtteranceClass, Waveform

def _ramp(n_frames: int, n_bins: int = 3) -> Spectrogram:
  return Spectrogram(np.arange(n_frames, dtype=np.float64)[:, None] * np.ones((1, n_bins)))

def test_four_seconds_at_16k_gives_132_by_1025():
  s = stft_magnitude(Waveform(np.zeros(64000), 16000), FrameParams())

  assert (s.n_frames, s.n_bins) == (132, 1025)
  assert frame_count(64000, FrameParams(), 16000) == 132

def test_silence_gives_zero_spectrogram():
  s = stft_magnitude(Waveform(np.zeros(16000), 16000), FrameParams())

  assert np.all(s.data == 0.0)

def test_bin_center_sine_peaks_at_its_bin():
  p = FrameParams()
  k = 64
  t = np.arange(32000) / 16000
  w = Waveform(np.sin(2 * np.pi * k * 16000 / p.fft_size * t), 16000)

  s = stft_magnitude(w, p)

  assert np.all(np.argmax(s.data, axis=1) == k)

def test_parseval_per_frame():
  p = FrameParams(fft_size=512)
  rng = np.random.default_rng(3)
  x = rng.standard_normal(4000)
  s = stft_magnitude(Waveform(x, 8000), p)

  win = analysis_window(p, 8000)
  shift = p.shift_length(8000)
  for t in range(s.n_frames):
    frame = x[t * shift:t * shift + len(win)] * win
    mag2 = s.data[t] ** 2
    full = mag2[0] + mag2[-1] + 2.0 * np.sum(mag2[1:-1])
    assert full == pytest.approx(p.fft_size * np.sum(frame * frame), rel=1e-6)

def test_log_compress_is_log1p_of_magnitude():
  x = np.random.default_rng(0).standard_normal(8000)
  raw = stft_magnitude(Waveform(x, 8000), FrameParams(fft_size=512))
  logged = stft_magnitude(Waveform(x, 8000), FrameParams(fft_size=512, log_compress=True))

  assert np.allclose(logged.data, np.log1p(raw.data))

def test_shorter_than_one_window():
  with pytest.raises(TooShortError):
    stft_magnitude(Waveform(np.zeros(100), 16000), FrameParams())

def test_window_must_fit_fft():
  with pytest.raises(ContractError):
    stft_magnitude(Waveform(np.zeros(16000), 16000), FrameParams(fft_size=512))

def test_center_crop_takes_the_middle():
  s = _ramp(300)

  c = crop_frames(s, 120, "center")

  assert c.n_frames == 120
  assert c.data[0, 0] == 90
  assert c.data[-1, 0] == 209

def test_exact_length_crop_is_identity():
  s = _ramp(120)

  assert np.array_equal(crop_frames(s, 120, "center").data, s.data)

def test_short_source_is_tiled_cyclically():
  s = _ramp(80)

  c = crop_frames(s, 200, "random", np.random.default_rng(0))

  expected = np.concatenate([s.data, s.data, s.data[:40]])
  assert np.array_equal(c.data, expected)

def test_random_crop_is_reproducible_and_in_range():
  s = _ramp(300)

  a = crop_frames(s, 50, "random", np.random.default_rng(9))
  b = crop_frames(s, 50, "random", np.random.default_rng(9))

  assert np.array_equal(a.data, b.data)
  start = int(a.data[0, 0])
  assert 0 <= start <= 250
  assert np.array_equal(a.data[:, 0], np.arange(start, start + 50))

def test_random_crop_needs_a_generator():
  with pytest.raises(ContractError):
    crop_frames(_ramp(300), 50, "random")

def test_crop_at_wraps_past_the_end():
  c = crop_at(_ramp(10), 4, 8)

  assert c.data[:, 0].tolist() == [8, 9, 0, 1]

def test_crop_at_rejects_offset_outside_source():
  with pytest.raises(ContractError):
    crop_at(_ramp(10), 4, 10)

def test_dump_roundtrip(tmp_path):
  data = np.random.default_rng(1).random((5, 7)).astype(np.float32).astype(np.float64)
  path = tmp_path / "s.bin"

  dump_spectrogram(Spectrogram(data), path)

  assert np.array_equal(load_spectrogram_dump(path).data, data)

def test_dump_rejects_foreign_bytes(tmp_path):
  path = tmp_path / "s.bin"
  path.write_bytes(b"not a dump at all")

  with pytest.raises(AudioFormatError):
    load_spectrogram_dump(path)

def test_sample_rate_mismatch_is_not_resampled(tmp_path):
  path = tmp_path / "a.wav"
  write_wav(Waveform(np.zeros(16000), 16000), path)

  with pytest.raises(SampleRateMismatchError):
    load_spectrogram(path, FrameParams(fft_size=512), 8000)

def test_store_loads_once_and_evicts(tmp_path):
  entries = []
  for i in range(3):
    write_wav(Waveform(np.full(4000, 0.01 * (i + 1)), 8000), tmp_path / f"u{i}.wav")
    entries.append(ManifestEntry(f"u{i}", "spk", "c", UtteranceClass.BONAFIDE, Split.TRAIN, f"u{i}.wav"))
  store = SpectrogramStore(Manifest(entries, tmp_path), FrameParams(fft_size=512), 8000, capacity=2)

  first = store.get("u0")
  assert store.get("u0") is first
  assert store.n_frames("u1") == frame_count(4000, FrameParams(fft_size=512), 8000)
  store.get("u2")
  assert store.get("u0") is not first
