from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from acoustic_pretrain.core.pairs import pair_batch, pair_label, sample_pairs, write_pairs
from acoustic_pretrain.errors import ContractError, InsufficientUtterancesError, TooShortError
from acoustic_pretrain.models import (
  Manifest,
  ManifestEntry,
  PairBudget,
  Spectrogram,
  Split,
  UtteranceClass,
)

def _manifest(utts_per_speaker: dict[str, int]) -> Manifest:
  entries = []
  for speaker, n in utts_per_speaker.items():
    for u in range(n):
      utt = f"{speaker}-u{u}"
      entries.append(ManifestEntry(utt, speaker, f"{utt}-c", UtteranceClass.BONAFIDE, Split.TRAIN, f"{utt}.wav"))
  return Manifest(entries, Path("."))

def _frames(manifest: Manifest, n: int = 300):
  lengths = {e.utterance_id: n for e in manifest.entries}
  return lengths.__getitem__

class _ArrayStore:
  def __init__(self, n_frames: int, n_bins: int = 4) -> None:
    self._n_frames = n_frames
    self._n_bins = n_bins

  def get(self, utterance_id: str) -> Spectrogram:
    seed = sum(map(ord, utterance_id))
    return Spectrogram(np.random.default_rng(seed).random((self._n_frames, self._n_bins)))

def test_pair_label_rules():
  m = _manifest({"a": 2, "b": 1})

  assert pair_label("a-u0", "a-u0", m) == 1
  assert pair_label("a-u0", "a-u1", m) == -1
  with pytest.raises(ContractError):
    pair_label("a-u0", "b-u0", m)

def test_budget_is_exact_per_speaker():
  m = _manifest({f"spk{i}": 4 for i in range(10)})

  pairs = sample_pairs(m, PairBudget(100, 0.5, seed=1), _frames(m))

  assert len(pairs) == 1000
  assert sum(p.label == 1 for p in pairs) == 500
  per_speaker = Counter(p.speaker_id for p in pairs)
  assert set(per_speaker.values()) == {100}
  for spk in per_speaker:
    assert sum(p.label == 1 for p in pairs if p.speaker_id == spk) == 50

def test_doubling_the_budget():
  m = _manifest({f"spk{i}": 4 for i in range(10)})

  pairs = sample_pairs(m, PairBudget(200, 0.5), _frames(m))

  assert len(pairs) == 2000
  assert sum(p.label == 1 for p in pairs) == 1000

def test_same_seed_same_list():
  m = _manifest({"a": 3, "b": 5})
  budget = PairBudget(20, 0.5, seed=4)

  assert sample_pairs(m, budget, _frames(m)) == sample_pairs(m, budget, _frames(m))
  assert sample_pairs(m, budget, _frames(m)) != sample_pairs(m, PairBudget(20, 0.5, seed=5), _frames(m))

def test_epoch_resampling_is_reproducible_and_fresh():
  m = _manifest({"a": 3, "b": 5})
  budget = PairBudget(20, 0.5, seed=4)

  e1 = sample_pairs(m, budget, _frames(m), epoch=1)

  assert e1 == sample_pairs(m, budget, _frames(m), epoch=1)
  assert e1 != sample_pairs(m, budget, _frames(m), epoch=2)

def test_pair_structure():
  m = _manifest({"a": 3, "b": 2})
  pairs = sample_pairs(m, PairBudget(40, 0.5), _frames(m), n_frames=200)

  for p in pairs:
    assert p.utt_a_id.startswith(p.speaker_id + "-")
    assert p.utt_b_id.startswith(p.speaker_id + "-")
    assert 0 <= p.offset_a <= 100 and 0 <= p.offset_b <= 100
    if p.label == 1:
      assert p.utt_a_id == p.utt_b_id
      assert p.offset_a != p.offset_b
    else:
      assert p.utt_a_id != p.utt_b_id

def test_short_utterances_use_cyclic_offsets():
  m = _manifest({"a": 2})

  pairs = sample_pairs(m, PairBudget(10, 0.5), _frames(m, 80), n_frames=200)

  for p in pairs:
    if p.label == 1:
      assert p.offset_a != p.offset_b
      assert 0 <= p.offset_a < 80 and 0 <= p.offset_b < 80
    else:
      assert p.offset_a == 0 and p.offset_b == 0

def test_single_frame_utterance_cannot_form_a_target_pair():
  m = _manifest({"a": 2})

  with pytest.raises(TooShortError):
    sample_pairs(m, PairBudget(10, 0.5), _frames(m, 1))

def test_speaker_with_one_utterance_is_rejected():
  m = _manifest({"a": 3, "lonely": 1})

  with pytest.raises(InsufficientUtterancesError, match="lonely"):
    sample_pairs(m, PairBudget(10, 0.5), _frames(m))

def test_random_manifests_keep_their_budget():
  rng = np.random.default_rng(11)
  for trial in range(50):
    n_speakers = int(rng.integers(1, 7))
    m = _manifest({f"s{k}": int(rng.integers(2, 6)) for k in range(n_speakers)})
    lengths = {e.utterance_id: int(rng.integers(50, 401)) for e in m.entries}
    pairs_per_speaker = 2 * int(rng.integers(1, 21))

    pairs = sample_pairs(m, PairBudget(pairs_per_speaker, 0.5, seed=trial), lengths.__getitem__)

    assert len(pairs) == n_speakers * pairs_per_speaker
    assert sum(p.label == 1 for p in pairs) == len(pairs) // 2
    for p in pairs:
      assert m.get(p.utt_a_id).speaker_id == m.get(p.utt_b_id).speaker_id
      assert p.offset_a < lengths[p.utt_a_id]
      assert p.offset_b < lengths[p.utt_b_id]

def test_pair_batch_layout():
  m = _manifest({"a": 3})
  pairs = sample_pairs(m, PairBudget(6, 0.5), _frames(m, 30), n_frames=10)
  store = _ArrayStore(30)

  x, labels = pair_batch(pairs, store, n_frames=10)

  assert x.shape == (12, 10, 4, 1)
  assert x.dtype == np.float32
  assert labels == [p.label for p in pairs]
  first = pairs[0]
  expected = store.get(first.utt_a_id).data[first.offset_a:first.offset_a + 10]
  assert np.allclose(x[0, :, :, 0], expected.astype(np.float32))
  expected_b = store.get(first.utt_b_id).data[first.offset_b:first.offset_b + 10]
  assert np.allclose(x[6, :, :, 0], expected_b.astype(np.float32))

def test_write_pairs_is_tab_separated(tmp_path):
  m = _manifest({"a": 2})
  pairs = sample_pairs(m, PairBudget(4, 0.5), _frames(m))
  path = tmp_path / "pairs" / "list.tsv"

  write_pairs(pairs, path)

  lines = path.read_text(encoding="utf-8").splitlines()
  assert len(lines) == 4
  assert lines[0].split("\t") == pairs[0].to_row()
