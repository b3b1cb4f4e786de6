from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, CorpusWriteError, InsufficientUtterancesError, TooShortError
from ..models import Manifest, PairBudget, SegmentPair, Spectrogram
from .dsp import SpectrogramStore, crop_at
from .synthcorpus import derive_rng

logger = logging.getLogger(__name__)

PRETRAIN_CROP_FRAMES = 200

FrameCounter = Callable[[str], int]

def pair_label(utt_a_id: str, utt_b_id: str, manifest: Manifest) -> int:
  """
  +1 for two segments of the same utterance, -1 for two utterances of one
  speaker. Pairs across speakers are never formed.
  """
  a = manifest.get(utt_a_id)
  b = manifest.get(utt_b_id)
  if a.speaker_id != b.speaker_id:
    raise ContractError(
      f"pair ({utt_a_id}, {utt_b_id}) crosses speakers {a.speaker_id} and {b.speaker_id}"
    )
  return 1 if utt_a_id == utt_b_id else -1

def _random_offset(rng: np.random.Generator, total: int, n_frames: int) -> int:
  # same rule as crop_frames(mode="random"); short utterances tile from 0
  if total <= n_frames:
    return 0
  return int(rng.integers(0, total - n_frames + 1))

def _distinct_offsets(rng: np.random.Generator, utt_id: str, total: int, n_frames: int) -> tuple[int, int]:
  span = total - n_frames + 1
  if span >= 2:
    a, b = rng.choice(span, size=2, replace=False)
  elif total >= 2:
    # shorter than a crop: two distinct cyclic starting points
    a, b = rng.choice(total, size=2, replace=False)
  else:
    raise TooShortError(f"utterance '{utt_id}' has a single frame; a target pair needs two offsets")
  return int(a), int(b)

def sample_pairs(
  manifest: Manifest,
  budget: PairBudget,
  frame_count: FrameCounter,
  n_frames: int = PRETRAIN_CROP_FRAMES,
  epoch: Optional[int] = None,
) -> list[SegmentPair]:
  """
  Exactly `budget.pairs_per_speaker` pairs for every speaker of the
  manifest, of which `budget.positives_per_speaker` are target pairs.

  `frame_count` maps an utterance id to its spectrogram length (usually
  `SpectrogramStore.n_frames`). With `epoch` set the stream is derived
  from (seed, epoch), so every epoch draws a fresh but reproducible list.
  """
  if n_frames < 1:
    raise ContractError("n_frames must be >= 1")
  groups = manifest.by_speaker()
  for speaker_id, entries in groups.items():
    if len(entries) < 2:
      raise InsufficientUtterancesError(speaker_id, len(entries))

  keys: tuple = ("pairs",) if epoch is None else ("pairs", epoch)
  rng = derive_rng(budget.seed, *keys)
  n_pos = budget.positives_per_speaker
  n_neg = budget.pairs_per_speaker - n_pos

  pairs: list[SegmentPair] = []
  for speaker_id in manifest.speakers():
    ids = [e.utterance_id for e in groups[speaker_id]]
    speaker_pairs: list[SegmentPair] = []

    for _ in range(n_pos):
      utt = ids[int(rng.integers(len(ids)))]
      off_a, off_b = _distinct_offsets(rng, utt, frame_count(utt), n_frames)
      speaker_pairs.append(SegmentPair(speaker_id, utt, off_a, utt, off_b, 1))

    for _ in range(n_neg):
      i, j = rng.choice(len(ids), size=2, replace=False)
      utt_a, utt_b = ids[int(i)], ids[int(j)]
      off_a = _random_offset(rng, frame_count(utt_a), n_frames)
      off_b = _random_offset(rng, frame_count(utt_b), n_frames)
      speaker_pairs.append(SegmentPair(speaker_id, utt_a, off_a, utt_b, off_b, -1))

    order = rng.permutation(len(speaker_pairs))
    pairs.extend(speaker_pairs[k] for k in order)

  logger.debug(
    "Sampled %d pairs over %d speakers (%d target per speaker)", len(pairs), len(groups), n_pos
  )
  return pairs

def materialize_pair(pair: SegmentPair, store: SpectrogramStore, n_frames: int = PRETRAIN_CROP_FRAMES) -> tuple[Spectrogram, Spectrogram]:
  seg_a = crop_at(store.get(pair.utt_a_id), n_frames, pair.offset_a)
  seg_b = crop_at(store.get(pair.utt_b_id), n_frames, pair.offset_b)
  return seg_a, seg_b

def pair_batch(
  pairs: Sequence[SegmentPair],
  store: SpectrogramStore,
  n_frames: int = PRETRAIN_CROP_FRAMES,
) -> tuple[np.ndarray, list[int]]:
  """
  Stacks a list of pairs as [seg_a of every pair; seg_b of every pair],
  shape (2n, n_frames, bins, 1), plus the labels in pair order.
  """
  if not pairs:
    raise ContractError("pair batch must not be empty")
  firsts = []
  seconds = []
  for pair in pairs:
    a, b = materialize_pair(pair, store, n_frames)
    firsts.append(a.data)
    seconds.append(b.data)
  x = np.stack(firsts + seconds).astype(np.float32)[..., None]
  return x, [p.label for p in pairs]

def write_pairs(pairs: Sequence[SegmentPair], path: str | Path) -> None:
  p = Path(path)
  try:
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("".join("\t".join(pair.to_row()) + "\n" for pair in pairs), encoding="utf-8")
  except OSError as e:
    raise CorpusWriteError(f"cannot write pair list {p}: {e}") from e
