from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, TooShortError, UndefinedMetricError
from ..models import Manifest, ManifestEntry, ScoreRecord, ScoreSet, Split, UtteranceClass
from ..nn.network import Network, forward
from .dsp import SpectrogramStore

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class OperatingPoint:
  threshold: float
  far: float
  frr: float

@dataclass(frozen=True)
class EerResult:
  eer: float
  threshold: float

# --- Scoring ---

def _scores_from_logits(logits: np.ndarray) -> np.ndarray:
  logits = np.asarray(logits, dtype=np.float64)
  return logits[:, UtteranceClass.BONAFIDE.index] - logits[:, UtteranceClass.SPOOF.index]

def score_trials(
  net: Network,
  manifest: Manifest,
  split: Split,
  store: SpectrogramStore,
  batch_size: int = 1,
) -> ScoreSet:
  """
  Scores every utterance of `split` on its full, uncropped spectrogram:
  logit(bonafide) - logit(spoof).

  Utterances shorter than one analysis window are counted in
  `ScoreSet.failures` and left out. With batch_size > 1, utterances of
  equal frame count are batched together; records keep manifest order.
  """
  if not net.spec.has_head:
    raise ContractError("scoring needs a network with a 2-class output head")
  if batch_size < 1:
    raise ContractError("batch_size must be >= 1")

  entries = manifest.for_split(split).entries
  if not entries:
    raise ContractError(f"split '{split.value}' of the manifest is empty")

  scored: list[tuple[ManifestEntry, np.ndarray]] = []
  failures = 0
  for e in entries:
    try:
      scored.append((e, store.get(e.utterance_id).data))
    except TooShortError as exc:
      failures += 1
      logger.warning("Skipping %s: %s", e.utterance_id, exc)

  by_length: dict[int, list[int]] = {}
  for i, (_, data) in enumerate(scored):
    by_length.setdefault(data.shape[0], []).append(i)

  scores = np.empty(len(scored), dtype=np.float64)
  for indices in by_length.values():
    for start in range(0, len(indices), batch_size):
      chunk = indices[start:start + batch_size]
      x = np.stack([scored[i][1] for i in chunk])[..., None]
      result = forward(net, x, mode="infer")
      scores[chunk] = _scores_from_logits(result.logits)

  records = [
    ScoreRecord(e.utterance_id, e.utt_class, float(s)) for (e, _), s in zip(scored, scores)
  ]
  if failures:
    logger.warning("%d of %d %s utterances could not be scored", failures, len(entries), split.value)
  return ScoreSet(records, failures=failures)

# --- Metric ---

def _class_scores(s: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
  bona = np.sort(s.scores_of(UtteranceClass.BONAFIDE))
  spoof = np.sort(s.scores_of(UtteranceClass.SPOOF))
  if bona.size == 0 or spoof.size == 0:
    raise UndefinedMetricError(
      f"EER needs both classes, got {bona.size} bona-fide and {spoof.size} spoofed trials"
    )
  return bona, spoof

def det_curve(s: ScoreSet) -> list[OperatingPoint]:
  """
  Operating points at the midpoints between consecutive distinct scores,
  plus one threshold below and one above every score.

  FAR counts spoofed trials with score >= t; FRR counts bona-fide trials
  with score < t.
  """
  bona, spoof = _class_scores(s)
  unique = np.unique(np.concatenate([bona, spoof]))
  thresholds = np.concatenate([
    [unique[0] - 1.0],
    (unique[:-1] + unique[1:]) / 2.0,
    [unique[-1] + 1.0],
  ])

  far = (spoof.size - np.searchsorted(spoof, thresholds, side="left")) / spoof.size
  frr = np.searchsorted(bona, thresholds, side="left") / bona.size
  return [OperatingPoint(float(t), float(a), float(r)) for t, a, r in zip(thresholds, far, frr)]

def compute_eer(s: ScoreSet) -> EerResult:
  """
  Equal error rate at the first operating point where FRR reaches FAR.

  When the two rates never coincide exactly, both are interpolated
  linearly between that point and its predecessor (threshold included).
  """
  points = det_curve(s)

  for k, cur in enumerate(points):
    d_cur = cur.frr - cur.far
    if d_cur < 0.0:
      continue
    if d_cur == 0.0 or k == 0:
      return EerResult(cur.far, cur.threshold)

    prev = points[k - 1]
    d_prev = prev.far - prev.frr
    alpha = d_prev / (d_prev + d_cur)
    eer = prev.far + alpha * (cur.far - prev.far)
    threshold = prev.threshold + alpha * (cur.threshold - prev.threshold)
    return EerResult(float(eer), float(threshold))

  # unreachable: the top threshold always has FAR = 0, FRR = 1
  raise UndefinedMetricError("FAR and FRR never cross")
