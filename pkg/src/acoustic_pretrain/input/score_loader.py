from __future__ import annotations

import math
from pathlib import Path

from ..errors import ManifestError
from ..models import ScoreRecord, ScoreSet, UtteranceClass

SCORE_FIELDS = 3

class ScoreFileLoader:
  """
  Loads a score file written by ReportGenerator.write_scores.
  """

  def load(self, path: str | Path) -> ScoreSet:
    p = Path(path)

    if not p.is_file():
      raise FileNotFoundError(f"Score file not found: {p}")

    records: list[ScoreRecord] = []
    with p.open("r", encoding="utf-8") as f:
      for lineno, raw in enumerate(f, start=1):
        line = raw.rstrip("\n")
        if not line:
          continue
        fields = line.split("\t")
        if len(fields) != SCORE_FIELDS:
          raise ManifestError(f"{p}:{lineno}: expected {SCORE_FIELDS} tab-separated fields, got {len(fields)}")
        trial_id, truth, score = fields
        try:
          record = ScoreRecord(trial_id, UtteranceClass(truth), float(score))
        except ValueError as e:
          raise ManifestError(f"{p}:{lineno}: {e}") from None
        if not math.isfinite(record.score):
          raise ManifestError(f"{p}:{lineno}: non-finite score")
        records.append(record)

    return ScoreSet(records)
