from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..core.evalkit import OperatingPoint
from ..core.experiments import CellResult
from ..errors import CorpusWriteError
from ..models import ScoreSet

GRID_COLUMNS = (
  "row",
  "column",
  "pretrained",
  "settings",
  "seeds_ok",
  "seeds_failed",
  "mean_dev_eer",
  "mean_eval_eer",
)

def _eer_field(value: Optional[float]) -> str:
  return "" if value is None else f"{value:.4f}"

class ReportGenerator:
  """
  Writes score files, DET dumps and experiment-grid tables.
  """

  @staticmethod
  def _md_escape(text: str) -> str:
    return(
      (text or "")
      .replace("\r\n", "\n").replace("\r", "\n")
      .replace("|", r"\|")
      .replace("\n", " ")
    )

  @staticmethod
  def _write(path: str | Path, content: str) -> Path:
    p = Path(path)
    try:
      p.parent.mkdir(parents=True, exist_ok=True)
      with p.open("w", encoding="utf-8", newline="\n") as f:
        f.write(content)
    except OSError as e:
      raise CorpusWriteError(f"could not write {p}: {e}") from e
    return p

  def write_scores(self, scores: ScoreSet, output_path: str | Path) -> Path:
    lines = [f"{r.trial_id}\t{r.truth.value}\t{r.score:.9g}" for r in scores.records]
    return self._write(output_path, "".join(line + "\n" for line in lines))

  def write_det_csv(self, points: Iterable[OperatingPoint], output_path: str | Path) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "far", "frr"])
    for pt in points:
      writer.writerow([f"{pt.threshold:.9g}", f"{pt.far:.9g}", f"{pt.frr:.9g}"])
    return self._write(output_path, buf.getvalue())

  def write_grid_csv(self, results: Sequence[CellResult], output_path: str | Path) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GRID_COLUMNS)
    for r in results:
      writer.writerow([
        r.cell.row,
        r.cell.column,
        "yes" if r.cell.pretrained else "no",
        r.cell.settings(),
        len(r.eval_eers),
        len(r.failures),
        _eer_field(r.mean_dev_eer),
        _eer_field(r.mean_eval_eer),
      ])
    return self._write(output_path, buf.getvalue())

  def write_grid_markdown(self, axis: str, results: Sequence[CellResult], output_path: str | Path) -> Path:
    rows = list(dict.fromkeys(r.cell.row for r in results))
    columns = list(dict.fromkeys(r.cell.column for r in results))
    table = {(r.cell.row, r.cell.column): r for r in results}

    headers = [f"{self._md_escape(c)} {split}" for c in columns for split in ("dev", "eval")]

    lines: list[str] = []
    lines.append(f"# Grid: {self._md_escape(axis)}\n")
    lines.append("")
    lines.append("| Setting | " + " | ".join(headers) + " |")
    lines.append("|---------|" + "|".join("-" * (len(h) + 2) for h in headers) + "|")

    for row in rows:
      cells = []
      for col in columns:
        r = table.get((row, col))
        if r is None:
          cells += ["", ""]
        elif r.mean_eval_eer is None:
          cells += ["failed", "failed"]
        else:
          dev = f"{100.0 * r.mean_dev_eer:.2f}" if r.mean_dev_eer is not None else ""
          text = f"{100.0 * r.mean_eval_eer:.2f}"
          if r.failures:
            text += f" ({len(r.failures)} failed)"
          cells += [dev, text]
      lines.append(f"| {self._md_escape(row)} | " + " | ".join(cells) + " |")

    lines.append("")
    lines.append("_Mean dev and eval EER (%) over the configured seeds. Per-cell settings are in the CSV next to this file._")
    lines.append("")

    return self._write(output_path, "\n".join(lines) + "\n")
