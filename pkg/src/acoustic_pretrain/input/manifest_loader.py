from __future__ import annotations

from pathlib import Path

from ..errors import CorpusWriteError, ManifestError
from ..models import Manifest, ManifestEntry, Split, UtteranceClass

MANIFEST_FIELDS = 6

class ManifestLoader:
  """
  Loads and writes tab-separated corpus manifests.

  One record per line: utterance_id, speaker_id, config_id, class, split,
  path relative to the manifest's directory.
  """

  def load(self, path: str | Path, verify_paths: bool = True) -> Manifest:
    p = Path(path)

    if not p.is_file():
      raise FileNotFoundError(f"Manifest not found: {p}")

    entries: list[ManifestEntry] = []
    with p.open("r", encoding="utf-8") as f:
      for lineno, raw in enumerate(f, start=1):
        line = raw.rstrip("\n")
        if not line:
          continue
        entries.append(self._row_to_entry(line.split("\t"), p, lineno))

    manifest = Manifest(entries, root=p.parent)
    if verify_paths:
      missing = [e.path for e in manifest if not manifest.resolve(e).is_file()]
      if missing:
        raise ManifestError(f"{p}: {len(missing)} audio file(s) missing, first: {missing[0]}")
    return manifest

  def write(self, manifest: Manifest, path: str | Path) -> None:
    p = Path(path)
    lines = ["\t".join(e.to_row()) for e in manifest.entries]
    try:
      p.parent.mkdir(parents=True, exist_ok=True)
      with p.open("w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    except OSError as e:
      raise CorpusWriteError(f"could not write manifest {p}: {e}") from e

  @staticmethod
  def _row_to_entry(fields: list[str], path: Path, lineno: int) -> ManifestEntry:
    if len(fields) != MANIFEST_FIELDS:
      raise ManifestError(
        f"{path}:{lineno}: expected {MANIFEST_FIELDS} tab-separated fields, got {len(fields)}"
      )
    utt_id, speaker_id, config_id, cls, split, rel_path = fields
    try:
      utt_class = UtteranceClass(cls)
      utt_split = Split(split)
    except ValueError as e:
      raise ManifestError(f"{path}:{lineno}: {e}") from None

    return ManifestEntry(
      utterance_id=utt_id,
      speaker_id=speaker_id,
      config_id=config_id,
      utt_class=utt_class,
      split=utt_split,
      path=rel_path,
    )
