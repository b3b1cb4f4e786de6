from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..config import ExperimentConfig
from ..errors import AcpError, ConfigError
from ..models import Manifest, Split
from ..nn.network import LayerKind
from ..input.manifest_loader import ManifestLoader
from .dsp import SpectrogramStore
from .evalkit import compute_eer, score_trials
from .synthcorpus import (
  MAIN_DIR,
  MANIFEST_NAME,
  PRETRAIN_DIR,
  generate_main_corpus,
  generate_pretrain_corpus,
  speaker_subset,
)
from .trainer import make_store, maintrain, pretrain
from .transfer import load_checkpoint

logger = logging.getLogger(__name__)

AXES = ("lr-grid", "data-scale", "pair-doubling", "init-mode", "freeze")

SINGLE_COLUMN = "EER"

MAIN_LRS = (1e-4, 5e-4)

@dataclass(frozen=True)
class GridCell:
  row: str
  column: str
  pretrained: bool
  overrides: dict[str, Any] = field(default_factory=dict, hash=False)

  def settings(self) -> str:
    return ";".join(f"{k}={json.dumps(v)}" for k, v in sorted(self.overrides.items()))

@dataclass
class SeedFailure:
  seed: int
  message: str
  exit_code: int

@dataclass
class CellResult:
  cell: GridCell
  dev_eers: list[float] = field(default_factory=list)
  eval_eers: list[float] = field(default_factory=list)
  failures: list[SeedFailure] = field(default_factory=list)

  @property
  def mean_dev_eer(self) -> Optional[float]:
    return sum(self.dev_eers) / len(self.dev_eers) if self.dev_eers else None

  @property
  def mean_eval_eer(self) -> Optional[float]:
    return sum(self.eval_eers) / len(self.eval_eers) if self.eval_eers else None

# --- Cell layouts ---

def _last_block_name(config: ExperimentConfig) -> str:
  spec = config.net_spec()
  return [layer.name for layer in spec.layers if layer.kind is LayerKind.RESIDUAL_BLOCK][-1]

def grid_cells(config: ExperimentConfig, axis: str) -> list[GridCell]:
  """
  Rows and columns of the table an axis reproduces.

  lr-grid: rows are main_lr without pre-training, then every
  (pre_lr, main_lr) pair; columns are the main-training batch sizes.
  data-scale: rows are (pre-training speakers, main_lr).
  """
  if axis == "lr-grid":
    columns = [(f"batch={b}", {"training.main_batch": b}) for b in (32, 16)]
    cells = [
      GridCell(f"no pre-training, main_lr={lr:g}", col, False, {**o, "training.main_lr": lr})
      for lr in MAIN_LRS
      for col, o in columns
    ]
    cells += [
      GridCell(
        f"pre_lr={pre_lr:g}, main_lr={lr:g}", col, True,
        {**o, "training.pre_lr": pre_lr, "training.main_lr": lr},
      )
      for pre_lr in (1e-4, 5e-4, 1e-3)
      for lr in MAIN_LRS
      for col, o in columns
    ]
    return cells

  if axis == "data-scale":
    return [
      GridCell(
        f"{label}, main_lr={lr:g}", SINGLE_COLUMN, True,
        {"training.pretrain_speaker_scale": scale, "training.main_lr": lr},
      )
      for label, scale in (("half speakers", 0.5), ("all speakers", 1.0), ("double speakers", 2.0))
      for lr in MAIN_LRS
    ]

  if axis == "pair-doubling":
    base = config.pairs.pairs_per_speaker
    return [
      GridCell(f"{base} pairs per speaker", SINGLE_COLUMN, True, {"pairs.pairs_per_speaker": base}),
      GridCell(f"{2 * base} pairs per speaker", SINGLE_COLUMN, True, {"pairs.pairs_per_speaker": 2 * base}),
    ]

  if axis == "init-mode":
    return [
      GridCell("random init", SINGLE_COLUMN, False),
      GridCell("pre-trained init", SINGLE_COLUMN, True),
    ]

  if axis == "freeze":
    last = _last_block_name(config)
    return [
      GridCell("no freezing", SINGLE_COLUMN, True, {"training.freeze_upto": None}),
      GridCell(f"frozen up to {last}", SINGLE_COLUMN, True, {"training.freeze_upto": last}),
    ]

  raise ConfigError(f"unknown grid axis '{axis}', expected one of {', '.join(AXES)}")

# --- Corpora ---

class CorpusProvider:
  """
  Pre-training manifests per speaker scale, generated or subset on demand
  and reused by every cell of a grid.
  """

  def __init__(self, config: ExperimentConfig) -> None:
    self._config = config
    self._pretrain: dict[float, Manifest] = {}
    self._main: Optional[Manifest] = None
    self._main_store: Optional[SpectrogramStore] = None

  def main(self) -> Manifest:
    if self._main is None:
      self._main = _load_or_generate(self._config, self._config.corpus_path, MAIN_DIR)
    return self._main

  def main_store(self) -> SpectrogramStore:
    if self._main_store is None:
      self._main_store = make_store(self._config, self.main())
    return self._main_store

  def pretrain(self, scale: float) -> Manifest:
    if scale in self._pretrain:
      return self._pretrain[scale]

    if scale <= 1.0:
      full = _load_or_generate(self._config, self._config.corpus_path, PRETRAIN_DIR)
      manifest = full if scale == 1.0 else speaker_subset(full, scale)
    else:
      n = int(round(self._config.corpus.n_speakers * scale))
      scaled = self._config.with_overrides({"corpus.n_speakers": n})
      manifest = _load_or_generate(scaled, self._config.corpus_path / f"scale_{scale:g}", PRETRAIN_DIR)

    logger.info("Pre-training corpus at scale %g: %d speakers", scale, len(manifest.speakers()))
    self._pretrain[scale] = manifest
    return manifest

def _load_or_generate(config: ExperimentConfig, root: Path, name: str) -> Manifest:
  path = root / name / MANIFEST_NAME
  if path.is_file():
    return ManifestLoader().load(path)
  generate = generate_main_corpus if name == MAIN_DIR else generate_pretrain_corpus
  return generate(config.corpus_spec(), root, config.corpus.workers)

# --- Running ---

def _pretrain_key(config: ExperimentConfig, seed: int) -> str:
  relevant = {
    "pairs": config.to_dict()["pairs"],
    "pre_lr": config.training.pre_lr,
    "pre_batch": config.training.pre_batch,
    "pre_epochs": config.training.pre_epochs,
    "scale": config.training.pretrain_speaker_scale,
    "seed": seed,
  }
  return json.dumps(relevant, sort_keys=True)

def run_grid(config: ExperimentConfig, axis: str, out_dir: str | Path) -> list[CellResult]:
  """
  Runs every cell of `axis` for every seed in config.seeds.

  A failing seed is recorded on its cell and the grid moves on.
  Pre-training runs shared by several cells (same pre-training settings
  and seed) are trained once.
  """
  cells = grid_cells(config, axis)
  out = Path(out_dir)
  corpora = CorpusProvider(config)
  pretrained: dict[str, Path] = {}
  results: list[CellResult] = []

  for n, cell in enumerate(cells, start=1):
    cell_config = config.with_overrides(cell.overrides)
    cell_config.validate()
    result = CellResult(cell)
    cell_dir = out / f"cell_{n:02d}"
    logger.info("Grid %s cell %d/%d: %s | %s", axis, n, len(cells), cell.row, cell.column)

    for seed in config.seeds:
      try:
        dev_eer, eval_eer = _run_seed(cell_config, cell, corpora, pretrained, cell_dir / f"seed_{seed}", seed, out)
      except AcpError as e:
        logger.error("Cell '%s | %s' seed %d failed: %s", cell.row, cell.column, seed, e)
        result.failures.append(SeedFailure(seed, str(e), e.exit_code))
        continue
      result.dev_eers.append(dev_eer)
      result.eval_eers.append(eval_eer)

    results.append(result)

  return results

def _run_seed(
  config: ExperimentConfig,
  cell: GridCell,
  corpora: CorpusProvider,
  pretrained: dict[str, Path],
  run_dir: Path,
  seed: int,
  grid_dir: Path,
) -> tuple[float, float]:
  main_manifest = corpora.main()
  init = None
  if cell.pretrained:
    key = _pretrain_key(config, seed)
    if key not in pretrained:
      manifest = corpora.pretrain(config.training.pretrain_speaker_scale)
      run = pretrain(config, manifest, grid_dir / "pretrain" / f"run_{len(pretrained):03d}", seed=seed)
      pretrained[key] = run.best_path
    init = load_checkpoint(pretrained[key])

  store = corpora.main_store()
  main = maintrain(config, main_manifest, run_dir, init=init, seed=seed, store=store)
  eval_eer = compute_eer(score_trials(main.best_net, main_manifest, Split.EVAL, store, config.training.eval_batch)).eer
  logger.info("seed %d: dev EER %.4f, eval EER %.4f", seed, main.best_metric, eval_eer)
  return float(main.best_metric), float(eval_eer)

def grid_exit_code(results: list[CellResult]) -> int:
  return max((f.exit_code for r in results for f in r.failures), default=0)

def relative_improvement(baseline: Optional[float], candidate: Optional[float]) -> Optional[float]:
  if baseline is None or candidate is None or baseline == 0.0 or math.isnan(baseline):
    return None
  return (baseline - candidate) / baseline
