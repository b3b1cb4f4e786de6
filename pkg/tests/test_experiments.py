from pathlib import Path
from types import SimpleNamespace

import pytest

from acoustic_pretrain.core import experiments
from acoustic_pretrain.core.experiments import (
  CellResult,
  GridCell,
  SeedFailure,
  grid_cells,
  grid_exit_code,
  relative_improvement,
  run_grid,
)
from acoustic_pretrain.config import ExperimentConfig
from acoustic_pretrain.errors import ConfigError, NumericError

def test_lr_grid_layout():
  cells = grid_cells(ExperimentConfig(), "lr-grid")

  assert len(cells) == 16
  assert len({c.row for c in cells}) == 8
  assert list(dict.fromkeys(c.column for c in cells)) == ["batch=32", "batch=16"]
  assert sum(not c.pretrained for c in cells) == 4
  assert {c.overrides["training.main_batch"] for c in cells} == {16, 32}
  assert {c.overrides["training.main_lr"] for c in cells} == {1e-4, 5e-4}
  assert {c.overrides.get("training.pre_lr") for c in cells if c.pretrained} == {1e-4, 5e-4, 1e-3}
  assert cells[0].row == "no pre-training, main_lr=0.0001"
  assert "pre_lr=0.001, main_lr=0.0005" in {c.row for c in cells}

def test_single_column_axes():
  config = ExperimentConfig()

  scale = grid_cells(config, "data-scale")
  assert [c.overrides["training.pretrain_speaker_scale"] for c in scale] == [0.5, 0.5, 1.0, 1.0, 2.0, 2.0]
  assert [c.overrides["training.main_lr"] for c in scale] == [1e-4, 5e-4] * 3
  assert scale[1].row == "half speakers, main_lr=0.0005"
  assert [c.overrides["pairs.pairs_per_speaker"] for c in grid_cells(config, "pair-doubling")] == [100, 200]
  assert [c.pretrained for c in grid_cells(config, "init-mode")] == [False, True]
  assert grid_cells(config, "freeze")[1].overrides == {"training.freeze_upto": "block3"}

def test_unknown_axis():
  with pytest.raises(ConfigError):
    grid_cells(ExperimentConfig(), "sideways")

def test_every_cell_is_a_valid_config():
  config = ExperimentConfig()
  for axis in experiments.AXES:
    for cell in grid_cells(config, axis):
      config.with_overrides(cell.overrides).validate()

def test_exit_code_and_relative_improvement():
  results = [
    CellResult(GridCell("a", "EER", False), failures=[SeedFailure(0, "x", 2)]),
    CellResult(GridCell("b", "EER", True), failures=[SeedFailure(1, "y", 3)]),
  ]

  assert grid_exit_code(results) == 3
  assert grid_exit_code([CellResult(GridCell("c", "EER", False))]) == 0
  assert relative_improvement(0.2, 0.15) == pytest.approx(0.25)
  assert relative_improvement(0.0, 0.1) is None
  assert relative_improvement(None, 0.1) is None

def test_init_mode_grid_runs_end_to_end(micro_config, tmp_path):
  results = run_grid(micro_config, "init-mode", tmp_path / "grid")

  assert [r.cell.row for r in results] == ["random init", "pre-trained init"]
  for r in results:
    assert not r.failures
    assert len(r.eval_eers) == 1
    assert 0.0 <= r.mean_eval_eer <= 1.0
  assert (tmp_path / "grid" / "pretrain" / "run_000" / "best.ckpt").is_file()

def test_failing_seed_is_recorded_and_grid_continues(micro_config, tmp_path, monkeypatch):
  real = experiments.maintrain

  def flaky(config, manifest, out_dir, init=None, **kwargs):
    if init is not None:
      raise NumericError("diverged")
    return real(config, manifest, out_dir, init=init, **kwargs)

  monkeypatch.setattr(experiments, "maintrain", flaky)

  results = run_grid(micro_config, "init-mode", tmp_path / "grid")

  assert not results[0].failures
  assert results[1].failures[0].message == "diverged"
  assert results[1].mean_eval_eer is None
  assert grid_exit_code(results) == 3

def test_lr_grid_shares_pretraining_across_main_lrs(micro_config, tmp_path, monkeypatch):
  calls = {"pretrain": 0, "maintrain": 0}

  def fake_pretrain(config, manifest, out_dir, seed=None, **kwargs):
    calls["pretrain"] += 1
    return SimpleNamespace(best_path=Path(out_dir) / "best.ckpt")

  def fake_maintrain(config, manifest, out_dir, init=None, **kwargs):
    calls["maintrain"] += 1
    return SimpleNamespace(best_net=None, best_metric=0.1)

  monkeypatch.setattr(experiments, "pretrain", fake_pretrain)
  monkeypatch.setattr(experiments, "maintrain", fake_maintrain)
  monkeypatch.setattr(experiments, "load_checkpoint", lambda path: path)
  monkeypatch.setattr(experiments, "score_trials", lambda *args: None)
  monkeypatch.setattr(experiments, "compute_eer", lambda scores: SimpleNamespace(eer=0.2))
  monkeypatch.setattr(experiments.CorpusProvider, "main", lambda self: None)
  monkeypatch.setattr(experiments.CorpusProvider, "main_store", lambda self: None)
  monkeypatch.setattr(experiments.CorpusProvider, "pretrain", lambda self, scale: None)

  results = run_grid(micro_config, "lr-grid", tmp_path / "grid")

  assert len(results) == 16
  assert calls["maintrain"] == 16
  assert calls["pretrain"] == 3
  assert all(r.mean_dev_eer == pytest.approx(0.1) for r in results)
