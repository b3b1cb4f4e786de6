import numpy as np
import pytest

from acoustic_pretrain.core.synthcorpus import generate_corpus
from acoustic_pretrain.core.trainer import (
  BEST_NAME,
  DEV_PAIRS_NAME,
  LAST_NAME,
  PAIRS_NAME,
  maintrain,
  make_store,
  pretrain,
  select_pretrained_by_downstream,
)
from acoustic_pretrain.core.transfer import load_checkpoint
from acoustic_pretrain.errors import ConfigError, IncompatibleCheckpointError
from acoustic_pretrain.models import Split

def _corpora(config):
  return generate_corpus(config.corpus_spec(), config.corpus_path)

def test_pretrain_writes_checkpoints_and_history(micro_config, tmp_path):
  manifests = _corpora(micro_config)

  result = pretrain(micro_config, manifests.pretrain, tmp_path / "pre", keep_epochs=True)

  assert [h.epoch for h in result.history] == [1, 2]
  assert all(h.dev_metric is not None for h in result.history)
  assert result.best_path == tmp_path / "pre" / BEST_NAME
  assert (tmp_path / "pre" / LAST_NAME).is_file()
  assert [p.name for p in result.epoch_paths] == ["epoch_001.ckpt", "epoch_002.ckpt"]
  ckpt = load_checkpoint(result.best_path)
  assert ckpt.phase == "pretrain"
  assert not ckpt.spec.has_head
  assert ckpt.epoch == result.best_epoch

def test_pretrain_is_reproducible(micro_config, tmp_path):
  manifests = _corpora(micro_config)

  a = pretrain(micro_config, manifests.pretrain, tmp_path / "a")
  b = pretrain(micro_config, manifests.pretrain, tmp_path / "b")

  assert (tmp_path / "a" / LAST_NAME).read_bytes() == (tmp_path / "b" / LAST_NAME).read_bytes()
  assert [h.train_loss for h in a.history] == [h.train_loss for h in b.history]

def test_maintrain_from_pretrained_checkpoint(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  pre = pretrain(micro_config, manifests.pretrain, tmp_path / "pre")

  result = maintrain(micro_config, manifests.main, tmp_path / "main", init=load_checkpoint(pre.best_path))

  assert len(result.history) == 2
  assert all(0.0 <= h.dev_metric <= 1.0 for h in result.history)
  assert result.best_metric == min(h.dev_metric for h in result.history)
  ckpt = load_checkpoint(result.best_path)
  assert ckpt.phase == "maintrain"
  assert ckpt.meta["init"] == "checkpoint"

def test_maintrain_with_frozen_backbone_keeps_it(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  pre = pretrain(micro_config, manifests.pretrain, tmp_path / "pre")
  config = micro_config.with_overrides({"training.freeze_upto": "block2"})
  init = load_checkpoint(pre.best_path)

  result = maintrain(config, manifests.main, tmp_path / "main", init=init)

  for name in ("conv1.weight", "block2.conv_b.weight"):
    assert np.array_equal(result.best_net.params[name], init.params[name])
  assert not np.array_equal(result.best_net.params["dense.weight"], init.params["dense.weight"])

def test_random_init_runs_and_scores_reproducibly(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  store = make_store(micro_config, manifests.main)

  a = maintrain(micro_config, manifests.main, tmp_path / "a", store=store)
  b = maintrain(micro_config, manifests.main, tmp_path / "b", store=store)

  assert [h.dev_metric for h in a.history] == [h.dev_metric for h in b.history]
  assert all(np.array_equal(a.best_net.params[k], b.best_net.params[k]) for k in a.best_net.params)
  assert a.best_net.spec.has_head
  assert len(manifests.main.for_split(Split.DEV)) == 4

def test_sweep_selects_one_candidate(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  pre = pretrain(micro_config, manifests.pretrain, tmp_path / "pre", keep_epochs=True)

  sweep = select_pretrained_by_downstream(micro_config, pre.epoch_paths, manifests.main, tmp_path / "sweep")

  assert sweep.selected in pre.epoch_paths
  assert set(sweep.dev_eers) == set(pre.epoch_paths)
  assert sweep.dev_eers[sweep.selected] == min(sweep.dev_eers.values())

def _same_checkpoint_state(a, b):
  assert a.epoch == b.epoch
  for name in a.params:
    assert np.array_equal(a.params[name], b.params[name]), name
  for name in a.buffers:
    assert np.array_equal(a.buffers[name], b.buffers[name]), name
  assert a.adam.t == b.adam.t
  for name in a.adam.m:
    assert np.array_equal(a.adam.m[name], b.adam.m[name]), name
    assert np.array_equal(a.adam.v[name], b.adam.v[name]), name

def test_resumed_pretraining_matches_an_uninterrupted_run(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  four = micro_config.with_overrides({"training.pre_epochs": 4})
  two = micro_config.with_overrides({"training.pre_epochs": 2})

  straight = pretrain(four, manifests.pretrain, tmp_path / "a")
  pretrain(two, manifests.pretrain, tmp_path / "b")
  resumed = pretrain(four, manifests.pretrain, tmp_path / "b", resume=tmp_path / "b" / LAST_NAME)

  assert [h.epoch for h in resumed.history] == [3, 4]
  assert [h.train_loss for h in resumed.history] == [h.train_loss for h in straight.history[2:]]
  assert [h.dev_metric for h in resumed.history] == [h.dev_metric for h in straight.history[2:]]
  _same_checkpoint_state(load_checkpoint(tmp_path / "a" / LAST_NAME), load_checkpoint(tmp_path / "b" / LAST_NAME))
  assert resumed.best_epoch == straight.best_epoch
  assert resumed.best_metric == straight.best_metric

def test_resumed_maintraining_matches_an_uninterrupted_run(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  store = make_store(micro_config, manifests.main)
  four = micro_config.with_overrides({"training.main_epochs": 4})
  two = micro_config.with_overrides({"training.main_epochs": 2})

  straight = maintrain(four, manifests.main, tmp_path / "a", store=store)
  maintrain(two, manifests.main, tmp_path / "b", store=store)
  resumed = maintrain(four, manifests.main, tmp_path / "b", store=store, resume=tmp_path / "b" / LAST_NAME)

  assert [h.dev_metric for h in resumed.history] == [h.dev_metric for h in straight.history[2:]]
  _same_checkpoint_state(load_checkpoint(tmp_path / "a" / LAST_NAME), load_checkpoint(tmp_path / "b" / LAST_NAME))
  assert load_checkpoint(tmp_path / "b" / LAST_NAME).meta["init"] == "random"

def test_resume_rejects_finished_and_foreign_checkpoints(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  pretrain(micro_config, manifests.pretrain, tmp_path / "pre")
  last = tmp_path / "pre" / LAST_NAME

  with pytest.raises(ConfigError, match="pre_epochs"):
    pretrain(micro_config, manifests.pretrain, tmp_path / "pre", resume=last)
  with pytest.raises(IncompatibleCheckpointError):
    maintrain(micro_config, manifests.main, tmp_path / "main", resume=last)

def test_pretrain_writes_its_pair_lists(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  train_ids = {e.utterance_id for e in manifests.pretrain.for_split(Split.TRAIN).entries}
  dev_ids = {e.utterance_id for e in manifests.pretrain.for_split(Split.DEV).entries}

  pretrain(micro_config, manifests.pretrain, tmp_path / "pre")

  rows = [line.split("\t") for line in (tmp_path / "pre" / PAIRS_NAME).read_text(encoding="utf-8").splitlines()]
  assert len(rows) == 2 * micro_config.pairs.pairs_per_speaker
  assert all(r[0] in train_ids and r[2] in train_ids and r[4] in ("1", "-1") for r in rows)
  dev_rows = (tmp_path / "pre" / DEV_PAIRS_NAME).read_text(encoding="utf-8").splitlines()
  assert len(dev_rows) == micro_config.pairs.pairs_per_speaker
  assert all(line.split("\t")[0] in dev_ids for line in dev_rows)

def test_resampled_pairs_are_written_per_epoch(micro_config, tmp_path):
  manifests = _corpora(micro_config)
  config = micro_config.with_overrides({"pairs.resample_each_epoch": True})

  pretrain(config, manifests.pretrain, tmp_path / "pre")

  first = (tmp_path / "pre" / "pairs_epoch_001.tsv").read_text(encoding="utf-8")
  second = (tmp_path / "pre" / "pairs_epoch_002.tsv").read_text(encoding="utf-8")
  assert first != second
  assert not (tmp_path / "pre" / PAIRS_NAME).exists()

def test_pretrain_loss_decreases(micro_config, tmp_path):
  config = micro_config.with_overrides({
    "pairs.pairs_per_speaker": 8,
    "training.pre_epochs": 8,
    "training.pre_lr": 3e-3,
  })
  manifests = _corpora(config)

  result = pretrain(config, manifests.pretrain, tmp_path / "pre")

  assert result.history[-1].train_loss < result.history[0].train_loss

def test_random_init_beats_chance_on_dev(small_config, tmp_path):
  manifests = _corpora(small_config)

  result = maintrain(small_config, manifests.main, tmp_path / "main")

  assert result.best_metric < 0.5

def test_store_capacity_follows_config(micro_config):
  manifests = _corpora(micro_config)
  config = micro_config.with_overrides({"features.cache_utterances": 2})

  store = make_store(config, manifests.main)
  for entry in manifests.main.entries[:3]:
    store.get(entry.utterance_id)

  assert store.capacity == 2
  assert len(store) == 2
  assert make_store(micro_config, manifests.main).capacity is None
