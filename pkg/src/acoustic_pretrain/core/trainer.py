from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..config import ExperimentConfig
from ..errors import ConfigError, ContractError, IncompatibleCheckpointError
from ..models import Manifest, SegmentPair, Split
from ..nn.losses import cross_entropy_objective, pair_objective
from ..nn.network import NetSpec, Network, backward, build_network, forward
from ..nn.optim import AdamState, adam_step
from .dsp import SpectrogramStore, crop_frames
from .evalkit import compute_eer, score_trials
from .pairs import pair_batch, sample_pairs, write_pairs
from .synthcorpus import derive_rng, derive_seed
from .transfer import (
  Checkpoint,
  checkpoint_from_network,
  load_checkpoint,
  network_from_checkpoint,
  save_checkpoint,
  transfer_weights,
)

logger = logging.getLogger(__name__)

PHASE_PRETRAIN = "pretrain"
PHASE_MAINTRAIN = "maintrain"

BEST_NAME = "best.ckpt"
LAST_NAME = "last.ckpt"
PAIRS_NAME = "pairs.tsv"
DEV_PAIRS_NAME = "dev_pairs.tsv"

@dataclass
class EpochLog:
  epoch: int
  train_loss: float
  dev_metric: Optional[float]

@dataclass
class PhaseResult:
  """
  Outcome of one training phase. `best_net` is the network of the epoch
  with the lowest dev metric (dev pair loss or dev EER).
  """

  phase: str
  best_net: Network
  best_epoch: int
  best_metric: Optional[float]
  history: list[EpochLog] = field(default_factory=list)
  best_path: Optional[Path] = None
  last_path: Optional[Path] = None
  epoch_paths: list[Path] = field(default_factory=list)

def make_store(config: ExperimentConfig, manifest: Manifest) -> SpectrogramStore:
  capacity = config.features.cache_utterances or None
  return SpectrogramStore(manifest, config.frame_params(), config.corpus.sample_rate, capacity=capacity)

def _train_step(net: Network, x: np.ndarray, objective, adam: AdamState) -> float:
  result = forward(net, x, mode="train")
  loss, upstream = objective(result)
  grads = backward(net, result.cache, upstream)
  adam_step(net.params, grads.params, adam, frozen=net.frozen_params())
  return loss

def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
  return [order[i:i + size] for i in range(0, len(order), size)]

def _is_better(metric: Optional[float], best: Optional[float]) -> bool:
  if metric is None:
    return False
  return best is None or metric < best

# --- Resuming ---

@dataclass
class _Resumed:
  net: Network
  adam: AdamState
  epoch: int
  meta: dict

def _resume(path: str | Path, spec: NetSpec, phase: str, lr: float, epochs: int, epochs_key: str) -> _Resumed:
  """
  Network, optimizer state and epoch of an interrupted run of `phase`.
  """
  ckpt = load_checkpoint(path)
  if ckpt.phase != phase:
    raise IncompatibleCheckpointError(f"{path}: a {ckpt.phase} checkpoint cannot resume {phase}")
  if ckpt.spec != spec:
    raise IncompatibleCheckpointError(f"{path}: network layout differs from the configured one")
  if ckpt.adam is None:
    raise IncompatibleCheckpointError(f"{path}: no optimizer state to resume from")
  if ckpt.epoch >= epochs:
    raise ConfigError(f"{path} is at epoch {ckpt.epoch}; raise training.{epochs_key} above it to resume")

  ckpt.adam.lr = lr
  logger.info("Resuming %s from %s after epoch %d (Adam step %d)", phase, path, ckpt.epoch, ckpt.adam.t)
  return _Resumed(network_from_checkpoint(ckpt), ckpt.adam, ckpt.epoch, ckpt.meta)

def _restore_best(result: PhaseResult, resumed: _Resumed, resume_path: str | Path, out: Path) -> None:
  result.best_metric = resumed.meta.get("best_metric")
  result.best_epoch = int(resumed.meta.get("best_epoch", resumed.epoch))
  result.best_net = resumed.net.copy()
  best_path = Path(resume_path).parent / BEST_NAME
  if not best_path.is_file():
    return
  best = load_checkpoint(best_path)
  if best.epoch != result.best_epoch:
    return
  result.best_net = network_from_checkpoint(best)
  result.best_net.frozen_layers = set(resumed.net.frozen_layers)
  result.best_path = out / BEST_NAME
  if best_path.resolve() != result.best_path.resolve():
    save_checkpoint(best, result.best_path)

def _save_epoch(result: PhaseResult, ckpt: Checkpoint, metric: Optional[float], net: Network, out: Path) -> None:
  if _is_better(metric, result.best_metric):
    result.best_metric = metric
    result.best_epoch = ckpt.epoch
    result.best_net = net.copy()
  ckpt.meta.update(best_metric=result.best_metric, best_epoch=result.best_epoch)

  result.last_path = out / LAST_NAME
  save_checkpoint(ckpt, result.last_path)
  if result.best_epoch == ckpt.epoch:
    result.best_path = out / BEST_NAME
    save_checkpoint(ckpt, result.best_path)

# --- Phase 1: acoustic-configuration pre-training ---

def dev_pair_loss(
  net: Network,
  pairs: Sequence[SegmentPair],
  store: SpectrogramStore,
  n_frames: int,
  batch_size: int,
) -> float:
  total = 0.0
  for start in range(0, len(pairs), batch_size):
    chunk = pairs[start:start + batch_size]
    x, labels = pair_batch(chunk, store, n_frames)
    loss, _ = pair_objective(labels)(forward(net, x, mode="infer"))
    total += loss * len(chunk)
  return total / len(pairs)

def pretrain(
  config: ExperimentConfig,
  manifest: Manifest,
  out_dir: str | Path,
  seed: Optional[int] = None,
  store: Optional[SpectrogramStore] = None,
  keep_epochs: bool = False,
  resume: Optional[str | Path] = None,
) -> PhaseResult:
  """
  Trains the head-less network to tell same-utterance segment pairs from
  different-utterance pairs of one speaker.

  Writes last.ckpt and best.ckpt (lowest dev pair loss; lowest train loss
  when the corpus has no dev speakers) into out_dir, plus one checkpoint
  per epoch with keep_epochs. The sampled pair lists go next to them:
  pairs.tsv (pairs_epoch_NNN.tsv when pairs are redrawn every epoch) and
  dev_pairs.tsv.

  `resume` continues from a last.ckpt of the same configuration; the run
  then matches an uninterrupted one bit for bit.
  """
  seed = config.seed if seed is None else seed
  t = config.training
  crop = config.pairs.crop_frames
  out = Path(out_dir)
  store = store or make_store(config, manifest)

  train_m = manifest.for_split(Split.TRAIN)
  dev_m = manifest.for_split(Split.DEV)
  if len(train_m) == 0:
    raise ContractError("pre-training manifest has no train speakers")

  spec = config.net_spec().without_head()
  resumed = _resume(resume, spec, PHASE_PRETRAIN, t.pre_lr, t.pre_epochs, "pre_epochs") if resume else None
  if resumed:
    net, adam, start = resumed.net, resumed.adam, resumed.epoch + 1
  else:
    net = build_network(spec, init_seed=derive_seed(seed, "init", PHASE_PRETRAIN))
    adam = AdamState.init(net.params, lr=t.pre_lr)
    start = 1

  budget = config.pair_budget(derive_seed(seed, "pairs"))
  dev_pairs = (
    sample_pairs(dev_m, config.pair_budget(derive_seed(seed, "dev-pairs")), store.n_frames, crop)
    if len(dev_m) else []
  )
  fixed_pairs = None if config.pairs.resample_each_epoch else sample_pairs(train_m, budget, store.n_frames, crop)
  if fixed_pairs is not None:
    write_pairs(fixed_pairs, out / PAIRS_NAME)
  if dev_pairs:
    write_pairs(dev_pairs, out / DEV_PAIRS_NAME)

  n_train, n_dev = len(train_m.speakers()), len(dev_m.speakers())
  logger.info(
    "Pre-training: %d train speakers, %d dev speakers, %d parameters, epochs %d-%d",
    n_train, n_dev, net.parameter_count(), start, t.pre_epochs,
  )

  result = PhaseResult(PHASE_PRETRAIN, net.copy(), 0, None)
  if resumed:
    _restore_best(result, resumed, resume, out)

  for epoch in range(start, t.pre_epochs + 1):
    pairs = fixed_pairs
    if pairs is None:
      pairs = sample_pairs(train_m, budget, store.n_frames, crop, epoch=epoch)
      write_pairs(pairs, out / f"pairs_epoch_{epoch:03d}.tsv")
    order = derive_rng(seed, "shuffle", PHASE_PRETRAIN, epoch).permutation(len(pairs))

    total = 0.0
    for idx in _batches(order, t.pre_batch):
      chunk = [pairs[i] for i in idx]
      x, labels = pair_batch(chunk, store, crop)
      total += _train_step(net, x, pair_objective(labels), adam) * len(chunk)
    train_loss = total / len(pairs)

    dev_loss = dev_pair_loss(net, dev_pairs, store, crop, t.pre_batch) if dev_pairs else None
    result.history.append(EpochLog(epoch, train_loss, dev_loss))
    logger.info(
      "pretrain epoch %d/%d: train pair loss %.5f, dev pair loss %s",
      epoch, t.pre_epochs, train_loss, "n/a" if dev_loss is None else f"{dev_loss:.5f}",
    )

    meta = {
      "dev_pair_loss": dev_loss,
      "train_pair_loss": train_loss,
      "train_speakers": n_train,
      "dev_speakers": n_dev,
    }
    ckpt = checkpoint_from_network(net, PHASE_PRETRAIN, epoch, {"seed": seed}, adam, meta)
    _save_epoch(result, ckpt, dev_loss if dev_pairs else train_loss, net, out)
    if keep_epochs:
      path = out / f"epoch_{epoch:03d}.ckpt"
      save_checkpoint(ckpt, path)
      result.epoch_paths.append(path)

  logger.info("Pre-training done: best epoch %d (metric %.5f)", result.best_epoch, result.best_metric)
  return result

# --- Phase 2: replay-spoofing main training ---

def maintrain(
  config: ExperimentConfig,
  manifest: Manifest,
  out_dir: str | Path,
  init: Optional[Checkpoint] = None,
  seed: Optional[int] = None,
  store: Optional[SpectrogramStore] = None,
  epochs: Optional[int] = None,
  resume: Optional[str | Path] = None,
) -> PhaseResult:
  """
  Cross-entropy training on random fixed-length crops of the train split,
  from random weights or from a pre-trained checkpoint.

  Dev EER is measured on full utterances after every epoch; the best and
  the last network are checkpointed in out_dir. With `resume` the run
  continues from a last.ckpt and `init` is not used.
  """
  seed = config.seed if seed is None else seed
  t = config.training
  epochs = epochs or t.main_epochs
  crop = config.net.crop_frames
  out = Path(out_dir)
  store = store or make_store(config, manifest)

  resumed = _resume(resume, config.net_spec(), PHASE_MAINTRAIN, t.main_lr, epochs, "main_epochs") if resume else None
  if resumed:
    net, adam, start = resumed.net, resumed.adam, resumed.epoch + 1
    init_label = resumed.meta.get("init", "random")
    if init_label == "checkpoint":
      net.freeze(t.freeze_upto)
  else:
    net = build_network(config.net_spec(), init_seed=derive_seed(seed, "init", PHASE_MAINTRAIN))
    if init is not None:
      net = transfer_weights(init, net, t.freeze_upto)
    elif t.freeze_upto is not None:
      logger.warning("freeze_upto=%s ignored: nothing is transferred into a random network", t.freeze_upto)
    adam = AdamState.init(net.params, lr=t.main_lr)
    start = 1
    init_label = "checkpoint" if init is not None else "random"

  train_entries = manifest.for_split(Split.TRAIN).entries
  if not train_entries:
    raise ContractError("main-training manifest has no train utterances")
  classes = np.array([e.utt_class.index for e in train_entries])

  logger.info(
    "Main training: %d train utterances, init=%s, epochs %d-%d",
    len(train_entries), init_label, start, epochs,
  )

  result = PhaseResult(PHASE_MAINTRAIN, net.copy(), 0, None)
  if resumed:
    _restore_best(result, resumed, resume, out)

  for epoch in range(start, epochs + 1):
    rng = derive_rng(seed, "shuffle", PHASE_MAINTRAIN, epoch)
    order = rng.permutation(len(train_entries))

    total = 0.0
    for idx in _batches(order, t.main_batch):
      x = np.stack([
        crop_frames(store.get(train_entries[i].utterance_id), crop, mode="random", rng=rng).data
        for i in idx
      ]).astype(np.float32)[..., None]
      total += _train_step(net, x, cross_entropy_objective(classes[idx].tolist()), adam) * len(idx)
    train_loss = total / len(train_entries)

    dev_eer = compute_eer(score_trials(net, manifest, Split.DEV, store, t.eval_batch)).eer
    result.history.append(EpochLog(epoch, train_loss, dev_eer))
    logger.info("train epoch %d/%d: cross-entropy %.5f, dev EER %.4f", epoch, epochs, train_loss, dev_eer)

    meta = {"dev_eer": dev_eer, "train_loss": train_loss, "init": init_label}
    ckpt = checkpoint_from_network(net, PHASE_MAINTRAIN, epoch, {"seed": seed}, adam, meta)
    _save_epoch(result, ckpt, dev_eer, net, out)

  logger.info("Main training done: best epoch %d, dev EER %.4f", result.best_epoch, result.best_metric)
  return result

# --- Downstream checkpoint selection ---

@dataclass
class SweepResult:
  selected: Path
  dev_eers: dict[Path, float]

def select_pretrained_by_downstream(
  config: ExperimentConfig,
  candidates: Sequence[Path],
  main_manifest: Manifest,
  out_dir: str | Path,
  seed: Optional[int] = None,
) -> SweepResult:
  """
  Runs a short main training from every candidate pre-training checkpoint
  and keeps the one whose best dev EER is lowest (earliest on ties).
  """
  if not candidates:
    raise ContractError("no pre-training checkpoints to select from")
  store = make_store(config, main_manifest)
  out = Path(out_dir)

  dev_eers: dict[Path, float] = {}
  for path in candidates:
    run = maintrain(
      config, main_manifest, out / path.stem,
      init=load_checkpoint(path), seed=seed, store=store, epochs=config.training.sweep_main_epochs,
    )
    dev_eers[path] = run.best_metric if run.best_metric is not None else math.inf
    logger.info("Sweep candidate %s: dev EER %.4f", path.name, dev_eers[path])

  selected = min(candidates, key=lambda p: dev_eers[p])
  return SweepResult(selected, dev_eers)
