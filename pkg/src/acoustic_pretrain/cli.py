import argparse
import logging
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, load_config, write_resolved
from .core.evalkit import compute_eer, det_curve, score_trials
from .core.experiments import AXES, CorpusProvider, grid_exit_code, relative_improvement, run_grid
from .core.synthcorpus import MAIN_DIR, MANIFEST_NAME, PRETRAIN_DIR, generate_corpus
from .core.trainer import make_store, maintrain, pretrain, select_pretrained_by_downstream
from .core.transfer import load_checkpoint, network_from_checkpoint
from .errors import AcpError, ConfigError
from .input.manifest_loader import ManifestLoader
from .models import Manifest, Split
from .output.report_generator import ReportGenerator

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

@dataclass
class CliConfig:
  command: str
  config_file: Optional[str]
  overrides: list[str] = field(default_factory=list)
  seed: Optional[int] = None
  verbose: bool = False
  init: str = "random"
  freeze_upto: Optional[str] = None
  checkpoint: Optional[str] = None
  manifest: Optional[str] = None
  split: str = "eval"
  axis: Optional[str] = None
  sweep: bool = False
  resume: Optional[str] = None

def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
    prog="acp",
    description="Self-supervised acoustic-configuration pre-training for replay spoofing detection",
  )

  common = argparse.ArgumentParser(add_help=False)
  common.add_argument(
    "--config",
    default=None,
    help="Path to the JSON experiment config (default: built-in defaults).",
  )
  common.add_argument(
    "--set",
    action="append",
    default=[],
    metavar="KEY=VALUE",
    help="Override one config key, e.g. training.main_lr=1e-4. Can be specified multiple times.",
  )
  common.add_argument("--seed", type=int, default=None, help="Override the run seed.")
  common.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")

  sub = parser.add_subparsers(dest="command", required=True)
  sub.add_parser("gen-data", parents=[common], help="Generate the synthetic corpora and manifests.")

  p_pre = sub.add_parser("pretrain", parents=[common], help="Run acoustic-configuration pre-training.")
  p_pre.add_argument(
    "--sweep",
    action="store_true",
    help="Keep every epoch checkpoint and select the one with the best downstream dev EER.",
  )
  p_pre.add_argument("--resume", default=None, help="Continue an interrupted run from its last.ckpt.")

  p_train = sub.add_parser("train", parents=[common], help="Run replay-spoofing main training.")
  p_train.add_argument(
    "--init",
    default="random",
    help="'random' or the path of a pre-training checkpoint (default: random).",
  )
  p_train.add_argument(
    "--freeze-upto",
    default=None,
    help="Layer name or index up to which transferred layers stay fixed.",
  )
  p_train.add_argument("--resume", default=None, help="Continue an interrupted run from its last.ckpt.")

  p_eval = sub.add_parser("eval", parents=[common], help="Score a split and report its EER.")
  p_eval.add_argument("--checkpoint", default=None, help="Checkpoint to evaluate (default: <output_dir>/train/best.ckpt).")
  p_eval.add_argument("--manifest", default=None, help="Manifest to score (default: the main-training manifest).")
  p_eval.add_argument("--split", default="eval", choices=[s.value for s in Split], help="Split to score (default: eval).")

  p_grid = sub.add_parser("grid", parents=[common], help="Run one experiment grid.")
  p_grid.add_argument("--axis", required=True, choices=AXES, help="Which experiment grid to run.")

  return parser

def parse_args(argv: list[str] | None = None) -> CliConfig:
  parser = build_parser()
  args = parser.parse_args(argv)

  return CliConfig(
    command=args.command,
    config_file=args.config,
    overrides=args.set,
    seed=args.seed,
    verbose=args.verbose,
    init=getattr(args, "init", "random"),
    freeze_upto=getattr(args, "freeze_upto", None),
    checkpoint=getattr(args, "checkpoint", None),
    manifest=getattr(args, "manifest", None),
    split=getattr(args, "split", "eval"),
    axis=getattr(args, "axis", None),
    sweep=getattr(args, "sweep", False),
    resume=getattr(args, "resume", None),
  )

def _setup_logging(command: str, output_dir: Path, verbose: bool) -> None:
  level = logging.DEBUG if verbose else logging.INFO
  logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
  log_path = output_dir / "logs" / f"{command}.log"
  log_path.parent.mkdir(parents=True, exist_ok=True)
  handler = logging.FileHandler(log_path, mode="w", encoding="utf-8")
  handler.setFormatter(logging.Formatter(LOG_FORMAT))
  handler.setLevel(level)
  logging.getLogger().addHandler(handler)

def _load_manifest(path: Path, what: str) -> Manifest:
  if not path.is_file():
    raise ConfigError(f"{what} manifest not found: {path} (run 'acp gen-data' first)")
  return ManifestLoader().load(path)

def _existing_checkpoint(path: Optional[str]) -> Optional[Path]:
  if path is None:
    return None
  p = Path(path)
  if not p.is_file():
    raise ConfigError(f"checkpoint not found: {p}")
  return p

def _freeze_value(text: Optional[str]) -> Optional[int | str]:
  if text is None:
    return None
  return int(text) if text.lstrip("-").isdigit() else text

# --- Commands ---

def cmd_gen_data(config: ExperimentConfig) -> int:
  manifests = generate_corpus(config.corpus_spec(), config.corpus_path, config.corpus.workers)
  print("Synthetic corpora written.")
  print(f"  Pre-training: {len(manifests.pretrain)} utterances, {len(manifests.pretrain.speakers())} speakers")
  print(f"  Main:         {len(manifests.main)} utterances, {len(manifests.main.speakers())} speakers")
  print(f"  Location:     {config.corpus_path}")
  return 0

def cmd_pretrain(config: ExperimentConfig, sweep: bool, resume: Optional[str] = None) -> int:
  manifest = _load_manifest(config.corpus_path / PRETRAIN_DIR / MANIFEST_NAME, "pre-training")
  scale = config.training.pretrain_speaker_scale
  if scale != 1.0:
    manifest = CorpusProvider(config).pretrain(scale)
  out = config.output_path / "pretrain"
  sweep = sweep or config.training.sweep
  result = pretrain(config, manifest, out, keep_epochs=sweep, resume=_existing_checkpoint(resume))

  print("Pre-training finished.")
  print(f"  Speakers:    {len(manifest.speakers())} (scale {scale:g})")
  print(f"  Best epoch:  {result.best_epoch} (pair loss {result.best_metric:.5f})")
  print(f"  Checkpoint:  {result.best_path}")

  if sweep:
    main_manifest = _load_manifest(config.corpus_path / MAIN_DIR / MANIFEST_NAME, "main-training")
    chosen = select_pretrained_by_downstream(config, result.epoch_paths, main_manifest, out / "sweep")
    selected = out / "selected.ckpt"
    shutil.copyfile(chosen.selected, selected)
    print(f"  Sweep pick:  {chosen.selected.name} (dev EER {chosen.dev_eers[chosen.selected]:.4f}) -> {selected}")
  return 0

def cmd_train(config: ExperimentConfig, init: str, resume: Optional[str] = None) -> int:
  manifest = _load_manifest(config.corpus_path / MAIN_DIR / MANIFEST_NAME, "main-training")
  resume_path = _existing_checkpoint(resume)
  ckpt = None
  if init != "random" and resume_path is None:
    ckpt = load_checkpoint(_existing_checkpoint(init))

  out = config.output_path / "train"
  store = make_store(config, manifest)
  result = maintrain(config, manifest, out, init=ckpt, store=store, resume=resume_path)
  scores = score_trials(result.best_net, manifest, Split.DEV, store, config.training.eval_batch)
  score_path = ReportGenerator().write_scores(scores, out / "dev_scores.txt")

  print("Main training finished.")
  print(f"  Init:        {init}")
  print(f"  Best epoch:  {result.best_epoch} (dev EER {result.best_metric:.4f})")
  print(f"  Checkpoint:  {result.best_path}")
  print(f"  Dev scores:  {score_path}")
  return 0

def cmd_eval(config: ExperimentConfig, checkpoint: Optional[str], manifest_path: Optional[str], split: str) -> int:
  ckpt_path = Path(checkpoint) if checkpoint else config.output_path / "train" / "best.ckpt"
  if not ckpt_path.is_file():
    raise ConfigError(f"checkpoint not found: {ckpt_path}")
  m_path = Path(manifest_path) if manifest_path else config.corpus_path / MAIN_DIR / MANIFEST_NAME
  manifest = _load_manifest(m_path, "evaluation")

  net = network_from_checkpoint(load_checkpoint(ckpt_path))
  scores = score_trials(net, manifest, Split(split), make_store(config, manifest), config.training.eval_batch)
  result = compute_eer(scores)

  out = config.output_path / "eval"
  reporter = ReportGenerator()
  score_path = reporter.write_scores(scores, out / f"{split}_scores.txt")
  det_path = reporter.write_det_csv(det_curve(scores), out / f"{split}_det.csv")

  print(f"EER ({split}): {100.0 * result.eer:.2f}% at threshold {result.threshold:.6g}")
  print(f"  Trials:      {len(scores)} scored, {scores.failures} failed")
  print(f"  Scores:      {score_path}")
  print(f"  DET curve:   {det_path}")
  return 0

def cmd_grid(config: ExperimentConfig, axis: str) -> int:
  out = config.output_path / "grid" / axis
  results = run_grid(config, axis, out)

  reporter = ReportGenerator()
  csv_path = reporter.write_grid_csv(results, config.output_path / f"grid_{axis}.csv")
  md_path = reporter.write_grid_markdown(axis, results, config.output_path / f"grid_{axis}.md")

  print(f"Grid '{axis}' finished: {len(results)} cells x {len(config.seeds)} seeds.")
  for r in results:
    eer = "failed" if r.mean_eval_eer is None else f"{100.0 * r.mean_eval_eer:.2f}%"
    print(f"  {r.cell.row} | {r.cell.column}: {eer}")
  if axis == "init-mode" and len(results) == 2:
    gain = relative_improvement(results[0].mean_eval_eer, results[1].mean_eval_eer)
    if gain is not None:
      print(f"  Relative EER improvement from pre-training: {100.0 * gain:.1f}%")
  print(f"  CSV:         {csv_path}")
  print(f"  Table:       {md_path}")

  code = grid_exit_code(results)
  if code:
    print(f"{sum(len(r.failures) for r in results)} grid run(s) failed.", file=sys.stderr)
  return code

def _run(cli: CliConfig) -> int:
  overrides = list(cli.overrides)
  config = load_config(cli.config_file, overrides, cli.seed)
  if cli.freeze_upto is not None:
    config = config.with_overrides({"training.freeze_upto": _freeze_value(cli.freeze_upto)})
    config.validate()

  _setup_logging(cli.command, config.output_path, cli.verbose)
  write_resolved(config, config.output_path)
  logger.info("acp %s, seed %d, output %s", cli.command, config.seed, config.output_path)

  if cli.command == "gen-data":
    return cmd_gen_data(config)
  if cli.command == "pretrain":
    return cmd_pretrain(config, cli.sweep, cli.resume)
  if cli.command == "train":
    return cmd_train(config, cli.init, cli.resume)
  if cli.command == "eval":
    return cmd_eval(config, cli.checkpoint, cli.manifest, cli.split)
  return cmd_grid(config, cli.axis)

def main(argv: list[str] | None = None) -> None:
  cli = parse_args(argv)

  try:
    code = _run(cli)
  except AcpError as e:
    print(f"Error: {e}", file=sys.stderr)
    raise SystemExit(e.exit_code)
  except OSError as e:
    print(f"Error: {e}", file=sys.stderr)
    raise SystemExit(2)

  if code:
    raise SystemExit(code)
