from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..errors import (
  CheckpointCorruptError,
  CheckpointFormatError,
  IncompatibleCheckpointError,
  UnsupportedVersionError,
)
from ..nn.network import Network, NetSpec, build_network
from ..nn.optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"ACPT0001"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = "<f4"

PARAM_PREFIX = "param/"
BUFFER_PREFIX = "buffer/"
ADAM_M_PREFIX = "adam.m/"
ADAM_V_PREFIX = "adam.v/"

@dataclass
class Checkpoint:
  spec: NetSpec
  params: dict[str, np.ndarray]
  buffers: dict[str, np.ndarray]
  phase: str
  epoch: int
  seeds: dict[str, int] = field(default_factory=dict)
  adam: Optional[AdamState] = None
  meta: dict[str, Any] = field(default_factory=dict)
  version: int = FORMAT_VERSION

def checkpoint_from_network(
  net: Network,
  phase: str,
  epoch: int,
  seeds: Optional[dict[str, int]] = None,
  adam: Optional[AdamState] = None,
  meta: Optional[dict[str, Any]] = None,
) -> Checkpoint:
  return Checkpoint(
    spec=net.spec,
    params={k: v.copy() for k, v in net.params.items()},
    buffers={k: v.copy() for k, v in net.buffers.items()},
    phase=phase,
    epoch=epoch,
    seeds=dict(seeds or {}),
    adam=adam,
    meta=dict(meta or {}),
  )

# --- Serialization ---

def _tensor_items(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
  items = [(PARAM_PREFIX + k, v) for k, v in ckpt.params.items()]
  items += [(BUFFER_PREFIX + k, v) for k, v in ckpt.buffers.items()]
  if ckpt.adam is not None:
    items += [(ADAM_M_PREFIX + k, v) for k, v in ckpt.adam.m.items()]
    items += [(ADAM_V_PREFIX + k, v) for k, v in ckpt.adam.v.items()]
  return items

def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
  """
  Magic, u32 version, u64 header length, JSON header, then float32
  little-endian row-major payloads in header order.

  The file appears atomically (temp file + rename); a failed write leaves
  nothing behind.
  """
  p = Path(path)
  table = []
  payloads = []
  offset = 0
  for name, arr in _tensor_items(ckpt):
    data = np.ascontiguousarray(arr, dtype=PAYLOAD_DTYPE).tobytes(order="C")
    table.append({"name": name, "dtype": "float32", "dims": list(arr.shape), "offset": offset})
    payloads.append(data)
    offset += len(data)

  header = {
    "net_spec": ckpt.spec.to_dict(),
    "meta": {
      "phase": ckpt.phase,
      "epoch": ckpt.epoch,
      "seeds": ckpt.seeds,
      "adam": ckpt.adam.hyperparameters() if ckpt.adam is not None else None,
      **ckpt.meta,
    },
    "tensors": table,
  }
  header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

  p.parent.mkdir(parents=True, exist_ok=True)
  fd, tmp = tempfile.mkstemp(dir=p.parent, prefix=f".{p.name}.", suffix=".tmp")
  try:
    with os.fdopen(fd, "wb") as f:
      f.write(MAGIC)
      f.write(struct.pack("<I", FORMAT_VERSION))
      f.write(struct.pack("<Q", len(header_bytes)))
      f.write(header_bytes)
      for data in payloads:
        f.write(data)
    os.replace(tmp, p)
  except BaseException:
    Path(tmp).unlink(missing_ok=True)
    raise

  logger.debug("Saved checkpoint %s (%d tensors, %d bytes payload)", p, len(table), offset)

def load_checkpoint(path: str | Path) -> Checkpoint:
  p = Path(path)
  if not p.is_file():
    raise FileNotFoundError(f"Checkpoint not found: {p}")
  raw = p.read_bytes()

  fixed = len(MAGIC) + 4 + 8
  if len(raw) < fixed or raw[:len(MAGIC)] != MAGIC:
    raise CheckpointFormatError(f"{p}: not a checkpoint (bad magic)")
  (version,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
  if version != FORMAT_VERSION:
    raise UnsupportedVersionError(f"{p}: checkpoint version {version}, supported {FORMAT_VERSION}")
  (header_len,) = struct.unpack("<Q", raw[len(MAGIC) + 4:fixed])
  if fixed + header_len > len(raw):
    raise CheckpointFormatError(f"{p}: truncated header")

  try:
    header = json.loads(raw[fixed:fixed + header_len].decode("utf-8"))
    spec = NetSpec.from_dict(header["net_spec"])
    meta = dict(header["meta"])
    table = header["tensors"]
  except (ValueError, KeyError, TypeError) as e:
    raise CheckpointFormatError(f"{p}: unreadable header: {e}") from e

  body = memoryview(raw)[fixed + header_len:]
  tensors: dict[str, np.ndarray] = {}
  for t in table:
    count = int(np.prod(t["dims"], dtype=np.int64))
    start, end = int(t["offset"]), int(t["offset"]) + 4 * count
    if t.get("dtype") != "float32" or end > len(body):
      raise CheckpointFormatError(f"{p}: tensor '{t['name']}' runs past end of file")
    tensors[t["name"]] = (
      np.frombuffer(body[start:end], dtype=PAYLOAD_DTYPE).astype(np.float32).reshape(t["dims"])
    )

  ckpt = Checkpoint(
    spec=spec,
    params=_strip(tensors, PARAM_PREFIX),
    buffers=_strip(tensors, BUFFER_PREFIX),
    phase=meta.pop("phase"),
    epoch=int(meta.pop("epoch")),
    seeds={k: int(v) for k, v in (meta.pop("seeds") or {}).items()},
    version=version,
  )
  adam_hyper = meta.pop("adam", None)
  if adam_hyper is not None:
    ckpt.adam = AdamState(
      lr=float(adam_hyper["lr"]),
      beta1=float(adam_hyper["beta1"]),
      beta2=float(adam_hyper["beta2"]),
      eps=float(adam_hyper["eps"]),
      t=int(adam_hyper["t"]),
      m=_strip(tensors, ADAM_M_PREFIX),
      v=_strip(tensors, ADAM_V_PREFIX),
    )
  ckpt.meta = meta

  _validate_shapes(ckpt, p)
  return ckpt

def _strip(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
  return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

def _validate_shapes(ckpt: Checkpoint, path: Path) -> None:
  reference = build_network(ckpt.spec, init_seed=0)
  for kind, expected, actual in (
    ("parameter", reference.params, ckpt.params),
    ("buffer", reference.buffers, ckpt.buffers),
  ):
    if set(expected) != set(actual):
      missing = sorted(set(expected) - set(actual))
      extra = sorted(set(actual) - set(expected))
      raise CheckpointCorruptError(f"{path}: {kind} names disagree with spec (missing {missing}, extra {extra})")
    for name, ref in expected.items():
      if actual[name].shape != ref.shape:
        raise CheckpointCorruptError(
          f"{path}: {kind} '{name}' has shape {actual[name].shape}, spec needs {ref.shape}"
        )
  if ckpt.adam is not None:
    for name in ckpt.adam.m:
      if name not in ckpt.params or ckpt.adam.m[name].shape != ckpt.params[name].shape:
        raise CheckpointCorruptError(f"{path}: Adam moment '{name}' does not match its parameter")

def network_from_checkpoint(ckpt: Checkpoint) -> Network:
  net = build_network(ckpt.spec, init_seed=0)
  for name in net.params:
    net.params[name] = ckpt.params[name].copy()
  for name in net.buffers:
    net.buffers[name] = ckpt.buffers[name].copy()
  return net

# --- Transfer ---

def transfer_weights(ckpt: Checkpoint, target: Network, freeze_upto: Optional[int | str] = None) -> Network:
  """
  Copies every layer up to and including the checkpoint's embedding layer
  into `target`; the layers after it keep the target's own initialization.

  Layers 0..freeze_upto become non-trainable (None: all trainable).
  """
  src = ckpt.spec
  dst = target.spec
  emb = src.embedding_layer_index

  if tuple(src.input_shape) != tuple(dst.input_shape):
    raise IncompatibleCheckpointError(
      f"checkpoint input shape {tuple(src.input_shape)} differs from target {tuple(dst.input_shape)}"
    )
  if dst.embedding_layer_index != emb:
    raise IncompatibleCheckpointError(
      f"embedding layer index differs: checkpoint {emb}, target {dst.embedding_layer_index}"
    )
  for i in range(emb + 1):
    if i >= len(dst.layers) or src.layers[i] != dst.layers[i]:
      name = src.layers[i].name
      raise IncompatibleCheckpointError(
        f"first divergent layer is #{i} '{name}': checkpoint {src.layers[i].to_dict()} "
        f"vs target {dst.layers[i].to_dict() if i < len(dst.layers) else None}"
      )

  net = target.copy()
  for i in range(emb + 1):
    for name in net.layer_params[i]:
      net.params[name] = ckpt.params[name].astype(net.dtype, copy=True)
    for name in net.layer_buffers[i]:
      net.buffers[name] = ckpt.buffers[name].astype(net.dtype, copy=True)

  if freeze_upto is not None and net.spec.layer_index(freeze_upto) > emb:
    raise IncompatibleCheckpointError("freeze_upto must not reach past the transferred layers")
  net.freeze(freeze_upto)

  logger.info(
    "Transferred %d layers from %s checkpoint (epoch %d); frozen layers: %s",
    emb + 1, ckpt.phase, ckpt.epoch, sorted(net.frozen_layers) or "none",
  )
  return net
