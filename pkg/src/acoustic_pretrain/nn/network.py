from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from ..errors import ContractError, NetSpecError, NonFiniteActivationError
from .layers import BatchNorm, Conv2d, Dense, GlobalAvgPool, GlobalMaxPool, LeakyRelu

class LayerKind(str, Enum):
  CONV2D = "conv2d"
  BATCHNORM = "batchnorm"
  LEAKY_RELU = "leaky_relu"
  RESIDUAL_BLOCK = "residual_block"
  MAXPOOL_GLOBAL = "maxpool_global"
  AVGPOOL_GLOBAL = "avgpool_global"
  DENSE = "dense"

POOL_KINDS = (LayerKind.MAXPOOL_GLOBAL, LayerKind.AVGPOOL_GLOBAL)

@dataclass(frozen=True)
class LayerSpec:
  kind: LayerKind
  name: str
  channels: Optional[int] = None
  in_channels: Optional[int] = None
  kernel: tuple[int, int] = (3, 3)
  stride: tuple[int, int] = (1, 1)
  units: Optional[int] = None
  negative_slope: float = 0.3
  momentum: float = 0.1
  eps: float = 1e-5

  def to_dict(self) -> dict:
    return {
      "kind": self.kind.value,
      "name": self.name,
      "channels": self.channels,
      "in_channels": self.in_channels,
      "kernel": list(self.kernel),
      "stride": list(self.stride),
      "units": self.units,
      "negative_slope": self.negative_slope,
      "momentum": self.momentum,
      "eps": self.eps,
    }

  @classmethod
  def from_dict(cls, d: dict) -> LayerSpec:
    return cls(
      kind=LayerKind(d["kind"]),
      name=d["name"],
      channels=d.get("channels"),
      in_channels=d.get("in_channels"),
      kernel=tuple(d.get("kernel", (3, 3))),
      stride=tuple(d.get("stride", (1, 1))),
      units=d.get("units"),
      negative_slope=float(d.get("negative_slope", 0.3)),
      momentum=float(d.get("momentum", 0.1)),
      eps=float(d.get("eps", 1e-5)),
    )

@dataclass(frozen=True)
class NetSpec:
  """
  Ordered layers plus the index of the embedding layer.

  Consecutive global-pool layers form one group: they all read the same
  input and their outputs are concatenated along channels.
  """

  input_shape: tuple[int, int, int]
  layers: tuple[LayerSpec, ...]
  embedding_layer_index: int
  n_classes: int = 2

  @property
  def has_head(self) -> bool:
    return self.embedding_layer_index < len(self.layers) - 1

  def without_head(self) -> NetSpec:
    return replace(self, layers=self.layers[:self.embedding_layer_index + 1])

  def layer_index(self, ref: int | str) -> int:
    if isinstance(ref, int):
      if not 0 <= ref < len(self.layers):
        raise NetSpecError(f"layer index {ref} out of range")
      return ref
    for i, layer in enumerate(self.layers):
      if layer.name == ref:
        return i
    raise NetSpecError(f"no layer named '{ref}'")

  def to_dict(self) -> dict:
    return {
      "input_shape": list(self.input_shape),
      "layers": [layer.to_dict() for layer in self.layers],
      "embedding_layer_index": self.embedding_layer_index,
      "n_classes": self.n_classes,
    }

  @classmethod
  def from_dict(cls, d: dict) -> NetSpec:
    return cls(
      input_shape=tuple(d["input_shape"]),
      layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
      embedding_layer_index=int(d["embedding_layer_index"]),
      n_classes=int(d.get("n_classes", 2)),
    )

# --- Spec factories ---

def _backbone(
  conv1_channels: int,
  block_channels: Sequence[int],
  time_strides: Sequence[int],
  freq_strides: Sequence[int],
  embedding_dim: int,
  slope: float,
) -> list[LayerSpec]:
  if not len(block_channels) == len(time_strides) == len(freq_strides):
    raise NetSpecError("block_channels, time_strides and freq_strides must have equal length")

  layers = [
    LayerSpec(LayerKind.CONV2D, "conv1", channels=conv1_channels, in_channels=1),
    LayerSpec(LayerKind.BATCHNORM, "bn1"),
    LayerSpec(LayerKind.LEAKY_RELU, "act1", negative_slope=slope),
  ]
  in_ch = conv1_channels
  for i, (ch, ts, fs) in enumerate(zip(block_channels, time_strides, freq_strides), start=1):
    layers.append(LayerSpec(
      LayerKind.RESIDUAL_BLOCK, f"block{i}",
      channels=ch, in_channels=in_ch, stride=(ts, fs), negative_slope=slope,
    ))
    in_ch = ch
  layers += [
    LayerSpec(LayerKind.MAXPOOL_GLOBAL, "maxpool"),
    LayerSpec(LayerKind.AVGPOOL_GLOBAL, "avgpool"),
    LayerSpec(LayerKind.DENSE, "dense", units=embedding_dim, negative_slope=slope),
  ]
  return layers

def _with_head(layers: list[LayerSpec], n_classes: int, slope: float) -> list[LayerSpec]:
  return layers + [
    LayerSpec(LayerKind.LEAKY_RELU, "act_dense", negative_slope=slope),
    LayerSpec(LayerKind.DENSE, "output", units=n_classes),
  ]

def desk_netspec(
  n_frames: int = 120,
  n_bins: int = 257,
  conv1_channels: int = 8,
  block_channels: Sequence[int] = (8, 16, 32),
  time_strides: Optional[Sequence[int]] = None,
  freq_strides: Optional[Sequence[int]] = None,
  embedding_dim: int = 64,
  n_classes: int = 2,
  negative_slope: float = 0.3,
  head: bool = True,
) -> NetSpec:
  time_strides = time_strides or [2] * len(block_channels)
  freq_strides = freq_strides or [2] * len(block_channels)
  layers = _backbone(conv1_channels, block_channels, time_strides, freq_strides, embedding_dim, negative_slope)
  emb = len(layers) - 1
  if head:
    layers = _with_head(layers, n_classes, negative_slope)
  spec = NetSpec((n_frames, n_bins, 1), tuple(layers), emb, n_classes)
  infer_shapes(spec)
  return spec

def full_netspec(head: bool = True) -> NetSpec:
  """
  Full-size geometry: (120, 1025, 16) after Conv1 and (15, 17, 128) after
  the fifth residual block.
  """
  return desk_netspec(
    n_frames=120,
    n_bins=1025,
    conv1_channels=16,
    block_channels=(16, 32, 64, 128, 128),
    time_strides=(1, 1, 2, 2, 2),
    freq_strides=(1, 1, 2, 4, 8),
    head=head,
  )

# --- Shape inference ---

def _stages(spec: NetSpec) -> list[tuple[int, ...]]:
  stages: list[tuple[int, ...]] = []
  i = 0
  while i < len(spec.layers):
    j = i + 1
    if spec.layers[i].kind in POOL_KINDS:
      while j < len(spec.layers) and spec.layers[j].kind in POOL_KINDS:
        j += 1
    stages.append(tuple(range(i, j)))
    i = j
  return stages

def _block_needs_projection(layer: LayerSpec, in_channels: int) -> bool:
  return in_channels != layer.channels or tuple(layer.stride) != (1, 1)

def infer_shapes(spec: NetSpec) -> list[tuple[int, ...]]:
  """
  Per-layer output shapes without the batch axis.
  """
  if not 0 <= spec.embedding_layer_index < len(spec.layers):
    raise NetSpecError("embedding_layer_index out of range")
  emb = spec.layers[spec.embedding_layer_index]
  if emb.kind is not LayerKind.DENSE:
    raise NetSpecError(f"embedding layer '{emb.name}' must be dense")
  if spec.has_head:
    last = spec.layers[-1]
    if last.kind is not LayerKind.DENSE or last.units != spec.n_classes:
      raise NetSpecError(f"output layer '{last.name}' must be dense with {spec.n_classes} units")

  names = [layer.name for layer in spec.layers]
  if len(set(names)) != len(names):
    raise NetSpecError("layer names must be unique")

  shapes: list[tuple[int, ...]] = [()] * len(spec.layers)
  shape: tuple[int, ...] = tuple(spec.input_shape)
  prev_name = "input"

  for stage in _stages(spec):
    stage_out: list[tuple[int, ...]] = []
    for idx in stage:
      layer = spec.layers[idx]
      out = _layer_out_shape(layer, shape, prev_name)
      shapes[idx] = out
      stage_out.append(out)
    if len(stage) > 1:
      shape = (1, 1, sum(s[-1] for s in stage_out))
    else:
      shape = stage_out[0]
    prev_name = spec.layers[stage[-1]].name

  return shapes

def _layer_out_shape(layer: LayerSpec, shape: tuple[int, ...], prev: str) -> tuple[int, ...]:
  kind = layer.kind
  spatial = kind in (LayerKind.CONV2D, LayerKind.RESIDUAL_BLOCK, *POOL_KINDS)

  if spatial and len(shape) != 3:
    raise NetSpecError(f"layer '{layer.name}' needs a (frames, bins, channels) input but '{prev}' produces {shape}")

  if kind in (LayerKind.CONV2D, LayerKind.RESIDUAL_BLOCK):
    h, w, c = shape
    if layer.channels is None or layer.channels < 1:
      raise NetSpecError(f"layer '{layer.name}' needs a positive channel count")
    if layer.in_channels is not None and layer.in_channels != c:
      raise NetSpecError(
        f"layer '{layer.name}' expects {layer.in_channels} input channels but '{prev}' produces {c}"
      )
    kh, kw = layer.kernel if kind is LayerKind.CONV2D else (3, 3)
    sh, sw = layer.stride
    h_out, w_out = Conv2d.output_size(h, kh, sh), Conv2d.output_size(w, kw, sw)
    if h_out < 1 or w_out < 1:
      raise NetSpecError(f"layer '{layer.name}' shrinks '{prev}' output {shape} to nothing")
    return (h_out, w_out, layer.channels)

  if kind in POOL_KINDS:
    return (1, 1, shape[-1])

  if kind is LayerKind.DENSE:
    if len(shape) == 3 and shape[:2] != (1, 1):
      raise NetSpecError(
        f"dense layer '{layer.name}' needs a pooled input but '{prev}' produces {shape}"
      )
    if layer.units is None or layer.units < 1:
      raise NetSpecError(f"dense layer '{layer.name}' needs a positive unit count")
    return (layer.units,)

  if kind is LayerKind.BATCHNORM and len(shape) != 3:
    raise NetSpecError(f"batchnorm '{layer.name}' needs a spatial input but '{prev}' produces {shape}")

  return shape

def _layer_in_shapes(spec: NetSpec) -> list[tuple[int, ...]]:
  out_shapes = infer_shapes(spec)
  ins: list[tuple[int, ...]] = [()] * len(spec.layers)
  shape: tuple[int, ...] = tuple(spec.input_shape)
  for stage in _stages(spec):
    for idx in stage:
      ins[idx] = shape
    if len(stage) > 1:
      shape = (1, 1, sum(out_shapes[i][-1] for i in stage))
    else:
      shape = out_shapes[stage[0]]
  return ins

# --- Parameters ---

def _layer_tensors(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[dict[str, tuple], dict[str, tuple]]:
  """
  (parameter shapes, buffer shapes) keyed by full tensor name.
  """
  n = layer.name
  kind = layer.kind

  if kind is LayerKind.CONV2D:
    kh, kw = layer.kernel
    return {f"{n}.weight": (kh, kw, in_shape[-1], layer.channels), f"{n}.bias": (layer.channels,)}, {}

  if kind is LayerKind.BATCHNORM:
    c = in_shape[-1]
    return (
      {f"{n}.gamma": (c,), f"{n}.beta": (c,)},
      {f"{n}.running_mean": (c,), f"{n}.running_var": (c,)},
    )

  if kind is LayerKind.RESIDUAL_BLOCK:
    c_in, c_out = in_shape[-1], layer.channels
    params = {
      f"{n}.bn_a.gamma": (c_in,),
      f"{n}.bn_a.beta": (c_in,),
      f"{n}.conv_a.weight": (3, 3, c_in, c_out),
      f"{n}.conv_a.bias": (c_out,),
      f"{n}.bn_b.gamma": (c_out,),
      f"{n}.bn_b.beta": (c_out,),
      f"{n}.conv_b.weight": (3, 3, c_out, c_out),
      f"{n}.conv_b.bias": (c_out,),
    }
    if _block_needs_projection(layer, c_in):
      params[f"{n}.proj.weight"] = (1, 1, c_in, c_out)
      params[f"{n}.proj.bias"] = (c_out,)
    buffers = {
      f"{n}.bn_a.running_mean": (c_in,),
      f"{n}.bn_a.running_var": (c_in,),
      f"{n}.bn_b.running_mean": (c_out,),
      f"{n}.bn_b.running_var": (c_out,),
    }
    return params, buffers

  if kind is LayerKind.DENSE:
    d_in = int(np.prod(in_shape))
    return {f"{n}.weight": (d_in, layer.units), f"{n}.bias": (layer.units,)}, {}

  return {}, {}

def _init_tensor(name: str, shape: tuple, slope: float, rng: np.random.Generator) -> np.ndarray:
  if name.endswith(".weight"):
    fan_in = int(np.prod(shape[:-1]))
    std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
    return rng.standard_normal(shape) * std
  if name.endswith(".gamma") or name.endswith(".running_var"):
    return np.ones(shape)
  return np.zeros(shape)

@dataclass
class Network:
  spec: NetSpec
  params: dict[str, np.ndarray]
  buffers: dict[str, np.ndarray]
  dtype: np.dtype = np.dtype(np.float32)
  frozen_layers: set[int] = field(default_factory=set)
  layer_params: list[list[str]] = field(default_factory=list)
  layer_buffers: list[list[str]] = field(default_factory=list)

  def parameter_count(self) -> int:
    return int(sum(p.size for p in self.params.values()))

  def frozen_params(self) -> set[str]:
    return {name for i in self.frozen_layers for name in self.layer_params[i]}

  def freeze(self, upto: Optional[int | str]) -> None:
    """
    Marks layers 0..upto (inclusive) non-trainable; None unfreezes all.
    """
    if upto is None:
      self.frozen_layers = set()
      return
    self.frozen_layers = set(range(self.spec.layer_index(upto) + 1))

  def copy(self) -> Network:
    return copy.deepcopy(self)

  def astype(self, dtype: Any) -> Network:
    net = self.copy()
    net.dtype = np.dtype(dtype)
    net.params = {k: v.astype(dtype) for k, v in net.params.items()}
    net.buffers = {k: v.astype(dtype) for k, v in net.buffers.items()}
    return net

def build_network(spec: NetSpec, init_seed: int, dtype: Any = np.float32) -> Network:
  """
  He-initialized weights, zero biases, batch norm at gamma=1, beta=0,
  running mean 0 and variance 1.
  """
  in_shapes = _layer_in_shapes(spec)
  rng = np.random.default_rng(init_seed)

  params: dict[str, np.ndarray] = {}
  buffers: dict[str, np.ndarray] = {}
  layer_params: list[list[str]] = []
  layer_buffers: list[list[str]] = []

  for layer, in_shape in zip(spec.layers, in_shapes):
    p_shapes, b_shapes = _layer_tensors(layer, in_shape)
    for name, shape in p_shapes.items():
      params[name] = _init_tensor(name, shape, layer.negative_slope, rng).astype(dtype)
    for name, shape in b_shapes.items():
      buffers[name] = _init_tensor(name, shape, layer.negative_slope, rng).astype(dtype)
    layer_params.append(list(p_shapes))
    layer_buffers.append(list(b_shapes))

  return Network(
    spec=spec,
    params=params,
    buffers=buffers,
    dtype=np.dtype(dtype),
    layer_params=layer_params,
    layer_buffers=layer_buffers,
  )

# --- Forward / backward ---

@dataclass
class ForwardCache:
  train: bool
  entries: list[tuple[tuple[int, ...], Any]]
  out_shapes: list[tuple[int, ...]]
  batch_size: int

@dataclass
class ForwardResult:
  logits: Optional[np.ndarray]
  embedding: np.ndarray
  cache: ForwardCache

@dataclass
class Upstream:
  d_logits: Optional[np.ndarray] = None
  d_embedding: Optional[np.ndarray] = None

@dataclass
class Gradients:
  params: dict[str, np.ndarray]
  input: np.ndarray

def _bn_forward(net: Network, prefix: str, x: np.ndarray, layer: LayerSpec, train: bool, frozen: bool):
  return BatchNorm.forward(
    x,
    net.params[f"{prefix}.gamma"],
    net.params[f"{prefix}.beta"],
    net.buffers[f"{prefix}.running_mean"],
    net.buffers[f"{prefix}.running_var"],
    train=train,
    momentum=layer.momentum,
    eps=layer.eps,
    update_running=not frozen,
  )

def _layer_forward(net: Network, idx: int, x: np.ndarray, train: bool) -> tuple[np.ndarray, Any]:
  layer = net.spec.layers[idx]
  n = layer.name
  frozen = idx in net.frozen_layers
  kind = layer.kind

  if kind is LayerKind.CONV2D:
    return Conv2d.forward(x, net.params[f"{n}.weight"], net.params[f"{n}.bias"], tuple(layer.stride))

  if kind is LayerKind.BATCHNORM:
    return _bn_forward(net, n, x, layer, train, frozen)

  if kind is LayerKind.LEAKY_RELU:
    return LeakyRelu.forward(x, layer.negative_slope)

  if kind is LayerKind.MAXPOOL_GLOBAL:
    return GlobalMaxPool.forward(x)

  if kind is LayerKind.AVGPOOL_GLOBAL:
    return GlobalAvgPool.forward(x)

  if kind is LayerKind.DENSE:
    return Dense.forward(x, net.params[f"{n}.weight"], net.params[f"{n}.bias"])

  # pre-activation residual block: (BN -> act -> conv) twice, plus skip
  h, c_bn_a = _bn_forward(net, f"{n}.bn_a", x, layer, train, frozen)
  h, c_act_a = LeakyRelu.forward(h, layer.negative_slope)
  h, c_conv_a = Conv2d.forward(h, net.params[f"{n}.conv_a.weight"], net.params[f"{n}.conv_a.bias"], tuple(layer.stride))
  h, c_bn_b = _bn_forward(net, f"{n}.bn_b", h, layer, train, frozen)
  h, c_act_b = LeakyRelu.forward(h, layer.negative_slope)
  h, c_conv_b = Conv2d.forward(h, net.params[f"{n}.conv_b.weight"], net.params[f"{n}.conv_b.bias"], (1, 1))

  c_proj = None
  if f"{n}.proj.weight" in net.params:
    skip, c_proj = Conv2d.forward(x, net.params[f"{n}.proj.weight"], net.params[f"{n}.proj.bias"], tuple(layer.stride))
  else:
    skip = x

  return h + skip, (c_bn_a, c_act_a, c_conv_a, c_bn_b, c_act_b, c_conv_b, c_proj)

def _layer_backward(
  net: Network,
  idx: int,
  dout: np.ndarray,
  cache: Any,
  grads: dict[str, np.ndarray],
) -> np.ndarray:
  layer = net.spec.layers[idx]
  n = layer.name
  kind = layer.kind

  if kind is LayerKind.CONV2D:
    dx, grads[f"{n}.weight"], grads[f"{n}.bias"] = Conv2d.backward(dout, cache)
    return dx

  if kind is LayerKind.BATCHNORM:
    dx, grads[f"{n}.gamma"], grads[f"{n}.beta"] = BatchNorm.backward(dout, cache)
    return dx

  if kind is LayerKind.LEAKY_RELU:
    return LeakyRelu.backward(dout, cache)

  if kind is LayerKind.MAXPOOL_GLOBAL:
    return GlobalMaxPool.backward(dout, cache)

  if kind is LayerKind.AVGPOOL_GLOBAL:
    return GlobalAvgPool.backward(dout, cache)

  if kind is LayerKind.DENSE:
    dx, grads[f"{n}.weight"], grads[f"{n}.bias"] = Dense.backward(dout, cache)
    return dx

  c_bn_a, c_act_a, c_conv_a, c_bn_b, c_act_b, c_conv_b, c_proj = cache
  dh, grads[f"{n}.conv_b.weight"], grads[f"{n}.conv_b.bias"] = Conv2d.backward(dout, c_conv_b)
  dh = LeakyRelu.backward(dh, c_act_b)
  dh, grads[f"{n}.bn_b.gamma"], grads[f"{n}.bn_b.beta"] = BatchNorm.backward(dh, c_bn_b)
  dh, grads[f"{n}.conv_a.weight"], grads[f"{n}.conv_a.bias"] = Conv2d.backward(dh, c_conv_a)
  dh = LeakyRelu.backward(dh, c_act_a)
  dx, grads[f"{n}.bn_a.gamma"], grads[f"{n}.bn_a.beta"] = BatchNorm.backward(dh, c_bn_a)

  if c_proj is not None:
    dskip, grads[f"{n}.proj.weight"], grads[f"{n}.proj.bias"] = Conv2d.backward(dout, c_proj)
    return dx + dskip
  return dx + dout

def _as_batch(net: Network, batch: np.ndarray) -> np.ndarray:
  x = np.asarray(batch)
  if x.ndim == 3:
    x = x[..., None]
  if x.ndim != 4 or x.shape[0] < 1:
    raise ContractError(f"batch must be (batch, frames, bins, channels), got {np.shape(batch)}")
  _, bins, channels = net.spec.input_shape
  if x.shape[2:] != (bins, channels):
    raise ContractError(f"batch of shape {x.shape} does not match network input {net.spec.input_shape}")
  return x.astype(net.dtype, copy=False)

def forward(net: Network, batch: np.ndarray, mode: str = "infer") -> ForwardResult:
  """
  Runs the network on a (batch, frames, bins[, 1]) tensor.

  The frame axis may differ from the spec's crop length in infer mode
  (global pooling absorbs it), which is how full utterances are scored.
  """
  if mode not in ("train", "infer"):
    raise ContractError(f"mode must be 'train' or 'infer', got '{mode}'")
  train = mode == "train"
  x = _as_batch(net, batch)

  entries: list[tuple[tuple[int, ...], Any]] = []
  out_shapes: list[tuple[int, ...]] = [()] * len(net.spec.layers)
  embedding: Optional[np.ndarray] = None

  for stage in _stages(net.spec):
    outs = []
    caches = []
    for idx in stage:
      out, c = _layer_forward(net, idx, x, train)
      if not np.all(np.isfinite(out)):
        raise NonFiniteActivationError(net.spec.layers[idx].name)
      out_shapes[idx] = out.shape
      outs.append(out)
      caches.append(c)
    x = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=-1)
    entries.append((stage, caches))
    if net.spec.embedding_layer_index in stage:
      embedding = x

  logits = x if net.spec.has_head else None
  return ForwardResult(
    logits=logits,
    embedding=embedding,
    cache=ForwardCache(train, entries if train else [], out_shapes, x.shape[0]),
  )

def backward(net: Network, cache: ForwardCache, upstream: Upstream) -> Gradients:
  """
  Gradients of every parameter given d(loss)/d(logits) and/or
  d(loss)/d(embedding).
  """
  if not cache.train:
    raise ContractError("backward needs the cache of a train-mode forward")

  grads: dict[str, np.ndarray] = {}
  emb_idx = net.spec.embedding_layer_index
  last = len(net.spec.layers) - 1

  g: np.ndarray = np.zeros(cache.out_shapes[last], dtype=net.dtype)
  if net.spec.has_head and upstream.d_logits is not None:
    g = g + np.asarray(upstream.d_logits, dtype=net.dtype)

  for stage, caches in reversed(cache.entries):
    if emb_idx in stage and upstream.d_embedding is not None:
      g = g + np.asarray(upstream.d_embedding, dtype=net.dtype).reshape(g.shape)

    if len(stage) == 1:
      g = _layer_backward(net, stage[0], g, caches[0], grads)
      continue

    # pool group: split the concatenated gradient back per branch
    widths = [cache.out_shapes[i][-1] for i in stage]
    pieces = np.split(g, np.cumsum(widths)[:-1], axis=-1)
    g = sum(_layer_backward(net, i, piece, c, grads) for i, piece, c in zip(stage, pieces, caches))

  return Gradients(params={k: grads[k] for k in net.params}, input=g)
