from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DegenerateEmbeddingError
from .network import ForwardResult, Upstream

NORM_EPS = 1e-12

@dataclass
class PairLossOutput:
  loss: float
  d_x1: np.ndarray
  d_x2: np.ndarray

def _norm(x: np.ndarray) -> float:
  n = float(np.linalg.norm(x))
  if n <= NORM_EPS:
    raise DegenerateEmbeddingError("cosine similarity of a zero-norm embedding is undefined")
  return n

def cosine(x1: np.ndarray, x2: np.ndarray) -> float:
  x1 = np.asarray(x1, dtype=np.float64)
  x2 = np.asarray(x2, dtype=np.float64)
  c = float(x1 @ x2) / (_norm(x1) * _norm(x2))
  return min(1.0, max(-1.0, c))

def _check_label(y: int) -> None:
  if y not in (1, -1):
    raise ContractError(f"pair label must be +1 or -1, got {y}")

def pair_loss(x1: np.ndarray, x2: np.ndarray, y: int) -> PairLossOutput:
  """
  1 - cos(x1, x2) for target pairs (y = +1), max(0, cos(x1, x2)) for
  non-target pairs (y = -1).
  """
  _check_label(y)
  x1 = np.asarray(x1, dtype=np.float64)
  x2 = np.asarray(x2, dtype=np.float64)
  n1, n2 = _norm(x1), _norm(x2)
  c = float(x1 @ x2) / (n1 * n2)

  # d cos / d x1 = x2 / (n1 n2) - cos * x1 / n1^2
  dc_dx1 = x2 / (n1 * n2) - c * x1 / (n1 * n1)
  dc_dx2 = x1 / (n1 * n2) - c * x2 / (n2 * n2)

  if y == 1:
    return PairLossOutput(1.0 - min(1.0, max(-1.0, c)), -dc_dx1, -dc_dx2)
  if c <= 0.0:
    return PairLossOutput(0.0, np.zeros_like(x1), np.zeros_like(x2))
  return PairLossOutput(min(1.0, c), dc_dx1, dc_dx2)

def pair_loss_batch(e1: np.ndarray, e2: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray, np.ndarray]:
  """
  Mean pair loss over rows; gradients are already divided by the batch size.
  """
  labels = list(labels)
  if len(labels) != e1.shape[0] or e1.shape != e2.shape:
    raise ContractError("embeddings and labels must agree in batch size")

  d1 = np.zeros(e1.shape, dtype=np.float64)
  d2 = np.zeros(e2.shape, dtype=np.float64)
  total = 0.0
  for i, y in enumerate(labels):
    out = pair_loss(e1[i], e2[i], y)
    total += out.loss
    d1[i] = out.d_x1
    d2[i] = out.d_x2

  n = len(labels)
  return total / n, d1 / n, d2 / n

def cross_entropy(logits: np.ndarray, cls: int) -> tuple[float, np.ndarray]:
  """
  Softmax negative log-likelihood in log-sum-exp form; gradient is
  softmax - onehot.
  """
  z = np.asarray(logits, dtype=np.float64)
  if z.ndim != 1 or not np.all(np.isfinite(z)):
    raise ContractError("logits must be a finite vector")
  top = int(np.argmax(z))
  shifted = z - z[top]
  # exp(0) = 1 for the top logit; log1p keeps tiny tails exact
  log_norm = np.log1p(np.sum(np.exp(np.delete(shifted, top))))
  log_p = shifted - log_norm
  grad = np.exp(log_p)
  grad[cls] -= 1.0
  return float(-log_p[cls]), grad

def cross_entropy_batch(logits: np.ndarray, classes: Sequence[int]) -> tuple[float, np.ndarray]:
  z = np.asarray(logits, dtype=np.float64)
  classes = np.asarray(classes, dtype=np.int64)
  if z.ndim != 2 or z.shape[0] != classes.size:
    raise ContractError("logits must be (batch, classes) matching the class list")
  if not np.all(np.isfinite(z)):
    raise ContractError("logits must be finite")

  shifted = z - z.max(axis=1, keepdims=True)
  log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
  rows = np.arange(z.shape[0])
  grad = np.exp(log_p)
  grad[rows, classes] -= 1.0
  n = z.shape[0]
  return float(-log_p[rows, classes].mean()), grad / n

# --- Objectives: forward result -> (loss, upstream gradients) ---

Objective = Callable[[ForwardResult], tuple[float, Upstream]]

def pair_objective(labels: Sequence[int]) -> Objective:
  """
  For batches laid out as [seg_a of every pair; seg_b of every pair].
  """
  labels = list(labels)

  def objective(result: ForwardResult) -> tuple[float, Upstream]:
    n = len(labels)
    emb = result.embedding
    if emb.shape[0] != 2 * n:
      raise ContractError(f"pair batch must hold 2 x {n} segments, got {emb.shape[0]}")
    loss, d1, d2 = pair_loss_batch(emb[:n], emb[n:], labels)
    return loss, Upstream(d_embedding=np.concatenate([d1, d2], axis=0))

  return objective

def cross_entropy_objective(classes: Sequence[int]) -> Objective:
  classes = list(classes)

  def objective(result: ForwardResult) -> tuple[float, Upstream]:
    if result.logits is None:
      raise ContractError("cross-entropy needs a network with an output head")
    loss, grad = cross_entropy_batch(result.logits, classes)
    return loss, Upstream(d_logits=grad)

  return objective
