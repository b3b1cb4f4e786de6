from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from ..errors import ContractError
from .losses import Objective
from .network import Network, backward, forward

logger = logging.getLogger(__name__)

MAX_CHECK_PARAMS = 10_000

@dataclass
class GradCheckReport:
  tolerance: float
  max_rel_error: dict[str, float] = field(default_factory=dict)
  input_rel_error: Optional[float] = None
  kink_skips: int = 0
  """
  Elements whose +/- eps evaluations switched a leaky-ReLU or max-pool branch.
  """

  @property
  def worst(self) -> float:
    values = list(self.max_rel_error.values())
    if self.input_rel_error is not None:
      values.append(self.input_rel_error)
    return max(values, default=0.0)

  @property
  def passed(self) -> bool:
    return self.worst < self.tolerance

  def failures(self) -> list[str]:
    return [name for name, err in self.max_rel_error.items() if err >= self.tolerance]

def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
  """
  |a - n| / max(|a|, |n|, floor); the floor absorbs finite-difference
  round-off on gradients that are zero analytically (biases ahead of a
  batch norm).
  """
  scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
  return np.abs(analytic - numeric) / scale

def _branch_signature(obj: Any, out: list[np.ndarray]) -> list[np.ndarray]:
  """
  Collects the boolean/integer arrays of a forward cache: the branch
  decisions of every piecewise-linear layer.
  """
  if isinstance(obj, np.ndarray):
    if obj.dtype == np.bool_ or np.issubdtype(obj.dtype, np.integer):
      out.append(obj)
  elif isinstance(obj, (list, tuple)):
    for item in obj:
      _branch_signature(item, out)
  return out

def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
  return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

def grad_check(
  net: Network,
  batch: np.ndarray,
  loss_fn: Objective,
  tolerance: float = 1e-4,
  eps: float = 1e-5,
  check_input: bool = False,
  grad_hook: Optional[Callable[[dict[str, np.ndarray]], None]] = None,
) -> GradCheckReport:
  """
  Compares backward() with central finite differences of the train-mode
  loss, element by element, on a 64-bit copy of the network.

  Perturbations that flip a branch of a piecewise-linear layer are skipped and
  counted. `grad_hook` may edit the analytic gradients before comparison
  (fault injection).
  """
  if net.parameter_count() >= MAX_CHECK_PARAMS:
    raise ContractError(
      f"grad_check needs a net below {MAX_CHECK_PARAMS} parameters, got {net.parameter_count()}"
    )

  work = net.astype(np.float64)
  x = np.array(batch, dtype=np.float64)

  result = forward(work, x, mode="train")
  _, upstream = loss_fn(result)
  grads = backward(work, result.cache, upstream)
  analytic = {k: v.copy() for k, v in grads.params.items()}
  if grad_hook is not None:
    grad_hook(analytic)
  base_sig = _branch_signature(result.cache.entries, [])

  report = GradCheckReport(tolerance=tolerance)

  def central_difference(flat: np.ndarray, i: int) -> Optional[float]:
    orig = flat[i]
    values = []
    for delta in (eps, -eps):
      flat[i] = orig + delta
      r = forward(work, x, mode="train")
      if not _same_branches(base_sig, _branch_signature(r.cache.entries, [])):
        flat[i] = orig
        return None
      values.append(loss_fn(r)[0])
    flat[i] = orig
    return (values[0] - values[1]) / (2.0 * eps)

  def compare(target: np.ndarray, expected: np.ndarray) -> float:
    flat = target.reshape(-1)
    exp_flat = expected.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
      numeric = central_difference(flat, i)
      if numeric is None:
        report.kink_skips += 1
        continue
      err = float(rel_error(np.array(exp_flat[i]), np.array(numeric)))
      worst = max(worst, err)
    return worst

  for name, p in work.params.items():
    report.max_rel_error[name] = compare(p, analytic[name])

  if check_input:
    report.input_rel_error = compare(x, grads.input.reshape(x.shape))

  logger.debug(
    "grad_check worst relative error %.3e over %d tensors (%d kink skips)",
    report.worst, len(report.max_rel_error), report.kink_skips,
  )
  return report
