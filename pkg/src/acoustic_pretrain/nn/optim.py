from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import ContractError

@dataclass
class AdamState:
  """
  Per-parameter first/second moments plus the shared step counter.
  """

  lr: float
  beta1: float = 0.9
  beta2: float = 0.999
  eps: float = 1e-8
  t: int = 0
  m: dict[str, np.ndarray] = field(default_factory=dict)
  v: dict[str, np.ndarray] = field(default_factory=dict)

  @classmethod
  def init(cls, params: Mapping[str, np.ndarray], lr: float, **hyper: float) -> AdamState:
    state = cls(lr=lr, **hyper)
    for name, p in params.items():
      state.m[name] = np.zeros_like(p)
      state.v[name] = np.zeros_like(p)
    return state

  def hyperparameters(self) -> dict:
    return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}

def adam_step(
  params: dict[str, np.ndarray],
  grads: Mapping[str, np.ndarray],
  state: AdamState,
  frozen: Iterable[str] = (),
) -> None:
  """
  One bias-corrected Adam update, in place.

  Frozen parameters are skipped entirely: neither they nor their moments
  change.
  """
  frozen = set(frozen)

  for name, p in params.items():
    if name in frozen:
      continue
    g = grads.get(name)
    if g is None or g.shape != p.shape:
      raise ContractError(f"gradient for '{name}' missing or shaped {None if g is None else g.shape}, expected {p.shape}")
    if name not in state.m:
      state.m[name] = np.zeros_like(p)
      state.v[name] = np.zeros_like(p)
    if state.m[name].shape != p.shape:
      raise ContractError(f"optimizer state for '{name}' does not match its parameter shape")

  state.t += 1
  bc1 = 1.0 - state.beta1 ** state.t
  bc2 = 1.0 - state.beta2 ** state.t

  for name, p in params.items():
    if name in frozen:
      continue
    g = np.asarray(grads[name], dtype=p.dtype)
    m = state.m[name]
    v = state.v[name]

    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)

    m_hat = m / bc1
    v_hat = v / bc2
    p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
