"""
Forward/backward primitives on channels-last tensors (batch, frames, bins, channels).

Every forward returns (out, cache); every backward takes (dout, cache) and
returns the input gradient first, followed by parameter gradients.
"""
from __future__ import annotations

from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

class Conv2d:
  """
  Zero-padded ("same" for stride 1) 2-D convolution.

  w has shape (kh, kw, c_in, c_out); padding is kh//2, kw//2. The kernel
  windows are a strided view of the padded input, contracted with w in one
  tensordot.
  """

  @staticmethod
  def output_size(size: int, kernel: int, stride: int) -> int:
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1

  @staticmethod
  def _windows(xp: np.ndarray, kh: int, kw: int, stride: tuple[int, int]) -> np.ndarray:
    # (n, h_out, w_out, c_in, kh, kw), no copy
    sh, sw = stride
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]

  @staticmethod
  def forward(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride: tuple[int, int],
  ) -> tuple[np.ndarray, Any]:
    kh, kw, _, _ = w.shape
    ph, pw = kh // 2, kw // 2

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    windows = Conv2d._windows(xp, kh, kw, stride)
    out = np.tensordot(windows, w, axes=([3, 4, 5], [2, 0, 1])).astype(x.dtype, copy=False)
    out += b

    return out, (xp, w, stride, x.shape)

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xp, w, stride, x_shape = cache
    kh, kw, _, _ = w.shape
    sh, sw = stride
    _, h, wd, _ = x_shape
    ph, pw = kh // 2, kw // 2
    _, h_out, w_out, _ = dout.shape

    windows = Conv2d._windows(xp, kh, kw, stride)
    dw = np.tensordot(windows, dout, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)

    # (n, h_out, w_out, kh, kw, c_in), scattered back tap by tap
    dcols = np.tensordot(dout, w, axes=([3], [3]))
    dxp = np.zeros_like(xp)
    for i in range(kh):
      for j in range(kw):
        rows = slice(i, i + sh * (h_out - 1) + 1, sh)
        cols = slice(j, j + sw * (w_out - 1) + 1, sw)
        dxp[:, rows, cols, :] += dcols[:, :, :, i, j, :]

    db = dout.sum(axis=(0, 1, 2))
    dx = dxp[:, ph:ph + h, pw:pw + wd, :]
    return dx, dw.astype(w.dtype, copy=False), db

class BatchNorm:
  """
  Per-channel normalization over every axis but the last.

  Running statistics are updated in place in train mode:
  r <- (1 - momentum) * r + momentum * batch_stat (biased variance).
  """

  @staticmethod
  def forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float,
    eps: float,
    update_running: bool = True,
  ) -> tuple[np.ndarray, Any]:
    axes = tuple(range(x.ndim - 1))

    if not train:
      inv_std = 1.0 / np.sqrt(running_var + eps)
      out = (x - running_mean) * inv_std * gamma + beta
      return out.astype(x.dtype, copy=False), None

    mean = x.mean(axis=axes, dtype=np.float64)
    var = ((x - mean) ** 2).mean(axis=axes, dtype=np.float64)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = (x - mean.astype(x.dtype)) * inv_std
    out = x_hat * gamma + beta

    if update_running:
      running_mean *= 1.0 - momentum
      running_mean += momentum * mean.astype(running_mean.dtype)
      running_var *= 1.0 - momentum
      running_var += momentum * var.astype(running_var.dtype)

    return out, (x_hat, inv_std, gamma)

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_hat, inv_std, gamma = cache
    axes = tuple(range(dout.ndim - 1))
    m = dout.size // dout.shape[-1]

    dbeta = dout.sum(axis=axes)
    dgamma = (dout * x_hat).sum(axis=axes)
    dx_hat = dout * gamma
    dx = (inv_std / m) * (
      m * dx_hat - dx_hat.sum(axis=axes) - x_hat * (dx_hat * x_hat).sum(axis=axes)
    )
    return dx, dgamma, dbeta

class LeakyRelu:
  @staticmethod
  def forward(x: np.ndarray, slope: float) -> tuple[np.ndarray, Any]:
    positive = x > 0
    return np.where(positive, x, slope * x), (positive, slope)

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> np.ndarray:
    positive, slope = cache
    return np.where(positive, dout, slope * dout)

class GlobalMaxPool:
  """
  (N, H, W, C) -> (N, 1, 1, C); the gradient goes to the first maximum.
  """

  @staticmethod
  def forward(x: np.ndarray) -> tuple[np.ndarray, Any]:
    n, h, w, c = x.shape
    flat = x.reshape(n, h * w, c)
    arg = flat.argmax(axis=1)
    out = np.take_along_axis(flat, arg[:, None, :], axis=1)
    return out.reshape(n, 1, 1, c), (arg, x.shape)

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> np.ndarray:
    arg, shape = cache
    n, h, w, c = shape
    dflat = np.zeros((n, h * w, c), dtype=dout.dtype)
    np.put_along_axis(dflat, arg[:, None, :], dout.reshape(n, 1, c), axis=1)
    return dflat.reshape(shape)

class GlobalAvgPool:
  @staticmethod
  def forward(x: np.ndarray) -> tuple[np.ndarray, Any]:
    out = x.mean(axis=(1, 2), keepdims=True, dtype=np.float64).astype(x.dtype)
    return out, x.shape

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> np.ndarray:
    n, h, w, c = cache
    return np.broadcast_to(dout / (h * w), (n, h, w, c)).astype(dout.dtype)

class Dense:
  """
  Fully connected layer on the flattened input: (N, ...) -> (N, units).
  """

  @staticmethod
  def forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, Any]:
    flat = x.reshape(x.shape[0], -1)
    return flat @ w + b, (flat, w, x.shape)

  @staticmethod
  def backward(dout: np.ndarray, cache: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flat, w, shape = cache
    dw = flat.T @ dout
    db = dout.sum(axis=0)
    dx = (dout @ w.T).reshape(shape)
    return dx, dw, db
