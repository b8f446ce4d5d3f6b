# Copyright 2026 The MetaPrompter Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Differentiable kernels over `autodiff.Tensor`.

All shapes are explicit: apart from multiplication by a Python scalar there is
no broadcasting. Every kernel computes its forward value with numpy and, when
an input is watched by the active tape, registers a vector-Jacobian product.
"""

import math
from typing import Sequence, Tuple

from metaprompter import autodiff
from metaprompter import errors
import numpy as np

Tensor = autodiff.Tensor

COSINE_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)


# ----------------------------------------------------------------------
# ----------------------------- Utilities. -----------------------------
# ----------------------------------------------------------------------


def _emit(name: str, inputs: Sequence[Tensor], value: np.ndarray,
          vjp: autodiff.VjpFn) -> Tensor:
  out = Tensor._wrap(value, name)  # pylint: disable=protected-access
  tape = autodiff.current_tape()
  if tape is not None:
    tape.record(name, inputs, out, vjp)
  return out


def _require_same_shape(name: str, a: Tensor, b: Tensor) -> None:
  if a.shape != b.shape:
    raise errors.DimensionError(
        f'`{name}` needs equal shapes, got {a.shape} and {b.shape}.')


def _require_ndim(name: str, t: Tensor, ndim: int) -> None:
  if t.ndim != ndim:
    raise errors.DimensionError(
        f'`{name}` needs a rank-{ndim} tensor, got shape {t.shape}.')


def constant(value) -> Tensor:
  """A tensor that never receives gradients."""
  return Tensor(value)


# ----------------------------------------------------------------------
# ---------------------------- Elementwise. ----------------------------
# ----------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
  _require_same_shape('add', a, b)
  return _emit('add', (a, b), a.data + b.data, lambda g, needs: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
  _require_same_shape('sub', a, b)
  return _emit('sub', (a, b), a.data - b.data, lambda g, needs: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
  """Elementwise (Hadamard) product."""
  _require_same_shape('mul', a, b)
  a_data, b_data = a.data, b.data

  def vjp(g, needs):
    return (g * b_data if needs[0] else None,
            g * a_data if needs[1] else None)

  return _emit('mul', (a, b), a_data * b_data, vjp)


def scale(a: Tensor, factor: float) -> Tensor:
  """Multiplies every element by the Python scalar `factor`."""
  factor = float(factor)
  return _emit('scale', (a,), a.data * factor, lambda g, needs: (g * factor,))


def log(a: Tensor) -> Tensor:
  a_data = a.data
  if np.any(a_data <= 0):
    raise errors.NumericError('`log` of a non-positive value.')
  return _emit('log', (a,), np.log(a_data), lambda g, needs: (g / a_data,))


def gelu(a: Tensor) -> Tensor:
  """Tanh approximation of the Gaussian error linear unit."""
  x = a.data
  inner = _GELU_C * (x + 0.044715 * x ** 3)
  t = np.tanh(inner)

  def vjp(g, needs):
    d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

  return _emit('gelu', (a,), 0.5 * x * (1.0 + t), vjp)


# ----------------------------------------------------------------------
# ---------------------------- Structural. -----------------------------
# ----------------------------------------------------------------------


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
  shape = tuple(shape)
  if int(np.prod(shape)) != a.size:
    raise errors.DimensionError(f'Cannot reshape {a.shape} to {shape}.')
  in_shape = a.shape
  return _emit('reshape', (a,), a.data.reshape(shape),
               lambda g, needs: (g.reshape(in_shape),))


def transpose(a: Tensor) -> Tensor:
  _require_ndim('transpose', a, 2)
  return _emit('transpose', (a,), a.data.T, lambda g, needs: (g.T,))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
  """Concatenates along the first axis; trailing shapes must agree."""
  if not tensors:
    raise errors.DimensionError('`concat_rows` needs at least one tensor.')
  trailing = tensors[0].shape[1:]
  for t in tensors:
    if t.ndim == 0 or t.shape[1:] != trailing:
      raise errors.DimensionError(
          f'`concat_rows` shape mismatch: {t.shape} vs (*, {trailing}).')
  splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

  def vjp(g, needs):
    return np.split(g, splits, axis=0)

  return _emit('concat_rows', tuple(tensors),
               np.concatenate([t.data for t in tensors], axis=0), vjp)


def stack(tensors: Sequence[Tensor]) -> Tensor:
  """Stacks equally shaped tensors along a new first axis."""
  if not tensors:
    raise errors.DimensionError('`stack` needs at least one tensor.')
  for t in tensors[1:]:
    _require_same_shape('stack', tensors[0], t)

  def vjp(g, needs):
    return [g[i] for i in range(len(tensors))]

  return _emit('stack', tuple(tensors), np.stack([t.data for t in tensors]),
               vjp)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
  """Selects rows (first-axis entries) of `table`, e.g. embedding lookup."""
  indices = np.asarray(indices, dtype=np.int64).reshape(-1)
  if table.ndim == 0:
    raise errors.DimensionError('`gather_rows` needs a rank >= 1 tensor.')
  if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
    raise errors.DimensionError(
        f'`gather_rows` index out of range for {table.shape[0]} rows.')
  table_shape = table.shape

  def vjp(g, needs):
    grad = np.zeros(table_shape)
    np.add.at(grad, indices, g)
    return (grad,)

  return _emit('gather_rows', (table,), table.data[indices], vjp)


# ----------------------------------------------------------------------
# ----------------------------- Reductions. ----------------------------
# ----------------------------------------------------------------------


def sum(a: Tensor) -> Tensor:  # pylint: disable=redefined-builtin
  """Sum of all elements, as a scalar tensor."""
  shape = a.shape
  return _emit('sum', (a,), np.sum(a.data),
               lambda g, needs: (np.full(shape, float(g)),))


def mean_rows(a: Tensor) -> Tensor:
  """Mean over the first axis."""
  if a.ndim == 0 or a.shape[0] == 0:
    raise errors.DimensionError('`mean_rows` needs at least one row.')
  n = a.shape[0]
  shape = a.shape

  def vjp(g, needs):
    return (np.broadcast_to(g / n, shape).copy(),)

  return _emit('mean_rows', (a,), np.mean(a.data, axis=0), vjp)


# ----------------------------------------------------------------------
# ------------------------------ Linear. -------------------------------
# ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
  """Matrix product of `a` [m x k] and `b` [k x n]."""
  _require_ndim('matmul', a, 2)
  _require_ndim('matmul', b, 2)
  if a.shape[1] != b.shape[0]:
    raise errors.DimensionError(
        f'`matmul` inner dimensions differ: {a.shape} x {b.shape}.')
  a_data, b_data = a.data, b.data

  def vjp(g, needs):
    return (g @ b_data.T if needs[0] else None,
            a_data.T @ g if needs[1] else None)

  return _emit('matmul', (a, b), a_data @ b_data, vjp)


# ----------------------------------------------------------------------
# --------------------------- Normalization. ---------------------------
# ----------------------------------------------------------------------


def softmax(x: Tensor, scale: float = 1.0) -> Tensor:  # pylint: disable=redefined-outer-name
  """Softmax of `x / scale` over the last axis (rows for a matrix)."""
  if x.ndim == 0 or x.shape[-1] == 0:
    raise errors.DimensionError('`softmax` needs a non-empty last axis.')
  if scale <= 0:
    raise errors.ConfigError(f'`scale` must be positive, got {scale}.')
  z = x.data / scale
  z = z - np.max(z, axis=-1, keepdims=True)
  e = np.exp(z)
  y = e / np.sum(e, axis=-1, keepdims=True)

  def vjp(g, needs):
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)) / scale,)

  return _emit('softmax', (x,), y, vjp)


def log_softmax(x: Tensor) -> Tensor:
  """Log of the softmax over the last axis."""
  if x.ndim == 0 or x.shape[-1] == 0:
    raise errors.DimensionError('`log_softmax` needs a non-empty last axis.')
  z = x.data - np.max(x.data, axis=-1, keepdims=True)
  y = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))

  def vjp(g, needs):
    return (g - np.exp(y) * np.sum(g, axis=-1, keepdims=True),)

  return _emit('log_softmax', (x,), y, vjp)


def normalize(x: Tensor) -> Tensor:
  """Divides a positive vector by its sum."""
  _require_ndim('normalize', x, 1)
  total = np.sum(x.data)
  if total <= 0:
    raise errors.NumericError('`normalize` needs a positive total.')
  y = x.data / total

  def vjp(g, needs):
    return ((g - np.sum(g * y)) / total,)

  return _emit('normalize', (x,), y, vjp)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor,
               eps: float = 1e-5) -> Tensor:
  """Normalizes each row of `x` [n x d], then applies `gain` and `offset` [d]."""
  _require_ndim('layer_norm', x, 2)
  d = x.shape[1]
  if gain.shape != (d,) or offset.shape != (d,):
    raise errors.DimensionError(
        f'`layer_norm` parameters must have shape ({d},), got {gain.shape} and '
        f'{offset.shape}.')
  mu = np.mean(x.data, axis=1, keepdims=True)
  centered = x.data - mu
  inv_std = 1.0 / np.sqrt(np.mean(centered ** 2, axis=1, keepdims=True) + eps)
  x_hat = centered * inv_std
  gain_data = gain.data

  def vjp(g, needs):
    d_x = d_gain = d_offset = None
    if needs[0]:
      g_hat = g * gain_data
      d_x = inv_std * (
          g_hat - np.mean(g_hat, axis=1, keepdims=True) -
          x_hat * np.mean(g_hat * x_hat, axis=1, keepdims=True))
    if needs[1]:
      d_gain = np.sum(g * x_hat, axis=0)
    if needs[2]:
      d_offset = np.sum(g, axis=0)
    return d_x, d_gain, d_offset

  return _emit('layer_norm', (x, gain, offset), x_hat * gain_data + offset.data,
               vjp)


# ----------------------------------------------------------------------
# ---------------------------- Similarities. ---------------------------
# ----------------------------------------------------------------------


def cosine(u: Tensor, v: Tensor, eps: float = COSINE_EPS) -> Tensor:
  """Cosine similarity of two vectors, as a scalar tensor.

  Raises:
    DegenerateVectorError: Either vector has norm <= `eps`.
  """
  _require_ndim('cosine', u, 1)
  _require_same_shape('cosine', u, v)
  u_data, v_data = u.data, v.data
  nu = np.linalg.norm(u_data)
  nv = np.linalg.norm(v_data)
  if nu <= eps or nv <= eps:
    raise errors.DegenerateVectorError(
        f'Cosine of a near-zero vector (norms {nu:.3g}, {nv:.3g}).')
  c = float(u_data @ v_data) / (nu * nv)

  def vjp(g, needs):
    g = float(g)
    d_u = d_v = None
    if needs[0]:
      d_u = g * (v_data / (nu * nv) - c * u_data / nu ** 2)
    if needs[1]:
      d_v = g * (u_data / (nu * nv) - c * v_data / nv ** 2)
    return d_u, d_v

  return _emit('cosine', (u, v), np.asarray(c), vjp)


# ----------------------------------------------------------------------
# ------------------------------- Losses. ------------------------------
# ----------------------------------------------------------------------


def nll(log_probs: Tensor, targets) -> Tensor:
  """Summed negative log-likelihood of integer `targets`.

  Args:
    log_probs: Log-probabilities, either a vector [C] with a single integer
      target, or a matrix [n x C] with one target per row.
    targets: An int, or a sequence of n ints.

  Returns:
    Scalar tensor `-sum_i log_probs[i, targets[i]]`.
  """
  if log_probs.ndim == 1:
    rows = np.zeros(1, dtype=np.int64)
    matrix = log_probs.data[None, :]
  elif log_probs.ndim == 2:
    rows = np.arange(log_probs.shape[0])
    matrix = log_probs.data
  else:
    raise errors.DimensionError(
        f'`nll` needs a rank-1 or rank-2 tensor, got {log_probs.shape}.')
  cols = np.asarray(targets, dtype=np.int64).reshape(-1)
  if cols.size != rows.size:
    raise errors.DimensionError(
        f'`nll` got {cols.size} targets for {rows.size} rows.')
  if cols.min() < 0 or cols.max() >= matrix.shape[1]:
    raise errors.DimensionError('`nll` target out of range.')
  shape = log_probs.shape

  def vjp(g, needs):
    grad = np.zeros(matrix.shape)
    grad[rows, cols] = -float(g)
    return (grad.reshape(shape),)

  return _emit('nll', (log_probs,), -np.sum(matrix[rows, cols]), vjp)


def squared_distance(u: Tensor, v: Tensor) -> Tensor:
  """Squared Euclidean distance of two equally shaped tensors."""
  diff = sub(u, v)
  return sum(mul(diff, diff))


def add_n(terms: Sequence[Tensor]) -> Tensor:
  """Left-to-right sum of equally shaped tensors."""
  if not terms:
    raise errors.DimensionError('`add_n` needs at least one tensor.')
  total = terms[0]
  for term in terms[1:]:
    total = add(total, term)
  return total
