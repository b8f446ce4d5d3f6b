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

"""Tape-based reverse-mode automatic differentiation over dense tensors.

A `Tensor` wraps a read-only float64 `np.ndarray`. Tensors created with
`requires_grad=True` are leaves; every op in `ops` that consumes a leaf (or a
value derived from one) while a `Tape` is active appends a record to that tape.
`Tape.gradient` then walks the records in exact reverse order.

Usage:

```python
theta = Tensor(np.zeros((2, 3)), requires_grad=True)
with Tape() as tape:
  loss = ops.sum(ops.mul(theta, theta))
grad_theta, = tape.gradient(loss, [theta])
```

Tapes are single use: once `gradient` has run, the records are released, so a
gradient can never be propagated through a previous update step. Frozen
parameters are simply tensors without `requires_grad`; ops on them are never
recorded.

Each thread has its own stack of active tapes, so independent evaluations may
run concurrently.
"""

import itertools
import threading
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from metaprompter import errors
import numpy as np

ArrayLike = Union[np.ndarray, Sequence[float], float]
# Maps the output cotangent and the per-input `needs` mask to input cotangents.
VjpFn = Callable[[np.ndarray, Tuple[bool, ...]],
                 Sequence[Optional[np.ndarray]]]

_ids = itertools.count()
_local = threading.local()


def _check_finite(array: np.ndarray, what: str) -> None:
  if not np.all(np.isfinite(array)):
    raise errors.NumericError(f'Non-finite value produced by {what}.')


class Tensor:
  """Immutable dense float64 tensor."""

  __slots__ = ('_data', '_id', 'requires_grad')

  def __init__(self, data: ArrayLike, requires_grad: bool = False):
    """Initializes the `Tensor` from a copy of `data`.

    Args:
      data: Values of the tensor, in any form accepted by `np.array`.
      requires_grad: Whether the tensor is a gradient leaf.

    Raises:
      NumericError: `data` contains NaN or infinite values.
    """
    array = np.array(data, dtype=np.float64)
    _check_finite(array, 'tensor construction')
    array.setflags(write=False)
    self._data = array
    self._id = next(_ids)
    self.requires_grad = requires_grad

  @classmethod
  def _wrap(cls, array: np.ndarray, what: str) -> 'Tensor':
    """Wraps a freshly computed array without copying."""
    array = np.asarray(array, dtype=np.float64)
    _check_finite(array, what)
    array.setflags(write=False)
    tensor = cls.__new__(cls)
    tensor._data = array
    tensor._id = next(_ids)
    tensor.requires_grad = False
    return tensor

  @property
  def data(self) -> np.ndarray:
    """Read-only view of the values."""
    return self._data

  @property
  def id(self) -> int:
    return self._id

  @property
  def shape(self) -> Tuple[int, ...]:
    return self._data.shape

  @property
  def ndim(self) -> int:
    return self._data.ndim

  @property
  def size(self) -> int:
    return self._data.size

  def item(self) -> float:
    if self._data.size != 1:
      raise errors.ContractError(
          f'`item` requires a single element, got shape {self.shape}.')
    return float(self._data.reshape(()))

  def numpy(self) -> np.ndarray:
    """Returns a writable copy of the values."""
    return np.array(self._data)

  def detach(self) -> 'Tensor':
    """Returns a constant tensor sharing the same values."""
    return Tensor._wrap(self._data, 'detach')

  def __repr__(self):
    return (f'Tensor(shape={self.shape}, requires_grad={self.requires_grad}, '
            f'data={self._data!r})')


class _Record(NamedTuple):
  name: str
  input_ids: Tuple[int, ...]
  needs: Tuple[bool, ...]
  output_id: int
  output_shape: Tuple[int, ...]
  vjp: VjpFn


def _tape_stack() -> List[Optional['Tape']]:
  if not hasattr(_local, 'stack'):
    _local.stack = []
  return _local.stack


def current_tape() -> Optional['Tape']:
  """Returns the innermost active tape of this thread, if any."""
  stack = _tape_stack()
  return stack[-1] if stack else None


class stop_recording:  # pylint: disable=invalid-name
  """Context manager under which no op is recorded on any tape."""

  def __enter__(self):
    _tape_stack().append(None)
    return self

  def __exit__(self, *exc_info):
    _tape_stack().pop()
    return False


class Tape:
  """Ordered record of the differentiable ops executed while active."""

  def __init__(self):
    self._records: List[_Record] = []
    self._tracked = set()
    self._consumed = False

  def __enter__(self) -> 'Tape':
    if self._consumed:
      raise errors.ContractError('A consumed tape cannot be re-entered.')
    _tape_stack().append(self)
    return self

  def __exit__(self, *exc_info):
    _tape_stack().pop()
    return False

  def __len__(self):
    return len(self._records)

  def watches(self, tensor: Tensor) -> bool:
    """Whether `tensor` is a leaf or depends on a leaf through this tape."""
    return tensor.requires_grad or tensor.id in self._tracked

  def record(self, name: str, inputs: Sequence[Tensor], output: Tensor,
             vjp: VjpFn) -> None:
    """Appends an op to the tape if any of its inputs is watched."""
    if self._consumed:
      raise errors.ContractError('Cannot record on a consumed tape.')
    needs = tuple(self.watches(t) for t in inputs)
    if not any(needs):
      return
    self._records.append(
        _Record(name, tuple(t.id for t in inputs), needs, output.id,
                output.shape, vjp))
    self._tracked.add(output.id)

  def gradient(self, loss: Tensor,
               leaves: Sequence[Tensor]) -> List[np.ndarray]:
    """Computes d`loss`/d`leaf` for every leaf and releases the tape.

    Args:
      loss: Scalar tensor (a single element) computed under this tape.
      leaves: Tensors to differentiate with respect to.

    Returns:
      One gradient array per leaf, shaped like the leaf. A leaf that `loss`
      does not depend on gets an all-zero gradient.

    Raises:
      ContractError: `loss` is not scalar or the tape was already consumed.
    """
    if self._consumed:
      raise errors.ContractError(
          'Tape already consumed; gradients are first order by construction.')
    if loss.size != 1:
      raise errors.ContractError(
          f'`loss` must be a scalar, got shape {loss.shape}.')
    self._consumed = True
    records, self._records = self._records, []
    self._tracked = set()

    # Leaves are never op outputs, so their cotangents are never popped.
    cotangents: Dict[int, np.ndarray] = {loss.id: np.ones(loss.shape)}
    for rec in reversed(records):
      upstream = cotangents.pop(rec.output_id, None)
      if upstream is None:
        continue
      grads = rec.vjp(upstream, rec.needs)
      for input_id, need, grad in zip(rec.input_ids, rec.needs, grads):
        if not need or grad is None:
          continue
        if input_id in cotangents:
          cotangents[input_id] = cotangents[input_id] + grad
        else:
          cotangents[input_id] = grad

    gradients = []
    for leaf in leaves:
      grad = cotangents.get(leaf.id)
      if grad is None:
        grad = np.zeros(leaf.shape)
      grad = np.reshape(np.asarray(grad, dtype=np.float64), leaf.shape)
      _check_finite(grad, 'backward pass')
      gradients.append(grad)
    return gradients


def backward(loss: Tensor, leaves: Sequence[Tensor],
             tape: Optional[Tape] = None) -> List[np.ndarray]:
  """Gradients of `loss` w.r.t. `leaves` using `tape` (default: current)."""
  tape = tape or current_tape()
  if tape is None:
    raise errors.ContractError('`backward` requires an active or given tape.')
  return tape.gradient(loss, leaves)


def value_and_grad(fn: Callable[..., Tensor],
                   *arrays: np.ndarray) -> Tuple[float, List[np.ndarray]]:
  """Evaluates scalar `fn` on fresh leaves built from `arrays`.

  Returns:
    The loss value and one gradient per input array.
  """
  leaves = [Tensor(a, requires_grad=True) for a in arrays]
  with Tape() as tape:
    loss = fn(*leaves)
  grads = tape.gradient(loss, leaves)
  return loss.item(), grads


def finite_diff_check(fn: Callable[[Tensor], Tensor],
                      x: ArrayLike,
                      h: float = 1e-6) -> float:
  """Compares the tape gradient of `fn` at `x` with central differences.

  Args:
    fn: Scalar-valued function of one tensor.
    x: Point at which to check the gradient.
    h: Perturbation size, in [1e-7, 1e-3].

  Returns:
    The worst elementwise relative error |numeric - analytic| divided by
    max(|analytic|, 1e-8).

  Raises:
    ConfigError: `h` is out of range.
    NumericError: `fn` produced a non-finite value.
  """
  if not 1e-7 <= h <= 1e-3:
    raise errors.ConfigError(f'`h` must be in [1e-7, 1e-3], got {h}.')
  x = np.array(x, dtype=np.float64)
  _, (analytic,) = value_and_grad(fn, x)

  def _evaluate(point: np.ndarray) -> float:
    with stop_recording():
      value = fn(Tensor(point)).item()
    if not np.isfinite(value):
      raise errors.NumericError('Non-finite function value in gradient check.')
    return value

  worst = 0.0
  for i in range(x.size):
    plus = x.copy()
    minus = x.copy()
    plus.flat[i] += h
    minus.flat[i] -= h
    numeric = (_evaluate(plus) - _evaluate(minus)) / (2 * h)
    exact = analytic.flat[i]
    worst = max(worst, abs(numeric - exact) / max(abs(exact), 1e-8))
  return worst
