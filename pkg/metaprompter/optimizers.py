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

"""Functional parameter updates over named arrays."""

import collections
import dataclasses
from typing import Mapping, Sequence, Tuple, Union

from metaprompter import errors
import numpy as np

Params = 'collections.OrderedDict[str, np.ndarray]'
Grads = Union[Mapping[str, np.ndarray], Sequence[np.ndarray]]


def _named_grads(params: Mapping[str, np.ndarray],
                 grads: Grads) -> 'collections.OrderedDict[str, np.ndarray]':
  if not isinstance(grads, Mapping):
    grads = list(grads)
    if len(grads) != len(params):
      raise errors.DimensionError(
          f'Got {len(grads)} gradients for {len(params)} parameters.')
    grads = dict(zip(params.keys(), grads))
  named = collections.OrderedDict()
  for name, param in params.items():
    if name not in grads:
      raise errors.DimensionError(f'Missing gradient for `{name}`.')
    grad = np.asarray(grads[name], dtype=np.float64)
    if grad.shape != np.shape(param):
      raise errors.DimensionError(
          f'Gradient of `{name}` has shape {grad.shape}, parameter has '
          f'{np.shape(param)}.')
    if not np.all(np.isfinite(grad)):
      raise errors.NumericError(f'Non-finite gradient for `{name}`.')
    named[name] = grad
  return named


def _read_only(array: np.ndarray) -> np.ndarray:
  array.setflags(write=False)
  return array


def sgd_update(params: Mapping[str, np.ndarray], grads: Grads,
               learning_rate: float) -> Params:
  """Plain gradient descent step `param - learning_rate * grad`."""
  grads = _named_grads(params, grads)
  return collections.OrderedDict(
      (name, _read_only(params[name] - learning_rate * grads[name]))
      for name in params)


@dataclasses.dataclass(frozen=True)
class AdamState:
  """Moments of every parameter and the number of steps taken."""
  m: Mapping[str, np.ndarray]
  v: Mapping[str, np.ndarray]
  step: int = 0
  beta1: float = 0.9
  beta2: float = 0.999
  eps: float = 1e-8

  @classmethod
  def zeros_like(cls, params: Mapping[str, np.ndarray], **kwargs) -> 'AdamState':
    zeros = collections.OrderedDict(
        (name, np.zeros(np.shape(p))) for name, p in params.items())
    return cls(m=zeros, v=collections.OrderedDict(
        (name, np.zeros(np.shape(p))) for name, p in params.items()), **kwargs)


def adam_update(state: AdamState, params: Mapping[str, np.ndarray],
                grads: Grads,
                learning_rate: float) -> Tuple[Params, AdamState]:
  """One bias-corrected Adam step.

  Args:
    state: Moments from the previous step; not modified.
    params: Current parameter values.
    grads: Gradients, by name or in the iteration order of `params`.
    learning_rate: Step size.

  Returns:
    The new parameters and the new `AdamState`.

  Raises:
    DimensionError: Gradient and parameter shapes disagree.
    NumericError: A gradient is not finite.
  """
  grads = _named_grads(params, grads)
  step = state.step + 1
  correction1 = 1.0 - state.beta1 ** step
  correction2 = 1.0 - state.beta2 ** step
  new_params = collections.OrderedDict()
  new_m = collections.OrderedDict()
  new_v = collections.OrderedDict()
  for name, param in params.items():
    g = grads[name]
    m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
    v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
    m_hat = m / correction1
    v_hat = v / correction2
    new_params[name] = _read_only(
        param - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
    new_m[name] = m
    new_v[name] = v
  return new_params, dataclasses.replace(state, m=new_m, v=new_v, step=step)
