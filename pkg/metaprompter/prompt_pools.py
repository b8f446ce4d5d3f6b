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

"""Prompt pools: K (key, prompt value) pairs composed per instance.

An instance prompt is the attention-weighted average of all K values, with
attention between the keys and the query embedding q(x) of the instance:

  a = softmax(K q(x) / sqrt(d_o)),  theta_x = sum_i a_i theta_i.

In `METAPROMPTING` mode the pool holds a single prompt used for every input,
optionally together with trainable encoder weights.
"""

import collections
import dataclasses
import enum
import math
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from absl import logging
from metaprompter import autodiff
from metaprompter import checkpoints
from metaprompter import configs
from metaprompter import encoders
from metaprompter import errors
from metaprompter import ops
import numpy as np

Tensor = autodiff.Tensor

KEYS = 'keys'
VALUES = 'values'
ENCODER_PREFIX = 'encoder/'
CHECKPOINT_KIND = 'prompt_pool'


class PoolMode(enum.Enum):
  METAPROMPTER = 'metaprompter'
  METAPROMPTING = 'metaprompting'


@dataclasses.dataclass(frozen=True, eq=False)
class PromptPool:
  """Keys [K x d_o], values [K x L_p x d_i] and optional encoder weights.

  A pool is immutable. Gradient leaves are obtained from `with_leaves`, and
  updated values are put in a new pool with `replace_arrays`.
  """
  mode: PoolMode
  keys: Tensor
  values: Tensor
  encoder_weights: Optional[Mapping[str, Tensor]] = None

  def __post_init__(self):
    if self.keys.ndim != 2 or self.values.ndim != 3:
      raise errors.DimensionError(
          f'Pool needs keys [K x d] and values [K x L_p x d], got '
          f'{self.keys.shape} and {self.values.shape}.')
    if self.keys.shape[0] != self.values.shape[0] or self.keys.shape[0] < 1:
      raise errors.DimensionError(
          f'Pool has {self.keys.shape[0]} keys and {self.values.shape[0]} '
          'values.')
    if self.values.shape[1] < 1:
      raise errors.DimensionError('Prompt length must be at least 1.')

  @property
  def num_prompts(self) -> int:
    return self.keys.shape[0]

  @property
  def prompt_length(self) -> int:
    return self.values.shape[1]

  @property
  def key_dim(self) -> int:
    return self.keys.shape[1]

  @property
  def value_dim(self) -> int:
    return self.values.shape[2]

  def parameters(self) -> 'collections.OrderedDict[str, Tensor]':
    """The meta-parameters, keyed by checkpoint name."""
    params = collections.OrderedDict()
    params[KEYS] = self.keys
    params[VALUES] = self.values
    for name, weight in (self.encoder_weights or {}).items():
      params[ENCODER_PREFIX + name] = weight
    return params

  def arrays(self) -> 'collections.OrderedDict[str, np.ndarray]':
    return collections.OrderedDict(
        (name, t.data) for name, t in self.parameters().items())

  def replace_arrays(self, arrays: Mapping[str, np.ndarray],
                     requires_grad: bool = False) -> 'PromptPool':
    """A pool of the same mode holding `arrays` (as returned by `arrays`)."""
    weights = None
    if self.encoder_weights is not None:
      weights = collections.OrderedDict(
          (name, Tensor(arrays[ENCODER_PREFIX + name], requires_grad))
          for name in self.encoder_weights)
    return PromptPool(self.mode, Tensor(arrays[KEYS], requires_grad),
                      Tensor(arrays[VALUES], requires_grad), weights)

  def with_leaves(self) -> 'PromptPool':
    """A copy whose parameters are fresh gradient leaves."""
    return self.replace_arrays(self.arrays(), requires_grad=True)

  def param_count(self) -> int:
    encoder_count = 0
    if self.encoder_weights is not None:
      encoder_count = int(sum(w.size for w in self.encoder_weights.values()))
    return param_count(self.mode, self.num_prompts, self.prompt_length,
                       self.value_dim, self.key_dim, encoder_count)


def param_count(mode: PoolMode,
                num_prompts: int,
                prompt_length: int,
                dim_in: int,
                dim_out: int,
                encoder_count: int = 0) -> int:
  """Number of meta-parameters.

  Args:
    mode: Pool mode.
    num_prompts: K.
    prompt_length: L_p.
    dim_in: Input embedding dimension d_i.
    dim_out: Output embedding dimension d_o.
    encoder_count: Trainable encoder parameters d_phi (`METAPROMPTING` only).

  Returns:
    K (d_o + L_p d_i) for `METAPROMPTER`, d_phi + L_p d_i for `METAPROMPTING`.
  """
  if mode == PoolMode.METAPROMPTING:
    return encoder_count + prompt_length * dim_in
  return num_prompts * (dim_out + prompt_length * dim_in)


def init_pool(config: configs.PoolConfig,
              encoder_params: encoders.EncoderParams,
              label_tokens: Sequence[int],
              seed: int) -> PromptPool:
  """Initializes a pool from the embeddings of random label tokens.

  Every value row copies the embedding of a token drawn uniformly, with
  replacement, from `label_tokens`; keys are drawn from N(0, key_init_std^2).

  Raises:
    ConfigError: `label_tokens` is empty or the mode is unknown.
  """
  if not label_tokens:
    raise errors.ConfigError('Pool initialization needs label tokens.')
  try:
    mode = PoolMode(config.mode)
  except ValueError as e:
    raise errors.ConfigError(f'Unknown pool mode `{config.mode}`.') from e
  num_prompts = config.num_prompts
  if mode == PoolMode.METAPROMPTING and num_prompts != 1:
    logging.warning('MetaPrompting mode uses a single prompt; ignoring K=%d.',
                    num_prompts)
    num_prompts = 1

  rng = np.random.default_rng(seed)
  table = encoder_params.arrays[encoders.TOKEN_EMBEDDING]
  token_ids = rng.choice(np.asarray(label_tokens), size=(num_prompts,
                                                         config.prompt_length))
  values = table[token_ids]
  keys = rng.normal(0.0, config.key_init_std,
                    size=(num_prompts, encoder_params.dim))
  weights = None
  if config.tune_encoder:
    if mode != PoolMode.METAPROMPTING:
      raise errors.ConfigError(
          '`tune_encoder` is only available in `metaprompting` mode.')
    weights = collections.OrderedDict(
        (name, Tensor(a)) for name, a in encoder_params.arrays.items())
  return PromptPool(mode, Tensor(keys), Tensor(values), weights)


def attention_weights(pool: PromptPool, query: Tensor,
                      scaled: bool = True) -> Tensor:
  """Attention a [K] of the pool keys to `query` [d_o].

  Args:
    pool: Prompt pool.
    query: Query embedding q(x).
    scaled: Divide the scores by sqrt(d_o) before the softmax.

  Raises:
    DimensionError: `query` does not match the key dimension.
  """
  if query.shape != (pool.key_dim,):
    raise errors.DimensionError(
        f'Query of shape {query.shape} does not match keys {pool.keys.shape}.')
  scores = ops.matmul(pool.keys, ops.reshape(query, (pool.key_dim, 1)))
  temperature = math.sqrt(pool.key_dim) if scaled else 1.0
  return ops.softmax(ops.reshape(scores, (pool.num_prompts,)), temperature)


def compose_prompt(pool: PromptPool, weights: Tensor) -> Tensor:
  """Convex combination sum_i weights_i theta_i, of shape [L_p x d_i]."""
  if weights.shape != (pool.num_prompts,):
    raise errors.DimensionError(
        f'Expected {pool.num_prompts} weights, got shape {weights.shape}.')
  flat = ops.reshape(pool.values,
                     (pool.num_prompts, pool.prompt_length * pool.value_dim))
  mixed = ops.matmul(ops.reshape(weights, (1, pool.num_prompts)), flat)
  return ops.reshape(mixed, (pool.prompt_length, pool.value_dim))


def instance_prompt(pool: PromptPool,
                    tokens: Sequence[int],
                    encoder: encoders.Encoder,
                    probe_anchors: Sequence[int],
                    scaled: bool = True) -> Tensor:
  """The prompt for one input; `encoder` must hold the frozen weights."""
  if pool.mode == PoolMode.METAPROMPTING:
    return ops.reshape(ops.gather_rows(pool.values, [0]),
                       (pool.prompt_length, pool.value_dim))
  query = encoder.query_embedding(tokens, probe_anchors)
  return compose_prompt(pool, attention_weights(pool, query, scaled))


# ----------------------------------------------------------------------
# ---------------------------- Checkpoints. ----------------------------
# ----------------------------------------------------------------------


def save_pool(path: str, pool: PromptPool, **metadata) -> None:
  """Writes `pool`; `metadata` (e.g. iteration, accuracy) is stored along."""
  checkpoints.save_checkpoint(
      path, CHECKPOINT_KIND, pool.arrays(), {
          **metadata,
          'mode': pool.mode.value,
          'num_prompts': pool.num_prompts,
          'prompt_length': pool.prompt_length,
          'key_dim': pool.key_dim,
          'value_dim': pool.value_dim,
          'param_count': pool.param_count(),
      })


def load_pool(path: str) -> Tuple[PromptPool, Dict[str, Any]]:
  """Returns (pool, metadata) restored from `save_pool`'s output."""
  ckpt = checkpoints.load_checkpoint(path, CHECKPOINT_KIND)
  meta = ckpt.metadata
  try:
    mode = PoolMode(meta['mode'])
  except (KeyError, ValueError) as e:
    raise errors.ParseError(f'Invalid pool mode in `{path}`.') from e
  weights = None
  encoder_names = [
      n[len(ENCODER_PREFIX):]
      for n in ckpt.arrays
      if n.startswith(ENCODER_PREFIX)
  ]
  if encoder_names:
    weights = collections.OrderedDict(
        (n, Tensor(ckpt.arrays[ENCODER_PREFIX + n])) for n in encoder_names)
  pool = PromptPool(mode, Tensor(ckpt.arrays[KEYS]),
                    Tensor(ckpt.arrays[VALUES]), weights)
  if (pool.num_prompts, pool.prompt_length) != (meta['num_prompts'],
                                                 meta['prompt_length']):
    raise errors.ParseError(f'Pool shape in `{path}` disagrees with its tags.')
  return pool, meta
