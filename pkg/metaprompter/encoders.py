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

"""A toy masked language model standing in for a pre-trained encoder.

The model is a post-layer-norm transformer encoder with learned positional
embeddings and a GELU feed-forward layer, whose output head is tied to the
token embedding table. Inputs are wrapped with a template

  [CLS] x_1 ... x_n  theta_1 ... theta_L  anchor_1 ... anchor_m  [MASK] [SEP]

where the continuous prompt rows theta are inserted verbatim and every other
row is a token embedding.

Usage:

```python
params = encoders.pretrain_encoder(corpus, configs.EncoderConfig(), anchors)
encoder = encoders.Encoder(params, corpus.vocabulary)
h_mask, vocab_dist = encoder.encode(encoder.wrap(tokens, prompt, anchors))
```
"""

import collections
import dataclasses
import math
import threading
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from absl import logging
from metaprompter import autodiff
from metaprompter import checkpoints
from metaprompter import configs
from metaprompter import corpora
from metaprompter import errors
from metaprompter import ops
from metaprompter import optimizers
from metaprompter import tokenizers
import numpy as np

Tensor = autodiff.Tensor

TOKEN_EMBEDDING = 'token_embedding'
POSITION_EMBEDDING = 'position_embedding'
CHECKPOINT_KIND = 'encoder'


def _norm_names(prefix: str) -> Tuple[str, str]:
  return f'{prefix}/scale', f'{prefix}/offset'


def param_shapes(config: configs.EncoderConfig,
                 vocab_size: int) -> 'collections.OrderedDict[str, Tuple]':
  """Names and shapes of all encoder parameters, in a fixed order."""
  d = config.dim
  dh = d // config.num_heads
  shapes = collections.OrderedDict()
  shapes[TOKEN_EMBEDDING] = (vocab_size, d)
  shapes[POSITION_EMBEDDING] = (config.max_len, d)
  for name in _norm_names('embedding_norm'):
    shapes[name] = (d,)
  for b in range(config.num_blocks):
    for h in range(config.num_heads):
      for proj in ('query', 'key', 'value'):
        shapes[f'block_{b}/head_{h}/{proj}'] = (d, dh)
      shapes[f'block_{b}/head_{h}/output'] = (dh, d)
    for name in _norm_names(f'block_{b}/attention_norm'):
      shapes[name] = (d,)
    shapes[f'block_{b}/ffn/hidden'] = (d, config.ffn_dim)
    shapes[f'block_{b}/ffn/output'] = (config.ffn_dim, d)
    for name in _norm_names(f'block_{b}/ffn_norm'):
      shapes[name] = (d,)
  return shapes


@dataclasses.dataclass(frozen=True, eq=False)
class EncoderParams:
  """Encoder weights (phi). When `frozen`, no weight may be a gradient leaf."""
  config: configs.EncoderConfig
  arrays: Mapping[str, np.ndarray]
  frozen: bool = False
  pretrain_losses: Tuple[float, ...] = ()

  def __post_init__(self):
    arrays = collections.OrderedDict()
    for name, array in self.arrays.items():
      array = np.array(array, dtype=np.float64)
      array.setflags(write=False)
      arrays[name] = array
    object.__setattr__(self, 'arrays', arrays)

  @property
  def vocab_size(self) -> int:
    return self.arrays[TOKEN_EMBEDDING].shape[0]

  @property
  def dim(self) -> int:
    return self.config.dim

  def count(self) -> int:
    """Total number of parameters (d_phi)."""
    return int(sum(a.size for a in self.arrays.values()))


def init_params(config: configs.EncoderConfig, vocab_size: int,
                rng: np.random.Generator) -> EncoderParams:
  arrays = collections.OrderedDict()
  for name, shape in param_shapes(config, vocab_size).items():
    if name.endswith('/scale'):
      arrays[name] = np.ones(shape)
    elif name.endswith('/offset'):
      arrays[name] = np.zeros(shape)
    else:
      arrays[name] = rng.normal(0.0, config.init_std, size=shape)
  return EncoderParams(config, arrays)


class WrappedInput(NamedTuple):
  rows: Tensor
  mask_position: int
  num_prompt_rows: int


class Encoder:
  """Forward pass of the toy masked LM."""

  def __init__(self,
               params: EncoderParams,
               vocabulary: tokenizers.Vocabulary,
               weights: Optional[Mapping[str, Tensor]] = None):
    """Initializes the `Encoder`.

    Args:
      params: Encoder parameters.
      vocabulary: Vocabulary matching the token embedding table.
      weights: Tensors to run the forward pass with, e.g. gradient leaves
        during pretraining. Defaults to constants holding `params.arrays`.

    Raises:
      ContractError: `weights` contains a gradient leaf but `params` is frozen.
      DimensionError: The vocabulary does not match the embedding table.
    """
    if vocabulary.size != params.vocab_size:
      raise errors.DimensionError(
          f'Vocabulary has {vocabulary.size} words but the embedding table '
          f'has {params.vocab_size} rows.')
    if weights is None:
      weights = collections.OrderedDict(
          (name, Tensor(array)) for name, array in params.arrays.items())
    elif params.frozen and any(w.requires_grad for w in weights.values()):
      raise errors.ContractError(
          'Frozen encoder parameters cannot be gradient leaves.')
    self._params = params
    self._vocabulary = vocabulary
    self._weights: Dict[str, Tensor] = dict(weights)
    self._config = params.config
    self._query_cache: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]],
                            Tensor] = {}
    self._lock = threading.Lock()

  @property
  def params(self) -> EncoderParams:
    return self._params

  @property
  def vocabulary(self) -> tokenizers.Vocabulary:
    return self._vocabulary

  @property
  def dim(self) -> int:
    return self._config.dim

  def with_weights(self, weights: Mapping[str, Tensor]) -> 'Encoder':
    """Returns an encoder running with `weights`, sharing the vocabulary."""
    return Encoder(self._params, self._vocabulary, weights)

  def wrap(self, tokens: Sequence[int], prompt: Optional[Tensor],
           anchors: Sequence[int]) -> WrappedInput:
    """Builds the template rows around `tokens`.

    Args:
      tokens: Input token ids; truncated from the tail to fit `max_len`.
      prompt: Continuous prompt [L_p x d], or None for no prompt rows.
      anchors: Anchor token ids placed after the prompt.

    Returns:
      The `WrappedInput`; `[MASK]` is the row before the final `[SEP]`.

    Raises:
      ConfigError: The template alone exceeds `max_len`.
      DimensionError: `prompt` rows do not have the model dimension.
    """
    num_prompt_rows = 0
    if prompt is not None:
      if prompt.ndim != 2 or prompt.shape[1] != self.dim:
        raise errors.DimensionError(
            f'Prompt must have shape (L_p, {self.dim}), got {prompt.shape}.')
      num_prompt_rows = prompt.shape[0]
    room = self._config.max_len - (3 + num_prompt_rows + len(anchors))
    if room < 0:
      raise errors.ConfigError(
          f'Template with {num_prompt_rows} prompt rows and {len(anchors)} '
          f'anchors exceeds `max_len` {self._config.max_len}.')
    tokens = list(tokens)[:room]

    vocab = self._vocabulary
    table = self._weights[TOKEN_EMBEDDING]
    pieces = [ops.gather_rows(table, [vocab.cls_token] + tokens)]
    if num_prompt_rows:
      pieces.append(prompt)
    pieces.append(
        ops.gather_rows(table,
                        list(anchors) + [vocab.mask_token, vocab.sep_token]))
    rows = ops.concat_rows(pieces)
    return WrappedInput(rows, rows.shape[0] - 2, num_prompt_rows)

  def _attention(self, x: Tensor, b: int) -> Tensor:
    dh = self.dim // self._config.num_heads
    w = self._weights
    heads = []
    for h in range(self._config.num_heads):
      prefix = f'block_{b}/head_{h}'
      q = ops.matmul(x, w[f'{prefix}/query'])
      k = ops.matmul(x, w[f'{prefix}/key'])
      v = ops.matmul(x, w[f'{prefix}/value'])
      attn = ops.softmax(ops.matmul(q, ops.transpose(k)), math.sqrt(dh))
      heads.append(ops.matmul(ops.matmul(attn, v), w[f'{prefix}/output']))
    return ops.add_n(heads)

  def _block(self, x: Tensor, b: int) -> Tensor:
    w = self._weights
    scale, offset = _norm_names(f'block_{b}/attention_norm')
    x = ops.layer_norm(ops.add(x, self._attention(x, b)), w[scale], w[offset])
    hidden = ops.gelu(ops.matmul(x, w[f'block_{b}/ffn/hidden']))
    out = ops.matmul(hidden, w[f'block_{b}/ffn/output'])
    scale, offset = _norm_names(f'block_{b}/ffn_norm')
    return ops.layer_norm(ops.add(x, out), w[scale], w[offset])

  def hidden_states(self, wrapped: WrappedInput) -> Tensor:
    """Final hidden rows [n x d] of the wrapped input.

    Raises:
      NumericError: An activation became non-finite, naming the embedding
        stage or the block.
    """
    w = self._weights
    n = wrapped.rows.shape[0]
    scale, offset = _norm_names('embedding_norm')
    try:
      x = ops.add(wrapped.rows,
                  ops.gather_rows(w[POSITION_EMBEDDING], range(n)))
      x = ops.layer_norm(x, w[scale], w[offset])
    except errors.NumericError as e:
      raise errors.NumericError(
          f'Non-finite activation in the embedding layer: {e}') from e
    for b in range(self._config.num_blocks):
      try:
        x = self._block(x, b)
      except errors.NumericError as e:
        raise errors.NumericError(
            f'Non-finite activation in block {b}: {e}') from e
    return x

  def vocab_logits(self, hidden: Tensor) -> Tensor:
    """Tied output head: rows of `hidden` times the embedding table."""
    return ops.matmul(hidden, ops.transpose(self._weights[TOKEN_EMBEDDING]))

  def encode(self, wrapped: WrappedInput) -> Tuple[Tensor, Tensor]:
    """Returns h_[MASK] [d] and the vocabulary distribution at `[MASK]` [V]."""
    hidden = ops.gather_rows(self.hidden_states(wrapped),
                             [wrapped.mask_position])
    vocab_dist = ops.softmax(self.vocab_logits(hidden))
    return (ops.reshape(hidden, (self.dim,)),
            ops.reshape(vocab_dist, (self._vocabulary.size,)))

  def query_embedding(self, tokens: Sequence[int],
                      probe_anchors: Sequence[int]) -> Tensor:
    """Query function q(x): h_[MASK] of x wrapped without a prompt.

    The result is a constant; it never takes part in a gradient. Results are
    cached per (tokens, anchors), so only use this on frozen weights.
    """
    key = (tuple(tokens), tuple(probe_anchors))
    with self._lock:
      cached = self._query_cache.get(key)
    if cached is not None:
      return cached
    with autodiff.stop_recording():
      h, _ = self.encode(self.wrap(tokens, None, probe_anchors))
    with self._lock:
      self._query_cache[key] = h
    return h


# ----------------------------------------------------------------------
# ---------------------------- Pretraining. ----------------------------
# ----------------------------------------------------------------------


def _masked_lm_loss(encoder: Encoder, tokens: Sequence[int],
                    anchors: Sequence[int], mask_prob: float,
                    rng: np.random.Generator) -> Tuple[Tensor, int]:
  """Summed NLL of the masked positions of one document and the target count.

  Masks `mask_prob` of the document positions (at least one). The template
  slot after the anchors is trained to predict a word of the document.
  """
  vocab = encoder.vocabulary
  room = encoder.params.config.max_len - (3 + len(anchors))
  tokens = list(tokens)[:room]
  num_masked = max(1, int(round(mask_prob * len(tokens))))
  masked = sorted(rng.choice(len(tokens), size=num_masked, replace=False))
  inputs = list(tokens)
  for pos in masked:
    inputs[pos] = vocab.mask_token
  wrapped = encoder.wrap(inputs, None, anchors)
  positions = [1 + pos for pos in masked] + [wrapped.mask_position]
  targets = [tokens[pos] for pos in masked]
  targets.append(tokens[rng.integers(len(tokens))])
  hidden = ops.gather_rows(encoder.hidden_states(wrapped), positions)
  log_probs = ops.log_softmax(encoder.vocab_logits(hidden))
  return ops.nll(log_probs, targets), len(targets)


def pretrain_encoder(corpus: corpora.Corpus, config: configs.EncoderConfig,
                     anchors: Sequence[int] = ()) -> EncoderParams:
  """Trains the toy encoder with a masked-token objective.

  Args:
    corpus: Documents to train on; labels are ignored.
    config: Architecture and training settings; `config.seed` makes the run
      deterministic.
    anchors: Template anchor ids placed after each document.

  Returns:
    Frozen `EncoderParams` carrying the per-step training losses.

  Raises:
    ConfigError: Fewer than 2 regular words or no non-empty document.
  """
  vocab = corpus.vocabulary
  if len(vocab.regular_ids) < 2:
    raise errors.ConfigError(
        'Pretraining needs at least 2 non-reserved vocabulary words, got '
        f'{len(vocab.regular_ids)}.')
  documents = [d.tokens for d in corpus.documents if d.tokens]
  if not documents:
    raise errors.ConfigError('Pretraining needs a non-empty document.')

  rng = np.random.default_rng(config.seed)
  params = init_params(config, vocab.size, rng)
  arrays = params.arrays
  state = optimizers.AdamState.zeros_like(arrays)
  losses: List[float] = []
  for step in range(config.pretrain_steps):
    batch = rng.choice(len(documents), size=config.pretrain_batch_size)
    leaves = collections.OrderedDict(
        (name, Tensor(array, requires_grad=True))
        for name, array in arrays.items())
    encoder = Encoder(params, vocab, leaves)
    with autodiff.Tape() as tape:
      terms = []
      num_targets = 0
      for i in batch:
        term, count = _masked_lm_loss(encoder, documents[i], anchors,
                                      config.mask_prob, rng)
        terms.append(term)
        num_targets += count
      loss = ops.scale(ops.add_n(terms), 1.0 / num_targets)
    grads = tape.gradient(loss, list(leaves.values()))
    arrays, state = optimizers.adam_update(state, arrays, grads,
                                           config.pretrain_learning_rate)
    losses.append(loss.item())
    logging.info('Pretraining step %d/%d: masked LM loss %.4f.', step + 1,
                 config.pretrain_steps, losses[-1])
  return EncoderParams(config, arrays, frozen=True,
                       pretrain_losses=tuple(losses))


# ----------------------------------------------------------------------
# ---------------------------- Checkpoints. ----------------------------
# ----------------------------------------------------------------------


def save_encoder(path: str, params: EncoderParams,
                 vocabulary: tokenizers.Vocabulary) -> None:
  checkpoints.save_checkpoint(
      path, CHECKPOINT_KIND, params.arrays, {
          'config': dataclasses.asdict(params.config),
          'frozen': params.frozen,
          'pretrain_losses': list(params.pretrain_losses),
          'vocabulary': vocabulary.words,
      })


def load_encoder(path: str) -> Tuple[EncoderParams, tokenizers.Vocabulary]:
  """Restores the parameters and vocabulary written by `save_encoder`."""
  ckpt = checkpoints.load_checkpoint(path, CHECKPOINT_KIND)
  meta = ckpt.metadata
  try:
    config = configs.EncoderConfig(**meta['config'])
  except TypeError as e:
    raise errors.ParseError(f'Invalid encoder config in `{path}`.') from e
  expected = param_shapes(config, len(meta['vocabulary']))
  actual = collections.OrderedDict(
      (name, a.shape) for name, a in ckpt.arrays.items())
  if expected != actual:
    raise errors.ParseError(
        f'Encoder arrays in `{path}` do not match their config.')
  params = EncoderParams(config, ckpt.arrays, frozen=meta['frozen'],
                         pretrain_losses=tuple(meta['pretrain_losses']))
  return params, tokenizers.Vocabulary(meta['vocabulary'])
