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

"""Label prediction heads on top of the masked LM output.

* The hand-crafted verbalizer averages the vocabulary probabilities of each
  label's tokens.
* RepVerb builds one label embedding per class as the mean `[MASK]` embedding
  of its support samples and scores labels by a temperature-scaled cosine
  softmax.
* The two are mixed as `(1 - lam) * hard + lam * soft`.
* The WARP head learns label embeddings per task by a few gradient steps on a
  dot-product softmax.
"""

import hashlib
import threading
from typing import (Callable, Dict, List, Mapping, NamedTuple, Sequence, Tuple,
                    Union)

from metaprompter import autodiff
from metaprompter import encoders
from metaprompter import episodes
from metaprompter import errors
from metaprompter import ops
import numpy as np

Tensor = autodiff.Tensor

COSINE = 'cosine'
EUCLIDEAN = 'euclidean'


class HandVerbalizer:
  """Per-class label-token sets V_y."""

  def __init__(self, label_tokens: Mapping[int, Sequence[int]],
               vocab_size: int):
    """Initializes the `HandVerbalizer`.

    Args:
      label_tokens: Map of corpus class id to its label-token ids.
      vocab_size: Size of the vocabulary distributions to read.

    Raises:
      ConfigError: A token set is empty or holds an invalid id.
    """
    for label, tokens in label_tokens.items():
      if not tokens:
        raise errors.ConfigError(f'Label {label} has no verbalizer tokens.')
      for t in tokens:
        if not 0 <= t < vocab_size:
          raise errors.ConfigError(
              f'Verbalizer token {t} of label {label} is not in a vocabulary '
              f'of size {vocab_size}.')
    self._label_tokens = {y: tuple(ts) for y, ts in label_tokens.items()}
    self._vocab_size = vocab_size
    self._matrices: Dict[Tuple[int, ...], Tensor] = {}
    self._lock = threading.Lock()

  def tokens(self, label: int) -> Tuple[int, ...]:
    return self._label_tokens[label]

  def matrix(self, labels: Sequence[int]) -> Tensor:
    """Averaging matrix [V x N] for the episode classes `labels`."""
    key = tuple(labels)
    with self._lock:
      matrix = self._matrices.get(key)
      if matrix is None:
        values = np.zeros((self._vocab_size, len(key)))
        for j, label in enumerate(key):
          tokens = self._label_tokens[label]
          for t in tokens:
            values[t, j] += 1.0 / len(tokens)
        matrix = Tensor(values)
        self._matrices[key] = matrix
    return matrix


def hard_prob(vocab_dist: Tensor, verbalizer: HandVerbalizer,
              labels: Sequence[int]) -> Tensor:
  """Mean `[MASK]` probability of each label's tokens, not renormalized."""
  size = vocab_dist.shape[0]
  row = ops.reshape(vocab_dist, (1, size))
  return ops.reshape(ops.matmul(row, verbalizer.matrix(labels)),
                     (len(labels),))


class LabelEmbeddings(NamedTuple):
  """One embedding per episode label; `provenance` names the support set."""
  vectors: Tensor
  provenance: str

  @property
  def num_labels(self) -> int:
    return self.vectors.shape[0]

  def detach(self) -> 'LabelEmbeddings':
    return LabelEmbeddings(self.vectors.detach(), self.provenance)


def _provenance(samples: Sequence[episodes.Sample]) -> str:
  ids = ','.join(str(s.doc_index) for s in samples)
  return hashlib.sha1(ids.encode('utf-8')).hexdigest()[:12]


def compute_label_embeddings(
    support: Sequence[episodes.Sample],
    embed: Callable[[episodes.Sample], Tensor],
    num_labels: int) -> LabelEmbeddings:
  """Label embeddings v_y = mean of the support embeddings of class y.

  Samples are visited in document order, so the result does not depend on
  the order of `support`.

  Args:
    support: Support samples with episode-local labels.
    embed: Returns h_[MASK] [d] of a sample wrapped with its own prompt.
    num_labels: Number of episode labels N.

  Returns:
    `LabelEmbeddings` with vectors [N x d], differentiable through `embed`.

  Raises:
    MissingClassError: A label has no support sample.
  """
  ordered = sorted(support, key=lambda s: s.doc_index)
  groups: List[List[episodes.Sample]] = [[] for _ in range(num_labels)]
  for sample in ordered:
    groups[sample.label].append(sample)
  means = []
  for label, group in enumerate(groups):
    if not group:
      raise errors.MissingClassError(
          f'Label {label} has no support samples.')
    means.append(ops.mean_rows(ops.stack([embed(s) for s in group])))
  return LabelEmbeddings(ops.stack(means), _provenance(ordered))


def similarity_scores(hidden: Tensor, label_embeddings: LabelEmbeddings,
                      similarity: str = COSINE) -> Tensor:
  """Similarity [N] of `hidden` to every label embedding."""
  scores = []
  for y in range(label_embeddings.num_labels):
    v = ops.reshape(
        ops.gather_rows(label_embeddings.vectors, [y]), hidden.shape)
    if similarity == COSINE:
      scores.append(ops.cosine(v, hidden))
    elif similarity == EUCLIDEAN:
      scores.append(ops.scale(ops.squared_distance(v, hidden), -1.0))
    else:
      raise errors.ConfigError(f'Unknown similarity `{similarity}`.')
  return ops.stack(scores)


def repverb_prob(hidden: Tensor,
                 label_embeddings: LabelEmbeddings,
                 rho: float,
                 similarity: str = COSINE) -> Tensor:
  """softmax_y(rho * sim(v_y, h)) over the episode labels.

  Raises:
    ConfigError: `rho` is not positive.
    DegenerateVectorError: `hidden` or a label embedding is near zero.
  """
  if rho <= 0:
    raise errors.ConfigError(f'`rho` must be positive, got {rho}.')
  scores = similarity_scores(hidden, label_embeddings, similarity)
  return ops.softmax(ops.scale(scores, rho))


def combined_prob(hard: Tensor, soft: Tensor, lam: float) -> Tensor:
  """(1 - lam) * hard + lam * soft; exactly one branch at lam in {0, 1}."""
  if not 0.0 <= lam <= 1.0:
    raise errors.ConfigError(f'`lam` must be in [0, 1], got {lam}.')
  if lam == 0.0:
    return hard
  if lam == 1.0:
    return soft
  return ops.add(ops.scale(hard, 1.0 - lam), ops.scale(soft, lam))


def combined_nll(scores: Tensor, target: int, normalize: bool = True) -> Tensor:
  """-log of the target score, renormalized over the labels if `normalize`."""
  if normalize:
    scores = ops.normalize(scores)
  return ops.nll(ops.log(scores), target)


# ----------------------------------------------------------------------
# -------------------------------- WARP. -------------------------------
# ----------------------------------------------------------------------


class WarpHead(NamedTuple):
  """Label embeddings [N x d] and the support loss before each step + final."""
  embeddings: np.ndarray
  losses: Tuple[float, ...]


def frozen_features(encoder: encoders.Encoder, tokens: Sequence[int],
                    anchors: Sequence[int]) -> Tuple[Tensor, Tensor]:
  """(h_[MASK], vocab_dist) with the discrete prompt only, without gradient."""
  with autodiff.stop_recording():
    return encoder.encode(encoder.wrap(tokens, None, anchors))


def _warp_loss(embeddings: Tensor, features: Sequence[Tensor],
               labels: Sequence[int]) -> Tensor:
  terms = []
  for h, y in zip(features, labels):
    logits = ops.matmul(embeddings, ops.reshape(h, (h.shape[0], 1)))
    terms.append(
        ops.nll(ops.log_softmax(ops.reshape(logits, (embeddings.shape[0],))),
                y))
  return ops.add_n(terms)


def warp_fit(support: Sequence[episodes.Sample],
             encoder: encoders.Encoder,
             anchors: Sequence[int],
             num_labels: int,
             steps: int = 5,
             learning_rate: float = 0.05,
             init_std: float = 0.02,
             seed: Union[int, Sequence[int]] = 0) -> WarpHead:
  """Trains per-task WARP label embeddings on frozen support features.

  Raises:
    MissingClassError: A label has no support sample.
  """
  present = {s.label for s in support}
  for label in range(num_labels):
    if label not in present:
      raise errors.MissingClassError(f'Label {label} has no support samples.')
  features = [frozen_features(encoder, s.tokens, anchors)[0] for s in support]
  labels = [s.label for s in support]

  rng = np.random.default_rng(seed)
  embeddings = rng.normal(0.0, init_std, size=(num_labels, encoder.dim))
  losses = []
  for _ in range(steps):
    leaf = Tensor(embeddings, requires_grad=True)
    with autodiff.Tape() as tape:
      loss = _warp_loss(leaf, features, labels)
    grad, = tape.gradient(loss, [leaf])
    losses.append(loss.item())
    embeddings = embeddings - learning_rate * grad
  with autodiff.stop_recording():
    losses.append(_warp_loss(Tensor(embeddings), features, labels).item())
  return WarpHead(embeddings, tuple(losses))


def warp_predict(hidden: Tensor, head: WarpHead) -> Tensor:
  """softmax_y(v_y . h) over the episode labels."""
  logits = ops.matmul(
      Tensor(head.embeddings), ops.reshape(hidden, (hidden.shape[0], 1)))
  return ops.softmax(ops.reshape(logits, (head.embeddings.shape[0],)))
