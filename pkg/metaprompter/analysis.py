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

"""Inspection of learned prompt pools.

All functions are read-only on their inputs and return plain numpy data that
`experiments` writes to CSV.
"""

from typing import List, NamedTuple, Sequence, Tuple

from metaprompter import autodiff
from metaprompter import encoders
from metaprompter import episodes
from metaprompter import errors
from metaprompter import meta_learners
from metaprompter import prompt_pools
from metaprompter import tokenizers
from metaprompter import verbalizers
import numpy as np

_EPS = 1e-12


def _unit_rows(matrix: np.ndarray, what: str) -> np.ndarray:
  norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
  if np.any(norms <= _EPS):
    raise errors.DegenerateVectorError(f'Zero-norm vector in {what}.')
  return matrix / norms


# ----------------------------------------------------------------------
# -------------------------- Class attention. --------------------------
# ----------------------------------------------------------------------


class ClassAttention(NamedTuple):
  """Mean attention [classes x K] of each class's samples to the prompts."""
  class_ids: Tuple[int, ...]
  matrix: np.ndarray
  # False for classes that no sampled task contained; their rows are NaN.
  present: np.ndarray
  # Number of tasks containing each class.
  task_counts: np.ndarray


def class_attention(learner: meta_learners.MetaLearner,
                    meta_pool: prompt_pools.PromptPool,
                    sampler: episodes.EpisodeSampler,
                    class_ids: Sequence[int],
                    num_episodes: int,
                    steps: int) -> ClassAttention:
  """Average attention of class-y support samples over tasks containing y.

  For each sampled task the pool is first adapted to its support set; the
  attention of every support sample uses the adapted keys. Per task, the
  attention vectors of the class-y samples are averaged, then the task means
  are averaged over the tasks containing y.

  Args:
    learner: Meta-learner used for adaptation and attention.
    meta_pool: Meta-trained pool.
    sampler: Source of the tasks, usually the meta-train split.
    class_ids: Corpus class ids to report, in row order.
    num_episodes: Number of tasks to sample.
    steps: Inner steps per task.

  Returns:
    The `ClassAttention`.
  """
  row = {c: i for i, c in enumerate(class_ids)}
  sums = np.zeros((len(class_ids), meta_pool.num_prompts))
  counts = np.zeros(len(class_ids), dtype=np.int64)
  for index in range(num_episodes):
    episode = sampler.episode(index)
    adapted = learner.adapt(meta_pool, episode, steps)
    with autodiff.stop_recording():
      for label, class_id in enumerate(episode.classes):
        if class_id not in row:
          continue
        vectors = [
            learner.attention(adapted.pool, s.tokens).data
            for s in episode.support
            if s.label == label
        ]
        sums[row[class_id]] += np.mean(vectors, axis=0)
        counts[row[class_id]] += 1
  present = counts > 0
  matrix = np.full_like(sums, np.nan)
  matrix[present] = sums[present] / counts[present, None]
  return ClassAttention(tuple(class_ids), matrix, present, counts)


# ----------------------------------------------------------------------
# --------------------------- Prompt tokens. ---------------------------
# ----------------------------------------------------------------------


def nearest_tokens(pool: prompt_pools.PromptPool,
                   encoder_params: encoders.EncoderParams,
                   vocabulary: tokenizers.Vocabulary,
                   m: int) -> List[List[Tuple[str, float]]]:
  """Top-m vocabulary tokens closest to each prompt.

  A token's score for prompt i is the largest cosine between its embedding and
  any row of theta_i. Reserved tokens are never returned; ties keep vocabulary
  order.

  Returns:
    For every prompt, m (token, score) pairs by decreasing score.

  Raises:
    ConfigError: `m` exceeds the number of non-reserved tokens.
  """
  candidates = np.asarray(vocabulary.regular_ids)
  if not 1 <= m <= len(candidates):
    raise errors.ConfigError(
        f'`m` must be in [1, {len(candidates)}], got {m}.')
  table = encoder_params.arrays[encoders.TOKEN_EMBEDDING][candidates]
  tokens = _unit_rows(table, 'token embeddings')
  values = _unit_rows(pool.values.data, 'prompt values')
  # [K, L_p, V'] -> [K, V']
  scores = np.einsum('kld,vd->klv', values, tokens).max(axis=1)
  result = []
  for prompt_scores in scores:
    order = np.argsort(-prompt_scores, kind='stable')[:m]
    result.append([(vocabulary.word(int(candidates[i])),
                    float(prompt_scores[i])) for i in order])
  return result


def topic_embeddings(encoder_params: encoders.EncoderParams,
                     verbalizer: verbalizers.HandVerbalizer,
                     class_ids: Sequence[int]) -> np.ndarray:
  """Mean token embedding [classes x d] of each class's label tokens."""
  table = encoder_params.arrays[encoders.TOKEN_EMBEDDING]
  return np.stack(
      [table[list(verbalizer.tokens(c))].mean(axis=0) for c in class_ids])


def prompt_topic_similarity(
    pool: prompt_pools.PromptPool, encoder_params: encoders.EncoderParams,
    verbalizer: verbalizers.HandVerbalizer,
    class_ids: Sequence[int]) -> Tuple[List[str], np.ndarray]:
  """Cosine [(K * L_p) x classes] of every prompt row to every topic.

  Rows are labelled "(i,j)" for row j of prompt i, both counted from 1, in
  prompt-major order.
  """
  rows = pool.values.data.reshape(-1, pool.value_dim)
  labels = [
      f'({i + 1},{j + 1})'
      for i in range(pool.num_prompts)
      for j in range(pool.prompt_length)
  ]
  topics = topic_embeddings(encoder_params, verbalizer, class_ids)
  similarity = (_unit_rows(rows, 'prompt values') @
                _unit_rows(topics, 'topic embeddings').T)
  return labels, np.clip(similarity, -1.0, 1.0)


# ----------------------------------------------------------------------
# ---------------------------- Embeddings. -----------------------------
# ----------------------------------------------------------------------


def pca_project(rows: np.ndarray, dims: int = 2) -> np.ndarray:
  """Projects `rows` [n x d] on their top `dims` principal components.

  Each component is signed so that its largest-magnitude loading is positive,
  which makes the output independent of the row order. Missing components
  (fewer than `dims` rows or columns) project to zero.
  """
  rows = np.asarray(rows, dtype=np.float64)
  if rows.ndim != 2:
    raise errors.DimensionError(f'Expected a matrix, got shape {rows.shape}.')
  centered = rows - rows.mean(axis=0)
  _, _, components = np.linalg.svd(centered, full_matrices=False)
  components = components[:dims]
  pivots = np.argmax(np.abs(components), axis=1)
  signs = np.sign(components[np.arange(len(components)), pivots])
  components = components * np.where(signs == 0, 1.0, signs)[:, None]
  projected = np.zeros((rows.shape[0], dims))
  projected[:, :len(components)] = centered @ components.T
  return projected


class EmbeddingExport(NamedTuple):
  # 'sample' or 'label' per row.
  kinds: Tuple[str, ...]
  # Corpus class id per row.
  classes: Tuple[int, ...]
  # h_[MASK] of support then query samples, then the label embeddings.
  embeddings: np.ndarray
  projected: np.ndarray


def export_embeddings(learner: meta_learners.MetaLearner,
                      meta_pool: prompt_pools.PromptPool,
                      episode: episodes.Episode, steps: int) -> EmbeddingExport:
  """`[MASK]` embeddings of an episode and its label embeddings, in 2-D.

  The pool is adapted on the support set first; all rows use the adapted pool.
  """
  adapted = learner.adapt(meta_pool, episode, steps)
  kinds = []
  classes = []
  vectors = []
  with autodiff.stop_recording():
    for s in episode.support + episode.query:
      hidden, _ = learner.forward(adapted.pool, s.tokens)
      kinds.append('sample')
      classes.append(episode.classes[s.label])
      vectors.append(hidden.data)
    label_embeddings = learner.label_embeddings(adapted.pool, episode)
  for label, vector in enumerate(label_embeddings.vectors.data):
    kinds.append('label')
    classes.append(episode.classes[label])
    vectors.append(vector)
  embeddings = np.stack(vectors)
  return EmbeddingExport(
      tuple(kinds), tuple(classes), embeddings, pca_project(embeddings))
