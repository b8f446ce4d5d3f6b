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

"""N-way k-shot episode sampling."""

from typing import NamedTuple, Tuple

from metaprompter import corpora
from metaprompter import errors
from metaprompter import utils
import numpy as np


class Sample(NamedTuple):
  doc_index: int
  tokens: Tuple[int, ...]
  # Episode-local label in [0, N).
  label: int


class Episode(NamedTuple):
  """One task: corpus class ids in sampled order, support and query sets."""
  classes: Tuple[int, ...]
  support: Tuple[Sample, ...]
  query: Tuple[Sample, ...]

  @property
  def n_way(self) -> int:
    return len(self.classes)


def sample_episode(corpus: corpora.Corpus, split: corpora.Split, n_way: int,
                   k_shot: int, q_query: int,
                   rng: np.random.Generator) -> Episode:
  """Samples a balanced episode from the classes of `split`.

  `n_way` classes are drawn without replacement, then `k_shot + q_query`
  documents per class without replacement; the first `k_shot` go to the
  support set. Class `classes[i]` gets the episode-local label `i`.

  Raises:
    SamplingError: Not enough classes in `split` or documents in a class.
  """
  candidates = corpus.class_ids(split)
  if len(candidates) < n_way:
    raise errors.SamplingError(
        f'Split `{split.value}` has {len(candidates)} classes, need {n_way}.')
  chosen = rng.choice(candidates, size=n_way, replace=False)
  support = []
  query = []
  for label, class_id in enumerate(chosen):
    docs = corpus.doc_indices(int(class_id))
    if len(docs) < k_shot + q_query:
      raise errors.SamplingError(
          f'Class `{corpus.class_info(int(class_id)).name}` has {len(docs)} '
          f'documents, need {k_shot + q_query}.')
    picks = rng.choice(docs, size=k_shot + q_query, replace=False)
    samples = [
        Sample(int(i), corpus.documents[int(i)].tokens, label) for i in picks
    ]
    support.extend(samples[:k_shot])
    query.extend(samples[k_shot:])
  return Episode(tuple(int(c) for c in chosen), tuple(support), tuple(query))


class EpisodeSampler:
  """Deterministic, random-access episodes of one split.

  Episode `i` only depends on (seed, split, i), so episodes can be drawn in
  any order or concurrently.
  """

  def __init__(self, corpus: corpora.Corpus, split: corpora.Split, n_way: int,
               k_shot: int, q_query: int, seed: int):
    self._corpus = corpus
    self._split = split
    self._n_way = n_way
    self._k_shot = k_shot
    self._q_query = q_query
    self._seed = seed

  @property
  def split(self) -> corpora.Split:
    return self._split

  @property
  def num_classes(self) -> int:
    return len(self._corpus.class_ids(self._split))

  def episode(self, index: int) -> Episode:
    rng = utils.derive_rng(self._seed, self._split.code, index)
    return sample_episode(self._corpus, self._split, self._n_way,
                          self._k_shot, self._q_query, rng)
