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

"""Labeled token corpora and the synthetic topic corpus generator."""

import dataclasses
import enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from absl import logging
from metaprompter import errors
from metaprompter import tokenizers
import numpy as np

# Words never sampled into synthetic documents, available to templates.
TEMPLATE_WORDS = ('topic', 'is')
MIN_TOPIC_TOKENS = 3


class Split(enum.Enum):
  """Disjoint class partitions of a corpus."""
  TRAIN = 'train'
  VALID = 'valid'
  TEST = 'test'

  @property
  def code(self) -> int:
    return list(Split).index(self)


@dataclasses.dataclass(frozen=True)
class ClassInfo:
  id: int
  name: str
  label_tokens: Tuple[int, ...]
  split: Split


@dataclasses.dataclass(frozen=True)
class Document:
  tokens: Tuple[int, ...]
  label: int


class Corpus:
  """Immutable vocabulary, class metadata and documents."""

  def __init__(self, vocabulary: tokenizers.Vocabulary,
               classes: Sequence[ClassInfo], documents: Sequence[Document]):
    """Initializes and validates the `Corpus`.

    Raises:
      ValidationError: Duplicate class ids, a class without label tokens, a
        token id outside the vocabulary or a document citing an unknown label.
    """
    self._vocabulary = vocabulary
    self._classes: Dict[int, ClassInfo] = {}
    for info in classes:
      if info.id in self._classes:
        raise errors.ValidationError(f'Duplicate class id {info.id}.')
      if not info.label_tokens:
        raise errors.ValidationError(
            f'Class `{info.name}` ({info.id}) has no label tokens.')
      for t in info.label_tokens:
        self._check_token(t, f'label tokens of class `{info.name}`')
      self._classes[info.id] = info
    self._documents = tuple(documents)
    self._by_label: Dict[int, List[int]] = {c: [] for c in self._classes}
    for idx, doc in enumerate(self._documents):
      if doc.label not in self._classes:
        raise errors.ValidationError(
            f'Document {idx} cites unknown label {doc.label}.')
      for t in doc.tokens:
        self._check_token(t, f'document {idx}')
      self._by_label[doc.label].append(idx)

  def _check_token(self, token: int, where: str) -> None:
    if not 0 <= token < self._vocabulary.size:
      raise errors.ValidationError(
          f'Token id {token} in {where} is outside the vocabulary of size '
          f'{self._vocabulary.size}.')

  @property
  def vocabulary(self) -> tokenizers.Vocabulary:
    return self._vocabulary

  @property
  def classes(self) -> List[ClassInfo]:
    """Class metadata ordered by id."""
    return [self._classes[c] for c in sorted(self._classes)]

  @property
  def documents(self) -> Tuple[Document, ...]:
    return self._documents

  def class_info(self, label: int) -> ClassInfo:
    return self._classes[label]

  def class_ids(self, split: Optional[Split] = None) -> List[int]:
    return [c.id for c in self.classes if split is None or c.split == split]

  def doc_indices(self, label: int) -> List[int]:
    """Indices of the documents of class `label`, ascending."""
    return list(self._by_label[label])

  def label_token_pool(self, split: Optional[Split] = None) -> List[int]:
    """Sorted distinct label tokens of the classes in `split`."""
    return sorted({
        t for c in self.classes if split is None or c.split == split
        for t in c.label_tokens
    })

  def with_label_tokens(self, label_tokens: Mapping[int,
                                                    Sequence[int]]) -> 'Corpus':
    """Returns a corpus whose classes use the given label-token sets."""
    classes = [
        dataclasses.replace(c, label_tokens=tuple(label_tokens[c.id]))
        if c.id in label_tokens else c for c in self.classes
    ]
    return Corpus(self._vocabulary, classes, self._documents)

  def __eq__(self, other):
    if not isinstance(other, Corpus):
      return NotImplemented
    return (self._vocabulary.words == other._vocabulary.words and
            self.classes == other.classes and
            self._documents == other._documents)

  def __repr__(self):
    return (f'Corpus(vocab={self._vocabulary.size}, classes={len(self._classes)}'
            f', documents={len(self._documents)})')


def gen_synthetic_corpus(num_classes: int,
                         docs_per_class: int,
                         doc_length: int,
                         vocab_size: int,
                         topic_sharpness: float,
                         seed: int,
                         split_sizes: Optional[Tuple[int, int, int]] = None,
                         topic_tokens_per_class: int = 4) -> Corpus:
  """Generates a corpus of topic documents.

  Every class owns `topic_tokens_per_class` exclusive topic words; the rest of
  the vocabulary, apart from reserved and template words, is a shared
  background pool. Each token of a document is drawn from the class's own topic
  words with probability `topic_sharpness` and from the background otherwise.
  A class's label tokens are its topic words.

  Args:
    num_classes: Number of classes.
    docs_per_class: Documents generated per class.
    doc_length: Tokens per document.
    vocab_size: Total vocabulary size, including reserved and template words.
    topic_sharpness: Probability mass on the class's topic words, in [0, 1].
    seed: Seed of the generator.
    split_sizes: Number of (train, valid, test) classes; defaults to a 2:1:1
      partition. Classes are assigned to splits in a seeded random order.
    topic_tokens_per_class: Topic words per class, at least 3.

  Returns:
    The generated `Corpus`.

  Raises:
    ConfigError: Infeasible sizes.
  """
  if num_classes < 1 or docs_per_class < 1 or doc_length < 0:
    raise errors.ConfigError(
        f'Infeasible corpus: {num_classes} classes, {docs_per_class} documents'
        f' per class, length {doc_length}.')
  if not 0.0 <= topic_sharpness <= 1.0:
    raise errors.ConfigError(
        f'`topic_sharpness` must be in [0, 1], got {topic_sharpness}.')
  if topic_tokens_per_class < MIN_TOPIC_TOKENS:
    raise errors.ConfigError(
        f'`topic_tokens_per_class` must be at least {MIN_TOPIC_TOKENS}, got '
        f'{topic_tokens_per_class}.')
  num_fixed = len(tokenizers.Vocabulary.RESERVED) + len(TEMPLATE_WORDS)
  num_background = vocab_size - num_fixed - num_classes * topic_tokens_per_class
  if vocab_size <= 4 * num_classes or num_background < 1:
    raise errors.ConfigError(
        f'`vocab_size` {vocab_size} is too small for {num_classes} classes '
        f'with {topic_tokens_per_class} topic tokens each.')
  if split_sizes is None:
    valid = test = num_classes // 4
    split_sizes = (num_classes - valid - test, valid, test)
  if sum(split_sizes) != num_classes or min(split_sizes) < 0:
    raise errors.ConfigError(
        f'Split sizes {split_sizes} do not partition {num_classes} classes.')

  words = list(TEMPLATE_WORDS)
  topic_words = [[f'c{c:02d}w{j}' for j in range(topic_tokens_per_class)]
                 for c in range(num_classes)]
  for class_words in topic_words:
    words.extend(class_words)
  words.extend(f'bg{i:03d}' for i in range(num_background))
  vocabulary = tokenizers.Vocabulary.from_words(words)
  background = np.array([vocabulary.id(f'bg{i:03d}')
                         for i in range(num_background)])

  rng = np.random.default_rng(seed)
  order = rng.permutation(num_classes)
  split_of = {}
  for position, c in enumerate(order):
    if position < split_sizes[0]:
      split_of[int(c)] = Split.TRAIN
    elif position < split_sizes[0] + split_sizes[1]:
      split_of[int(c)] = Split.VALID
    else:
      split_of[int(c)] = Split.TEST

  classes = []
  documents = []
  for c in range(num_classes):
    own = np.array([vocabulary.id(w) for w in topic_words[c]])
    classes.append(
        ClassInfo(c, f'class_{c:02d}', tuple(int(t) for t in own), split_of[c]))
    for _ in range(docs_per_class):
      on_topic = rng.random(doc_length) < topic_sharpness
      tokens = np.where(on_topic, rng.choice(own, doc_length),
                        rng.choice(background, doc_length))
      documents.append(Document(tuple(int(t) for t in tokens), c))

  logging.info(
      'Generated synthetic corpus: %d classes, %d documents, vocabulary %d.',
      num_classes, len(documents), vocabulary.size)
  return Corpus(vocabulary, classes, documents)
