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

"""Vocabulary and a whitespace word tokenizer for the toy masked LM."""

from typing import Dict, List, Sequence

from metaprompter import errors


class Vocabulary:
  """Dense mapping between words and ids with BERT-style reserved tokens."""

  PAD = '[PAD]'
  CLS = '[CLS]'
  SEP = '[SEP]'
  MASK = '[MASK]'
  UNK = '[UNK]'
  RESERVED = (PAD, CLS, SEP, MASK, UNK)

  def __init__(self, words: Sequence[str]):
    """Initializes the `Vocabulary`.

    Args:
      words: All words of the vocabulary; the id of a word is its index. Each
        reserved token must be present exactly once and all other words must be
        lower case.

    Raises:
      ValidationError: Words are not unique, a reserved token is missing or a
        regular word is not lower case.
    """
    words = list(words)
    if len(words) != len(set(words)):
      raise errors.ValidationError('Words in vocabulary are not unique.')
    missing = [t for t in self.RESERVED if t not in words]
    if missing:
      raise errors.ValidationError(
          f'Vocabulary does not contain reserved tokens {missing}.')
    for idx, word in enumerate(words):
      if word not in self.RESERVED and (word != word.lower() or
                                        not word or word.split() != [word]):
        raise errors.ValidationError(
            f'Word `{word}` with index {idx} is not a lower case token.')

    self._idx2word = words
    self._word2idx: Dict[str, int] = {w: i for i, w in enumerate(words)}
    self._reserved_ids = frozenset(self._word2idx[t] for t in self.RESERVED)

  @classmethod
  def from_words(cls, words: Sequence[str]) -> 'Vocabulary':
    """Builds a vocabulary with the reserved tokens first, then `words`."""
    return cls(list(cls.RESERVED) + list(words))

  def __len__(self):
    return len(self._idx2word)

  def __contains__(self, word: str) -> bool:
    return word in self._word2idx

  @property
  def words(self) -> List[str]:
    return list(self._idx2word)

  @property
  def size(self) -> int:
    return len(self._idx2word)

  def word(self, idx: int) -> str:
    return self._idx2word[idx]

  def id(self, word: str) -> int:
    return self._word2idx[word]

  def is_reserved(self, idx: int) -> bool:
    return idx in self._reserved_ids

  @property
  def regular_ids(self) -> List[int]:
    """Ids of all non-reserved words, ascending."""
    return [i for i in range(self.size) if i not in self._reserved_ids]

  @property
  def pad_token(self) -> int:
    return self._word2idx[self.PAD]

  @property
  def cls_token(self) -> int:
    return self._word2idx[self.CLS]

  @property
  def sep_token(self) -> int:
    return self._word2idx[self.SEP]

  @property
  def mask_token(self) -> int:
    return self._word2idx[self.MASK]

  @property
  def unk_token(self) -> int:
    return self._word2idx[self.UNK]


class WordTokenizer:
  """Vocabulary based word tokenizer.

  Text is lower cased and split on whitespace; words missing from the
  vocabulary map to `[UNK]`. No `[CLS]`/`[SEP]` is added.
  """

  def __init__(self, vocabulary: Vocabulary):
    self._vocabulary = vocabulary

  @property
  def vocabulary(self) -> Vocabulary:
    return self._vocabulary

  def string_to_indices(self, string: str) -> List[int]:
    """Tokenizes, mapping a python string to a list of indices."""
    unk = self._vocabulary.unk_token
    return [
        self._vocabulary.id(w) if w in self._vocabulary else unk
        for w in string.lower().split()
    ]


def tokenize(text: str, vocabulary: Vocabulary) -> List[int]:
  """Whitespace + lower case tokenization of `text`."""
  return WordTokenizer(vocabulary).string_to_indices(text)
