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

"""Tests for tokenizers."""

from metaprompter import errors
from metaprompter import tokenizers
from parameterized import parameterized
import tensorflow as tf


def _vocabulary() -> tokenizers.Vocabulary:
  return tokenizers.Vocabulary.from_words(['hello', 'world', 'topic', 'is'])


class VocabularyTest(tf.test.TestCase):

  def test_reserved_first(self):
    vocab = _vocabulary()
    self.assertLen(vocab, 9)
    self.assertEqual(vocab.pad_token, 0)
    self.assertEqual(vocab.cls_token, 1)
    self.assertEqual(vocab.sep_token, 2)
    self.assertEqual(vocab.mask_token, 3)
    self.assertEqual(vocab.unk_token, 4)
    self.assertEqual(vocab.regular_ids, [5, 6, 7, 8])
    self.assertTrue(vocab.is_reserved(vocab.mask_token))
    self.assertFalse(vocab.is_reserved(vocab.id('hello')))

  @parameterized.expand((
      (['hello', 'hello'],),
      (['Hello'],),
      (['two words'],),
      ([''],),
  ))
  def test_invalid_words(self, words):
    with self.assertRaises(errors.ValidationError):
      tokenizers.Vocabulary.from_words(words)

  def test_missing_reserved(self):
    with self.assertRaises(errors.ValidationError):
      tokenizers.Vocabulary(['[PAD]', '[CLS]', 'hello'])


class WordTokenizerTest(tf.test.TestCase):

  def test_string_to_indices(self):
    tokenizer = tokenizers.WordTokenizer(_vocabulary())
    indices = tokenizer.string_to_indices('Hello  WORLD foo')
    self.assertEqual(indices, [5, 6, 4])
    self.assertEqual(tokenizers.tokenize('topic is', _vocabulary()), [7, 8])

  def test_empty(self):
    tokenizer = tokenizers.WordTokenizer(_vocabulary())
    self.assertEqual(tokenizer.string_to_indices('   '), [])


if __name__ == '__main__':
  tf.test.main()
