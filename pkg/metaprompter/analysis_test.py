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

"""Tests for analysis."""

from metaprompter import analysis
from metaprompter import corpora
from metaprompter import encoders
from metaprompter import errors
from metaprompter import experiments
from metaprompter import test_utils
import numpy as np
from parameterized import parameterized
import tensorflow as tf


class _AnalysisTestCase(tf.test.TestCase):

  overrides = {}

  def setUp(self):
    super().setUp()
    self._config = test_utils.small_config(self.overrides)
    self._corpus = test_utils.small_corpus(self._config)
    self._learner = test_utils.small_learner(self._config, self._corpus)
    self._pool = test_utils.small_pool(self._learner, self._corpus)
    self._params = self._learner.encoder.params
    self._train = experiments.sampler(self._config, self._corpus,
                                      corpora.Split.TRAIN, 0)


class ClassAttentionTest(_AnalysisTestCase):

  def test_rows_are_distributions(self):
    train = self._corpus.class_ids(corpora.Split.TRAIN)
    absent = self._corpus.class_ids(corpora.Split.TEST)[0]
    result = analysis.class_attention(self._learner, self._pool, self._train,
                                      train + [absent], 3, 1)
    self.assertEqual(result.matrix.shape, (len(train) + 1, 2))
    self.assertEqual(int(result.task_counts.sum()), 3 * 2)
    self.assertFalse(result.present[-1])
    self.assertTrue(np.all(np.isnan(result.matrix[-1])))
    for row, present in zip(result.matrix, result.present):
      if present:
        self.assertAllClose(np.sum(row), 1.0, atol=1e-9)

  def test_counts_match_sampled_tasks(self):
    train = self._corpus.class_ids(corpora.Split.TRAIN)
    result = analysis.class_attention(self._learner, self._pool, self._train,
                                      train, 3, 1)
    expected = {c: 0 for c in train}
    for index in range(3):
      for c in self._train.episode(index).classes:
        expected[c] += 1
    self.assertEqual(list(result.task_counts), [expected[c] for c in train])


class SinglePromptAttentionTest(_AnalysisTestCase):

  overrides = {'pool.num_prompts': 1}

  def test_single_prompt_gets_all_attention(self):
    train = self._corpus.class_ids(corpora.Split.TRAIN)
    result = analysis.class_attention(self._learner, self._pool, self._train,
                                      train, 3, 1)
    present = result.matrix[result.present]
    self.assertAllEqual(present, np.ones_like(present))


class NearestTokensTest(_AnalysisTestCase):

  def _brute_force(self, m):
    vocab = self._corpus.vocabulary
    table = self._params.arrays[encoders.TOKEN_EMBEDDING]
    result = []
    for prompt in self._pool.values.data:
      scored = []
      for t in vocab.regular_ids:
        e = table[t]
        score = max(
            float(row @ e) / (np.linalg.norm(row) * np.linalg.norm(e))
            for row in prompt)
        scored.append((score, t))
      scored.sort(key=lambda p: -p[0])
      result.append([(vocab.word(t), s) for s, t in scored[:m]])
    return result

  def test_matches_brute_force(self):
    nearest = analysis.nearest_tokens(self._pool, self._params,
                                      self._corpus.vocabulary, 5)
    expected = self._brute_force(5)
    self.assertLen(nearest, self._pool.num_prompts)
    for got, want in zip(nearest, expected):
      self.assertEqual([t for t, _ in got], [t for t, _ in want])
      self.assertAllClose([s for _, s in got], [s for _, s in want],
                          atol=1e-12)

  def test_initial_prompt_is_nearest_to_copied_tokens(self):
    vocab = self._corpus.vocabulary
    table = self._params.arrays[encoders.TOKEN_EMBEDDING]
    nearest = analysis.nearest_tokens(self._pool, self._params, vocab, 1)
    for prompt, ((token, score),) in zip(self._pool.values.data, nearest):
      self.assertAllClose(score, 1.0, atol=1e-12)
      copied = [
          vocab.word(t) for t in self._corpus.label_token_pool()
          if any(np.array_equal(table[t], row) for row in prompt)
      ]
      self.assertIn(token, copied)

  def test_reserved_tokens_are_excluded(self):
    vocab = self._corpus.vocabulary
    m = len(vocab.regular_ids)
    nearest = analysis.nearest_tokens(self._pool, self._params, vocab, m)
    reserved = {vocab.word(t) for t in range(vocab.size)} - {
        vocab.word(t) for t in vocab.regular_ids
    }
    for ranked in nearest:
      self.assertLen(ranked, m)
      self.assertEmpty({t for t, _ in ranked} & reserved)

  @parameterized.expand(((0,), (1000,)))
  def test_invalid_m(self, m):
    with self.assertRaises(errors.ConfigError):
      analysis.nearest_tokens(self._pool, self._params,
                              self._corpus.vocabulary, m)


class PromptTopicSimilarityTest(_AnalysisTestCase):

  def test_matches_recomputation(self):
    verbalizer = experiments.hand_verbalizer(self._corpus)
    classes = self._corpus.class_ids(corpora.Split.TRAIN)
    labels, similarity = analysis.prompt_topic_similarity(
        self._pool, self._params, verbalizer, classes)
    self.assertEqual(labels, ['(1,1)', '(1,2)', '(2,1)', '(2,2)'])
    self.assertEqual(similarity.shape, (4, len(classes)))
    table = self._params.arrays[encoders.TOKEN_EMBEDDING]
    for r, label in enumerate(labels):
      i, j = (int(x) - 1 for x in label.strip('()').split(','))
      row = self._pool.values.data[i, j]
      for c, class_id in enumerate(classes):
        topic = table[list(self._corpus.class_info(class_id).label_tokens)]
        topic = topic.mean(axis=0)
        expected = row @ topic / (np.linalg.norm(row) * np.linalg.norm(topic))
        self.assertAllClose(similarity[r, c], expected, atol=1e-12)

  def test_zero_topic(self):
    params = encoders.EncoderParams(
        self._params.config, {
            encoders.TOKEN_EMBEDDING:
                np.zeros_like(self._params.arrays[encoders.TOKEN_EMBEDDING])
        },
        frozen=True)
    verbalizer = experiments.hand_verbalizer(self._corpus)
    with self.assertRaises(errors.DegenerateVectorError):
      analysis.prompt_topic_similarity(
          self._pool, params, verbalizer,
          self._corpus.class_ids(corpora.Split.TRAIN))


class PcaProjectTest(tf.test.TestCase):

  def test_row_order_does_not_matter(self):
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(10, 5)) * [5.0, 3.0, 1.0, 0.5, 0.1]
    perm = rng.permutation(10)
    self.assertAllClose(analysis.pca_project(rows)[perm],
                        analysis.pca_project(rows[perm]), atol=1e-9)

  def test_first_component_has_most_variance(self):
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(50, 4)) * [0.1, 4.0, 1.0, 0.5]
    projected = analysis.pca_project(rows)
    self.assertEqual(projected.shape, (50, 2))
    self.assertAllClose(projected.mean(axis=0), [0.0, 0.0], atol=1e-9)
    self.assertGreater(projected[:, 0].var(), projected[:, 1].var())

  def test_too_few_components(self):
    self.assertAllEqual(analysis.pca_project(np.ones((1, 3))),
                        np.zeros((1, 2)))
    projected = analysis.pca_project(np.array([[0.0], [2.0]]))
    self.assertAllClose(projected, [[-1.0, 0.0], [1.0, 0.0]])

  def test_not_a_matrix(self):
    with self.assertRaises(errors.DimensionError):
      analysis.pca_project(np.ones(3))


class ExportEmbeddingsTest(_AnalysisTestCase):

  def test_rows(self):
    episode = self._train.episode(0)
    export = analysis.export_embeddings(self._learner, self._pool, episode, 2)
    num_samples = len(episode.support) + len(episode.query)
    self.assertEqual(export.embeddings.shape, (num_samples + 2, 8))
    self.assertEqual(export.projected.shape, (num_samples + 2, 2))
    self.assertEqual(export.kinds, ('sample',) * num_samples + ('label',) * 2)
    self.assertEqual(export.classes[num_samples:], episode.classes)

  def test_label_rows_are_support_means(self):
    episode = self._train.episode(1)
    export = analysis.export_embeddings(self._learner, self._pool, episode, 1)
    num_support = len(episode.support)
    for label, class_id in enumerate(episode.classes):
      rows = [
          export.embeddings[i]
          for i, s in enumerate(episode.support)
          if s.label == label
      ]
      self.assertAllClose(export.embeddings[-2 + label],
                          np.mean(rows, axis=0), atol=1e-9)
      self.assertEqual(export.classes[-2 + label], class_id)
    self.assertEqual(set(export.classes[:num_support]), set(episode.classes))


if __name__ == '__main__':
  tf.test.main()
