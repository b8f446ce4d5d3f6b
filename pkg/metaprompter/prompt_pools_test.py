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

"""Tests for prompt_pools."""

import os

from metaprompter import autodiff
from metaprompter import configs
from metaprompter import encoders
from metaprompter import errors
from metaprompter import ops
from metaprompter import prompt_pools
from metaprompter import test_utils
from metaprompter import tokenizers
import numpy as np
from parameterized import parameterized
import tensorflow as tf

PoolMode = prompt_pools.PoolMode


def _pool(keys, values, mode=PoolMode.METAPROMPTER):
  return prompt_pools.PromptPool(mode, ops.constant(keys), ops.constant(values))


class ParamCountTest(tf.test.TestCase):

  @parameterized.expand((
      (PoolMode.METAPROMPTER, 8, 8, 768, 0, 55296),
      (PoolMode.METAPROMPTER, 1, 8, 768, 0, 6912),
      (PoolMode.METAPROMPTER, 8, 8, 32, 0, 2304),
      (PoolMode.METAPROMPTING, 1, 8, 32, 0, 256),
      (PoolMode.METAPROMPTING, 1, 8, 32, 1000, 1256),
  ))
  def test_param_count(self, mode, k, l_p, d, encoder_count, expected):
    self.assertEqual(
        prompt_pools.param_count(mode, k, l_p, d, d, encoder_count), expected)


class PromptPoolTest(tf.test.TestCase):

  def setUp(self):
    super().setUp()
    self._config = test_utils.small_config()
    self._corpus = test_utils.small_corpus(self._config)
    self._encoder = test_utils.random_encoder(self._corpus, self._config)
    self._label_tokens = self._corpus.label_token_pool()

  def test_init_copies_label_token_embeddings(self):
    pool = prompt_pools.init_pool(self._config.pool, self._encoder.params,
                                  self._label_tokens, seed=0)
    self.assertEqual(pool.keys.shape, (2, 8))
    self.assertEqual(pool.values.shape, (2, 2, 8))
    table = self._encoder.params.arrays[encoders.TOKEN_EMBEDDING]
    label_rows = table[self._label_tokens]
    for row in pool.values.data.reshape(-1, 8):
      self.assertTrue(np.any(np.all(label_rows == row, axis=1)))
    self.assertEqual(pool.param_count(), 2 * (8 + 2 * 8))

  def test_init_is_seeded(self):
    a = prompt_pools.init_pool(self._config.pool, self._encoder.params,
                               self._label_tokens, seed=3)
    b = prompt_pools.init_pool(self._config.pool, self._encoder.params,
                               self._label_tokens, seed=3)
    self.assertAllEqual(a.keys.data, b.keys.data)
    self.assertAllEqual(a.values.data, b.values.data)

  def test_metaprompting_uses_one_prompt(self):
    config = configs.PoolConfig(mode='metaprompting', num_prompts=4,
                                prompt_length=3)
    pool = prompt_pools.init_pool(config, self._encoder.params,
                                  self._label_tokens, seed=0)
    self.assertEqual(pool.num_prompts, 1)
    self.assertIsNone(pool.encoder_weights)
    self.assertEqual(pool.param_count(), 3 * 8)
    tokens = self._corpus.documents[0].tokens
    prompt = prompt_pools.instance_prompt(pool, tokens, self._encoder, ())
    self.assertAllEqual(prompt.data, pool.values.data[0])

  def test_tune_encoder(self):
    config = configs.PoolConfig(mode='metaprompting', prompt_length=2,
                                tune_encoder=True)
    pool = prompt_pools.init_pool(config, self._encoder.params,
                                  self._label_tokens, seed=0)
    count = self._encoder.params.count()
    self.assertEqual(pool.param_count(), count + 2 * 8)
    self.assertLen(pool.parameters(), 2 + len(self._encoder.params.arrays))
    with self.assertRaises(errors.ConfigError):
      prompt_pools.init_pool(
          configs.PoolConfig(tune_encoder=True), self._encoder.params,
          self._label_tokens, seed=0)

  def test_init_errors(self):
    with self.assertRaises(errors.ConfigError):
      prompt_pools.init_pool(self._config.pool, self._encoder.params, [], 0)
    with self.assertRaises(errors.ConfigError):
      prompt_pools.init_pool(
          configs.PoolConfig(mode='prefix'), self._encoder.params,
          self._label_tokens, 0)

  def test_shape_validation(self):
    with self.assertRaises(errors.DimensionError):
      _pool(np.zeros((2, 4)), np.zeros((3, 1, 4)))
    with self.assertRaises(errors.DimensionError):
      _pool(np.zeros((2, 4)), np.zeros((2, 4)))
    with self.assertRaises(errors.DimensionError):
      _pool(np.zeros((2, 4)), np.zeros((2, 0, 4)))

  def test_leaves_and_replace(self):
    pool = prompt_pools.init_pool(self._config.pool, self._encoder.params,
                                  self._label_tokens, seed=0)
    leaves = pool.with_leaves()
    self.assertTrue(all(t.requires_grad for t in leaves.parameters().values()))
    self.assertAllEqual(leaves.keys.data, pool.keys.data)
    arrays = pool.arrays()
    arrays[prompt_pools.KEYS] = np.ones((2, 8))
    replaced = pool.replace_arrays(arrays)
    self.assertAllEqual(replaced.keys.data, np.ones((2, 8)))
    self.assertFalse(replaced.keys.requires_grad)
    self.assertAllEqual(pool.keys.data, leaves.keys.data)

  def test_checkpoint_round_trip(self):
    pool = prompt_pools.init_pool(self._config.pool, self._encoder.params,
                                  self._label_tokens, seed=0)
    path = os.path.join(self.get_temp_dir(), 'pool.ckpt')
    prompt_pools.save_pool(path, pool, iteration=7, val_accuracy=0.5)
    restored, meta = prompt_pools.load_pool(path)
    self.assertEqual(restored.mode, pool.mode)
    self.assertEqual(restored.keys.data.tobytes(), pool.keys.data.tobytes())
    self.assertEqual(restored.values.data.tobytes(), pool.values.data.tobytes())
    self.assertEqual(meta['iteration'], 7)
    self.assertEqual(meta['val_accuracy'], 0.5)
    self.assertEqual(meta['param_count'], pool.param_count())

  def test_checkpoint_round_trip_with_encoder(self):
    config = configs.PoolConfig(mode='metaprompting', tune_encoder=True)
    pool = prompt_pools.init_pool(config, self._encoder.params,
                                  self._label_tokens, seed=0)
    path = os.path.join(self.get_temp_dir(), 'pool.ckpt')
    prompt_pools.save_pool(path, pool)
    restored, _ = prompt_pools.load_pool(path)
    self.assertEqual(list(restored.encoder_weights),
                     list(pool.encoder_weights))
    for name, weight in pool.encoder_weights.items():
      self.assertAllEqual(restored.encoder_weights[name].data, weight.data)


class AttentionTest(tf.test.TestCase):

  def test_simplex_and_scaling(self):
    rng = np.random.default_rng(0)
    keys = rng.normal(size=(4, 9))
    pool = _pool(keys, rng.normal(size=(4, 2, 9)))
    query = rng.normal(size=9)
    scores = keys @ query
    for scaled, temperature in ((True, 3.0), (False, 1.0)):
      a = prompt_pools.attention_weights(pool, ops.constant(query), scaled)
      expected = np.exp(scores / temperature - np.max(scores / temperature))
      self.assertAllClose(a.data, expected / expected.sum(), atol=1e-12)
      self.assertAllClose(np.sum(a.data), 1.0, atol=1e-12)

  def test_single_prompt(self):
    pool = _pool(np.ones((1, 3)), np.ones((1, 2, 3)))
    a = prompt_pools.attention_weights(pool, ops.constant([1.0, -2.0, 5.0]))
    self.assertAllEqual(a.data, [1.0])

  def test_query_dimension(self):
    pool = _pool(np.ones((2, 3)), np.ones((2, 2, 3)))
    with self.assertRaises(errors.DimensionError):
      prompt_pools.attention_weights(pool, ops.constant([1.0, 2.0]))

  def test_compose_prompt(self):
    values = np.arange(12.0).reshape(2, 2, 3)
    pool = _pool(np.zeros((2, 3)), values)
    onehot = prompt_pools.compose_prompt(pool, ops.constant([0.0, 1.0]))
    self.assertAllEqual(onehot.data, values[1])
    mixed = prompt_pools.compose_prompt(pool, ops.constant([0.25, 0.75]))
    self.assertAllClose(mixed.data, 0.25 * values[0] + 0.75 * values[1])
    with self.assertRaises(errors.DimensionError):
      prompt_pools.compose_prompt(pool, ops.constant([1.0]))

  @parameterized.expand([(seed,) for seed in range(5)])
  def test_instance_prompt_gradient(self, seed):
    config = test_utils.small_config()
    corpus = test_utils.small_corpus(config)
    encoder = test_utils.random_encoder(corpus, config)
    anchors = tokenizers.tokenize('topic is', corpus.vocabulary)
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(2, 2, 8))
    weights = ops.constant(rng.normal(size=(2, 8)))
    tokens = corpus.documents[seed].tokens

    def loss(keys):
      pool = prompt_pools.PromptPool(PoolMode.METAPROMPTER, keys,
                                     ops.constant(values))
      prompt = prompt_pools.instance_prompt(pool, tokens, encoder, anchors)
      return ops.add(ops.sum(ops.mul(prompt, weights)),
                     ops.scale(ops.sum(keys), 3.0))

    err = autodiff.finite_diff_check(loss, rng.normal(size=(2, 8)))
    self.assertLessEqual(err, 1e-4)


if __name__ == '__main__':
  tf.test.main()
