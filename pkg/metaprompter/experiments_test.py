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

"""Tests for experiments."""

import json
import math
import os
from unittest import mock

from metaprompter import configs
from metaprompter import corpora
from metaprompter import errors
from metaprompter import experiments
from metaprompter import prompt_pools
from metaprompter import test_utils
from metaprompter import utils
import numpy as np
import tensorflow as tf


def _run(run_dir, *commands, overrides=None):
  run = experiments.Run(test_utils.small_config(overrides), run_dir)
  results = [experiments.COMMANDS[c](run) for c in commands]
  return run, results


def _read(path):
  with tf.io.gfile.GFile(path, 'rb') as f:
    return f.read()


class RunTest(tf.test.TestCase):

  def test_default_directory(self):
    with mock.patch.dict(os.environ, {experiments.RUNS_ENV: '/tmp/somewhere'}):
      run = experiments.Run(test_utils.small_config({'name': 'toy'}))
    self.assertEqual(run.directory, '/tmp/somewhere/toy')
    self.assertEqual(run.seed_path(2, 'pool.ckpt'),
                     '/tmp/somewhere/toy/seed_2/pool.ckpt')
    self.assertEqual(run.corpus_path, '/tmp/somewhere/toy/corpus.jsonl')

  def test_invalid_config(self):
    config = test_utils.small_config()
    config.pool.num_prompts = 0
    with self.assertRaises(errors.ConfigError):
      experiments.Run(config, self.get_temp_dir())

  def test_param_count(self):
    config = test_utils.small_config()
    self.assertEqual(experiments.param_count(config, 60), 2 * (8 + 2 * 8))
    config = test_utils.small_config({
        'pool.mode': 'metaprompting',
        'pool.num_prompts': 4,
    })
    self.assertEqual(experiments.param_count(config, 60), 2 * 8)


class PipelineTest(tf.test.TestCase):

  def setUp(self):
    super().setUp()
    self._dir = os.path.join(self.get_temp_dir(), self.id().split('.')[-1])

  def test_gen_corpus_and_pretrain(self):
    run, (corpus, params) = _run(self._dir, 'gen-corpus', 'pretrain')
    self.assertLen(corpus.documents, 8 * 12)
    self.assertLen(params.pretrain_losses, 3)
    header, rows = utils.read_csv(run.path('pretrain.csv'))
    self.assertEqual(tuple(header), experiments.PRETRAIN_HEADER)
    self.assertEqual([r[0] for r in rows], ['1', '2', '3'])

    with tf.io.gfile.GFile(run.path(experiments.MANIFEST_FILE)) as f:
      manifest = json.load(f)
    self.assertEqual(manifest['command'], 'pretrain')
    self.assertEqual(manifest['seeds'], [0])
    self.assertEqual(manifest['corpus_hash'],
                     utils.content_hash(run.corpus_path))
    self.assertEqual(manifest['param_count'], 2 * (8 + 2 * 8))
    self.assertEqual(set(manifest['commands']), {'gen-corpus', 'pretrain'})
    self.assertEqual(manifest['artifacts'],
                     ['corpus.jsonl', 'encoder.ckpt', 'pretrain.csv'])
    self.assertEqual(manifest['config']['pool']['num_prompts'], 2)

  def test_meta_train_and_test(self):
    run, (_, _, trained, tested) = _run(
        self._dir, 'gen-corpus', 'pretrain', 'meta-train', 'meta-test',
        overrides={'seeds': '0,1'})
    self.assertEqual(set(trained), {0, 1})
    for seed in (0, 1):
      pool, meta = prompt_pools.load_pool(run.seed_path(seed, 'pool.ckpt'))
      self.assertEqual(pool.num_prompts, 2)
      self.assertEqual(meta['seed'], seed)
      self.assertEqual(meta['iteration'], trained[seed].best_iteration)
      header, rows = utils.read_csv(run.seed_path(seed, 'metrics.csv'))
      self.assertEqual(tuple(header), experiments.METRICS_HEADER)
      self.assertLen(rows, 2)
      best = max(float(r[3]) for r in rows)
      self.assertEqual(meta['val_accuracy'], best)

    header, rows = utils.read_csv(run.path('meta_test.csv'))
    self.assertEqual(tuple(header), experiments.META_TEST_HEADER)
    self.assertLen(rows, 2 * 3)
    for result in tested.values():
      self.assertLen(result.accuracies, 3)
      self.assertAllClose(result.mean, np.mean(result.accuracies))

  def test_deterministic(self):
    paths = []
    for name in ('a', 'b'):
      run, _ = _run(os.path.join(self._dir, name), 'gen-corpus', 'pretrain',
                    'meta-train')
      paths.append(run)
    for artifact in ('corpus.jsonl', 'encoder.ckpt', 'seed_0/pool.ckpt',
                     'seed_0/metrics.csv'):
      self.assertEqual(_read(paths[0].path(artifact)),
                       _read(paths[1].path(artifact)), artifact)

  def test_analyze_leaves_checkpoint_alone(self):
    run, _ = _run(self._dir, 'gen-corpus', 'pretrain', 'meta-train')
    before = utils.content_hash(run.seed_path(0, 'pool.ckpt'))
    experiments.run_analyze(run)
    self.assertEqual(utils.content_hash(run.seed_path(0, 'pool.ckpt')), before)

    header, rows = utils.read_csv(run.seed_path(0, 'class_attention.csv'))
    self.assertEqual(header, ['class', 'present', 'prompt_1', 'prompt_2'])
    self.assertLen(rows, 4)
    for row in rows:
      if row[1] == '1':
        self.assertAllClose(sum(float(x) for x in row[2:]), 1.0, atol=1e-9)

    _, rows = utils.read_csv(run.seed_path(0, 'nearest_tokens.csv'))
    self.assertLen(rows, 2 * 3)
    header, rows = utils.read_csv(
        run.seed_path(0, 'prompt_topic_similarity.csv'))
    self.assertLen(header, 1 + 4)
    self.assertEqual([r[0] for r in rows], ['(1,1)', '(1,2)', '(2,1)', '(2,2)'])
    _, rows = utils.read_csv(run.seed_path(0, 'embeddings.csv'))
    self.assertLen(rows, 2 * 2 + 2 * 2 + 2)

  def test_compare_verbalizers(self):
    run, (_, _, table) = _run(self._dir, 'gen-corpus', 'pretrain',
                              'compare-verbalizers')
    self.assertEqual([r[0] for r in table], list(experiments.VERBALIZER_NAMES))
    for _, seed, mean, _ in table:
      self.assertEqual(seed, 0)
      self.assertBetween(mean, 0.0, 1.0)
    _, rows = utils.read_csv(run.path('verbalizers.csv'))
    self.assertLen(rows, 4)

  def test_sweep(self):
    run, (_, _, table) = _run(self._dir, 'gen-corpus', 'pretrain', 'sweep')
    self.assertEqual([value for value, _, _ in table], [1, 2])
    # One seed: no spread across seed means.
    self.assertEqual([std for _, _, std in table], [0.0, 0.0])
    header, rows = utils.read_csv(run.path('sweep.csv'))
    self.assertEqual(tuple(header), experiments.SWEEP_HEADER)
    self.assertLen(rows, 2)

  def test_missing_artifacts(self):
    run = experiments.Run(test_utils.small_config(), self._dir)
    with self.assertRaisesRegex(FileNotFoundError, 'corpus.jsonl'):
      experiments.run_pretrain(run)
    experiments.run_gen_corpus(run)
    with self.assertRaisesRegex(FileNotFoundError, 'encoder.ckpt'):
      experiments.run_meta_train(run)
    experiments.run_pretrain(run)
    with self.assertRaisesRegex(FileNotFoundError, 'pool.ckpt'):
      experiments.run_meta_test(run)

  def test_encoder_of_another_corpus(self):
    _run(self._dir, 'gen-corpus', 'pretrain')
    other = experiments.Run(
        test_utils.small_config({'corpus.vocab_size': 70}), self._dir)
    experiments.run_gen_corpus(other)
    with self.assertRaises(errors.ValidationError):
      other.load_encoder(other.load_corpus())


class AcceptanceTest(tf.test.TestCase):
  """End-to-end runs at default sizes; set METAPROMPTER_SLOW_TESTS=1."""

  def setUp(self):
    super().setUp()
    if not test_utils.slow_tests_enabled():
      self.skipTest(f'Set {test_utils.SLOW_TESTS_ENV}=1 to run.')

  def _run(self, name, overrides=None, commands=('meta-train', 'meta-test')):
    config = configs.apply_overrides(configs.RunConfig(), overrides or {})
    run = experiments.Run(config, os.path.join(self.get_temp_dir(), name))
    experiments.run_gen_corpus(run)
    experiments.run_pretrain(run)
    return [experiments.COMMANDS[c](run) for c in commands]

  def test_learns_default_corpus(self):
    trained, tested = self._run('default')
    chance = 1.0 / 5
    for seed in (0, 1, 2):
      self.assertGreaterEqual(trained[seed].best_accuracy, chance + 0.3)
      self.assertGreaterEqual(tested[seed].mean, chance + 0.3)
    self.assertGreaterEqual(np.mean([r.mean for r in tested.values()]), 0.80)

  def test_no_topic_signal_is_chance(self):
    _, tested = self._run('control', {
        'corpus.topic_sharpness': 0.0,
        'seeds': '0',
        'episodes.test_episodes': 200,
    })
    predictions = 200 * 5 * 15
    sigma = math.sqrt(0.2 * 0.8 / predictions)
    self.assertLessEqual(abs(tested[0].mean - 0.2), 3 * sigma)

  def test_pool_beats_single_prompt(self):
    _, pool = self._run('pool')
    _, single = self._run('single', {'pool.mode': 'metaprompting'})
    self.assertGreaterEqual(
        np.mean([r.mean for r in pool.values()]),
        np.mean([r.mean for r in single.values()]))

  def test_repverb_beats_warp(self):
    table, = self._run('verbalizers', {'episodes.test_episodes': 200},
                       commands=('compare-verbalizers',))
    means = {}
    for name, _, mean, _ in table:
      means.setdefault(name, []).append(mean)
    self.assertGreaterEqual(np.mean(means['repverb']), np.mean(means['warp']))

  def test_support_loss_decreases(self):
    config = configs.apply_overrides(configs.RunConfig(), {'seeds': '0'})
    run = experiments.Run(config, os.path.join(self.get_temp_dir(), 'inner'))
    corpus = experiments.run_gen_corpus(run)
    experiments.run_pretrain(run)
    learner = experiments.build_learner(config, corpus,
                                        run.load_encoder(corpus))
    pool = prompt_pools.init_pool(config.pool, learner.encoder.params,
                                  corpus.label_token_pool(), 0)
    sampler = experiments.sampler(config, corpus, corpora.Split.TRAIN, 0)
    decreased = 0
    for index in range(100):
      episode = sampler.episode(index)
      adapted = learner.adapt(pool, episode, 5)
      final, _ = learner.support_loss(adapted.pool, episode)
      decreased += final.item() < adapted.support_losses[0]
    self.assertGreaterEqual(decreased, 95)


if __name__ == '__main__':
  tf.test.main()
