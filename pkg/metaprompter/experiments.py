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

"""Experiment pipelines behind the command line subcommands.

Every pipeline works in a run directory, by default `$METAPROMPTER_RUNS/<name>`
(`runs/<name>` when the variable is unset):

  corpus.jsonl              gen-corpus (unless `corpus.path` is set)
  encoder.ckpt, pretrain.csv                                   pretrain
  seed_<s>/pool.ckpt, seed_<s>/metrics.csv                     meta-train
  meta_test.csv                                                meta-test
  sweep.csv                                                    sweep
  seed_<s>/class_attention.csv, nearest_tokens.csv,
  prompt_topic_similarity.csv, embeddings.csv                  analyze
  verbalizers.csv                                              compare-verbalizers
  manifest.json                                                all

Later pipelines read the artifacts of earlier ones; a missing one raises
`FileNotFoundError` naming it.
"""

import json
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from absl import logging
from metaprompter import analysis
from metaprompter import configs
from metaprompter import corpora
from metaprompter import encoders
from metaprompter import episodes
from metaprompter import errors
from metaprompter import meta_learners
from metaprompter import prompt_pools
from metaprompter import sources
from metaprompter import tokenizers
from metaprompter import utils
from metaprompter import verbalizers
import numpy as np
import tensorflow as tf

RUNS_ENV = 'METAPROMPTER_RUNS'
DEFAULT_RUNS = 'runs'

CORPUS_FILE = 'corpus.jsonl'
ENCODER_FILE = 'encoder.ckpt'
POOL_FILE = 'pool.ckpt'
MANIFEST_FILE = 'manifest.json'

METRICS_HEADER = ('iteration', 'support_loss', 'query_loss', 'val_accuracy')
PRETRAIN_HEADER = ('step', 'loss')
META_TEST_HEADER = ('seed', 'episode', 'accuracy')
SWEEP_HEADER = ('value', 'mean_accuracy', 'std_accuracy')
VERBALIZERS_HEADER = ('verbalizer', 'seed', 'mean_accuracy', 'std_accuracy')
EMBEDDINGS_HEADER = ('kind', 'class', 'x', 'y')
NEAREST_TOKENS_HEADER = ('prompt', 'rank', 'token', 'score')

VERBALIZER_NAMES = ('warp', 'repverb', 'hand', 'combined')


class Run:
  """A validated config and the run directory its artifacts go to."""

  def __init__(self, config: configs.RunConfig, run_dir: Optional[str] = None):
    self.config = config.validate()
    if not run_dir:
      run_dir = os.path.join(os.environ.get(RUNS_ENV, DEFAULT_RUNS), config.name)
    self.directory = run_dir
    self._artifacts: List[str] = []

  def path(self, *parts: str) -> str:
    return os.path.join(self.directory, *parts)

  def seed_path(self, seed: int, name: str) -> str:
    return self.path(f'seed_{seed}', name)

  @property
  def corpus_path(self) -> str:
    return self.config.corpus.path or self.path(CORPUS_FILE)

  @property
  def artifacts(self) -> List[str]:
    return list(self._artifacts)

  def record(self, path: str) -> None:
    """Notes an artifact written by the current command."""
    self._artifacts.append(os.path.relpath(path, self.directory))
    logging.info('Wrote `%s`.', path)

  def write_csv(self, path: str, header: Sequence[str],
                rows: Sequence[Sequence[Any]]) -> None:
    tf.io.gfile.makedirs(os.path.dirname(path))
    utils.write_csv(path, header, rows)
    self.record(path)

  def load_corpus(self) -> corpora.Corpus:
    """The run's corpus, with the verbalizer file's label tokens if set."""
    corpus = sources.load_corpus(self.corpus_path)
    if self.config.corpus.verbalizer_path:
      corpus = corpus.with_label_tokens(
          sources.load_verbalizer(self.config.corpus.verbalizer_path, corpus))
    return corpus

  def load_encoder(self, corpus: corpora.Corpus) -> encoders.Encoder:
    """The pretrained encoder; its vocabulary must be the corpus vocabulary."""
    params, vocabulary = encoders.load_encoder(self.path(ENCODER_FILE))
    if vocabulary.words != corpus.vocabulary.words:
      raise errors.ValidationError(
          f'Encoder `{self.path(ENCODER_FILE)}` was pretrained on another '
          'vocabulary.')
    return encoders.Encoder(params, corpus.vocabulary)

  def write_manifest(self, command: str,
                     results: Optional[Mapping[str, Any]] = None) -> None:
    """Merges this command's artifacts and results into `manifest.json`."""
    path = self.path(MANIFEST_FILE)
    commands = {}
    if tf.io.gfile.exists(path):
      with tf.io.gfile.GFile(path, 'r') as f:
        commands = json.loads(f.read()).get('commands', {})
    commands[command] = {
        'artifacts': sorted(set(self._artifacts)),
        'results': dict(results or {}),
    }
    manifest = {
        'command': command,
        'config': self.config.to_dict(),
        'seeds': list(self.config.seeds),
        'artifacts': sorted({a for c in commands.values()
                             for a in c['artifacts']}),
        'commands': commands,
    }
    if tf.io.gfile.exists(self.corpus_path):
      manifest['corpus_hash'] = utils.content_hash(self.corpus_path)
      corpus = sources.load_corpus(self.corpus_path)
      manifest['param_count'] = param_count(self.config, corpus.vocabulary.size)
    tf.io.gfile.makedirs(self.directory)
    with tf.io.gfile.GFile(path, 'w') as f:
      f.write(json.dumps(manifest, sort_keys=True, indent=2) + '\n')
    logging.info('Wrote `%s`.', path)


def param_count(config: configs.RunConfig, vocab_size: int) -> int:
  """Meta-parameter count of the pool `config` describes."""
  mode = prompt_pools.PoolMode(config.pool.mode)
  num_prompts = config.pool.num_prompts
  encoder_count = 0
  if mode == prompt_pools.PoolMode.METAPROMPTING:
    num_prompts = 1
    if config.pool.tune_encoder:
      shapes = encoders.param_shapes(config.encoder, vocab_size).values()
      encoder_count = int(sum(np.prod(s) for s in shapes))
  dim = config.encoder.dim
  return prompt_pools.param_count(mode, num_prompts, config.pool.prompt_length,
                                  dim, dim, encoder_count)


def build_learner(config: configs.RunConfig, corpus: corpora.Corpus,
                  encoder: encoders.Encoder) -> meta_learners.FirstOrderMaml:
  return meta_learners.FirstOrderMaml(encoder, hand_verbalizer(corpus),
                                      config)


def hand_verbalizer(corpus: corpora.Corpus) -> verbalizers.HandVerbalizer:
  return verbalizers.HandVerbalizer(
      {c.id: c.label_tokens for c in corpus.classes}, corpus.vocabulary.size)


def sampler(config: configs.RunConfig, corpus: corpora.Corpus,
            split: corpora.Split, seed: int) -> episodes.EpisodeSampler:
  e = config.episodes
  return episodes.EpisodeSampler(corpus, split, e.n_way, e.k_shot, e.q_query,
                                 seed)


def train_seed(config: configs.RunConfig, corpus: corpora.Corpus,
               learner: meta_learners.MetaLearner,
               seed: int) -> meta_learners.MetaTrainResult:
  """Initializes a pool with `seed` and meta-trains it."""
  pool = prompt_pools.init_pool(config.pool, learner.encoder.params,
                                corpus.label_token_pool(corpora.Split.TRAIN),
                                seed)
  return meta_learners.meta_train(
      learner, pool, sampler(config, corpus, corpora.Split.TRAIN, seed),
      sampler(config, corpus, corpora.Split.VALID, seed), config.num_workers)


def test_seed(config: configs.RunConfig, corpus: corpora.Corpus,
              learner: meta_learners.MetaLearner,
              pool: prompt_pools.PromptPool,
              seed: int) -> meta_learners.MetaTestResult:
  return meta_learners.meta_test(
      learner, pool, sampler(config, corpus, corpora.Split.TEST, seed),
      config.episodes.test_episodes, config.num_workers)


# ----------------------------------------------------------------------
# ---------------------------- Subcommands. ----------------------------
# ----------------------------------------------------------------------


def run_gen_corpus(run: Run) -> corpora.Corpus:
  c = run.config.corpus
  corpus = corpora.gen_synthetic_corpus(
      c.num_classes, c.docs_per_class, c.doc_length, c.vocab_size,
      c.topic_sharpness, c.seed,
      (c.num_train_classes, c.num_valid_classes, c.num_test_classes),
      c.topic_tokens_per_class)
  directory = os.path.dirname(run.corpus_path)
  if directory:
    tf.io.gfile.makedirs(directory)
  sources.save_corpus(corpus, run.corpus_path)
  run.record(run.corpus_path)
  run.write_manifest('gen-corpus', {
      'num_documents': len(corpus.documents),
      'vocab_size': corpus.vocabulary.size,
  })
  return corpus


def run_pretrain(run: Run) -> encoders.EncoderParams:
  corpus = run.load_corpus()
  anchors = tokenizers.tokenize(run.config.template.anchors, corpus.vocabulary)
  params = encoders.pretrain_encoder(corpus, run.config.encoder, anchors)
  tf.io.gfile.makedirs(run.directory)
  encoders.save_encoder(run.path(ENCODER_FILE), params, corpus.vocabulary)
  run.record(run.path(ENCODER_FILE))
  run.write_csv(run.path('pretrain.csv'), PRETRAIN_HEADER,
                list(enumerate(params.pretrain_losses, start=1)))
  final = params.pretrain_losses[-1] if params.pretrain_losses else None
  run.write_manifest('pretrain', {
      'encoder_params': params.count(),
      'final_loss': final,
  })
  return params


def run_meta_train(run: Run) -> Dict[int, meta_learners.MetaTrainResult]:
  config = run.config
  corpus = run.load_corpus()
  learner = build_learner(config, corpus, run.load_encoder(corpus))
  results = {}
  for seed in config.seeds:
    logging.info('Meta-training seed %d.', seed)
    result = train_seed(config, corpus, learner, seed)
    path = run.seed_path(seed, POOL_FILE)
    tf.io.gfile.makedirs(os.path.dirname(path))
    prompt_pools.save_pool(
        path, result.best_pool, seed=seed, iteration=result.best_iteration,
        val_accuracy=result.best_accuracy)
    run.record(path)
    run.write_csv(run.seed_path(seed, 'metrics.csv'), METRICS_HEADER,
                  [(m.iteration, m.support_loss, m.query_loss,
                    '' if m.val_accuracy is None else m.val_accuracy)
                   for m in result.metrics])
    results[seed] = result
  run.write_manifest('meta-train', {
      str(seed): {
          'best_iteration': r.best_iteration,
          'best_val_accuracy': r.best_accuracy,
      } for seed, r in results.items()
  })
  return results


def run_meta_test(run: Run) -> Dict[int, meta_learners.MetaTestResult]:
  config = run.config
  corpus = run.load_corpus()
  learner = build_learner(config, corpus, run.load_encoder(corpus))
  results = {}
  rows = []
  for seed in config.seeds:
    pool, _ = prompt_pools.load_pool(run.seed_path(seed, POOL_FILE))
    result = test_seed(config, corpus, learner, pool, seed)
    rows.extend((seed, i, a) for i, a in enumerate(result.accuracies))
    results[seed] = result
  run.write_csv(run.path('meta_test.csv'), META_TEST_HEADER, rows)
  accuracies = [a for r in results.values() for a in r.accuracies]
  summary = {
      'mean_accuracy': float(np.mean(accuracies)),
      'std_accuracy': float(np.std(accuracies)),
      'seed_mean_accuracy': {str(s): r.mean for s, r in results.items()},
  }
  logging.info('Meta-test accuracy over %d seeds: %.4f +- %.4f.',
               len(results), summary['mean_accuracy'], summary['std_accuracy'])
  run.write_manifest('meta-test', summary)
  return results


def _axis_value(config: configs.RunConfig, axis: str) -> Any:
  section, name = axis.split('.')
  return getattr(getattr(config, section), name)


def run_sweep(run: Run) -> List[Tuple[Any, float, float]]:
  """Meta-trains and meta-tests once per value of the sweep axis.

  Every point uses the same seeds and the pretrained encoder of the run. The
  reported spread is the standard deviation of the per-seed mean accuracies.
  """
  config = run.config
  corpus = run.load_corpus()
  encoder = run.load_encoder(corpus)
  axis = config.sweep.axis
  table = []
  for value in config.sweep.values:
    point = configs.apply_overrides(config, {axis: value}).validate()
    value = _axis_value(point, axis)
    logging.info('Sweep point `%s` = %s.', axis, value)
    learner = build_learner(point, corpus, encoder)
    means = []
    for seed in point.seeds:
      trained = train_seed(point, corpus, learner, seed)
      means.append(test_seed(point, corpus, learner, trained.best_pool,
                             seed).mean)
    table.append((value, float(np.mean(means)), float(np.std(means))))
  run.write_csv(run.path('sweep.csv'), SWEEP_HEADER, table)
  run.write_manifest('sweep', {'axis': axis})
  return table


def run_analyze(run: Run) -> None:
  """Writes the attention, nearest-token, topic and embedding tables."""
  config = run.config
  corpus = run.load_corpus()
  encoder = run.load_encoder(corpus)
  learner = build_learner(config, corpus, encoder)
  verbalizer = hand_verbalizer(corpus)
  train_classes = corpus.class_ids(corpora.Split.TRAIN)
  for seed in config.seeds:
    pool, _ = prompt_pools.load_pool(run.seed_path(seed, POOL_FILE))

    attention = analysis.class_attention(
        learner, pool, sampler(config, corpus, corpora.Split.TRAIN, seed),
        train_classes, config.episodes.attention_episodes,
        config.adapt.train_steps)
    header = ['class', 'present'] + [
        f'prompt_{i + 1}' for i in range(pool.num_prompts)
    ]
    run.write_csv(
        run.seed_path(seed, 'class_attention.csv'), header,
        [[corpus.class_info(c).name, int(present)] + list(row)
         for c, present, row in zip(attention.class_ids, attention.present,
                                    attention.matrix)])

    nearest = analysis.nearest_tokens(pool, encoder.params, corpus.vocabulary,
                                      config.analysis.nearest_tokens)
    run.write_csv(
        run.seed_path(seed, 'nearest_tokens.csv'), NEAREST_TOKENS_HEADER,
        [(i + 1, rank + 1, token, score)
         for i, ranked in enumerate(nearest)
         for rank, (token, score) in enumerate(ranked)])

    labels, similarity = analysis.prompt_topic_similarity(
        pool, encoder.params, verbalizer, train_classes)
    run.write_csv(
        run.seed_path(seed, 'prompt_topic_similarity.csv'),
        ['row'] + [corpus.class_info(c).name for c in train_classes],
        [[label] + list(row) for label, row in zip(labels, similarity)])

    episode = sampler(config, corpus, corpora.Split.TEST, seed).episode(0)
    export = analysis.export_embeddings(learner, pool, episode,
                                        config.adapt.eval_steps)
    run.write_csv(
        run.seed_path(seed, 'embeddings.csv'), EMBEDDINGS_HEADER,
        [(kind, corpus.class_info(c).name, x, y) for kind, c, (x, y) in zip(
            export.kinds, export.classes, export.projected)])
  run.write_manifest('analyze')


def verbalizer_accuracies(episode: episodes.Episode, encoder: encoders.Encoder,
                          verbalizer: verbalizers.HandVerbalizer,
                          anchors: Sequence[int],
                          config: configs.VerbalizerConfig,
                          seed: Sequence[int]) -> Dict[str, float]:
  """Accuracy of each verbalizer on one episode, with frozen features.

  All verbalizers read the same `[MASK]` outputs of the discrete template; no
  continuous prompt is used.
  """
  features = {
      s.doc_index: verbalizers.frozen_features(encoder, s.tokens, anchors)
      for s in episode.support + episode.query
  }
  label_embeddings = verbalizers.compute_label_embeddings(
      episode.support, lambda s: features[s.doc_index][0], episode.n_way)
  head = verbalizers.warp_fit(episode.support, encoder, anchors,
                              episode.n_way, config.warp_steps,
                              config.warp_learning_rate, config.warp_init_std,
                              seed)
  correct = dict.fromkeys(VERBALIZER_NAMES, 0)
  for s in episode.query:
    hidden, vocab_dist = features[s.doc_index]
    hard = verbalizers.hard_prob(vocab_dist, verbalizer, episode.classes)
    soft = verbalizers.repverb_prob(hidden, label_embeddings, config.rho,
                                    config.similarity)
    scores = {
        'warp': verbalizers.warp_predict(hidden, head),
        'repverb': soft,
        'hand': hard,
        'combined': verbalizers.combined_prob(hard, soft, config.lam),
    }
    for name, prob in scores.items():
      correct[name] += int(np.argmax(prob.data) == s.label)
  return {name: n / len(episode.query) for name, n in correct.items()}


def run_compare_verbalizers(run: Run) -> List[Tuple[str, int, float, float]]:
  """Compares WARP, RepVerb, the hand-crafted verbalizer and their mixture."""
  config = run.config
  corpus = run.load_corpus()
  encoder = run.load_encoder(corpus)
  verbalizer = hand_verbalizer(corpus)
  anchors = tokenizers.tokenize(config.template.anchors, corpus.vocabulary)
  table = []
  for seed in config.seeds:
    test = sampler(config, corpus, corpora.Split.TEST, seed)

    def evaluate(index: int, seed=seed, test=test) -> Dict[str, float]:
      return verbalizer_accuracies(test.episode(index), encoder, verbalizer,
                                   anchors, config.verbalizer, [seed, index])

    per_episode = utils.map_ordered(evaluate,
                                    range(config.episodes.test_episodes),
                                    config.num_workers)
    for name in VERBALIZER_NAMES:
      accuracies = [a[name] for a in per_episode]
      table.append(
          (name, seed, float(np.mean(accuracies)), float(np.std(accuracies))))
      logging.info('Verbalizer %s, seed %d: accuracy %.4f.', name, seed,
                   table[-1][2])
  run.write_csv(run.path('verbalizers.csv'), VERBALIZERS_HEADER, table)
  run.write_manifest('compare-verbalizers')
  return table


COMMANDS = {
    'gen-corpus': run_gen_corpus,
    'pretrain': run_pretrain,
    'meta-train': run_meta_train,
    'meta-test': run_meta_test,
    'sweep': run_sweep,
    'analyze': run_analyze,
    'compare-verbalizers': run_compare_verbalizers,
}
