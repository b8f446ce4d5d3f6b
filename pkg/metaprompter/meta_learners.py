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

"""Episodic meta-learning of prompt pools.

A `MetaLearner` adapts the meta pool to one episode (the base learner) and
turns the query loss of adapted pools into an update of the meta pool. The
only implementation is first-order MAML:

  * `adapt` takes J plain gradient steps of size `step_size` on the support
    loss, starting from the meta pool;
  * `meta_update` evaluates the query loss with the adapted pool, takes its
    gradient with respect to the adapted parameters and applies it to the meta
    pool with Adam (or SGD).

Predictions mix the hand-crafted verbalizer and RepVerb; RepVerb's label
embeddings always come from the support set encoded with the pool at hand.
"""

import abc
import dataclasses
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from absl import logging
from metaprompter import autodiff
from metaprompter import configs
from metaprompter import encoders
from metaprompter import episodes
from metaprompter import errors
from metaprompter import ops
from metaprompter import optimizers
from metaprompter import prompt_pools
from metaprompter import tokenizers
from metaprompter import utils
from metaprompter import verbalizers
import numpy as np

Tensor = autodiff.Tensor
PromptPool = prompt_pools.PromptPool


class AdaptResult(NamedTuple):
  pool: PromptPool
  # Support loss before each inner step.
  support_losses: Tuple[float, ...]
  # Label embeddings of the last inner step, detached.
  label_embeddings: verbalizers.LabelEmbeddings


class UpdateResult(NamedTuple):
  pool: PromptPool
  optimizer_state: Optional[optimizers.AdamState]
  support_loss: float
  query_loss: float


class MetaLearner(abc.ABC):
  """Base class for meta-learners over prompt pools.

  Holds everything fixed across episodes: the frozen encoder, the hand-crafted
  verbalizer and the run config. Subclasses implement the base learner
  (`adapt`) and the meta update (`meta_update`).
  """

  def __init__(self, encoder: encoders.Encoder,
               verbalizer: verbalizers.HandVerbalizer,
               config: configs.RunConfig):
    if not encoder.params.frozen:
      raise errors.ContractError('Meta-learning needs a frozen encoder.')
    self._encoder = encoder
    self._verbalizer = verbalizer
    self._config = config
    vocab = encoder.vocabulary
    self._anchors = tokenizers.tokenize(config.template.anchors, vocab)
    self._probe = tokenizers.tokenize(config.template.probe_anchors, vocab)
    self._thawed_params: Optional[encoders.EncoderParams] = None

  @property
  def encoder(self) -> encoders.Encoder:
    return self._encoder

  @property
  def config(self) -> configs.RunConfig:
    return self._config

  @property
  def anchors(self) -> List[int]:
    return list(self._anchors)

  @property
  def probe_anchors(self) -> List[int]:
    return list(self._probe)

  @abc.abstractmethod
  def adapt(self, meta_pool: PromptPool, episode: episodes.Episode,
            steps: int) -> AdaptResult:
    """Builds a task-specific pool from the support set of `episode`."""

  @abc.abstractmethod
  def meta_update(
      self, meta_pool: PromptPool, batch: Sequence[episodes.Episode],
      state: Optional[optimizers.AdamState]) -> UpdateResult:
    """Updates the meta pool from a batch of training episodes."""

  def init_state(self,
                 meta_pool: PromptPool) -> Optional[optimizers.AdamState]:
    if self._config.meta.optimizer == 'adam':
      return optimizers.AdamState.zeros_like(meta_pool.arrays())
    return None

  # ------------------------------------------------------------------
  # Forward computations shared by all meta-learners.
  # ------------------------------------------------------------------

  def encoder_for(self, pool: PromptPool) -> encoders.Encoder:
    """The encoder to run `pool`'s prompts through."""
    if pool.encoder_weights is None:
      return self._encoder
    if self._thawed_params is None:
      self._thawed_params = dataclasses.replace(self._encoder.params,
                                                frozen=False)
    return encoders.Encoder(self._thawed_params, self._encoder.vocabulary,
                            pool.encoder_weights)

  def attention(self, pool: PromptPool, tokens: Sequence[int]) -> Tensor:
    query = self._encoder.query_embedding(tokens, self._probe)
    return prompt_pools.attention_weights(pool, query,
                                          self._config.pool.scale_attention)

  def forward(self, pool: PromptPool,
              tokens: Sequence[int]) -> Tuple[Tensor, Tensor]:
    """(h_[MASK], vocab_dist) of `tokens` wrapped with its instance prompt."""
    prompt = prompt_pools.instance_prompt(pool, tokens, self._encoder,
                                          self._probe,
                                          self._config.pool.scale_attention)
    encoder = self.encoder_for(pool)
    return encoder.encode(encoder.wrap(tokens, prompt, self._anchors))

  def _support_outputs(
      self, pool: PromptPool,
      episode: episodes.Episode) -> Dict[int, Tuple[Tensor, Tensor]]:
    return {s.doc_index: self.forward(pool, s.tokens) for s in episode.support}

  def label_embeddings(
      self,
      pool: PromptPool,
      episode: episodes.Episode,
      outputs: Optional[Dict[int, Tuple[Tensor, Tensor]]] = None
  ) -> verbalizers.LabelEmbeddings:
    """RepVerb label embeddings of `episode`'s support set under `pool`."""
    if outputs is None:
      outputs = self._support_outputs(pool, episode)
    return verbalizers.compute_label_embeddings(
        episode.support, lambda s: outputs[s.doc_index][0], episode.n_way)

  def scores(self, hidden: Tensor, vocab_dist: Tensor,
             label_embeddings: verbalizers.LabelEmbeddings,
             classes: Sequence[int]) -> Tensor:
    """Combined per-label scores of one sample."""
    cfg = self._config.verbalizer
    hard = soft = None
    if cfg.lam < 1.0:
      hard = verbalizers.hard_prob(vocab_dist, self._verbalizer, classes)
    if cfg.lam > 0.0:
      soft = verbalizers.repverb_prob(hidden, label_embeddings, cfg.rho,
                                      cfg.similarity)
    return verbalizers.combined_prob(hard, soft, cfg.lam)

  def _set_loss(self, outputs: Dict[int, Tuple[Tensor, Tensor]],
                samples: Sequence[episodes.Sample],
                label_embeddings: verbalizers.LabelEmbeddings,
                classes: Sequence[int]) -> Tensor:
    normalize = self._config.verbalizer.normalize_loss
    terms = []
    for s in samples:
      hidden, vocab_dist = outputs[s.doc_index]
      terms.append(
          verbalizers.combined_nll(
              self.scores(hidden, vocab_dist, label_embeddings, classes),
              s.label, normalize))
    return ops.add_n(terms)

  def support_loss(
      self, pool: PromptPool, episode: episodes.Episode
  ) -> Tuple[Tensor, verbalizers.LabelEmbeddings]:
    """-sum log P(y|x) over the support set, and its label embeddings."""
    outputs = self._support_outputs(pool, episode)
    label_embeddings = self.label_embeddings(pool, episode, outputs)
    loss = self._set_loss(outputs, episode.support, label_embeddings,
                          episode.classes)
    return loss, label_embeddings

  def query_loss(self, pool: PromptPool, episode: episodes.Episode,
                 label_embeddings: verbalizers.LabelEmbeddings) -> Tensor:
    outputs = {s.doc_index: self.forward(pool, s.tokens) for s in episode.query}
    return self._set_loss(outputs, episode.query, label_embeddings,
                          episode.classes)

  def predict(self, adapted: AdaptResult,
              episode: episodes.Episode) -> List[int]:
    """Episode-local label predicted for every query sample."""
    with autodiff.stop_recording():
      if self._config.adapt.literal_label_embeddings:
        label_embeddings = adapted.label_embeddings
      else:
        label_embeddings = self.label_embeddings(adapted.pool, episode)
      predictions = []
      for s in episode.query:
        hidden, vocab_dist = self.forward(adapted.pool, s.tokens)
        scores = self.scores(hidden, vocab_dist, label_embeddings,
                             episode.classes)
        predictions.append(int(np.argmax(scores.data)))
    return predictions

  def accuracy(self, adapted: AdaptResult, episode: episodes.Episode) -> float:
    predictions = self.predict(adapted, episode)
    labels = [s.label for s in episode.query]
    return float(np.mean(np.equal(predictions, labels)))


class FirstOrderMaml(MetaLearner):
  """First-order MAML: outer gradients are taken at the adapted pool."""

  def adapt(self, meta_pool: PromptPool, episode: episodes.Episode,
            steps: int) -> AdaptResult:
    """Takes `steps` gradient steps on the support loss.

    Args:
      meta_pool: Starting point; never modified.
      episode: Task to adapt to.
      steps: Number of inner steps J.

    Returns:
      The adapted pool, the support losses and the last label embeddings.

    Raises:
      MissingClassError: A label has no support sample.
      NumericError: The loss or a gradient became non-finite, naming the step.
    """
    step_size = self._config.adapt.step_size
    pool = meta_pool
    losses = []
    label_embeddings = None
    for j in range(steps):
      leaves = pool.with_leaves()
      try:
        with autodiff.Tape() as tape:
          loss, label_embeddings = self.support_loss(leaves, episode)
        grads = tape.gradient(loss, list(leaves.parameters().values()))
      except errors.NumericError as e:
        raise type(e)(f'Inner step {j}: {e}') from e
      losses.append(loss.item())
      pool = pool.replace_arrays(
          optimizers.sgd_update(pool.arrays(), grads, step_size))
    if label_embeddings is None:
      with autodiff.stop_recording():
        label_embeddings = self.label_embeddings(pool, episode)
    return AdaptResult(pool, tuple(losses), label_embeddings.detach())

  def query_gradients(
      self, adapted: AdaptResult,
      episode: episodes.Episode) -> Tuple[float, List[np.ndarray]]:
    """Query loss and its gradient with respect to the adapted parameters."""
    leaves = adapted.pool.with_leaves()
    with autodiff.Tape() as tape:
      if self._config.adapt.literal_label_embeddings:
        label_embeddings = adapted.label_embeddings
      else:
        label_embeddings = self.label_embeddings(leaves, episode)
      loss = self.query_loss(leaves, episode, label_embeddings)
    grads = tape.gradient(loss, list(leaves.parameters().values()))
    return loss.item(), grads

  def apply_gradients(
      self, meta_pool: PromptPool, grads: Sequence[np.ndarray],
      state: Optional[optimizers.AdamState]
  ) -> Tuple[PromptPool, Optional[optimizers.AdamState]]:
    meta = self._config.meta
    if meta.optimizer == 'adam':
      if state is None:
        state = self.init_state(meta_pool)
      arrays, state = optimizers.adam_update(state, meta_pool.arrays(), grads,
                                             meta.learning_rate)
    else:
      arrays = optimizers.sgd_update(meta_pool.arrays(), grads,
                                     meta.learning_rate)
    return meta_pool.replace_arrays(arrays), state

  def outer_step(
      self, meta_pool: PromptPool, adapted: AdaptResult,
      episode: episodes.Episode, state: Optional[optimizers.AdamState]
  ) -> Tuple[PromptPool, Optional[optimizers.AdamState], float]:
    """Applies the first-order query gradient of one episode to `meta_pool`."""
    query_loss, grads = self.query_gradients(adapted, episode)
    pool, state = self.apply_gradients(meta_pool, grads, state)
    return pool, state, query_loss

  def meta_update(
      self, meta_pool: PromptPool, batch: Sequence[episodes.Episode],
      state: Optional[optimizers.AdamState]) -> UpdateResult:
    if len(batch) == 1:
      episode, = batch
      adapted = self.adapt(meta_pool, episode, self._config.adapt.train_steps)
      pool, state, query_loss = self.outer_step(meta_pool, adapted, episode,
                                                state)
      return UpdateResult(pool, state, adapted.support_losses[-1], query_loss)

    total = None
    support_losses = []
    query_losses = []
    for episode in batch:
      adapted = self.adapt(meta_pool, episode, self._config.adapt.train_steps)
      query_loss, grads = self.query_gradients(adapted, episode)
      support_losses.append(adapted.support_losses[-1])
      query_losses.append(query_loss)
      total = grads if total is None else [a + b for a, b in zip(total, grads)]
    mean_grads = [g / len(batch) for g in total]
    pool, state = self.apply_gradients(meta_pool, mean_grads, state)
    return UpdateResult(pool, state, float(np.mean(support_losses)),
                        float(np.mean(query_losses)))


# ----------------------------------------------------------------------
# ------------------------- Training and testing. ----------------------
# ----------------------------------------------------------------------


class MetricsRow(NamedTuple):
  iteration: int
  support_loss: float
  query_loss: float
  # None when no validation ran at this iteration.
  val_accuracy: Optional[float]


class MetaTrainResult(NamedTuple):
  pool: PromptPool
  best_pool: PromptPool
  best_iteration: int
  best_accuracy: float
  metrics: Tuple[MetricsRow, ...]


class MetaTestResult(NamedTuple):
  accuracies: Tuple[float, ...]
  mean: float
  std: float


def evaluate(learner: MetaLearner,
             pool: PromptPool,
             sampler: episodes.EpisodeSampler,
             indices: Sequence[int],
             steps: int,
             num_workers: int = 1) -> List[float]:
  """Accuracy of `pool` on each episode in `indices`, in that order.

  Every episode is adapted with `steps` inner steps. With `num_workers > 1`
  episodes run on a thread pool; results keep the order of `indices`.
  """

  def run(index: int) -> float:
    episode = sampler.episode(index)
    return learner.accuracy(learner.adapt(pool, episode, steps), episode)

  return utils.map_ordered(run, indices, num_workers)


def meta_train(learner: MetaLearner,
               meta_pool: PromptPool,
               train_sampler: episodes.EpisodeSampler,
               valid_sampler: episodes.EpisodeSampler,
               num_workers: int = 1) -> MetaTrainResult:
  """Meta-trains `meta_pool`, keeping the best meta-validation checkpoint.

  Every `validation_period` iterations, and after the last one, the pool is
  evaluated on the same `validation_episodes` validation episodes. The best
  pool is the first one reaching the highest accuracy.

  Raises:
    ConfigError: The train or validation split has no classes.
  """
  config = learner.config
  meta = config.meta
  for sampler in (train_sampler, valid_sampler):
    if not sampler.num_classes:
      raise errors.ConfigError(
          f'Split `{sampler.split.value}` has no classes.')

  state = learner.init_state(meta_pool)
  pool = meta_pool
  best_pool = meta_pool
  best_iteration = 0
  best_accuracy = -1.0
  metrics = []
  validation = range(meta.validation_episodes)
  for t in range(1, meta.iterations + 1):
    first = (t - 1) * meta.meta_batch_size
    batch = [
        train_sampler.episode(i)
        for i in range(first, first + meta.meta_batch_size)
    ]
    update = learner.meta_update(pool, batch, state)
    pool, state = update.pool, update.optimizer_state

    val_accuracy = None
    if t % meta.validation_period == 0 or t == meta.iterations:
      val_accuracy = float(
          np.mean(
              evaluate(learner, pool, valid_sampler, validation,
                       config.adapt.eval_steps, num_workers)))
      if val_accuracy > best_accuracy:
        best_pool, best_iteration, best_accuracy = pool, t, val_accuracy
        logging.info('New best meta-validation accuracy %.4f at iteration %d.',
                     val_accuracy, t)
    metrics.append(
        MetricsRow(t, update.support_loss, update.query_loss, val_accuracy))
    logging.info('Iteration %d/%d: support loss %.4f, query loss %.4f.', t,
                 meta.iterations, update.support_loss, update.query_loss)
  return MetaTrainResult(pool, best_pool, best_iteration, best_accuracy,
                         tuple(metrics))


def meta_test(learner: MetaLearner,
              pool: PromptPool,
              sampler: episodes.EpisodeSampler,
              num_episodes: int,
              num_workers: int = 1) -> MetaTestResult:
  """Adapts to each test episode with `eval_steps` and scores the queries."""
  accuracies = evaluate(learner, pool, sampler, range(num_episodes),
                        learner.config.adapt.eval_steps, num_workers)
  result = MetaTestResult(
      tuple(accuracies), float(np.mean(accuracies)), float(np.std(accuracies)))
  logging.info('Meta-test accuracy over %d episodes: %.4f +- %.4f.',
               num_episodes, result.mean, result.std)
  return result
