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

"""Run configuration.

A `RunConfig` nests one dataclass per concern. Configs are loaded from either a
JSON file (nested sections; a run manifest is accepted too) or a plain text
file of `section.key = value` lines, then patched with dotted overrides:

```python
config = configs.load_config('toy.cfg')
config = configs.apply_overrides(config, {'pool.k': '16', 'meta.iterations': '50'})
config.validate()
```
"""

import dataclasses
import json
import typing
from typing import Any, Dict, Mapping, Tuple

from metaprompter import errors
import tensorflow as tf

# Short names accepted for overrides.
ALIASES = {
    'pool.k': 'pool.num_prompts',
    'pool.l_p': 'pool.prompt_length',
}

POOL_MODES = ('metaprompter', 'metaprompting')
SIMILARITIES = ('cosine', 'euclidean')
OPTIMIZERS = ('adam', 'sgd')
SWEEP_AXES = ('pool.num_prompts', 'pool.prompt_length', 'verbalizer.lam')


@dataclasses.dataclass
class CorpusConfig:
  """Synthetic corpus generation, or the path of a JSONL corpus to load."""
  path: str = ''
  verbalizer_path: str = ''
  num_classes: int = 20
  num_train_classes: int = 10
  num_valid_classes: int = 5
  num_test_classes: int = 5
  docs_per_class: int = 60
  doc_length: int = 12
  vocab_size: int = 200
  topic_tokens_per_class: int = 4
  topic_sharpness: float = 0.7
  seed: int = 0


@dataclasses.dataclass
class EncoderConfig:
  dim: int = 32
  num_blocks: int = 2
  num_heads: int = 2
  ffn_dim: int = 64
  max_len: int = 64
  init_std: float = 0.02
  pretrain_steps: int = 300
  pretrain_batch_size: int = 8
  pretrain_learning_rate: float = 0.01
  mask_prob: float = 0.15
  seed: int = 0


@dataclasses.dataclass
class TemplateConfig:
  # Anchor text placed between the prompt and `[MASK]`.
  anchors: str = 'topic is'
  # Anchor text of the query function probe.
  probe_anchors: str = 'topic is'


@dataclasses.dataclass
class PoolConfig:
  mode: str = 'metaprompter'
  num_prompts: int = 8
  prompt_length: int = 8
  key_init_std: float = 0.02
  scale_attention: bool = True
  tune_encoder: bool = False


@dataclasses.dataclass
class VerbalizerConfig:
  lam: float = 0.5
  rho: float = 10.0
  similarity: str = 'cosine'
  normalize_loss: bool = True
  warp_steps: int = 5
  warp_learning_rate: float = 0.05
  warp_init_std: float = 0.02


@dataclasses.dataclass
class AdaptConfig:
  step_size: float = 0.1
  train_steps: int = 5
  eval_steps: int = 15
  literal_label_embeddings: bool = False


@dataclasses.dataclass
class MetaConfig:
  learning_rate: float = 0.001
  iterations: int = 500
  validation_period: int = 50
  validation_episodes: int = 200
  meta_batch_size: int = 1
  optimizer: str = 'adam'


@dataclasses.dataclass
class EpisodeConfig:
  n_way: int = 5
  k_shot: int = 5
  q_query: int = 15
  test_episodes: int = 1000
  attention_episodes: int = 200


@dataclasses.dataclass
class SweepConfig:
  axis: str = 'pool.num_prompts'
  values: Tuple[float, ...] = (1, 2, 4, 8, 16)


@dataclasses.dataclass
class AnalysisConfig:
  nearest_tokens: int = 10


@dataclasses.dataclass
class RunConfig:
  """All settings of a run."""
  name: str = 'default'
  seeds: Tuple[int, ...] = (0, 1, 2)
  num_workers: int = 1
  corpus: CorpusConfig = dataclasses.field(default_factory=CorpusConfig)
  encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
  template: TemplateConfig = dataclasses.field(default_factory=TemplateConfig)
  pool: PoolConfig = dataclasses.field(default_factory=PoolConfig)
  verbalizer: VerbalizerConfig = dataclasses.field(
      default_factory=VerbalizerConfig)
  adapt: AdaptConfig = dataclasses.field(default_factory=AdaptConfig)
  meta: MetaConfig = dataclasses.field(default_factory=MetaConfig)
  episodes: EpisodeConfig = dataclasses.field(default_factory=EpisodeConfig)
  sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)
  analysis: AnalysisConfig = dataclasses.field(default_factory=AnalysisConfig)

  def validate(self) -> 'RunConfig':
    """Checks the cross-field invariants.

    Returns:
      The config itself, for chaining.

    Raises:
      ConfigError: The first violated invariant.
    """
    c = self.corpus
    if (c.num_train_classes + c.num_valid_classes + c.num_test_classes !=
        c.num_classes):
      raise errors.ConfigError(
          f'Split sizes {c.num_train_classes}/{c.num_valid_classes}/'
          f'{c.num_test_classes} do not sum to `num_classes` {c.num_classes}.')
    if not 0.0 <= c.topic_sharpness <= 1.0:
      raise errors.ConfigError(
          f'`topic_sharpness` must be in [0, 1], got {c.topic_sharpness}.')

    e = self.encoder
    _require_positive('encoder', e, ('dim', 'num_blocks', 'num_heads',
                                     'ffn_dim', 'max_len', 'pretrain_batch_size'))
    if e.dim % e.num_heads:
      raise errors.ConfigError(
          f'`num_heads` {e.num_heads} does not divide `dim` {e.dim}.')
    if e.pretrain_steps < 0:
      raise errors.ConfigError('`pretrain_steps` must be non-negative.')
    if not 0.0 < e.mask_prob < 1.0:
      raise errors.ConfigError(
          f'`mask_prob` must be in (0, 1), got {e.mask_prob}.')

    p = self.pool
    if p.mode not in POOL_MODES:
      raise errors.ConfigError(
          f'Unknown pool mode `{p.mode}`; expected one of {POOL_MODES}.')
    _require_positive('pool', p, ('num_prompts', 'prompt_length'))
    if p.tune_encoder and p.mode != 'metaprompting':
      raise errors.ConfigError(
          '`tune_encoder` is only available in `metaprompting` mode.')
    template_rows = 3 + p.prompt_length + len(self.template.anchors.split())
    if template_rows > e.max_len:
      raise errors.ConfigError(
          f'Template needs {template_rows} rows but `max_len` is {e.max_len}.')

    v = self.verbalizer
    if not 0.0 <= v.lam <= 1.0:
      raise errors.ConfigError(f'`lam` must be in [0, 1], got {v.lam}.')
    if v.rho <= 0:
      raise errors.ConfigError(f'`rho` must be positive, got {v.rho}.')
    if v.similarity not in SIMILARITIES:
      raise errors.ConfigError(
          f'Unknown similarity `{v.similarity}`; expected one of '
          f'{SIMILARITIES}.')
    _require_positive('verbalizer', v, ('warp_steps',))

    a = self.adapt
    if a.step_size <= 0:
      raise errors.ConfigError(
          f'`step_size` must be positive, got {a.step_size}.')
    _require_positive('adapt', a, ('train_steps', 'eval_steps'))

    m = self.meta
    _require_positive('meta', m, ('iterations', 'validation_period',
                                  'validation_episodes', 'meta_batch_size'))
    if m.learning_rate <= 0:
      raise errors.ConfigError(
          f'`learning_rate` must be positive, got {m.learning_rate}.')
    if m.optimizer not in OPTIMIZERS:
      raise errors.ConfigError(
          f'Unknown optimizer `{m.optimizer}`; expected one of {OPTIMIZERS}.')

    _require_positive('episodes', self.episodes,
                      ('n_way', 'k_shot', 'q_query', 'test_episodes',
                       'attention_episodes'))
    if self.sweep.axis not in SWEEP_AXES:
      raise errors.ConfigError(
          f'Unknown sweep axis `{self.sweep.axis}`; expected one of '
          f'{SWEEP_AXES}.')
    if not self.sweep.values:
      raise errors.ConfigError('`sweep.values` must be non-empty.')
    if not self.seeds:
      raise errors.ConfigError('`seeds` must be non-empty.')
    if self.num_workers < 1:
      raise errors.ConfigError('`num_workers` must be at least 1.')
    return self

  def to_dict(self) -> Dict[str, Any]:
    return dataclasses.asdict(self)


def _require_positive(section: str, obj: Any, names: Tuple[str, ...]) -> None:
  for name in names:
    value = getattr(obj, name)
    if value < 1:
      raise errors.ConfigError(
          f'`{section}.{name}` must be at least 1, got {value}.')


# ----------------------------------------------------------------------
# ------------------------- Loading and patching. ----------------------
# ----------------------------------------------------------------------


def _coerce(value: Any, hint: Any, key: str) -> Any:
  """Converts a parsed value to the declared type of a field."""
  origin = typing.get_origin(hint)
  try:
    if hint is bool:
      if isinstance(value, str):
        if value.lower() not in ('true', 'false'):
          raise ValueError(value)
        return value.lower() == 'true'
      return bool(value)
    if hint is int:
      if isinstance(value, float) and not value.is_integer():
        raise ValueError(value)
      return int(value)
    if hint is float:
      return float(value)
    if hint is str:
      return str(value)
    if origin is tuple:
      if isinstance(value, str):
        value = [json.loads(v) for v in value.split(',') if v.strip()]
      elif not isinstance(value, (list, tuple)):
        value = [value]
      item_hint = typing.get_args(hint)[0]
      return tuple(_coerce(v, item_hint, key) for v in value)
  except (TypeError, ValueError) as e:
    raise errors.ConfigError(
        f'Cannot convert `{value!r}` for `{key}` to {hint}.') from e
  raise errors.ConfigError(f'Unsupported field type {hint} for `{key}`.')


def _parse_literal(text: str) -> Any:
  try:
    return json.loads(text)
  except json.JSONDecodeError:
    return text


def _resolve(config: RunConfig, key: str) -> Tuple[Any, str, Any]:
  """Finds the dataclass holding dotted `key` and the field's type."""
  key = ALIASES.get(key, key)
  parts = key.split('.')
  target = config
  for part in parts[:-1]:
    if not dataclasses.is_dataclass(target) or not hasattr(target, part):
      raise errors.ConfigError(f'Unknown config key `{key}`.')
    target = getattr(target, part)
  name = parts[-1]
  if not dataclasses.is_dataclass(target):
    raise errors.ConfigError(f'Unknown config key `{key}`.')
  hints = typing.get_type_hints(type(target))
  if name not in hints or dataclasses.is_dataclass(hints[name]):
    raise errors.ConfigError(f'Unknown config key `{key}`.')
  return target, name, hints[name]


def apply_overrides(config: RunConfig,
                    overrides: Mapping[str, Any]) -> RunConfig:
  """Returns a copy of `config` with dotted `overrides` applied in order.

  Args:
    config: Base config; not modified.
    overrides: Map of dotted keys (aliases allowed) to values. String values
      are parsed as JSON literals, falling back to the bare string.

  Returns:
    The patched config.

  Raises:
    ConfigError: A key is unknown or a value has the wrong type.
  """
  config = _from_dict(config.to_dict())
  for key, value in overrides.items():
    target, name, hint = _resolve(config, key)
    if isinstance(value, str) and hint is not str:
      value = _parse_literal(value)
    setattr(target, name, _coerce(value, hint, key))
  return config


def _flatten(tree: Mapping[str, Any], prefix: str = '') -> Dict[str, Any]:
  flat = {}
  for key, value in tree.items():
    path = f'{prefix}{key}'
    if isinstance(value, Mapping):
      flat.update(_flatten(value, path + '.'))
    else:
      flat[path] = value
  return flat


def _from_dict(tree: Mapping[str, Any]) -> RunConfig:
  return _apply_flat(RunConfig(), _flatten(tree))


def _apply_flat(config: RunConfig, flat: Mapping[str, Any]) -> RunConfig:
  for key, value in flat.items():
    target, name, hint = _resolve(config, key)
    setattr(target, name, _coerce(value, hint, key))
  return config


def parse_config(text: str) -> RunConfig:
  """Parses the contents of a JSON or `section.key = value` config file.

  Raises:
    ParseError: Malformed content, with the offending line number.
    ConfigError: Unknown keys or ill-typed values.
  """
  stripped = text.strip()
  if stripped.startswith('{'):
    try:
      tree = json.loads(stripped)
    except json.JSONDecodeError as e:
      raise errors.ParseError(f'Invalid JSON config: {e.msg}.', e.lineno) from e
    # A run manifest carries the full config under `config`.
    if 'config' in tree and isinstance(tree['config'], Mapping):
      tree = tree['config']
    return _from_dict(tree)

  flat = {}
  for line_number, line in enumerate(text.splitlines(), start=1):
    line = line.split('#', 1)[0].strip()
    if not line:
      continue
    if '=' not in line:
      raise errors.ParseError(
          f'Expected `section.key = value`, got `{line}`.', line_number)
    key, value = (part.strip() for part in line.split('=', 1))
    if not key:
      raise errors.ParseError('Missing key.', line_number)
    flat[key] = _parse_literal(value)
  return _apply_flat(RunConfig(), flat)


def load_config(path: str) -> RunConfig:
  """Loads a config file; see `parse_config` for the accepted formats."""
  if not tf.io.gfile.exists(path):
    raise FileNotFoundError(f'Config file `{path}` does not exist.')
  with tf.io.gfile.GFile(path, 'r') as f:
    return parse_config(f.read())
