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

"""Sources for reading and writing corpus and verbalizer files.

The corpus format is UTF-8 JSON lines. The first line is a header

  {"vocab": [...], "classes": [{"id", "name", "label_tokens", "split"}, ...]}

where `label_tokens` are token ids and `split` is one of `train`, `valid` and
`test`. Every following line is a document {"tokens": [ids], "label": id}.
"""

import abc
import json
from typing import Any, Dict, List, Mapping

from metaprompter import corpora
from metaprompter import errors
from metaprompter import tokenizers
import tensorflow as tf


class CorpusSource(abc.ABC):
  """Base class for corpus sources.

  For each different type of storage a subclass can be implemented. Parsing
  is the responsibility of the source; invariant checks are done by `Corpus`.
  """

  @abc.abstractmethod
  def load(self, path: str) -> corpora.Corpus:
    """Reads the corpus stored at `path`.

    Args:
      path: Path to a single file.

    Returns:
      The validated `Corpus`.
    """

  @abc.abstractmethod
  def save(self, corpus: corpora.Corpus, path: str) -> None:
    """Writes `corpus` to `path` such that `load` restores it."""


def _require(obj: Mapping[str, Any], field: str, kind, line: int) -> Any:
  if not isinstance(obj, dict) or field not in obj:
    raise errors.ParseError(f'Missing field `{field}`.', line)
  value = obj[field]
  if not isinstance(value, kind) or isinstance(value, bool):
    raise errors.ParseError(f'Field `{field}` has the wrong type.', line)
  return value


def _int_list(obj: Mapping[str, Any], field: str, line: int) -> List[int]:
  values = _require(obj, field, list, line)
  if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
    raise errors.ParseError(f'Field `{field}` must hold integers.', line)
  return values


class JsonlCorpusSource(CorpusSource):
  """Source for the JSON lines corpus format."""

  def load(self, path: str) -> corpora.Corpus:
    if not tf.io.gfile.exists(path):
      raise FileNotFoundError(f'Corpus file `{path}` does not exist.')
    with tf.io.gfile.GFile(path, 'r') as f:
      lines = f.read().splitlines()
    if not lines:
      raise errors.ParseError('Empty corpus file.', 1)

    header = self._parse_line(lines[0], 1)
    vocab = _require(header, 'vocab', list, 1)
    if not all(isinstance(w, str) for w in vocab):
      raise errors.ParseError('Field `vocab` must hold strings.', 1)
    vocabulary = tokenizers.Vocabulary(vocab)

    classes = []
    for entry in _require(header, 'classes', list, 1):
      split = _require(entry, 'split', str, 1)
      try:
        split = corpora.Split(split)
      except ValueError as e:
        raise errors.ParseError(f'Unknown split `{split}`.', 1) from e
      classes.append(
          corpora.ClassInfo(
              id=_require(entry, 'id', int, 1),
              name=_require(entry, 'name', str, 1),
              label_tokens=tuple(_int_list(entry, 'label_tokens', 1)),
              split=split))
    known = {c.id for c in classes}

    documents = []
    for line_number, line in enumerate(lines[1:], start=2):
      if not line.strip():
        continue
      record = self._parse_line(line, line_number)
      label = _require(record, 'label', int, line_number)
      if label not in known:
        raise errors.ValidationError(
            f'Line {line_number}: document cites unknown label {label}.')
      documents.append(
          corpora.Document(tuple(_int_list(record, 'tokens', line_number)),
                           label))
    return corpora.Corpus(vocabulary, classes, documents)

  def _parse_line(self, line: str, line_number: int) -> Dict[str, Any]:
    try:
      record = json.loads(line)
    except json.JSONDecodeError as e:
      raise errors.ParseError(f'Invalid JSON: {e.msg}.', line_number) from e
    if not isinstance(record, dict):
      raise errors.ParseError('Expected a JSON object.', line_number)
    return record

  def save(self, corpus: corpora.Corpus, path: str) -> None:
    header = {
        'vocab': corpus.vocabulary.words,
        'classes': [{
            'id': c.id,
            'name': c.name,
            'label_tokens': list(c.label_tokens),
            'split': c.split.value,
        } for c in corpus.classes],
    }
    with tf.io.gfile.GFile(path, 'w') as f:
      f.write(json.dumps(header, sort_keys=True) + '\n')
      for doc in corpus.documents:
        f.write(json.dumps({'tokens': list(doc.tokens), 'label': doc.label},
                           sort_keys=True) + '\n')


def load_corpus(path: str) -> corpora.Corpus:
  """Loads a JSONL corpus; see the module docstring for the format."""
  return JsonlCorpusSource().load(path)


def save_corpus(corpus: corpora.Corpus, path: str) -> None:
  JsonlCorpusSource().save(corpus, path)


def load_verbalizer(path: str,
                    corpus: corpora.Corpus) -> Dict[int, List[int]]:
  """Reads a verbalizer definition file.

  The file is a JSON object mapping class names to lists of token strings,
  e.g. {"sports": ["sports", "football"]}.

  Args:
    path: File to read.
    corpus: Corpus whose classes and vocabulary the file must match.

  Returns:
    Map of class id to label-token ids, in file order.

  Raises:
    FileNotFoundError: `path` does not exist.
    ParseError: The file is not a JSON object of string lists.
    ValidationError: Unknown class names or tokens, or an empty token list.
  """
  if not tf.io.gfile.exists(path):
    raise FileNotFoundError(f'Verbalizer file `{path}` does not exist.')
  with tf.io.gfile.GFile(path, 'r') as f:
    try:
      definition = json.loads(f.read())
    except json.JSONDecodeError as e:
      raise errors.ParseError(f'Invalid JSON: {e.msg}.', e.lineno) from e
  if not isinstance(definition, dict):
    raise errors.ParseError('Verbalizer file must hold a JSON object.')

  by_name = {c.name: c.id for c in corpus.classes}
  vocabulary = corpus.vocabulary
  label_tokens = {}
  for name, words in definition.items():
    if name not in by_name:
      raise errors.ValidationError(f'Verbalizer names unknown class `{name}`.')
    if not isinstance(words, list) or not all(
        isinstance(w, str) for w in words):
      raise errors.ParseError(f'Tokens of class `{name}` must be strings.')
    if not words:
      raise errors.ValidationError(f'Class `{name}` has no label tokens.')
    missing = [w for w in words if w.lower() not in vocabulary]
    if missing:
      raise errors.ValidationError(
          f'Label tokens {missing} of class `{name}` are not in the '
          'vocabulary.')
    label_tokens[by_name[name]] = [vocabulary.id(w.lower()) for w in words]
  return label_tokens
