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

"""Utils."""

import concurrent.futures
import csv
import hashlib
from typing import Any, Callable, Iterable, List, Sequence, TypeVar

import numpy as np
import tensorflow as tf

_T = TypeVar('_T')
_R = TypeVar('_R')


# ----------------------------------------------------------------------
# ----------------------------- Randomness. ----------------------------
# ----------------------------------------------------------------------


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
  """Returns an independent generator keyed by `seed` and integer `keys`.

  Streams for distinct key tuples do not overlap, so any of them can be drawn
  in any order (or concurrently) without changing the others.
  """
  return np.random.default_rng([int(seed)] + [int(k) for k in keys])


# ----------------------------------------------------------------------
# ------------------------------ Threads. ------------------------------
# ----------------------------------------------------------------------


def map_ordered(fn: Callable[[_T], _R], items: Iterable[_T],
                num_workers: int = 1) -> List[_R]:
  """`[fn(x) for x in items]`, on a thread pool when `num_workers > 1`."""
  if num_workers > 1:
    with concurrent.futures.ThreadPoolExecutor(num_workers) as executor:
      return list(executor.map(fn, items))
  return [fn(x) for x in items]


# ----------------------------------------------------------------------
# ------------------------------- Files. -------------------------------
# ----------------------------------------------------------------------


def content_hash(path: str) -> str:
  """Git-style blob hash (SHA-1 of `blob <len>\\0<content>`) of a file."""
  if not tf.io.gfile.exists(path):
    raise FileNotFoundError(f'File `{path}` does not exist.')
  with tf.io.gfile.GFile(path, 'rb') as f:
    content = f.read()
  digest = hashlib.sha1(b'blob %d\0' % len(content))
  digest.update(content)
  return digest.hexdigest()


def _format(value: Any) -> str:
  if isinstance(value, (float, np.floating)):
    return repr(float(value))
  if isinstance(value, np.integer):
    return str(int(value))
  return str(value)


def write_csv(path: str, header: Sequence[str],
              rows: Iterable[Sequence[Any]]) -> None:
  """Writes `rows` under `header`; floats use `repr` for exact reruns."""
  with tf.io.gfile.GFile(path, 'w') as f:
    writer = csv.writer(f, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
      if len(row) != len(header):
        raise ValueError(
            f'Row {row!r} has {len(row)} fields, header has {len(header)}.')
      writer.writerow([_format(v) for v in row])


def read_csv(path: str):
  """Reads a CSV written by `write_csv` as (header, rows of strings)."""
  with tf.io.gfile.GFile(path, 'r') as f:
    rows = list(csv.reader(f))
  return rows[0], rows[1:]
