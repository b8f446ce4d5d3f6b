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

"""Container format shared by encoder and prompt pool checkpoints.

Layout, all integers little-endian:

| bytes     | content                                              |
|-----------|------------------------------------------------------|
| 8         | magic `MPCKPT\\0\\0`                                   |
| 4         | uint32 format version (1)                            |
| 8         | uint64 length H of the header                        |
| H         | UTF-8 JSON header with sorted keys: `kind`,          |
|           | `metadata` and `arrays`, a list of {name, shape}     |
| remaining | float64 values of each array, row-major, table order |

The file bytes are a pure function of the content, and reading restores every
array bitwise.
"""

import collections
import json
import struct
from typing import Any, Dict, Mapping, NamedTuple, Optional

from metaprompter import errors
import numpy as np
import tensorflow as tf

MAGIC = b'MPCKPT\0\0'
VERSION = 1
_PREAMBLE = struct.Struct('<IQ')


class Checkpoint(NamedTuple):
  kind: str
  arrays: 'collections.OrderedDict[str, np.ndarray]'
  metadata: Dict[str, Any]


def save_checkpoint(path: str,
                    kind: str,
                    arrays: Mapping[str, np.ndarray],
                    metadata: Optional[Mapping[str, Any]] = None) -> None:
  """Writes `arrays` (in iteration order) and JSON `metadata` to `path`."""
  table = []
  payload = []
  for name, array in arrays.items():
    array = np.array(array, dtype='<f8', order='C')
    table.append({'name': name, 'shape': list(array.shape)})
    payload.append(array.tobytes())
  header = json.dumps({
      'kind': kind,
      'metadata': dict(metadata or {}),
      'arrays': table,
  }, sort_keys=True, separators=(',', ':')).encode('utf-8')

  directory = path.rpartition('/')[0]
  if directory:
    tf.io.gfile.makedirs(directory)
  with tf.io.gfile.GFile(path, 'wb') as f:
    f.write(MAGIC)
    f.write(_PREAMBLE.pack(VERSION, len(header)))
    f.write(header)
    for chunk in payload:
      f.write(chunk)


def load_checkpoint(path: str, kind: Optional[str] = None) -> Checkpoint:
  """Reads a checkpoint written by `save_checkpoint`.

  Args:
    path: File to read.
    kind: If given, the `kind` the checkpoint must have.

  Returns:
    The `Checkpoint`, with read-only arrays.

  Raises:
    FileNotFoundError: `path` does not exist.
    ParseError: The file is not a valid checkpoint, or of another kind.
  """
  if not tf.io.gfile.exists(path):
    raise FileNotFoundError(f'Checkpoint file `{path}` does not exist.')
  with tf.io.gfile.GFile(path, 'rb') as f:
    content = f.read()

  if content[:len(MAGIC)] != MAGIC:
    raise errors.ParseError(f'`{path}` is not a checkpoint file.')
  offset = len(MAGIC)
  if len(content) < offset + _PREAMBLE.size:
    raise errors.ParseError(f'Checkpoint `{path}` is truncated.')
  version, header_len = _PREAMBLE.unpack_from(content, offset)
  if version != VERSION:
    raise errors.ParseError(
        f'Unsupported checkpoint version {version} in `{path}`.')
  offset += _PREAMBLE.size
  try:
    header = json.loads(content[offset:offset + header_len].decode('utf-8'))
  except (UnicodeDecodeError, json.JSONDecodeError) as e:
    raise errors.ParseError(f'Corrupt checkpoint header in `{path}`.') from e
  offset += header_len

  if kind is not None and header.get('kind') != kind:
    raise errors.ParseError(
        f'Checkpoint `{path}` holds `{header.get("kind")}`, expected `{kind}`.')

  arrays = collections.OrderedDict()
  for entry in header['arrays']:
    shape = tuple(entry['shape'])
    num_bytes = 8 * int(np.prod(shape, dtype=np.int64))
    if offset + num_bytes > len(content):
      raise errors.ParseError(f'Checkpoint `{path}` is truncated.')
    if num_bytes:
      array = np.frombuffer(content, dtype='<f8', count=num_bytes // 8,
                            offset=offset).astype(np.float64).reshape(shape)
    else:
      array = np.zeros(shape)
    array.setflags(write=False)
    arrays[entry['name']] = array
    offset += num_bytes
  if offset != len(content):
    raise errors.ParseError(f'Trailing bytes in checkpoint `{path}`.')
  return Checkpoint(header['kind'], arrays, header['metadata'])
