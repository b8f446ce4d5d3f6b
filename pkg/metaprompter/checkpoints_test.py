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

"""Tests for checkpoints."""

import collections
import os

from metaprompter import checkpoints
from metaprompter import errors
from metaprompter import utils
import numpy as np
import tensorflow as tf


def _arrays():
  rng = np.random.default_rng(0)
  return collections.OrderedDict([
      ('values', rng.normal(size=(2, 3, 4))),
      ('keys', rng.normal(size=(2, 4))),
      ('empty', np.zeros((0, 4))),
      ('scalar', np.array(np.pi)),
  ])


class CheckpointsTest(tf.test.TestCase):

  def setUp(self):
    super().setUp()
    self._path = os.path.join(self.get_temp_dir(), 'nested', 'a.ckpt')

  def test_bitwise_round_trip(self):
    arrays = _arrays()
    checkpoints.save_checkpoint(self._path, 'pool', arrays, {'iteration': 3})
    ckpt = checkpoints.load_checkpoint(self._path, 'pool')
    self.assertEqual(ckpt.kind, 'pool')
    self.assertEqual(ckpt.metadata, {'iteration': 3})
    self.assertEqual(list(ckpt.arrays), list(arrays))
    for name, array in arrays.items():
      self.assertEqual(ckpt.arrays[name].shape, array.shape)
      self.assertEqual(ckpt.arrays[name].tobytes(), array.tobytes())
      self.assertFalse(ckpt.arrays[name].flags.writeable)

  def test_bytes_are_a_function_of_content(self):
    other = os.path.join(self.get_temp_dir(), 'b.ckpt')
    checkpoints.save_checkpoint(self._path, 'pool', _arrays(), {'b': 1, 'a': 2})
    checkpoints.save_checkpoint(other, 'pool', _arrays(), {'a': 2, 'b': 1})
    self.assertEqual(utils.content_hash(self._path), utils.content_hash(other))

  def test_missing_file(self):
    with self.assertRaisesRegex(FileNotFoundError, 'missing.ckpt'):
      checkpoints.load_checkpoint(
          os.path.join(self.get_temp_dir(), 'missing.ckpt'))

  def test_wrong_kind(self):
    checkpoints.save_checkpoint(self._path, 'encoder', _arrays())
    with self.assertRaises(errors.ParseError):
      checkpoints.load_checkpoint(self._path, 'prompt_pool')

  def test_corrupt_files(self):
    checkpoints.save_checkpoint(self._path, 'pool', _arrays())
    with tf.io.gfile.GFile(self._path, 'rb') as f:
      content = f.read()
    for bad in (b'NOTACKPT' + content[8:], content[:-8], content + b'\0',
                content[:10]):
      with tf.io.gfile.GFile(self._path, 'wb') as f:
        f.write(bad)
      with self.assertRaises(errors.ParseError):
        checkpoints.load_checkpoint(self._path)


if __name__ == '__main__':
  tf.test.main()
