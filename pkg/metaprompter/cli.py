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

r"""Command line entry point.

Usage:

  metaprompter <subcommand> [--config=<path>] [--run_dir=<dir>] \
      [--section.key=value ...]

Subcommands: gen-corpus, pretrain, meta-train, meta-test, sweep, analyze,
compare-verbalizers. Any `--section.key=value` flag (and `--name`, `--seeds`,
`--num_workers`) overrides the config, e.g. `--pool.k=16 --seeds=0,1`.

Exit status is 0 on success, 1 on a user error (bad config, flag or input
file) and 2 on a numeric failure.
"""

import sys
from typing import Dict, List, NamedTuple, Optional, Sequence

from absl import app
from absl import flags
from absl import logging
from metaprompter import configs
from metaprompter import errors
from metaprompter import experiments

FLAGS = flags.FLAGS

flags.DEFINE_string('config', None, 'Config file, JSON or `key = value` lines.')
flags.DEFINE_string(
    'run_dir', None,
    f'Run directory; defaults to ${experiments.RUNS_ENV}/<name>.')

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_NUMERIC_ERROR = 2

_TOP_LEVEL_KEYS = ('name', 'seeds', 'num_workers')


class Arguments(NamedTuple):
  command: str
  overrides: Dict[str, str]


def split_overrides(argv: Sequence[str]):
  """Separates `--section.key=value` overrides from the other arguments.

  Returns:
    (remaining arguments, overrides in command line order).

  Raises:
    ConfigError: An override has no value.
  """
  remaining = []
  overrides = {}
  for arg in argv:
    key = arg[2:].split('=', 1)[0] if arg.startswith('--') else ''
    if '.' in key or key in _TOP_LEVEL_KEYS:
      if '=' not in arg:
        raise errors.ConfigError(f'Override `{arg}` needs a value.')
      overrides[key] = arg.split('=', 1)[1]
    else:
      remaining.append(arg)
  return remaining, overrides


def parse_flags(argv: List[str]) -> Arguments:
  """Parses absl flags, the subcommand and the overrides; exits on misuse."""
  try:
    remaining, overrides = split_overrides(argv)
    positional = FLAGS(remaining)
  except (flags.Error, errors.ConfigError) as e:
    sys.stderr.write(f'{e}\n')
    sys.exit(EXIT_USER_ERROR)
  if len(positional) != 2 or positional[1] not in experiments.COMMANDS:
    sys.stderr.write(
        f'Expected one subcommand out of {sorted(experiments.COMMANDS)}, got '
        f'{positional[1:]}.\n')
    sys.exit(EXIT_USER_ERROR)
  return Arguments(positional[1], overrides)


def execute(command: str,
            config_path: Optional[str] = None,
            run_dir: Optional[str] = None,
            overrides: Optional[Dict[str, str]] = None) -> int:
  """Runs one subcommand and maps failures to exit codes."""
  try:
    if command not in experiments.COMMANDS:
      raise errors.ConfigError(f'Unknown subcommand `{command}`.')
    config = (configs.load_config(config_path)
              if config_path else configs.RunConfig())
    config = configs.apply_overrides(config, overrides or {})
    experiments.COMMANDS[command](experiments.Run(config, run_dir))
  except errors.NumericError as e:
    logging.error('Numeric failure in `%s`: %s', command, e)
    return EXIT_NUMERIC_ERROR
  except (ValueError, FileNotFoundError) as e:
    logging.error('`%s` failed: %s', command, e)
    return EXIT_USER_ERROR
  return EXIT_OK


def main(args: Arguments) -> int:
  return execute(args.command, FLAGS.config, FLAGS.run_dir, args.overrides)


def run():
  app.run(main, flags_parser=parse_flags)


if __name__ == '__main__':
  run()
