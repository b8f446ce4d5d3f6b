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

"""Exceptions raised across the package.

User errors (bad configs, malformed files, infeasible episodes) derive from
`ValueError`; numerical failures derive from `ArithmeticError`. The command
line maps the former to exit status 1 and the latter to exit status 2.
"""

from typing import Optional


class MetaPrompterError(Exception):
  """Base class for all errors raised by this package."""


class ConfigError(MetaPrompterError, ValueError):
  """Invalid or inconsistent configuration."""


class DimensionError(MetaPrompterError, ValueError):
  """Tensor shapes do not agree with an operation's contract."""


class ContractError(MetaPrompterError, ValueError):
  """An API was called outside of its documented contract."""


class ParseError(MetaPrompterError, ValueError):
  """A file could not be parsed."""

  def __init__(self, message: str, line: Optional[int] = None):
    if line is not None:
      message = f'Line {line}: {message}'
    super().__init__(message)
    self.line = line


class ValidationError(MetaPrompterError, ValueError):
  """Parsed data violates a corpus or vocabulary invariant."""


class SamplingError(MetaPrompterError, ValueError):
  """An episode cannot be sampled from the requested split."""


class MissingClassError(SamplingError):
  """A label of the episode has no support samples."""


class NumericError(MetaPrompterError, ArithmeticError):
  """A value became NaN or infinite."""


class DegenerateVectorError(NumericError):
  """A vector has (near-)zero norm where a direction is required."""
