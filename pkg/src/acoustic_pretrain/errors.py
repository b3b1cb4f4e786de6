from __future__ import annotations

class AcpError(Exception):
  """
  Base class for all errors raised by the pipeline.

  `exit_code` is what the CLI returns when the error reaches it.
  """

  exit_code: int = 1

class ConfigError(AcpError):
  exit_code = 1

class ContractError(AcpError, ValueError):
  """
  A caller broke an operation's precondition.
  """

  exit_code = 1

class NetSpecError(ConfigError):
  pass

class DataError(AcpError):
  exit_code = 2

class AudioFormatError(DataError):
  pass

class UnsupportedAudioError(DataError):
  pass

class TooShortError(DataError):
  pass

class SampleRateMismatchError(DataError):
  pass

class ManifestError(DataError):
  pass

class InsufficientUtterancesError(DataError):
  def __init__(self, speaker_id: str, count: int) -> None:
    super().__init__(
      f"speaker '{speaker_id}' has {count} utterance(s); at least 2 are needed to build pairs"
    )
    self.speaker_id = speaker_id

class CorpusWriteError(DataError):
  pass

class CheckpointFormatError(DataError):
  pass

class UnsupportedVersionError(CheckpointFormatError):
  pass

class CheckpointCorruptError(DataError):
  pass

class IncompatibleCheckpointError(DataError):
  pass

class UndefinedMetricError(DataError):
  pass

class NumericError(AcpError):
  exit_code = 3

class NonFiniteActivationError(NumericError):
  def __init__(self, layer: str) -> None:
    super().__init__(f"non-finite activation in layer '{layer}'")
    self.layer = layer

class DegenerateEmbeddingError(NumericError):
  pass
