"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numerical failures exit 4.
"""


class MqpoolError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MqpoolError):
    """Invalid configuration: bad hyperparameters, unknown keys, H not dividing K."""


class ShapeError(MqpoolError):
    """Array shapes do not match the declared contract."""


class ContractError(MqpoolError):
    """An operation was called outside its contract (e.g. non-scalar tape root)."""


class TensorFormatError(MqpoolError):
    """Malformed tensor file: bad magic or malformed header/dims."""


class TensorLengthError(MqpoolError):
    """Tensor file payload does not match the header (truncated or trailing bytes)."""


class MaskDomainError(MqpoolError):
    """Mask contains a value other than 0.0 or 1.0."""


class EmptySequenceError(MqpoolError):
    """A batch row has no valid frame to aggregate."""


class LabelError(MqpoolError):
    """A class label lies outside [0, C)."""


class SamplingError(MqpoolError):
    """A split or sampler cannot satisfy its per-class requirements."""


class DegenerateClassError(MqpoolError):
    """A class has zero items where at least one is required."""


class DegenerateInputError(MqpoolError):
    """Every input was excluded (e.g. all utterances had zero variance)."""


class DeterminismError(MqpoolError):
    """Repeated evaluation of a supposedly deterministic function disagreed."""


class CoverageError(MqpoolError):
    """Phoneme spans cover none of the frames under analysis."""


class UtteranceNotFoundError(MqpoolError):
    """Requested utterance id is absent from the attention dump."""
