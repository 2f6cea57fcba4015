"""Exception hierarchy shared across the pipeline.

Exit codes used by the CLI: 2 for configuration/input problems, 3 for a
missing upstream artifact, 4 for numeric divergence during training or
sampling.
"""


class CatdError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigurationError(CatdError):
    """A config value or combination of values is invalid."""

    exit_code = 2


class InputError(CatdError):
    """Runtime data handed to an operation violates its preconditions."""

    exit_code = 2


class UndefinedMetricError(InputError):
    """A metric is mathematically undefined for the given input."""


class CorruptContainerError(InputError):
    """A dataset/checkpoint container fails its integrity checks."""


class MissingPrerequisiteError(CatdError):
    """A required upstream artifact (dataset, checkpoint) is absent."""

    exit_code = 3


class DivergenceError(CatdError):
    """Non-finite values appeared during an iterative numeric process."""

    exit_code = 4


class TrainingDivergedError(DivergenceError):
    def __init__(self, message, step=None, recent_losses=None):
        super().__init__(message)
        self.step = step
        self.recent_losses = list(recent_losses or [])


class SamplingDivergedError(DivergenceError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
