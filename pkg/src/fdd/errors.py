"""Exception hierarchy shared by every module.

CLI exit codes are attached to the classes so the entry point can map any
failure to a status without a lookup table.
"""


class FddError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class InputError(FddError, ValueError):
    """Bad user input: wrong shapes, out-of-range parameters, missing data."""

    exit_code = 2


class DimensionError(InputError):
    """Tensor shapes or feature dimensions do not line up."""


class ConfigError(InputError):
    """Invalid model, corpus, or experiment configuration."""


class ChecksumError(InputError):
    """A binary file failed its magic-byte or CRC32 check."""


class NumericalError(FddError, ArithmeticError):
    """NaN/Inf or an out-of-tolerance residual in a numeric routine."""

    exit_code = 3


class TrainingAborted(NumericalError):
    """Training hit a non-finite loss.

    ``model`` holds the model restored to its last good (best) state.
    """

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model
