"""Exception types raised across the package.

The CLI maps every ``FlowVADError`` to exit status 1; argparse handles usage
errors (exit 2) on its own.
"""


class FlowVADError(Exception):
    """Base class for all package errors."""


class InputError(FlowVADError, ValueError):
    """Malformed array arguments: wrong shape, empty input, bad range."""


class FlowFormatError(FlowVADError):
    """A ``.flo`` stream could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SpecError(FlowVADError, ValueError):
    """Invalid network architecture description."""


class ConfigError(FlowVADError, ValueError):
    """Invalid training, synthetic-scene, or run configuration."""


class DataError(FlowVADError):
    """Dataset tree is missing files, has gaps, or holds unreadable images."""


class CheckpointError(FlowVADError):
    """Checkpoint cannot be read or does not fit the requested network."""


class EvaluationError(FlowVADError):
    """Scores cannot be evaluated, e.g. labels of a single class."""
