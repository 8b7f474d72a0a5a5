"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat
and the categories coarse: input/parse problems, shape/sizing problems,
and numeric failures.
"""


class FlowcastError(Exception):
    """Base class for all errors raised by this package."""


class PacketLogError(FlowcastError):
    """Malformed packet log record.

    ``line_number`` is 1-based and refers to the physical line in the
    source stream.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ShapeError(FlowcastError):
    """Operand dimensions do not match; message names the operand."""


class SizingError(FlowcastError):
    """Input too small for the requested operation (window or split)."""


class NumericError(FlowcastError):
    """Non-finite value encountered where finite arithmetic is required."""
