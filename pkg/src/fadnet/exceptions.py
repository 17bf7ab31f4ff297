"""Exception types raised across the package."""


class FADNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FADNetError, ValueError):
    """Operand extents do not conform."""


class AxisError(FADNetError, ValueError):
    """A reduction referenced an axis outside the tensor rank."""


class ContractError(FADNetError, ValueError):
    """A documented precondition was violated."""


class NumericalProbeError(FADNetError, ArithmeticError):
    """A finite-difference probe produced a non-finite value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(FADNetError, ValueError):
    """Invalid network, schedule or command configuration."""


class FormatError(FADNetError, ValueError):
    """Malformed or unsupported file payload."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateError(FADNetError, ValueError):
    """A metric or loss has no valid pixels to work with."""


class DivergenceError(FADNetError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, sample_index=None):
        super().__init__(message)
        self.epoch = epoch
        self.sample_index = sample_index
