"""Exception types raised across the package."""


class SgeError(Exception):
    """Base class for every error raised by this package."""


class IndivisibleChannels(SgeError, ValueError):
    def __init__(self, channels, groups):
        self.channels = channels
        self.groups = groups
        super().__init__(f"channel count {channels} is not divisible by group count {groups}")


class NonFiniteInput(SgeError, ValueError):
    pass


class InvalidShape(SgeError, ValueError):
    pass


class ShapeMismatch(SgeError, ValueError):
    pass


class StaleCache(SgeError, ValueError):
    pass


class ShapeIncompatible(SgeError, ValueError):
    """Two consecutive layers (or a model and its data) disagree on shape."""


class DivergedLoss(SgeError, ArithmeticError):
    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")


class LayerNotFound(SgeError, LookupError):
    pass


class BadBinCount(SgeError, ValueError):
    pass


class OutOfRange(SgeError, ValueError):
    pass


class FormatError(SgeError, ValueError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BadMagic(FormatError):
    pass


class BadVersion(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class TrailingBytes(FormatError):
    pass
