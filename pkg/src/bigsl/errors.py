"""Exception types raised across the package."""


class BigslError(Exception):
    """Base class for every error raised by :mod:`bigsl`."""


class MalformedRecord(BigslError, ValueError):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyAfterFilter(BigslError, ValueError):
    pass


class SequenceTooShort(BigslError, ValueError):
    pass


class ShapeMismatch(BigslError, ValueError):
    def __init__(self, op, left, right):
        super().__init__(f"{op}: incompatible shapes {tuple(left)} and {tuple(right)}")
        self.left = tuple(left)
        self.right = tuple(right)


class NonScalarLoss(BigslError, ValueError):
    pass


class ZeroVectorRow(BigslError, ValueError):
    pass


class TooFewPoints(BigslError, ValueError):
    pass


class NotANeighbor(BigslError, KeyError):
    pass


class ViewCountTooSmall(BigslError, ValueError):
    pass


class EmptySequence(BigslError, ValueError):
    pass


class InvalidTarget(BigslError, IndexError):
    pass


class NonFiniteLoss(BigslError, FloatingPointError):
    def __init__(self, batch, value):
        super().__init__(f"non-finite loss {value!r} at batch {batch}")
        self.batch = batch
        self.value = value


class GraphInvariantError(BigslError, AssertionError):
    pass


class ConfigError(BigslError, ValueError):
    pass


class FormatError(BigslError, ValueError):
    pass
