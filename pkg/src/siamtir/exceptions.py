"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateDenominatorError(ArithmeticError):
    """A complex or real denominator is numerically zero."""


class NonScalarLossError(ValueError):
    """``backward`` was called on a tensor with more than one element."""


class InputTooSmallError(ShapeError):
    """An image or feature map is smaller than the network footprint."""


class DegenerateMapError(ValueError):
    """A similarity map cannot be normalised into a distribution."""


class SupportError(ValueError):
    """KL divergence is infinite because the reference lacks support."""


class InsufficientFramesError(ValueError):
    """A sequence has too few usable frames for the request."""


class SequenceFormatError(ValueError):
    """A sequence directory is missing files or holds malformed data."""


class TrackerStateError(RuntimeError):
    """The tracker was used before ``init``."""


class NoValidFramesError(ValueError):
    """An evaluation metric has no frames to average over."""


class CheckpointError(ValueError):
    """Checkpoint files exist but cannot be decoded."""
