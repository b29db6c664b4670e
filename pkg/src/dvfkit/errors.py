"""Exception types shared across the toolkit."""


class OutOfBounds(ValueError):
    """A sample point lies outside the grid's physical bounding box."""


class EmptyDomain(ValueError):
    """A domain mask came out all-false."""


class EmptyField(ValueError):
    """A reduction was requested over a field with no valid samples."""


class GeometryMismatch(ValueError):
    """Two fields that must share a grid do not."""


class Uncontrollable(ValueError):
    """The controllability condition min_j Re(1/lambda_j) > 0 is violated."""


class InfeasibleControl(ValueError):
    """No feasible feedback-control parameter exists (or one was out of range)."""


class InvalidSpec(ValueError):
    """An analytic-field specification is ill-formed."""


class HeaderMismatch(ValueError):
    """A container header is malformed or inconsistent with its payload."""


class TruncatedPayload(ValueError):
    """A container payload is shorter than its header implies."""


class UnsupportedSampleType(ValueError):
    """A container declares a sample type this toolkit does not read."""


class IndexOutOfRange(IndexError):
    """A slice index is outside the volume."""
