"""Exception hierarchy shared across the toolkit.

Everything user-facing derives from DomainError so the CLI can map any
domain failure to a single exit code.
"""


class DomainError(Exception):
    """Base class for all domain-level failures."""


class SchemaError(DomainError):
    """Malformed file content: bad JSON, missing fields, wrong version."""


class InvariantError(DomainError):
    """A domain type was constructed with invariant-violating fields."""


class EmptyAfterFilter(DomainError):
    """Point filtering removed every point."""


class InsufficientPoints(DomainError):
    """Too few points for the requested geometric fit."""


class DegenerateCloud(DomainError):
    """Point cloud has no spatial extent (all points identical)."""


class DegenerateCorrespondences(DomainError):
    """Rigid alignment needs >= 3 non-collinear source points."""


class GroundNotPlanar(DomainError):
    """Ground segment points do not form a plane."""


class NoValidParts(DomainError):
    """No segment yielded a frame-0 bounding box."""


class ExtentMismatch(DomainError):
    """Interpolation endpoints describe boxes of different size."""


class MissingKeyBox(DomainError):
    """A keyframe has an absent box; keyframes must be fully present."""


class UnknownLevel(DomainError):
    """Requested part-grouping level is not defined for the skeleton."""


class UnknownLabel(DomainError):
    """Action label is not part of the vocabulary."""


class FrameCountMismatch(DomainError):
    """Motion and box sequence disagree on the number of frames."""


class ShapeMismatch(DomainError):
    """Tensor shape does not match the model configuration."""


class EmptyDataset(DomainError):
    """Training requires a nonempty dataset."""
