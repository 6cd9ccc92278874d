"""Exception types raised across the package."""


class PlanesynthError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDepth(PlanesynthError):
    """A depth at or behind the camera plane was passed where z > 0 is required."""


class DegenerateHomography(PlanesynthError):
    """The plane-induced homography is singular (plane through the camera center)."""


class DimensionMismatch(PlanesynthError):
    """Array shapes are inconsistent with the operation's contract."""


class EmptyMask(PlanesynthError):
    """A reduction over a validity mask found no valid pixels."""


class InvalidRange(PlanesynthError):
    """A numeric range argument is empty or inverted."""


class BlockOutOfBounds(PlanesynthError):
    """A sample block does not fit inside the feature grid."""


class TapeReuse(PlanesynthError):
    """backward() was called more than once on the same tape."""


class NonFiniteGradient(PlanesynthError):
    """A backward sweep produced a NaN or infinite gradient."""


class NonFiniteUpdate(PlanesynthError):
    """An optimizer step produced a NaN or infinite parameter value."""


class Diverged(PlanesynthError):
    """The fit loss became non-finite."""


class CameraInsideGeometry(PlanesynthError):
    """The camera is not strictly in front of every scene rectangle."""
