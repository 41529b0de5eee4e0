"""Exception types raised across the package.

Every error derives from :class:`LsomError`, which is itself a ``ValueError``
so callers that only care about bad input can catch the builtin.
"""


class LsomError(ValueError):
    pass


class DimensionMismatchError(LsomError):
    pass


class DegenerateSideError(LsomError):
    pass


class EmptySampleError(LsomError):
    pass


class CoordinateRangeError(LsomError, IndexError):
    pass


class GeometryError(LsomError):
    """A window geometry that does not tile the lattice, or a broken layer chain."""


class LabelRangeError(LsomError):
    pass


class FormatError(LsomError):
    """Malformed binary input: bad magic, truncated or corrupt payload."""


class VersionError(FormatError):
    pass


class CountMismatchError(LsomError):
    pass
