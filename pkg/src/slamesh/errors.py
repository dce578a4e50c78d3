"""Exception hierarchy shared by all slamesh modules."""


class SlameshError(Exception):
    """Base class for every error raised by the library."""

    category = "error"


class IoError(SlameshError, OSError):
    category = "io"


class FormatError(SlameshError, ValueError):
    category = "format"


class InvalidParam(SlameshError, ValueError):
    category = "param"


class ConfigError(SlameshError, ValueError):
    category = "config"


class InvalidMesh(SlameshError, ValueError):
    category = "mesh"


class SingularSystem(SlameshError, ArithmeticError):
    category = "numeric"


class TooFewPoints(SlameshError, ValueError):
    category = "data"


class DegenerateFace(SlameshError, ValueError):
    category = "mesh"


class NoValidFace(SlameshError, LookupError):
    category = "mesh"


class GridMismatch(SlameshError, ValueError):
    category = "map"


class NoOverlap(SlameshError):
    """Registration found no scan/map correspondences."""

    category = "registration"


class DegenerateProblem(SlameshError, ArithmeticError):
    """The normal matrix is rank deficient: the scene does not constrain all six DOF."""

    category = "registration"


class TrajectoryMismatch(SlameshError, ValueError):
    category = "eval"


class EmptyInput(SlameshError, ValueError):
    category = "eval"
