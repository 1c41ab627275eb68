"""Exception hierarchy shared by the solvers, kernels and file loaders."""


class TriangulationError(Exception):
    """Base class for every geometric failure raised by this package."""


class CheiralityError(TriangulationError):
    """A point lies on or behind the image plane of a camera."""


class RankDeficient(TriangulationError):
    """A linear system does not determine a unique solution."""


class DegenerateParallax(RankDeficient):
    """All lines of sight of a track are (numerically) parallel.

    For two or more views the stacked triangulation systems lose rank exactly
    when the rays are parallel, so this is the rank failure triangulators raise.
    """


class AllSourcesZero(TriangulationError):
    """Every enabled covariance is zero, so the residual weights are undefined."""


class MissingScale(TriangulationError):
    """A scale-dependent Jacobian was requested without a point or range hint."""


class TwoViewOnly(TriangulationError):
    """The Hartley-Sturm solver was handed a track that is not two views long."""


class SchemaError(ValueError):
    """A scene or configuration document violates the file schema."""
