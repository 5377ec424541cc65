"""Exception hierarchy shared by the pipeline stages.

The CLI maps these onto exit codes, so every stage raises one of these
rather than a bare ``ValueError``.
"""


class StrakeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(StrakeError):
    """Invalid run specification or command-line input.

    ``path`` is the dotted key path of the offending setting, if known.
    """

    def __init__(self, message: str = "", path: str | None = None):
        super().__init__(message)
        self.path = path


class GeometryError(StrakeError):
    """A geometric construction failed (offset collapse, degenerate samples)."""


class ParameterRangeError(GeometryError, ValueError):
    """A curve parameter lies outside the curve's range."""


class PartitionError(GeometryError):
    """Block decomposition could not be built or is inconsistent."""


class SizingError(StrakeError, ValueError):
    """Requested element size is incompatible with the block geometry."""


class ConformalityError(StrakeError):
    """Mesh edges or shared-side discretizations do not match."""


class RelaxationError(StrakeError):
    """Edge-node relaxation found a folded (non-monotone) parameter sequence."""


class SplitError(StrakeError):
    """Isoparametric splitting would fold an element."""


class ExtractionError(StrakeError):
    """Skin extraction found an open boundary chain."""


class MergeError(StrakeError):
    """Far-field and near-field meshes do not match on the skin."""


class ResourceError(StrakeError):
    """A refinement loop exceeded its node budget."""


class ExportError(StrakeError):
    """Mesh cannot be expressed in the requested file format."""


class MeshParseError(StrakeError):
    """Malformed mesh file."""


class ValidationFailure(StrakeError):
    """The mesh contains invalid (folded) elements."""
