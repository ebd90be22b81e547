"""Exception types raised across the package."""


class LatentMeshError(Exception):
    """Base class for all package errors."""


class DimensionError(LatentMeshError, ValueError):
    """Operand shapes are incompatible."""


class RangeError(LatentMeshError, ValueError):
    """A size or index argument is outside its allowed range."""


class LengthError(LatentMeshError, ValueError):
    """An axis has a length the transform cannot handle (e.g. odd length for Haar)."""


class ConfigurationError(LatentMeshError, ValueError):
    pass


class TopologyError(LatentMeshError, ValueError):
    """Face indices reference vertices that do not exist."""


class DegeneracyError(LatentMeshError, ValueError):
    """Input geometry is rank deficient for the requested alignment."""


class ValidationError(LatentMeshError, ValueError):
    pass


class BranchError(LatentMeshError, RuntimeError):
    """A branch of the dual-lane executor failed."""

    def __init__(self, branch, cause):
        super().__init__(f"{branch} branch failed: {cause!r}")
        self.branch = branch
        self.cause = cause


class AssetError(LatentMeshError, OSError):
    """A file on disk is missing, unreadable, or malformed."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason
