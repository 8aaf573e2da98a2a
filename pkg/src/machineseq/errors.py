"""Exception types shared across the package."""


class MachineSeqError(Exception):
    """Base class for all package errors."""


class GeometryError(MachineSeqError):
    """Invalid geometric construction (overlapping footprints, bad dims)."""


class TopologyError(MachineSeqError):
    """Mesh is not closed/manifold or has inconsistent winding."""


class StlParseError(MachineSeqError):
    """Malformed STL stream.  Carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(MachineSeqError):
    """Invalid run/grid/model configuration."""


class ShapeError(MachineSeqError):
    """Tensor shape mismatch; names the primitive and both shapes."""


class ContractError(MachineSeqError):
    """A documented precondition was violated by the caller."""


class TrainingError(MachineSeqError):
    """Optimization failure (e.g. non-finite loss); names epoch and step."""
