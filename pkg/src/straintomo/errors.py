"""Exception types raised across the package.

All inherit from ``ValueError`` or ``RuntimeError`` so callers that only
care about the broad category can catch those.
"""


class DegenerateLatticeError(ValueError):
    """Lattice basis does not span 3-space."""


class ResourceLimitError(RuntimeError):
    """A requested enumeration would exceed a configured size limit."""


class SingularityError(ValueError):
    """Field evaluated on a singular set (e.g. a dislocation core)."""


class PreconditionError(ValueError):
    """A modelling assumption required by an operation is violated."""


class OutsideSphereError(ValueError):
    """Detector coordinate lies outside the Ewald sphere."""


class EmptyDiskError(ValueError):
    """A detection window holds no intensity."""


class NoDiskError(ValueError):
    """Registration loss surface is flat; no disk to register."""


class RankDeficiencyError(ValueError):
    """Reference peaks do not span the detector plane."""


class NoSupportError(ValueError):
    """A beam column does not intersect the supported region."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(RuntimeError):
    """A numerical stage failed (non-finite values, divergence)."""
