"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DivergenceError -> 3,
FormatError and OS-level I/O failures -> 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class ConfigError(ToolkitError):
    """Invalid configuration, preset name, or command arguments."""


class FormatError(ToolkitError):
    """A serialized artifact violates its on-disk format."""


class ChecksumError(FormatError):
    """File is truncated or its trailing CRC32 does not match."""


class VersionError(FormatError):
    """File carries an unsupported format version byte."""


class FactorizationError(ToolkitError):
    """Covariance factorization failed even after jitter escalation."""


class DivergenceError(ToolkitError):
    """A numerical computation produced non-finite or blown-up values."""


class DegenerateDataError(ToolkitError):
    """Input data has no variation where variation is required."""


class CheckpointMismatchError(ToolkitError):
    """Checkpoint contents are incompatible with the requested model."""
