"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ToolkitError):
    """Bad preset, flag, config key, or config value."""


class SchemaError(ToolkitError):
    """Manifest, label, or shape data that does not match its schema."""


class FormatError(ToolkitError):
    """Malformed binary feature file."""


class DegenerateDataError(ToolkitError):
    """Empty splits, all-masked batches, zero total weight, and similar."""


class DivergedError(ToolkitError):
    """Training produced a non-finite loss."""


class CheckpointError(ToolkitError):
    """Corrupt checkpoint or configuration fingerprint mismatch."""
