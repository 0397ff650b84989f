"""Exception types shared across the package.

The CLI maps these onto distinct exit codes: configuration and input-file
problems exit 2, explicit size-cap refusals exit 3, and internal invariant
violations (which indicate a bug) exit 4.
"""


class EdgeShareError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(EdgeShareError):
    """Invalid configuration, malformed input file, or inconsistent arguments."""


class CapExceededError(EdgeShareError):
    """A deliberately refused computation (enumeration or search too large)."""


class InvariantError(EdgeShareError):
    """An internal consistency check failed; treat as a bug signal."""
