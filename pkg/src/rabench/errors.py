"""Exception types shared across the workbench.

ConfigError maps to CLI exit code 2, DataError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, preconditions, or incompatible inputs."""


class DataError(RuntimeError):
    """Corrupt or inconsistent data encountered at runtime (bad files, NaNs)."""
