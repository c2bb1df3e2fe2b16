"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or unknown configuration value."""


class DataError(Exception):
    """Broken or missing input data (datasets, checkpoints, meshes)."""


class NumericsError(Exception):
    """A numerical failure such as a non-finite loss."""
