"""Error types shared across the package."""


class ShapeError(ValueError):
    """An array argument has the wrong shape or dimensionality."""


class PrototypeMismatchError(ValueError):
    """Parameter vectors from different prototypes were mixed."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""
