class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class ShapeError(ValueError):
    """Array shapes do not agree."""


class CompatibilityError(RuntimeError):
    """A checkpoint does not match the schedule or noise it is used with."""
