class ConfigError(ValueError):
    """Invalid configuration values."""


class ShapeError(ValueError):
    """Array or instance shapes do not match what a model expects."""


class SolverError(RuntimeError):
    """A teacher solver hit a non-finite intermediate."""

    def __init__(self, message, iteration=None, instance_index=None):
        super().__init__(message)
        self.iteration = iteration
        self.instance_index = instance_index


class CapacityError(ValueError):
    """Brute-force enumeration would exceed its size guard."""


class ExportError(RuntimeError):
    """Nothing to export."""
