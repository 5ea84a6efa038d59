"""Exception types shared across the package."""


class ModelDomainError(ValueError):
    """State or parameters left the validity envelope of the vehicle model."""


class ConfigError(ValueError):
    """Scenario or solver configuration is malformed; message names the field."""


class SolverError(RuntimeError):
    """The optimizer could not produce a usable iterate."""
