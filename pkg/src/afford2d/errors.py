"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs that break its contract."""


class ConfigError(ValueError):
    """A configuration file or override failed validation."""


class SimulationError(RuntimeError):
    """The simulator was driven into an invalid state (NaN action, stepping a done episode)."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated or inconsistent."""
