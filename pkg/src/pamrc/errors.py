"""Exception taxonomy, mirrored by the CLI exit codes."""


class ConfigError(ValueError):
    """Invalid parameters or preconditions (CLI exit code 2)."""


class BudgetError(RuntimeError):
    """A state-space or size budget was exceeded (CLI exit code 3)."""

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class StabilityError(ConfigError):
    """Explicit time-stepping would be unstable; carries a suggested dt."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class InvariantError(AssertionError):
    """A runtime invariant check failed (CLI exit code 4)."""
