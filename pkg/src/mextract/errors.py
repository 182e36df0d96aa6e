class BudgetError(RuntimeError):
    """A query would exceed the budget (local ledger or remote cap)."""


class TransportError(RuntimeError):
    """The remote oracle could not be reached."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""
