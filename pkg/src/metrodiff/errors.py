"""Exception types shared across the package."""


class NotSpdError(Exception):
    """Matrix handed to a factorization is not symmetric positive definite."""


class OutOfDomainError(Exception):
    """State lies outside the model's configuration domain."""


class ZeroSeparationError(Exception):
    """Pair mobility requested for two coincident points."""


class BudgetExceededError(Exception):
    """An iteration budget ran out before the stopping event occurred."""


class ConfigError(Exception):
    """Experiment configuration failed validation.

    ``key`` names the offending configuration field so the CLI can report it.
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.message = message
