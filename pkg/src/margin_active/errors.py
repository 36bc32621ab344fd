"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class BudgetError(RuntimeError):
    """A label query was attempted after the budget was exhausted."""


class UnsupportedSpecError(TypeError):
    """The distribution does not expose the exact quantities an operation needs."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``path`` is the location of the offending field, e.g. ``learners/0/params/delta``.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
