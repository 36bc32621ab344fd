"""Label-elimination active learning for multiclass classification under margin conditions."""

from .budget import BudgetMeter
from .errors import BudgetError, ConfigError, DomainError, UnsupportedSpecError

__version__ = "0.1.0"

__all__ = ["BudgetError", "BudgetMeter", "ConfigError", "DomainError", "UnsupportedSpecError"]
