from __future__ import annotations

from dataclasses import dataclass

from .errors import BudgetError


@dataclass
class BudgetMeter:
    """Counts label queries against a hard limit."""

    limit: float
    used: int = 0

    def charge(self, k: int = 1) -> None:
        if k < 0:
            raise ValueError("cannot charge a negative number of queries")
        if self.used + k > self.limit:
            raise BudgetError(f"budget exhausted: {self.used} used, {k} requested, limit {self.limit}")
        self.used += k

    @property
    def remaining(self) -> float:
        return self.limit - self.used
