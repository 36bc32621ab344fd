"""Excess risk (exact and Monte-Carlo), rate exponents and log-log rate fits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dist.base import DistributionSpec
from .errors import DomainError
from .learner import CandidateLabelMap, CellwiseClassifier

DEFAULT_MC_POINTS = 100_000


@dataclass
class RiskEstimate:
    value: float
    method: str
    mc_points: int | None = None
    standard_error: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual_se: float
    points: list[tuple[float, float]]
    dropped: list[tuple[float, float]] = field(default_factory=list)

    @property
    def exponent(self) -> float:
        return -self.slope

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _as_classifier(h) -> CellwiseClassifier | None:
    if isinstance(h, CandidateLabelMap):
        return h.classifier()
    if isinstance(h, CellwiseClassifier):
        return h
    return None


def excess_risk_mc(classifier, spec: DistributionSpec, M: int = DEFAULT_MC_POINTS,
                   rng: np.random.Generator | None = None) -> RiskEstimate:
    """Average of ``eta_(1)(X) - eta_h(X)(X)`` over ``M`` draws from ``P_X``."""
    if M < 1:
        raise DomainError("M must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    X = spec.sample_x(M, rng)
    eta = spec.eta(X)
    clf = _as_classifier(classifier)
    labels = np.asarray(clf.predict(X) if clf is not None else classifier(X), dtype=np.int64)
    gap = eta.max(axis=1) - eta[np.arange(M), labels]
    se = float(gap.std(ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    return RiskEstimate(float(gap.mean()), "monte-carlo", M, se)


def cell_contributions(classifier, spec: DistributionSpec) -> np.ndarray:
    """Excess risk carried by each cell of the classifier's partition (raises if unsupported)."""
    clf = _as_classifier(classifier)
    if clf is None:
        raise DomainError("exact risk needs a cellwise-constant classifier")
    if clf.dim != spec.dim:
        raise DomainError("classifier and spec dimensions differ")
    table = spec.cell_excess(clf.level)
    return table[np.arange(table.shape[0]), clf.labels]


def excess_risk_exact(classifier, spec: DistributionSpec) -> RiskEstimate:
    value = float(cell_contributions(classifier, spec).sum())
    return RiskEstimate(max(value, 0.0), "exact")


def theoretical_exponents(alpha: float, beta: float, beta_prime: float, d: int) -> dict[str, float]:
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    if beta < 0 or beta_prime < 0 or d < 1:
        raise DomainError("need beta, beta' >= 0 and d >= 1")
    if alpha * beta_prime > d:
        raise DomainError("need alpha * beta' <= d")
    a = alpha
    return {
        "passive_strong_density": a * (beta + 1) / (2 * a + d),
        "active_sharp": a * (beta_prime + 1) / (2 * a + d - a * beta_prime),
        "active_general": a * (beta + 1) / (2 * a + d),
        "passive_general": a * (beta + 1) / (2 * a + d + a * beta),
    }


def fit_rate(points) -> RateFit:
    """OLS of ``log(risk)`` on ``log(n)``; zero-risk points are set aside in ``dropped``."""
    pts = [(float(n), float(r)) for n, r in points]
    if any(n <= 0 or r < 0 for n, r in pts):
        raise DomainError("n must be positive and risks nonnegative")
    used = [p for p in pts if p[1] > 0]
    dropped = [p for p in pts if p[1] == 0]
    if len(used) < 3 or len({n for n, _ in used}) < 2:
        raise DomainError("need at least 3 positive-risk points at distinct n")
    x = np.log([n for n, _ in used])
    y = np.log([r for _, r in used])
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ np.array([slope, intercept])
    dof = len(used) - 2
    rse = float(math.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
    return RateFit(float(slope), float(intercept), rse, used, dropped)
