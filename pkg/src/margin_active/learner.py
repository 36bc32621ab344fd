"""Label-elimination active learners, the passive plug-in baseline and NP labeling.

Labels are integers ``0 .. L-1``; candidate label sets are bitmasks (``L <= 16``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .budget import BudgetMeter
from .dist.base import DistributionSpec, Oracle
from .dyadic import DyadicPartition, expand_block, index_coords, refine_coords
from .errors import DomainError

MAX_LABELS = 16
MAX_META_ROUNDS = 1000

__all__ = [
    "BudgetMeter", "CandidateLabelMap", "CellwiseClassifier", "LearnerOutput", "NonAdaptiveTrace",
    "default_passive_level", "eliminate", "eliminate_masks", "estimate_eta", "make_learner",
    "meta_aggregate", "meta_schedule", "n_queries", "np_label", "np_label_counts",
    "passive_plugin", "rmin_upper_bound", "run_meta", "run_nonadaptive",
]


def _popcount(masks: np.ndarray) -> np.ndarray:
    m = masks.astype(np.int64)
    out = np.zeros_like(m)
    while m.any():
        out += m & 1
        m >>= 1
    return out


def _lowest_label(masks: np.ndarray) -> np.ndarray:
    m = masks.astype(np.int64)
    if np.any(m == 0):
        raise DomainError("empty candidate set")
    return np.log2(m & -m).astype(np.int64)


def mask_of(labels: Iterable[int]) -> int:
    out = 0
    for y in labels:
        out |= 1 << int(y)
    return out


def labels_of(mask: int) -> set[int]:
    return {y for y in range(MAX_LABELS) if mask >> y & 1}


@dataclass
class CellwiseClassifier:
    """A classifier constant on every cell of one dyadic level."""

    level: int
    dim: int
    labels: np.ndarray

    def predict(self, X) -> np.ndarray:
        return self.labels[DyadicPartition(self.level, self.dim).locate(np.asarray(X, dtype=float))]

    __call__ = predict


@dataclass
class CandidateLabelMap:
    """Surviving label set per cell of the level-``level`` partition, as bitmasks."""

    level: int
    dim: int
    n_labels: int
    masks: np.ndarray

    @classmethod
    def full(cls, level: int, dim: int, n_labels: int) -> "CandidateLabelMap":
        return cls(level, dim, n_labels,
                   np.full(1 << (level * dim), (1 << n_labels) - 1, dtype=np.uint16))

    @property
    def r0(self) -> float:
        return 2.0 ** -self.level

    def label_set(self, index: int) -> set[int]:
        return labels_of(int(self.masks[index]))

    def set_sizes(self) -> np.ndarray:
        return _popcount(self.masks)

    def classifier(self) -> CellwiseClassifier:
        """``h(x) = min L_C`` for the cell ``C`` containing ``x``."""
        return CellwiseClassifier(self.level, self.dim, _lowest_label(self.masks))

    def predict(self, X) -> np.ndarray:
        return self.classifier().predict(X)

    def csv_rows(self) -> list[tuple[str, int]]:
        coords = index_coords(np.arange(self.masks.shape[0]), self.level, self.dim)
        return [(f"{self.level}:{','.join(map(str, c))}", int(m)) for c, m in zip(coords, self.masks)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "mask"])
        w.writerows(self.csv_rows())
        return buf.getvalue()


@dataclass
class NonAdaptiveTrace:
    r_min: float
    active_counts: list[int]
    query_counts: list[int]
    charged: list[int]
    label_map: CandidateLabelMap
    visits: list[dict] = field(default_factory=list)

    @property
    def queries_used(self) -> int:
        return int(sum(self.query_counts))

    @property
    def levels_run(self) -> int:
        return len(self.query_counts)

    def to_json(self) -> str:
        return json.dumps({
            "r_min": self.r_min,
            "active_counts": self.active_counts,
            "query_counts": self.query_counts,
            "charged": self.charged,
            "queries_used": self.queries_used,
            "output_level": self.label_map.level,
        })


def n_queries(r: float, alpha: float, lam: float, delta0: float, L: int, d: int) -> int:
    """Per-cell sample size at level ``r``: ``2 log(2L / (delta0 r^(d+1))) / (lam r^alpha)^2``, rounded up."""
    if r <= 0 or lam <= 0:
        raise DomainError("r and lam must be positive")
    if not 0 < delta0 < 1:
        raise DomainError("delta0 must lie in (0, 1)")
    return math.ceil(2.0 * math.log(2.0 * L / (delta0 * r ** (d + 1))) / (lam * r ** alpha) ** 2)


def estimate_eta(labels, L: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DomainError("cannot estimate from an empty sample")
    return np.bincount(labels, minlength=L)[:L] / labels.size


def eliminate_masks(masks: np.ndarray, eta_hat: np.ndarray, tau: float) -> np.ndarray:
    """Drop every label whose estimated gap to the top estimate is at least ``tau``."""
    gap = eta_hat.max(axis=1, keepdims=True) - eta_hat
    bad = (gap >= tau).astype(np.int64) << np.arange(eta_hat.shape[1])
    return (masks.astype(np.int64) & ~bad.sum(axis=1)).astype(masks.dtype)


def eliminate(candidates: set[int], eta_hat, tau: float) -> set[int]:
    if not candidates:
        raise DomainError("candidate set is empty")
    if tau <= 0:
        raise DomainError("tau must be positive")
    eta_hat = np.atleast_2d(np.asarray(eta_hat, dtype=float))
    out = eliminate_masks(np.array([mask_of(candidates)], dtype=np.int64), eta_hat, tau)
    return labels_of(int(out[0]))


def _level_of(r0: float) -> int:
    k = -math.log2(r0)
    if r0 <= 0 or r0 > 1 or abs(k - round(k)) > 1e-9:
        raise DomainError(f"r0 = {r0} is not dyadic")
    return int(round(k))


def run_nonadaptive(oracle: Oracle, n0: float, delta0: float, alpha: float, lam: float,
                    r0: float, rng: np.random.Generator | None = None,
                    record_visits: bool = False) -> NonAdaptiveTrace:
    """Top-down label elimination on dyadic partitions with a known smoothness.

    Starts at ``r = 1/2`` with every cell active and samples ``n_queries(r)``
    labels in each active cell while the running charge stays within ``n0``.
    Cells keeping at least two labels are refined; the others keep their
    label set.  Levels finer than ``r0`` are never visited.
    """
    if n0 < 1:
        raise DomainError("n0 must be at least 1")
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in (0, 1]")
    spec = oracle.spec
    rng = oracle.rng if rng is None else rng
    k0 = _level_of(r0)
    L, d = spec.n_labels, spec.dim
    if L > MAX_LABELS:
        raise DomainError(f"at most {MAX_LABELS} labels are supported")
    full = (1 << L) - 1

    k = 1
    active = DyadicPartition(1, d).coords()
    masks = np.full(active.shape[0], full, dtype=np.uint16)
    per_cell = n_queries(0.5, alpha, lam, delta0, L, d)
    charged = active.shape[0] * per_cell

    settled: list[tuple[int, np.ndarray, np.ndarray]] = []
    last = (0, np.zeros((1, d), dtype=np.int64), np.array([full], dtype=np.uint16))
    active_counts, query_counts, charges, visits = [], [], [], []

    while charged <= n0 and active.shape[0] > 0 and k <= k0:
        before = oracle.used
        counts, empty = oracle.query_cells(active, k, per_cell, rng)
        query_counts.append(oracle.used - before)
        active_counts.append(int(active.shape[0]))
        charges.append(int(charged))

        live = ~empty
        masks = masks.copy()
        masks[live] = eliminate_masks(masks[live], counts[live] / per_cell, 6.0 * lam * 2.0 ** (-k * alpha))
        if record_visits:
            visits.append({"level": k, "coords": active[live], "eta_hat": counts[live] / per_cell,
                           "masks": masks[live], "empty": active[empty]})

        keep = live & (_popcount(masks) >= 2)
        done = ~keep
        if done.any():
            settled.append((k, active[done], masks[done]))
        last = (k, active[keep], masks[keep])

        active = refine_coords(active[keep])
        masks = np.repeat(masks[keep], 1 << d)
        k += 1
        per_cell = n_queries(2.0 ** -k, alpha, lam, delta0, L, d)
        charged += active.shape[0] * per_cell

    if last[1].shape[0]:
        settled.append(last)
    label_map = CandidateLabelMap(k0, d, L, np.zeros(1 << (k0 * d), dtype=np.uint16))
    for level, coords, m in settled:
        label_map.masks[expand_block(coords, level, k0)] = m[:, None]
    return NonAdaptiveTrace(
        r_min=2.0 ** -(k - 1),
        active_counts=active_counts,
        query_counts=query_counts,
        charged=charges,
        label_map=label_map,
        visits=visits,
    )


def meta_schedule(n: float, d: int, max_rounds: int = MAX_META_ROUNDS):
    """Rounds, per-round budget and output level used by :func:`run_meta`."""
    if n < math.e ** 3:
        raise DomainError("the meta learner needs n >= e^3")
    rounds = min(math.floor(math.log(n)) ** 3, max_rounds)
    n0 = n / rounds
    k0 = max(0, math.ceil(math.log2(n0) / d - 1e-12)) if n0 > 1 else 0
    return rounds, n0, k0


def meta_aggregate(current: np.ndarray, incoming: np.ndarray) -> tuple[np.ndarray, bool]:
    """Intersect candidate sets unless that would empty any cell."""
    joint = current & incoming
    if np.any(joint == 0):
        return current, False
    return joint, True


def run_meta(oracle: Oracle, n: float, delta: float, lam: float,
             rng: np.random.Generator | None = None, max_rounds: int = MAX_META_ROUNDS,
             history: list | None = None) -> CandidateLabelMap:
    """Smoothness-adaptive learner: one elimination run per smoothness guess, sets intersected.

    The number of rounds is ``floor(ln n)^3`` capped at ``max_rounds``; the
    budget and confidence are split evenly across rounds and round ``i`` uses
    smoothness ``i / rounds``.
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    spec = oracle.spec
    rounds, n0, k0 = meta_schedule(n, spec.dim, max_rounds)
    delta0 = delta / rounds
    result = CandidateLabelMap.full(k0, spec.dim, spec.n_labels)
    full = (1 << spec.n_labels) - 1
    for i in range(1, rounds + 1):
        if n0 < 1:
            break
        trace = run_nonadaptive(oracle, n0, delta0, i / rounds, lam, 2.0 ** -k0, rng)
        incoming = trace.label_map.masks
        if trace.levels_run == 0 or np.all(incoming == full):
            accepted = True
        else:
            result.masks, accepted = meta_aggregate(result.masks, incoming)
        if history is not None:
            history.append({"round": i, "alpha": i / rounds, "accepted": accepted,
                            "queries": trace.queries_used, "r_min": trace.r_min})
    return result


def default_passive_level(n: int, alpha: float, d: int) -> int:
    return max(0, int(round(math.log2(n) / (2 * alpha + d))))


def passive_plugin(X, Y, level: int, L: int) -> CandidateLabelMap:
    """Histogram plug-in: majority label per cell (ties to the smaller label, empty cells to 0)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DomainError("the sample is empty")
    d = X.shape[1]
    idx = DyadicPartition(level, d).locate(X)
    n_cells = 1 << (level * d)
    counts = np.bincount(idx * L + Y, minlength=n_cells * L).reshape(n_cells, L)
    labels = counts.argmax(axis=1)
    return CandidateLabelMap(level, d, L, (1 << labels).astype(np.uint16))


def np_label_counts(ones, total, q: float) -> np.ndarray:
    """Likelihood-ratio label of a bumped cell from its count of ones; ties go to 1."""
    if not 0 < q < 0.5:
        raise DomainError("q must lie in (0, 1/2)")
    ones = np.asarray(ones, dtype=float)
    zeros = np.asarray(total, dtype=float) - ones
    up, down = math.log(0.5 + q), math.log(0.5 - q)
    ll_plus = ones * up + zeros * down
    ll_minus = ones * down + zeros * up
    return (ll_plus >= ll_minus).astype(np.int64)


def np_label(cell_labels, q: float) -> int:
    """``(1 + argmax_sigma prod_i P_sigma(Y_i)) / 2`` for binary labels, ties to 1."""
    y = np.asarray(cell_labels, dtype=np.int64)
    return int(np_label_counts(int(y.sum()), y.size, q))


def rmin_upper_bound(n0: float, delta0: float, alpha: float, lam: float, L: int, d: int,
                     eps: float, beta_prime: float, c_beta: float, c_d: float) -> float:
    """Finest level reachable under the favourable event on a strong-density problem.

    Returns ``max(Q1, Q2)`` with the constant ``c7`` of the analysis.
    """
    a = alpha
    c7 = (4 * (d + 1) ** 2 * 4 ** (2 * a + d) * math.log(2)
          / (c_d * a * (2 * a + d - a * beta_prime)) * max(1.0, c_beta * 6 ** beta_prime))
    log_term = math.log(4 * L * lam ** 2 * n0 / delta0)
    q1 = (c7 * lam ** -2 * eps * log_term / n0) ** (1 / (2 * a + d))
    q2 = (c7 * lam ** (beta_prime - 2) * log_term / n0) ** (1 / (2 * a + d - a * beta_prime))
    return max(q1, q2)


@dataclass
class LearnerOutput:
    classifier: CellwiseClassifier
    queries_used: int
    r_min: float = float("nan")


Learner = Callable[[DistributionSpec, int, np.random.Generator], LearnerOutput]


def make_learner(kind: str, lam: float = 1.0, delta: float = 0.05, alpha: float = 1.0,
                 max_rounds: int = MAX_META_ROUNDS, level: int | None = None) -> Learner:
    """Learner factory used by the experiment harness.

    ``nonadaptive`` runs the elimination learner with the whole budget and a
    known ``alpha``; ``meta`` adapts to ``alpha``; ``passive`` draws ``n``
    i.i.d. pairs and fits the histogram plug-in at ``level`` (default
    ``round(log2(n) / (2 alpha + d))``).
    """
    if kind == "nonadaptive":
        def learn(spec, n, rng):
            oracle = Oracle(spec, rng, limit=n)
            k0 = max(0, math.ceil(math.log2(n) / spec.dim - 1e-12))
            trace = run_nonadaptive(oracle, n, delta, alpha, lam, 2.0 ** -k0)
            return LearnerOutput(trace.label_map.classifier(), oracle.used, trace.r_min)
    elif kind == "meta":
        def learn(spec, n, rng):
            oracle = Oracle(spec, rng, limit=n)
            cmap = run_meta(oracle, n, delta, lam, max_rounds=max_rounds)
            return LearnerOutput(cmap.classifier(), oracle.used)
    elif kind == "passive":
        def learn(spec, n, rng):
            meter = BudgetMeter(n)
            X = spec.sample_x(n, rng)
            from .dist.base import query
            Y = query(spec, X, rng, meter)
            k = default_passive_level(n, alpha, spec.dim) if level is None else level
            cmap = passive_plugin(X, Y, k, spec.n_labels)
            return LearnerOutput(cmap.classifier(), meter.used)
    else:
        raise DomainError(f"unknown learner kind {kind!r}")
    learn.kind = kind
    return learn
