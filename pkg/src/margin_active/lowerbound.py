"""Ensemble experiments on the hard-instance family and numerical checks of the supporting inequalities."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dist.base import Oracle
from .dist.construction import (LowerBoundParams, LowerBoundSpec, ZSigmaAssignment, check_theta_beta,
                                sample_zsigma)
from .dyadic import DyadicPartition, barycenters
from .errors import DomainError
from .learner import CellwiseClassifier, LearnerOutput, make_learner, np_label_counts
from .risk import excess_risk_exact

C4 = 16 * math.e ** 2
ENUM_MAX = 20
_CHUNK = 1 << 16


# ----------------------------------------------------------------- labelings

def _majority(ones, totals, q, rng):
    return (2 * ones >= totals).astype(np.int64)


LABELINGS: dict[str, Callable] = {
    "np": lambda ones, totals, q, rng: np_label_counts(ones, totals, q),
    "majority": _majority,
    "minority": lambda ones, totals, q, rng: 1 - _majority(ones, totals, q, rng),
    "always1": lambda ones, totals, q, rng: np.ones(len(ones), dtype=np.int64),
    "random": lambda ones, totals, q, rng: rng.integers(0, 2, len(ones)).astype(np.int64),
}


@dataclass(frozen=True)
class UniformBarycenterSampling:
    """``floor(r^d n / 2)`` queries at the barycenter of every construction cell."""

    def __call__(self, oracle: Oracle, params: LowerBoundParams, n: int, rng: np.random.Generator):
        m = int(math.floor(params.r ** params.d * n / 2))
        coords = DyadicPartition(params.k, params.d).coords()
        totals = np.full(coords.shape[0], m, dtype=np.int64)
        if m == 0:
            return np.zeros_like(totals), totals
        X = np.repeat(barycenters(coords, params.k), m, axis=0)
        y = oracle.query(X)
        ones = np.bincount(np.repeat(np.arange(coords.shape[0]), m), weights=y,
                           minlength=coords.shape[0]).astype(np.int64)
        return ones, totals


def np_strategy(oracle: Oracle, n: int, params: LowerBoundParams, rng: np.random.Generator,
                sampling=None, labeling: str | Callable = "np") -> CellwiseClassifier:
    """Label every construction cell from its query outcomes under a fixed sampling rule.

    ``sampling(oracle, params, n, rng)`` returns per-cell counts of ones and of
    queries.  The default labeling is the likelihood-ratio rule; the other
    entries of ``LABELINGS`` serve as comparison points.
    """
    sampling = UniformBarycenterSampling() if sampling is None else sampling
    rule = LABELINGS[labeling] if isinstance(labeling, str) else labeling
    ones, totals = sampling(oracle, params, n, rng)
    labels = rule(ones, totals, params.bump, rng)
    return CellwiseClassifier(params.k, params.d, np.asarray(labels, dtype=np.int64))


# ----------------------------------------------------------------- learners

def _uniform_learner(labeling: str):
    def learn(spec: LowerBoundSpec, n, rng):
        oracle = Oracle(spec, rng, limit=n)
        clf = np_strategy(oracle, n, spec.params, rng, labeling=labeling)
        return LearnerOutput(clf, oracle.used)
    return learn


def _cheater(spec: LowerBoundSpec, n, rng):
    return LearnerOutput(CellwiseClassifier(spec.params.k, spec.params.d, spec.bayes_labels()), 0)


def resolve_learner(name: str, params: LowerBoundParams, delta: float = 0.05,
                    max_rounds: int | None = None) -> Callable:
    """Built-in learners by name.

    ``meta`` and ``nonadaptive`` are the label-elimination learners (the
    latter with the true smoothness), ``passive`` the histogram plug-in,
    ``cheater`` reads the Bayes labels from the coins, and ``<labeling>_uniform``
    combines uniform barycenter sampling with a labeling rule.
    """
    if name in ("meta", "nonadaptive", "passive"):
        kw = {} if max_rounds is None else {"max_rounds": max_rounds}
        return make_learner(name, lam=params.lam, delta=delta, alpha=params.alpha, **kw)
    if name == "cheater":
        return _cheater
    if name.endswith("_uniform") and name[:-8] in LABELINGS:
        return _uniform_learner(name[:-8])
    raise DomainError(f"unknown learner {name!r}")


BUILTIN_LEARNERS = ("meta", "nonadaptive", "passive", "cheater") + tuple(f"{k}_uniform" for k in LABELINGS)


# ----------------------------------------------------------------- ensemble

@dataclass
class EnsembleResult:
    n: int
    params: LowerBoundParams
    draws: int
    learners: list[str]
    risks: dict[str, np.ndarray]
    queries: dict[str, np.ndarray]
    theta_ok: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def mean(self, learner: str) -> float:
        return float(self.risks[learner].mean())

    def se(self, learner: str) -> float:
        r = self.risks[learner]
        return float(r.std(ddof=1) / math.sqrt(r.size)) if r.size > 1 else float("nan")

    def paired_se(self, a: str, b: str) -> float:
        diff = self.risks[a] - self.risks[b]
        return float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else float("nan")

    def to_dict(self) -> dict:
        return {
            "n": self.n, "params": asdict(self.params), "draws": self.draws,
            "level": self.params.k, "r": self.params.r,
            "learners": {name: {"mean": self.mean(name), "se": self.se(name),
                                "risks": self.risks[name].tolist(),
                                "queries": self.queries[name].tolist()} for name in self.learners},
            "theta_ok_fraction": float(self.theta_ok.mean()) if self.theta_ok.size else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def csv_rows(self) -> list[tuple]:
        return [(j, name, self.n, float(self.risks[name][j]))
                for j in range(self.draws) for name in self.learners]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["draw", "learner", "n", "risk"])
        w.writerows((j, name, n, repr(r)) for j, name, n, r in self.csv_rows())
        return buf.getvalue()


def _learner_list(learners) -> list[tuple[str, object]]:
    out = []
    for item in learners:
        out.append((item, item) if isinstance(item, str) else (item[0], item[1]))
    names = [name for name, _ in out]
    if len(set(names)) != len(names):
        raise DomainError("learner ids must be distinct")
    return out


def _run_draw(params: LowerBoundParams, learners, seed: np.random.SeedSequence, delta: float,
              max_rounds, c_beta: float):
    # every learner sees the same random stream (common random numbers), which
    # makes the paired comparisons between learners sharper
    coin_seed, learner_seed = seed.spawn(2)
    zs = sample_zsigma(params, np.random.default_rng(coin_seed))
    spec = LowerBoundSpec(params, zs)
    risks, queries = {}, {}
    for name, learner in learners:
        fn = resolve_learner(learner, params, delta, max_rounds) if isinstance(learner, str) else learner
        out = fn(spec, params.n, np.random.default_rng(learner_seed))
        if out.queries_used > params.n:
            raise AssertionError(f"{name} used {out.queries_used} queries with budget {params.n}")
        risks[name] = excess_risk_exact(out.classifier, spec).value
        queries[name] = out.queries_used
    return risks, queries, check_theta_beta(zs, params, c_beta)


def run_ensemble(n: int, alpha: float, beta: float, lam: float, d: int, learners: Sequence,
                 draws: int, rng: np.random.Generator, delta: float = 0.05, max_rounds: int | None = None,
                 c_beta: float = 2.0, jobs: int = 1) -> EnsembleResult:
    """Average exact excess risk of each learner over random coin draws at budget ``n``.

    ``learners`` holds built-in names (see ``resolve_learner``) or
    ``(id, callable)`` pairs with ``callable(spec, n, rng) -> LearnerOutput``.
    Each draw gets its own seed stream, so results do not depend on ``jobs``.
    """
    if draws < 1:
        raise DomainError("draws must be at least 1")
    params = LowerBoundParams(n=n, alpha=alpha, lam=lam, beta=beta, d=d)
    lst = _learner_list(learners)
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(draws)
    args = [(params, lst, s, delta, max_rounds, c_beta) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_draw, *zip(*args)))
    else:
        results = [_run_draw(*a) for a in args]
    names = [name for name, _ in lst]
    return EnsembleResult(
        n=n, params=params, draws=draws, learners=names,
        risks={k: np.array([r[0][k] for r in results]) for k in names},
        queries={k: np.array([r[1][k] for r in results], dtype=np.int64) for k in names},
        theta_ok=np.array([r[2] for r in results], dtype=bool),
    )


# ----------------------------------------------------------------- inequality checks

@dataclass
class CheckReport:
    check: str
    parameters: dict
    passed: bool
    values: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _sequences(length: int):
    """All binary sequences of a given length, in chunks of rows."""
    total = 1 << length
    shifts = np.arange(length, dtype=np.int64)
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        yield ((codes[:, None] >> shifts) & 1).astype(np.int8)


def likelihood_ratio(seqs: np.ndarray, q: float) -> np.ndarray:
    """``(1/2)^n / E_sigma prod_i (1/2 + sigma (2 Y_i - 1) q)`` for each row of ``seqs``."""
    s = 2.0 * seqs - 1.0
    plus = np.prod(0.5 + s * q, axis=1)
    minus = np.prod(0.5 - s * q, axis=1)
    return 0.5 ** seqs.shape[1] / (0.5 * (plus + minus))


def likelihood_ratio_bound_check(n_c_max: int, q: float) -> CheckReport:
    """Exhaustive check of the ratio bound over every label sequence of length ``<= n_c_max``."""
    if not 0 < q < 0.5:
        raise DomainError("q must lie in (0, 1/2)")
    if n_c_max < 0 or n_c_max > ENUM_MAX or 2 * n_c_max * q ** 2 > 1 + 1e-9:
        raise DomainError(f"need 0 <= n_c_max <= min({ENUM_MAX}, q^-2 / 2)")
    best, arg, count, per_length = 1.0, [], 1, [1.0]
    for length in range(1, n_c_max + 1):
        top = 0.0
        for seqs in _sequences(length):
            ratio = likelihood_ratio(seqs, q)
            i = int(np.argmax(ratio))
            if ratio[i] > top:
                top = float(ratio[i])
                if top > best:
                    best, arg = top, seqs[i].tolist()
            count += seqs.shape[0]
        per_length.append(top)
    m = 0.5 / q ** 2
    analytic = 2 * (1 - 4 / m) ** (-m / 2) if m > 4 else float("inf")
    return CheckReport(
        "likelihood_ratio", {"n_c_max": n_c_max, "q": q}, best <= C4,
        {"max_ratio": best, "argmax_sequence": arg, "c4": C4, "sequences": count,
         "max_ratio_by_length": per_length, "analytic_bound": analytic},
    )


def binomial_cdf(k: int, m: int, p: float) -> float:
    """``P(Bin(m, p) <= k)`` by direct summation in log space."""
    if k < 0:
        return 0.0
    if k >= m:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    terms = [math.lgamma(m + 1) - math.lgamma(j + 1) - math.lgamma(m - j + 1) + j * lp + (m - j) * lq
             for j in range(k + 1)]
    top = max(terms)
    return min(1.0, math.exp(top) * sum(math.exp(t - top) for t in terms))


def anticoncentration_check(delta_gap: float, m: int, trials: int, rng: np.random.Generator) -> CheckReport:
    """Frequency of ``mean(Y) < 1/2`` for ``m`` draws of ``Ber(1/2 + delta_gap)``."""
    if not 0 < delta_gap < 0.5:
        raise DomainError("delta_gap must lie in (0, 1/2)")
    if m < 1 or 2 * m * delta_gap ** 2 > 1 + 1e-9:
        raise DomainError("need 1 <= m <= delta_gap^-2 / 2")
    s = rng.binomial(m, 0.5 + delta_gap, size=trials)
    freq = float(np.mean(2 * s < m))
    se = math.sqrt(freq * (1 - freq) / trials)
    exact = binomial_cdf((m - 1) // 2, m, 0.5 + delta_gap)
    return CheckReport(
        "anticoncentration", {"delta_gap": delta_gap, "m": m, "trials": trials},
        freq - 3 * se > 0,
        {"frequency": freq, "se": se, "c3_lower": max(0.0, freq - 3 * se), "exact": exact},
    )


def chernoff_bound(p: float, m: int, eps: float) -> float:
    return math.exp(-m * eps ** 2 * p / 3)


def chernoff_check(p: float, m: int, eps: float, trials: int, rng: np.random.Generator) -> CheckReport:
    """Monte-Carlo upper tail ``P(mean >= (1 + eps) p)`` against ``exp(-m eps^2 p / 3)``."""
    if not 0 < p < 1 or eps <= 0 or m < 1:
        raise DomainError("need p in (0, 1), eps > 0 and m >= 1")
    threshold = (1 + eps) * p * m
    s = rng.binomial(m, p, size=trials)
    freq = float(np.mean(s >= threshold - 1e-9))
    se = math.sqrt(freq * (1 - freq) / trials)
    bound = chernoff_bound(p, m, eps)
    exact = 1.0 - binomial_cdf(math.ceil(threshold - 1e-9) - 1, m, p)
    return CheckReport(
        "chernoff", {"p": p, "m": m, "eps": eps, "trials": trials},
        freq <= bound + 3 * se,
        {"frequency": freq, "se": se, "bound": bound, "exact": exact},
    )


def np_majority_equivalence_check(max_len: int = 12, qs=(0.05, 0.1, 0.2, 0.4)) -> CheckReport:
    """Compare the likelihood-ratio label with majority vote on every sequence up to ``max_len``."""
    mismatches, count = [], 0
    for q, length in itertools.product(qs, range(max_len + 1)):
        for seqs in _sequences(length):
            ones = seqs.sum(axis=1)
            s = 2.0 * seqs - 1.0
            lik_plus = np.prod(0.5 + s * q, axis=1)
            lik_minus = np.prod(0.5 - s * q, axis=1)
            direct = (lik_plus >= lik_minus * (1 - 1e-12)).astype(np.int64)
            np_lab = np_label_counts(ones, np.full_like(ones, length), q)
            maj = (2 * ones >= length).astype(np.int64)
            bad = np.flatnonzero((np_lab != maj) | (np_lab != direct))
            mismatches += [(q, seqs[i].tolist()) for i in bad[:5]]
            count += seqs.shape[0]
    return CheckReport("np_majority", {"max_len": max_len, "q": list(qs)}, not mismatches,
                       {"sequences": count, "mismatches": mismatches})
