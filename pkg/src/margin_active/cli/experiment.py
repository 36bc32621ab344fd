"""Run orchestration for rate experiments, ensemble studies and distribution checks."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..dist import check_holder, check_rmc, check_strong_density, check_tmc, spec_from_config
from ..dist.conditions import _jsonable
from ..errors import DomainError
from ..learner import make_learner
from ..lowerbound import run_ensemble
from ..risk import excess_risk_exact, excess_risk_mc, fit_rate
from .config import ExperimentConfig
from .plot import emit_plot

CSV_HEADER = ["learner", "spec", "n", "seed", "risk", "risk_se", "queries_used", "r_min", "wall_ms"]


@dataclass
class RunRecord:
    config_hash: str
    learner: str
    spec: str
    n: int
    seed: int
    risk: float
    risk_se: float | None
    queries_used: int
    r_min: float | None
    wall_ms: float | None = None

    def __post_init__(self):
        if self.queries_used > self.n:
            raise AssertionError(f"{self.learner} used {self.queries_used} queries with budget {self.n}")
        if self.risk < 0:
            raise AssertionError("negative excess risk")

    @property
    def key(self):
        return (self.learner, self.spec, self.n, self.seed)

    def csv_row(self) -> list[str]:
        def num(v):
            return "" if v is None else repr(float(v))
        return [self.learner, self.spec, str(self.n), str(self.seed), num(self.risk), num(self.risk_se),
                str(self.queries_used), num(self.r_min), "" if self.wall_ms is None else f"{self.wall_ms:.3f}"]


@dataclass
class ExperimentResult:
    config_hash: str
    records: list[RunRecord]
    fits: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(r.csv_row() for r in self.records)
        return buf.getvalue()

    def rate_table(self) -> dict[str, list[tuple[float, float]]]:
        table: dict[str, list[tuple[float, float]]] = {}
        for fit in self.fits:
            table[f"{fit['learner']} / {fit['spec']}"] = [tuple(p) for p in fit["means"]]
        return table

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash,
                "records": [asdict(r) for r in self.records], "fits": self.fits}


def _spec_id(cfg: dict, spec) -> str:
    return cfg.get("id", spec.name)


def _learner_id(cfg: dict) -> str:
    return cfg.get("id", cfg["kind"])


def _run_cell(task) -> RunRecord:
    (chash, master, spec_idx, spec_cfg, learner_cfg, n, seed, method, mc_points, timing) = task
    # learners share a stream for a given (spec, n, seed): paired comparisons
    entropy = [master, seed, n, spec_idx]
    rng = np.random.default_rng(entropy)
    spec = spec_from_config(spec_cfg, np.random.default_rng(entropy + [1]), path=f"specs/{spec_idx}")
    kw = {k: learner_cfg[k] for k in ("lam", "delta", "alpha", "max_rounds", "level") if k in learner_cfg}
    learner = make_learner(learner_cfg["kind"], **kw)
    t0 = time.perf_counter()
    out = learner(spec, n, rng)
    wall = (time.perf_counter() - t0) * 1e3
    if method == "monte-carlo" or (method == "auto" and not spec.supports_exact):
        est = excess_risk_mc(out.classifier, spec, mc_points, np.random.default_rng(entropy + [2]))
    else:
        est = excess_risk_exact(out.classifier, spec)
    return RunRecord(chash, _learner_id(learner_cfg), _spec_id(spec_cfg, spec), n, seed, est.value,
                     est.standard_error, out.queries_used,
                     None if math.isnan(out.r_min) else out.r_min, wall if timing else None)


def _fits(records: list[RunRecord]) -> list[dict]:
    groups: dict[tuple[str, str], dict[int, list[float]]] = {}
    for r in records:
        groups.setdefault((r.learner, r.spec), {}).setdefault(r.n, []).append(r.risk)
    out = []
    for (learner, spec), by_n in sorted(groups.items()):
        means = [(n, float(np.mean(v))) for n, v in sorted(by_n.items())]
        entry = {"learner": learner, "spec": spec, "means": means,
                 "zero_risk_runs": int(sum(x == 0 for v in by_n.values() for x in v))}
        try:
            fit = fit_rate(means)
            entry.update(slope=fit.slope, intercept=fit.intercept, residual_se=fit.residual_se,
                         points=fit.points, dropped=fit.dropped)
        except DomainError as exc:
            entry.update(slope=None, error=str(exc))
        out.append(entry)
    return out


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1, write: bool = True) -> ExperimentResult:
    """Run every (learner, spec, n, seed) cell, then fit one rate per learner and spec.

    Output (``runs.csv``, ``summary.json``, ``rates.svg``) depends only on
    the configuration and master seed, not on ``jobs``.
    """
    if not config.specs or not config.learners or not config.budgets:
        raise DomainError("simulate needs specs, learners and budgets")
    chash = config.hash
    tasks = [(chash, config.seed, si, sc, lc, n, seed, config.method, config.mc_points, config.record_timing)
             for si, sc in enumerate(config.specs) for lc in config.learners
             for n in config.budgets for seed in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        records = [_run_cell(t) for t in tasks]
    records.sort(key=lambda r: r.key)
    result = ExperimentResult(chash, records, _fits(records))
    if write:
        out = Path(out_dir or config.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(result.to_csv())
        (out / "summary.json").write_text(json.dumps(_jsonable(result.to_dict()), indent=2, sort_keys=True))
        table = {k: v for k, v in result.rate_table().items() if any(r > 0 for _, r in v)}
        if table:
            emit_plot(table, out / "rates.svg")
    return result


def run_lowerbound_study(config: ExperimentConfig, out_dir=None, jobs: int = 1, write: bool = True) -> dict:
    lb = config.raw.get("lowerbound")
    if lb is None:
        raise DomainError("configuration has no 'lowerbound' section")
    rng = np.random.default_rng([config.seed, 7])
    results, rows = [], []
    for n in lb["budgets"]:
        res = run_ensemble(n, lb.get("alpha", 1.0), lb.get("beta", 1.0), lb.get("lam", 1.0), lb.get("d", 1),
                           lb["learners"], lb.get("draws", 50), rng, delta=lb.get("delta", 0.05),
                           max_rounds=lb.get("max_rounds"), c_beta=lb.get("c_beta", 2.0), jobs=jobs)
        results.append(res)
        rows += res.csv_rows()
    fits = {}
    for name in lb["learners"]:
        means = [(r.n, r.mean(name)) for r in results]
        try:
            f = fit_rate(means)
            fits[name] = {"slope": f.slope, "intercept": f.intercept, "residual_se": f.residual_se,
                          "means": means, "dropped": f.dropped}
        except DomainError as exc:
            fits[name] = {"slope": None, "means": means, "error": str(exc)}
    summary = {"config_hash": config.hash, "ensembles": [r.to_dict() for r in results], "fits": fits}
    if write:
        out = Path(out_dir or config.output)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["draw", "learner", "n", "risk"])
        w.writerows((j, name, n, repr(r)) for j, name, n, r in rows)
        (out / "ensemble.csv").write_text(buf.getvalue())
        (out / "ensemble.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
        table = {k: v["means"] for k, v in fits.items() if any(r > 0 for _, r in v["means"])}
        if table:
            emit_plot(table, out / "ensemble.svg")
    return summary


_CHECKS = {
    "holder": lambda spec, p, rng: check_holder(spec, p["lam"], p["alpha"], p.get("grid_n", 200), rng),
    "tmc": lambda spec, p, rng: check_tmc(spec, p["beta"], p["c_beta"], p.get("tau_grid", _TAUS),
                                          p.get("mc_n", 100_000), rng),
    "rmc": lambda spec, p, rng: check_rmc(spec, p["eps"], p["beta"], p["beta_prime"], p["c_beta"],
                                          p.get("tau_grid", _TAUS), p.get("mc_n", 100_000), rng),
    "strong_density": lambda spec, p, rng: check_strong_density(spec, p["c_d"], p.get("max_level", 6),
                                                                p.get("mc_n", 100_000), rng),
}
_TAUS = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5]


def verify_dist(config: ExperimentConfig, out_dir=None, write: bool = True) -> dict:
    """Run the configured assumption checks; ``bundle['passed']`` is the conjunction."""
    section = config.raw.get("verify")
    if section is None:
        raise DomainError("configuration has no 'verify' section")
    rng = np.random.default_rng([config.seed, 11])
    spec = spec_from_config(section["spec"], rng, path="verify/spec")
    reports = {name: _CHECKS[name](spec, params, rng).to_dict()
               for name, params in section["checks"].items()}
    bundle = {"config_hash": config.hash, "spec": spec.name,
              "passed": all(r["passed"] for r in reports.values()), "reports": reports}
    if write:
        out = Path(out_dir or config.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(json.dumps(_jsonable(bundle), indent=2, sort_keys=True))
    return bundle
