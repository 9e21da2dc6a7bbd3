"""Synthetic judges, rank correlations and efficiency-curve experiments."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .core import (
    ComparisonRecord,
    ComparisonSet,
    ConvergenceError,
    DisconnectedError,
    Pair,
    ValidationError,
    all_pairs,
    sample_subset,
    symmetrize,
    validate_set,
)
from .estimators import METHODS, EstimatorConfig, estimate
from .selection import normal_matrix, select_batch

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class JudgeModel:
    """Logistic judge: ``p_ij = sigmoid((s_i - s_j) / temperature + position_bias + noise)``."""

    latent_scores: np.ndarray
    temperature: float = 1.0
    noise_sd: float = 1.0
    position_bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "latent_scores", np.asarray(self.latent_scores, dtype=float))
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.latent_scores.ndim != 1 or len(self.latent_scores) < 2:
            raise ValueError("need a vector of at least 2 latent scores")

    @property
    def n_items(self) -> int:
        return len(self.latent_scores)

    @classmethod
    def random(cls, n: int, seed: int, **kwargs) -> JudgeModel:
        return cls(np.random.default_rng(seed).standard_normal(n), **kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> JudgeModel:
        obj = json.loads(Path(path).read_text())
        return cls(
            latent_scores=np.asarray(obj["scores"], dtype=float),
            temperature=float(obj.get("temperature", 1.0)),
            noise_sd=float(obj.get("noise_sd", 1.0)),
            position_bias=float(obj.get("position_bias", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "scores": [float(v) for v in self.latent_scores],
            "temperature": self.temperature,
            "noise_sd": self.noise_sd,
            "position_bias": self.position_bias,
        }

    def probabilities(self, pairs: Sequence[Pair], noise: np.ndarray | None = None) -> np.ndarray:
        if not pairs:
            return np.zeros(0)
        idx = np.asarray(pairs, dtype=np.intp)
        s = self.latent_scores
        z = (s[idx[:, 0]] - s[idx[:, 1]]) / self.temperature + self.position_bias
        if noise is not None:
            z = z + noise
        return expit(z)


def generate_judgments(judge: JudgeModel, pairs: Sequence[Pair], rng_seed: int, directed: bool = True) -> ComparisonSet:
    """Judge each pair once; ``y`` is a Bernoulli draw from ``p`` on an independent sub-stream."""
    noise_seq, outcome_seq = np.random.SeedSequence(rng_seed).spawn(2)
    noise = np.random.default_rng(noise_seq).normal(0.0, 1.0, len(pairs)) * judge.noise_sd
    p = judge.probabilities(pairs, noise)
    y = (np.random.default_rng(outcome_seq).random(len(pairs)) < p).astype(int)
    records = [ComparisonRecord(int(i), int(j), float(pk), int(yk)) for (i, j), pk, yk in zip(pairs, p, y)]
    return validate_set(records, judge.n_items, directed=directed)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("correlation needs two vectors of equal length >= 2")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("undefined correlation for a constant vector")
    return a, b


def pearson(a, b) -> float:
    a, b = _check_pair(a, b)
    a = a - a.mean()
    b = b - b.mean()
    r = float(a @ b / math.sqrt(float(a @ a) * float(b @ b)))
    return min(1.0, max(-1.0, r))


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a, b = _check_pair(a, b)
    return pearson(rankdata(a), rankdata(b))


METRICS = {"spearman": spearman, "pearson": pearson}


@dataclass
class CurveResult:
    k_values: list[int]
    methods: list[str]
    mean: dict[tuple[str, int], float]
    sd: dict[tuple[str, int], float]
    trials: int
    metric: str
    failures: dict[tuple[str, int], int] = field(default_factory=dict)
    per_trial: dict[tuple[str, int], np.ndarray] = field(default_factory=dict, repr=False)  # NaN = failed
    log_dets: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def ci95(self, method: str, k: int) -> tuple[float, float]:
        n_ok = self.trials - self.failures.get((method, k), 0)
        half = 1.96 * self.sd[(method, k)] / math.sqrt(max(n_ok, 1))
        return self.mean[(method, k)] - half, self.mean[(method, k)] + half

    def rows(self) -> list[dict]:
        return [
            {
                "method": m,
                "k": k,
                "mean": self.mean[(m, k)],
                "sd": self.sd[(m, k)],
                "trials": self.trials,
                "failures": self.failures.get((m, k), 0),
            }
            for k in self.k_values
            for m in self.methods
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("method,k,mean,sd,trials,failures\n")
        for r in self.rows():
            buf.write(f"{r['method']},{r['k']},{r['mean']:.17g},{r['sd']:.17g},{r['trials']},{r['failures']}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"metric": self.metric, "trials": self.trials, "rows": self.rows()}, indent=1)

    @staticmethod
    def read_csv(text: str) -> list[dict]:
        return list(csv.DictReader(io.StringIO(text)))


def _trial_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, *key])


def judgment_table(judge: JudgeModel, seed: np.random.SeedSequence) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and Bernoulli decisions for every ordered pair, as N x N arrays."""
    n = judge.n_items
    pairs = all_pairs(n, directed=True)
    noise_seq, outcome_seq = seed.spawn(2)
    noise = np.random.default_rng(noise_seq).normal(0.0, 1.0, len(pairs)) * judge.noise_sd
    p = np.full((n, n), np.nan)
    y = np.zeros((n, n), dtype=int)
    idx = np.asarray(pairs)
    p[idx[:, 0], idx[:, 1]] = judge.probabilities(pairs, noise)
    y[idx[:, 0], idx[:, 1]] = np.random.default_rng(outcome_seq).random(len(pairs)) < p[idx[:, 0], idx[:, 1]]
    return p, y


def _observe(p_table: np.ndarray, y_table: np.ndarray, pairs: Sequence[Pair], symmetric: bool) -> ComparisonSet:
    n = p_table.shape[0]
    if symmetric:
        both = []
        for i, j in pairs:
            both.append(ComparisonRecord(i, j, float(p_table[i, j])))
            both.append(ComparisonRecord(j, i, float(p_table[j, i])))
        combined = {(r.i, r.j): r.p for r in symmetrize(validate_set(both, n)).records}
        recs = [ComparisonRecord(i, j, combined[(i, j)] if (i, j) in combined else 1.0 - combined[(j, i)])
                for i, j in pairs]
    else:
        recs = [ComparisonRecord(i, j, float(p_table[i, j]), int(y_table[i, j])) for i, j in pairs]
    return validate_set(recs, n, directed=True)


def _pairs_for(selection: str, n: int, k: int, rng: np.random.Generator, p_table: np.ndarray,
               symmetric: bool, cache: dict) -> list[Pair]:
    if selection == "random":
        return sample_subset(n, k, rng, directed=True)
    unique = k <= n * (n - 1) // 2
    if selection == "gaussian":
        if k not in cache:
            cache[k] = select_batch(n, k, "gaussian", unique_pairs=unique).chosen
        chosen = cache[k]
    elif selection == "laplace-bt":
        def probs(i, j):
            if symmetric:
                return 0.5 * (p_table[i, j] + 1.0 - p_table[j, i])
            return p_table[i, j]
        chosen = select_batch(n, k, "laplace-bt", probs=probs, unique_pairs=unique).chosen
        return chosen
    else:
        raise ValueError(f"unknown selection {selection!r}")
    # selected pairs are unordered; pick a presentation order per trial
    flips = rng.random(len(chosen)) < 0.5
    return [(j, i) if f else (i, j) for (i, j), f in zip(chosen, flips)]


def _run_trial(args) -> tuple[dict[tuple[str, int], float], dict[tuple[str, int], str], dict[int, float]]:
    (judge, methods, k_values, trial, selection, symmetric, seed, metric, debias, cfg_kwargs) = args
    p_table, y_table = judgment_table(judge, _trial_seed(seed, trial))
    corr_fn = METRICS[metric]
    values: dict[tuple[str, int], float] = {}
    errors: dict[tuple[str, int], str] = {}
    log_dets: dict[int, float] = {}
    cache: dict = {}
    for k in k_values:
        rng = np.random.default_rng(_trial_seed(seed, trial, k))
        pairs = _pairs_for(selection, judge.n_items, k, rng, p_table, symmetric, cache)
        log_dets[k] = float(np.linalg.slogdet(normal_matrix(judge.n_items, pairs))[1])
        cset = _observe(p_table, y_table, pairs, symmetric)
        for m in methods:
            cfg = EstimatorConfig(method=m, debias=debias, **cfg_kwargs)
            try:
                est = estimate(cset, cfg)
                values[(m, k)] = corr_fn(est.scores, judge.latent_scores)
            except (ConvergenceError, DisconnectedError, ValidationError, ValueError, ArithmeticError) as exc:
                values[(m, k)] = math.nan
                errors[(m, k)] = f"{type(exc).__name__}: {exc}"
    return values, errors, log_dets


def run_curve(
    judge: JudgeModel,
    methods: Sequence[str],
    k_values: Sequence[int],
    trials: int = 100,
    selection: str = "random",
    symmetric: bool = True,
    rng_seed: int = 0,
    metric: str = "spearman",
    debias: bool = False,
    workers: int = 1,
    strict: bool = True,
    **cfg_kwargs,
) -> CurveResult:
    """Correlation against the judge's latent scores as a function of the comparison budget.

    Each trial draws a fresh judgment table for all ordered pairs (seeded by
    ``(rng_seed, trial)``) so that different budgets within a trial are
    paired; the subset for each budget is seeded by ``(rng_seed, trial, k)``.
    ``k`` counts comparisons drawn from the ``N(N-1)`` ordered pairs; in the
    symmetric set-up each drawn comparison carries the combined probability
    of both presentation orders.
    """
    methods = list(methods)
    k_values = [int(k) for k in k_values]
    n = judge.n_items
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if selection not in ("random", "gaussian", "laplace-bt"):
        raise ValueError(f"unknown selection {selection!r}")
    for k in k_values:
        if not (n - 1 <= k <= n * (n - 1)):
            raise ValidationError(f"k={k} infeasible for n={n}: need {n - 1} <= k <= {n * (n - 1)}")
    if trials < 1:
        raise ValueError("need at least one trial")

    jobs = [(judge, methods, k_values, t, selection, symmetric, rng_seed, metric, debias, cfg_kwargs)
            for t in range(trials)]
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        outcomes = [_run_trial(job) for job in jobs]

    per_trial = {(m, k): np.array([o[0][(m, k)] for o in outcomes]) for k in k_values for m in methods}
    log_dets = {k: np.array([o[2][k] for o in outcomes]) for k in k_values}
    mean, sd, failures = {}, {}, {}
    for key, vals in per_trial.items():
        ok = vals[np.isfinite(vals)]
        failures[key] = int(len(vals) - len(ok))
        mean[key] = float(ok.mean()) if len(ok) else math.nan
        sd[key] = float(ok.std(ddof=1)) if len(ok) > 1 else 0.0
    for t, o in enumerate(outcomes):
        for key, msg in o[1].items():
            logger.info("trial %d %s k=%d failed: %s", t, key[0], key[1], msg)
    result = CurveResult(k_values, methods, mean, sd, trials, metric, failures, per_trial, log_dets)
    worst = max(failures.values(), default=0) / trials
    if strict and worst > MAX_FAILURE_RATE:
        raise SimulationFailure(result, worst)
    return result


class SimulationFailure(RuntimeError):
    def __init__(self, result: CurveResult, rate: float):
        super().__init__(f"estimator failure rate {rate:.1%} exceeds {MAX_FAILURE_RATE:.0%}")
        self.result = result
        self.rate = rate

