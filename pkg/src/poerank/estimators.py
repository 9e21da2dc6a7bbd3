"""Score estimators: win-ratio, average probability, Bradley-Terry and soft Bradley-Terry PoE."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .core import ComparisonSet, ConvergenceError, ScoreEstimate, ValidationError

METHODS = ("win-ratio", "avg-prob", "bt-hard", "poe-bt", "poe-g", "poe-g-hard")

# target gradient norm; a run that stalls in floating point is still accepted below POE_BT_ACCEPT_TOL
POE_BT_GRAD_TOL = 1e-9
POE_BT_ACCEPT_TOL = 1e-6


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "poe-g"
    debias: bool = False
    alpha: float = 1.0
    beta: float = 0.5
    sigma0_sq: float = 1.0
    sigma_sq: float = 1.0  # constant expert variance
    zermelo_tol: float = 1e-4
    zermelo_prior: float | None = None  # None -> 1/(N-1)
    max_iters: int = 10000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.sigma0_sq <= 0 or self.sigma_sq <= 0:
            raise ValueError("variances must be positive")
        if self.zermelo_tol <= 0:
            raise ValueError("zermelo_tol must be positive")
        if self.zermelo_prior is not None and self.zermelo_prior < 0:
            raise ValueError("zermelo_prior must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def prior_for(self, n: int) -> float:
        return 1.0 / (n - 1) if self.zermelo_prior is None else self.zermelo_prior


@dataclass(frozen=True)
class DebiasParams:
    mean_p: float
    beta_g: float
    gamma_bt: float
    stderr: float = math.nan  # standard error of mean_p

    @classmethod
    def from_mean(cls, mean_p: float, stderr: float = math.nan) -> DebiasParams:
        if not 0.0 < mean_p < 1.0:
            raise ValidationError(f"mean probability {mean_p} must lie in (0, 1)")
        return cls(mean_p=mean_p, beta_g=mean_p, gamma_bt=float(-logit(mean_p)), stderr=stderr)


def estimate_debias(cset: ComparisonSet) -> DebiasParams:
    """Positional-bias parameters from the mean observed probability."""
    if len(cset) == 0:
        raise ValidationError("cannot estimate debias parameters from an empty set")
    p = cset.probs()
    se = float(p.std(ddof=1) / math.sqrt(len(p))) if len(p) > 1 else math.nan
    return DebiasParams.from_mean(float(p.mean()), se)


def bt_expert_mean(p: float) -> float:
    """Mean score difference under a soft Bradley-Terry expert, ``-pi * cot(pi * p)``."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p={p} outside (0, 1)")
    return -math.pi / math.tan(math.pi * p)


def soft_bt_log_normalizer(p: np.ndarray | float) -> np.ndarray:
    """``log Z`` with ``Z = pi / sin(pi p)``, the integral of the unnormalized soft-BT expert."""
    return np.log(np.pi / np.sin(np.pi * np.asarray(p, dtype=float)))


def soft_bt_expert_logpdf(diff: np.ndarray | float, p: np.ndarray | float, gamma: float = 0.0) -> np.ndarray:
    """Normalized log density of one soft-BT expert over the score difference."""
    x = np.asarray(diff, dtype=float) - gamma
    p = np.asarray(p, dtype=float)
    return p * x - np.logaddexp(0.0, x) - soft_bt_log_normalizer(p)


def soft_bt_objective(cset: ComparisonSet, scores: np.ndarray, gamma: float = 0.0) -> float:
    """Unnormalized soft-BT log density (the quantity ``poe_bt`` maximizes)."""
    d = scores[cset.firsts] - scores[cset.seconds] - gamma
    p = cset.probs()
    return float(np.sum(p * d - np.logaddexp(0.0, d)))


def soft_bt_log_density(cset: ComparisonSet, scores: np.ndarray, gamma: float = 0.0) -> float:
    """Product-of-experts log density with each expert normalized."""
    d = scores[cset.firsts] - scores[cset.seconds]
    return float(np.sum(soft_bt_expert_logpdf(d, cset.probs(), gamma)))


def soft_bt_gradient(cset: ComparisonSet, scores: np.ndarray, gamma: float = 0.0) -> np.ndarray:
    i, j = cset.firsts, cset.seconds
    resid = cset.probs() - expit(scores[i] - scores[j] - gamma)
    n = cset.n_items
    return np.bincount(i, resid, minlength=n) - np.bincount(j, resid, minlength=n)


def _require_coverage(cset: ComparisonSet) -> None:
    missing = np.flatnonzero(cset.degrees() == 0)
    if missing.size:
        raise ValidationError(f"items without comparisons: {missing.tolist()}")


def win_ratio(cset: ComparisonSet) -> ScoreEstimate:
    _require_coverage(cset)
    o = cset.outcomes()
    n = cset.n_items
    wins = np.bincount(cset.firsts, o, minlength=n) + np.bincount(cset.seconds, 1.0 - o, minlength=n)
    return ScoreEstimate(wins / cset.degrees(), "win-ratio")


def avg_prob(cset: ComparisonSet) -> ScoreEstimate:
    _require_coverage(cset)
    p = cset.probs()
    n = cset.n_items
    total = np.bincount(cset.firsts, p, minlength=n) + np.bincount(cset.seconds, 1.0 - p, minlength=n)
    return ScoreEstimate(total / cset.degrees(), "avg-prob")


def _win_matrices(cset: ComparisonSet, first_share: np.ndarray, prior: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-item win totals and symmetric game-count matrix, with prior pseudo-wins per compared pair."""
    n = cset.n_items
    wins = np.zeros((n, n))
    np.add.at(wins, (cset.firsts, cset.seconds), first_share)
    np.add.at(wins, (cset.seconds, cset.firsts), 1.0 - first_share)
    if prior > 0:
        compared = (wins + wins.T) > 0
        wins = wins + prior * compared
    return wins.sum(axis=1), wins + wins.T


def _zermelo(
    total_wins: np.ndarray,
    games: np.ndarray,
    max_iters: int,
    converged: Callable[[np.ndarray, np.ndarray], tuple[bool, float]],
    name: str,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """MM iteration for Bradley-Terry strengths; returns mean-centred log strengths."""
    n = len(total_wins)
    s = np.zeros(n)
    residual = math.inf
    for it in range(1, max_iters + 1):
        pi = np.exp(s)
        denom = (games / (pi[:, None] + pi[None, :])).sum(axis=1)
        with np.errstate(divide="ignore"):
            s_new = np.log(total_wins) - np.log(denom)
        if not np.all(np.isfinite(s_new)):
            raise ConvergenceError(f"{name}: scores diverged (an item has no wins or losses)", s, residual)
        s_new -= s_new.mean()
        done, residual = converged(s, s_new)
        s = s_new
        if callback is not None:
            callback(it, s)
        if done:
            return s
    raise ConvergenceError(f"{name}: no convergence after {max_iters} iterations", s, residual)


def bt_hard(cset: ComparisonSet, cfg: EstimatorConfig | None = None) -> ScoreEstimate:
    """Bradley-Terry maximum likelihood on hard decisions via Zermelo's iteration."""
    cfg = cfg or EstimatorConfig(method="bt-hard")
    _require_coverage(cset)
    total, games = _win_matrices(cset, cset.outcomes(), cfg.prior_for(cset.n_items))

    def converged(old, new):
        step = float(np.max(np.abs(new - old)))
        return step < cfg.zermelo_tol, step

    s = _zermelo(total, games, cfg.max_iters, converged, "bt-hard")
    return ScoreEstimate(s, "bt-hard")


def _newton_ascent(
    cset: ComparisonSet,
    gamma: float,
    max_iters: int,
    tol: float,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Damped Newton ascent on the (concave) shifted soft-BT objective."""
    n = cset.n_items
    i, j = cset.firsts, cset.seconds
    s = np.zeros(n)
    f = soft_bt_objective(cset, s, gamma)
    g = soft_bt_gradient(cset, s, gamma)
    centre = np.full((n, n), 1.0 / n)
    for it in range(1, max_iters + 1):
        if np.max(np.abs(g)) < tol:
            return s
        q = expit(s[i] - s[j] - gamma)
        w = q * (1.0 - q)
        lap = np.zeros((n, n))
        np.add.at(lap, (i, i), w)
        np.add.at(lap, (j, j), w)
        np.add.at(lap, (i, j), -w)
        np.add.at(lap, (j, i), -w)
        try:
            step = np.linalg.solve(lap + centre, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(lap, g, rcond=None)[0]
        slope = float(g @ step)
        t = 1.0
        while True:
            cand = s + t * step
            f_new = soft_bt_objective(cset, cand, gamma)
            if f_new >= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if f_new < f:
            # numerically flat; a full step cannot improve any further
            break
        s, f = cand - cand.mean(), f_new
        g = soft_bt_gradient(cset, s, gamma)
        if callback is not None:
            callback(it, s)
    residual = float(np.max(np.abs(g)))
    if residual < max(tol, POE_BT_ACCEPT_TOL):
        return s
    raise ConvergenceError(f"poe-bt: no convergence after {max_iters} iterations", s, residual)


def poe_bt(
    cset: ComparisonSet,
    cfg: EstimatorConfig | None = None,
    debias: DebiasParams | None = None,
    *,
    gamma: float | None = None,
    solver: str = "auto",
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> ScoreEstimate:
    """Maximize the soft Bradley-Terry product of experts.

    With ``gamma == 0`` the soft Zermelo (MM) iteration is used; with a
    positional shift the MM form no longer applies and a damped Newton
    ascent is run instead. ``solver`` forces one or the other ("mm" is only
    valid for ``gamma == 0``). Scores are mean-centred.
    """
    cfg = cfg or EstimatorConfig(method="poe-bt")
    if len(cset) == 0:
        raise ValidationError("empty comparison set")
    p = cset.probs()
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValidationError("poe-bt needs probabilities strictly inside (0, 1)")
    _require_coverage(cset)
    if gamma is None:
        if debias is None and cfg.debias:
            debias = estimate_debias(cset)
        gamma = debias.gamma_bt if debias is not None else 0.0
    if solver == "auto":
        solver = "mm" if gamma == 0.0 else "newton"
    if solver == "mm":
        if gamma != 0.0:
            raise ValueError("the MM solver cannot handle a positional shift")
        total, games = _win_matrices(cset, p, 0.0)

        def converged(old, new):
            resid = float(np.max(np.abs(soft_bt_gradient(cset, new))))
            return resid < POE_BT_GRAD_TOL, resid

        s = _zermelo(total, games, cfg.max_iters, converged, "poe-bt", callback)
    elif solver == "newton":
        s = _newton_ascent(cset, gamma, cfg.max_iters, POE_BT_GRAD_TOL, callback)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return ScoreEstimate(s, "poe-bt", info={"gamma": gamma})


def estimate(cset: ComparisonSet, cfg: EstimatorConfig, debias: DebiasParams | None = None) -> ScoreEstimate:
    """Run the estimator named by ``cfg.method``."""
    from . import gaussian

    method = cfg.method
    if method == "win-ratio":
        return win_ratio(cset)
    if method == "avg-prob":
        return avg_prob(cset)
    if method == "bt-hard":
        return bt_hard(cset, cfg)
    if method == "poe-bt":
        return poe_bt(cset, cfg, debias)
    if method == "poe-g":
        return gaussian.poe_g(cset, cfg, debias)
    if method == "poe-g-hard":
        return gaussian.poe_g_hard(cset, cfg, debias)
    raise ValueError(f"unknown method {method!r}")
