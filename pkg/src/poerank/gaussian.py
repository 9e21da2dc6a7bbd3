"""Gaussian product of experts: anchored design system and closed-form posterior."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import ComparisonSet, DisconnectedError, ScoreEstimate, ValidationError, components
from .estimators import DebiasParams, EstimatorConfig
from .fileio import posterior_to_json


@dataclass(frozen=True)
class DesignSystem:
    """Anchor row plus one +1/-1 row per comparison, with per-row expert means and variances."""

    w_tilde: np.ndarray  # (K+1, N)
    mu_tilde: np.ndarray  # (K+1,)
    sigma_sq_tilde: np.ndarray  # (K+1,)

    def __post_init__(self):
        rows = self.w_tilde.shape[0]
        if not (rows == len(self.mu_tilde) == len(self.sigma_sq_tilde)):
            raise ValueError("design rows, means and variances disagree in length")
        if np.any(self.sigma_sq_tilde <= 0):
            raise ValueError("expert variances must be positive")

    @property
    def n_items(self) -> int:
        return self.w_tilde.shape[1]

    def pairs(self) -> list[tuple[int, int]]:
        rows = self.w_tilde[1:]
        return [(int(np.argmax(r)), int(np.argmin(r))) for r in rows]

    def precision(self) -> np.ndarray:
        """``W~^T Sigma~^-1 W~``."""
        w = self.w_tilde
        return w.T @ (w / self.sigma_sq_tilde[:, None])


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    log_max_density: float

    def to_json(self, include_covariance: bool = True) -> str:
        cov = self.covariance if include_covariance else None
        return posterior_to_json(self.mean, self.log_max_density, cov)


def design_matrix(n: int, pairs: list[tuple[int, int]]) -> np.ndarray:
    w = np.zeros((len(pairs) + 1, n))
    w[0, 0] = 1.0
    rows = np.arange(1, len(pairs) + 1)
    if pairs:
        idx = np.asarray(pairs, dtype=np.intp)
        w[rows, idx[:, 0]] = 1.0
        w[rows, idx[:, 1]] = -1.0
    return w


def build_design(
    cset: ComparisonSet,
    cfg: EstimatorConfig | None = None,
    debias: DebiasParams | None = None,
    hard: bool = False,
) -> DesignSystem:
    """Linear-mean, constant-variance experts: row mean ``alpha * (p - beta)``, variance ``sigma_sq``.

    With ``hard=True`` each comparison contributes its decision (1, 0, or 0.5
    for a tie) in place of ``p``.
    """
    cfg = cfg or EstimatorConfig()
    if hard:
        p = cset.outcomes()
    else:
        if not cset.has_probs:
            raise ValidationError("soft Gaussian experts need a probability on every record")
        p = cset.probs()
    beta = debias.beta_g if debias is not None else cfg.beta
    k = len(cset)
    mu = np.concatenate([[0.0], cfg.alpha * (p - beta)])
    var = np.concatenate([[cfg.sigma0_sq], np.full(k, cfg.sigma_sq)])
    return DesignSystem(design_matrix(cset.n_items, cset.pairs()), mu, var)


def posterior(design: DesignSystem) -> GaussianPosterior:
    """Closed-form Gaussian score posterior from the anchored design."""
    n = design.n_items
    comps = components(n, design.pairs())
    if len(comps) > 1:
        raise DisconnectedError(comps)
    prec = design.precision()
    try:
        factor = cho_factor(prec, lower=True)
    except LinAlgError as exc:
        raise ValidationError("normal matrix is not positive definite") from exc
    rhs = design.w_tilde.T @ (design.mu_tilde / design.sigma_sq_tilde)
    mean = cho_solve(factor, rhs)
    cov = cho_solve(factor, np.eye(n))
    cov = 0.5 * (cov + cov.T)
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return GaussianPosterior(mean, cov, 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi))


def poe_g(
    cset: ComparisonSet,
    cfg: EstimatorConfig | None = None,
    debias: DebiasParams | None = None,
) -> ScoreEstimate:
    cfg = cfg or EstimatorConfig(method="poe-g")
    if debias is None and cfg.debias:
        from .estimators import estimate_debias

        debias = estimate_debias(cset)
    post = posterior(build_design(cset, cfg, debias))
    return ScoreEstimate(post.mean, "poe-g", covariance=post.covariance,
                         info={"log_max_density": post.log_max_density,
                               "beta": debias.beta_g if debias else cfg.beta})


def poe_g_hard(
    cset: ComparisonSet,
    cfg: EstimatorConfig | None = None,
    debias: DebiasParams | None = None,
) -> ScoreEstimate:
    """Gaussian PoE on hard decisions; debiasing uses the mean decision as the offset."""
    cfg = cfg or EstimatorConfig(method="poe-g-hard")
    if debias is None and cfg.debias:
        debias = DebiasParams.from_mean(float(np.clip(cset.outcomes().mean(), 1e-6, 1 - 1e-6)))
    post = posterior(build_design(cset, cfg, debias, hard=True))
    return ScoreEstimate(post.mean, "poe-g-hard", covariance=post.covariance,
                         info={"log_max_density": post.log_max_density})


def full_set_normal_matrix(n: int) -> np.ndarray:
    """Anchored normal matrix of the complete undirected comparison set."""
    if n < 2:
        raise ValidationError("need at least 2 items")
    a = np.full((n, n), -1.0)
    np.fill_diagonal(a, n - 1.0)
    a[0, 0] = float(n)
    return a
