"""Greedy determinant-maximizing comparison selection.

Two schemes share one state object: the Gaussian scheme keeps
``A = (W~^T W~)^-1`` current with rank-one updates, and the Laplace-BT scheme
refactorizes the soft Bradley-Terry Hessian after every commit because all of
its weights move with the score estimate.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Collection, Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import ComparisonRecord, ComparisonSet, Pair, ValidationError, max_pairs
from .estimators import EstimatorConfig, poe_bt

TIE_RTOL = 1e-12

PairFilter = Callable[[int, int], bool] | Collection[Pair] | None


@dataclass
class SelectionState:
    n: int
    a_inv: np.ndarray
    chosen: list[Pair] = field(default_factory=list)
    log_det: float = 0.0  # log det(W~^T W~) for the chosen pairs

    @property
    def k(self) -> int:
        return len(self.chosen)

    def normal_matrix(self) -> np.ndarray:
        return normal_matrix(self.n, self.chosen)


@dataclass(frozen=True)
class LaplaceApprox:
    s_hat: np.ndarray
    hessian_inv_factors: np.ndarray  # precision (negative Hessian) including the anchor

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.hessian_inv_factors)


def normal_matrix(n: int, pairs: list[Pair], anchor: float = 1.0) -> np.ndarray:
    """``W~^T W~`` for the anchor row plus the given comparisons."""
    a = np.zeros((n, n))
    a[0, 0] = anchor
    for i, j in pairs:
        a[i, i] += 1.0
        a[j, j] += 1.0
        a[i, j] -= 1.0
        a[j, i] -= 1.0
    return a


def strip_pairs(n: int) -> list[Pair]:
    return [(t, t + 1) for t in range(n - 1)]


def init_selection(n: int) -> SelectionState:
    """Seed with the anchor and the chain ``(0,1), (1,2), ..., (n-2, n-1)``."""
    if n < 2:
        raise ValidationError("need at least 2 items")
    pairs = strip_pairs(n)
    a = normal_matrix(n, pairs)
    sign, log_det = np.linalg.slogdet(a)
    return SelectionState(n=n, a_inv=np.linalg.inv(a), chosen=list(pairs), log_det=float(log_det))


def pair_gains(a_inv: np.ndarray) -> np.ndarray:
    """Matrix of ``A_ii + A_jj - 2 A_ij`` over all (i, j)."""
    d = np.diag(a_inv)
    return d[:, None] + d[None, :] - 2.0 * a_inv


def _admissible_mask(n: int, allowed: PairFilter, exclude: Collection[Pair] = ()) -> np.ndarray:
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    if allowed is not None:
        if callable(allowed):
            keep = np.zeros_like(mask)
            for i, j in zip(*np.nonzero(mask)):
                keep[i, j] = bool(allowed(int(i), int(j)))
        else:
            keep = np.zeros_like(mask)
            for i, j in allowed:
                keep[min(i, j), max(i, j)] = True
        mask &= keep
    for i, j in exclude:
        mask[min(i, j), max(i, j)] = False
    return mask


def _argmax_pair(values: np.ndarray, mask: np.ndarray) -> Pair:
    """Lexicographically first pair among those within rounding of the maximum."""
    if not mask.any():
        raise ValidationError("no admissible pair remains")
    best = values[mask].max()
    close = mask & (values >= best - TIE_RTOL * max(abs(best), 1.0))
    i, j = np.argwhere(close)[0]
    return int(i), int(j)


def next_pair_gaussian(state: SelectionState, allowed: PairFilter = None, unique: bool = False) -> Pair:
    """Pair maximizing ``A_ii + A_jj - 2 A_ij``; pairs come back as ``(lo, hi)``."""
    mask = _admissible_mask(state.n, allowed, state.chosen if unique else ())
    return _argmax_pair(pair_gains(state.a_inv), mask)


def laplace_weights(s_hat: np.ndarray) -> np.ndarray:
    d = s_hat[:, None] - s_hat[None, :]
    return expit(d) * expit(-d)


def next_pair_laplace_bt(
    state: SelectionState,
    s_hat: np.ndarray,
    allowed: PairFilter = None,
    unique: bool = False,
) -> Pair:
    """Gaussian gain weighted by ``sigma(s_i - s_j) sigma(s_j - s_i)``."""
    mask = _admissible_mask(state.n, allowed, state.chosen if unique else ())
    return _argmax_pair(laplace_weights(np.asarray(s_hat, float)) * pair_gains(state.a_inv), mask)


def _difference_vector(n: int, pair: Pair) -> np.ndarray:
    i, j = pair
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ValidationError(f"invalid pair {pair} for n={n}")
    r = np.zeros(n)
    r[i], r[j] = 1.0, -1.0
    return r


def commit_pair(state: SelectionState, pair: Pair) -> SelectionState:
    """Append ``pair`` and update the inverse in place with Sherman-Morrison."""
    r = _difference_vector(state.n, pair)
    ar = state.a_inv @ r
    denom = 1.0 + float(r @ ar)
    if denom <= 0.0:
        raise ArithmeticError(f"rank-one update broke down (1 + r'Ar = {denom})")
    state.a_inv = state.a_inv - np.outer(ar, ar) / denom
    state.a_inv = 0.5 * (state.a_inv + state.a_inv.T)
    state.log_det += math.log(denom)
    state.chosen.append((int(pair[0]), int(pair[1])))
    return state


def laplace_hessian(
    cset: ComparisonSet,
    s_hat: np.ndarray,
    sigma0_sq: float = 1.0,
    gamma: float = 0.0,
) -> np.ndarray:
    """Negative Hessian of the soft-BT log density at ``s_hat``, plus ``1/sigma0_sq`` on entry (0, 0)."""
    s_hat = np.asarray(s_hat, dtype=float)
    n = cset.n_items
    i, j = cset.firsts, cset.seconds
    q = expit(s_hat[i] - s_hat[j] - gamma)
    w = q * (1.0 - q)
    h = np.zeros((n, n))
    np.add.at(h, (i, i), w)
    np.add.at(h, (j, j), w)
    np.add.at(h, (i, j), -w)
    np.add.at(h, (j, i), -w)
    h[0, 0] += 1.0 / sigma0_sq
    return h


def laplace_approx(cset: ComparisonSet, cfg: EstimatorConfig | None = None) -> LaplaceApprox:
    est = poe_bt(cset, cfg)
    return LaplaceApprox(est.scores, laplace_hessian(cset, est.scores, (cfg or EstimatorConfig()).sigma0_sq))


ProbLookup = Callable[[int, int], float] | Mapping[Pair, float]


def _lookup(probs: ProbLookup, i: int, j: int) -> float:
    if callable(probs):
        return float(probs(i, j))
    if (i, j) in probs:
        return float(probs[(i, j)])
    if (j, i) in probs:
        return 1.0 - float(probs[(j, i)])
    raise ValidationError(f"no probability available for pair ({i}, {j})")


def _refit(n: int, records: list[ComparisonRecord], cfg: EstimatorConfig) -> tuple[np.ndarray, np.ndarray]:
    cset = ComparisonSet(n_items=n, records=tuple(records), directed=False)
    s_hat = poe_bt(cset, cfg).scores
    h = laplace_hessian(cset, s_hat, cfg.sigma0_sq)
    return s_hat, np.linalg.inv(h)


def select_batch(
    n: int,
    k: int,
    mode: str = "gaussian",
    probs: ProbLookup | None = None,
    unique_pairs: bool = False,
    allowed: PairFilter = None,
    cfg: EstimatorConfig | None = None,
    on_step: Callable[[SelectionState], None] | None = None,
) -> SelectionState:
    """Strip initialization followed by ``k - (n - 1)`` greedy steps.

    In ``laplace-bt`` mode ``probs`` supplies the observed probability of each
    committed pair; it may be a mapping or a callable, so pairs can be judged
    lazily as they are chosen.
    """
    if mode not in ("gaussian", "laplace-bt"):
        raise ValueError(f"unknown selection mode {mode!r}")
    if k < n - 1:
        raise ValidationError(f"k={k} below the {n - 1} comparisons needed to connect {n} items")
    if unique_pairs and k > max_pairs(n):
        raise ValidationError(f"k={k} exceeds the {max_pairs(n)} unique pairs for n={n}")
    state = init_selection(n)
    if on_step is not None:
        on_step(state)
    if mode == "gaussian":
        while state.k < k:
            commit_pair(state, next_pair_gaussian(state, allowed, unique_pairs))
            if on_step is not None:
                on_step(state)
        return state

    if probs is None:
        raise ValidationError("laplace-bt selection needs observed probabilities")
    cfg = cfg or EstimatorConfig(method="poe-bt")
    eps = 1e-6
    records = [ComparisonRecord(i, j, min(max(_lookup(probs, i, j), eps), 1 - eps)) for i, j in state.chosen]
    # the Gaussian inverse is tracked alongside for the reported log-det
    gauss = SelectionState(n=n, a_inv=state.a_inv.copy(), chosen=list(state.chosen), log_det=state.log_det)
    s_hat, state.a_inv = _refit(n, records, cfg)
    while state.k < k:
        i, j = next_pair_laplace_bt(state, s_hat, allowed, unique_pairs)
        records.append(ComparisonRecord(i, j, min(max(_lookup(probs, i, j), eps), 1 - eps)))
        commit_pair(gauss, (i, j))
        state.chosen.append((i, j))
        state.log_det = gauss.log_det
        s_hat, state.a_inv = _refit(n, records, cfg)
        if on_step is not None:
            on_step(state)
    return state
