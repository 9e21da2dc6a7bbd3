"""Comparison records, validation, symmetrization and coverage-constrained sampling."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PROB_EPS = 1e-6

Pair = tuple[int, int]


class ValidationError(ValueError):
    """Malformed comparison data or an infeasible request."""


class ConvergenceError(RuntimeError):
    """An iterative estimator stopped before meeting its tolerance."""

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.last_iterate = last_iterate
        self.residual = residual


class DisconnectedError(ValueError):
    """The comparison graph splits into more than one component."""

    def __init__(self, components: list[list[int]]):
        shown = "; ".join(str(c) for c in components[:5])
        more = "" if len(components) <= 5 else f" (+{len(components) - 5} more)"
        super().__init__(f"comparison graph is disconnected into {len(components)} components: {shown}{more}")
        self.components = components


@dataclass(frozen=True)
class ComparisonRecord:
    i: int
    j: int
    p: float | None = None  # probability that i beats j
    y: int | None = None  # hard outcome, 1 = i wins

    def prob_for(self, item: int) -> float:
        """Probability of ``item`` winning this comparison."""
        if self.p is None:
            raise ValidationError(f"record {self} has no probability")
        return self.p if item == self.i else 1.0 - self.p

    def outcome(self) -> float:
        """Hard outcome for the first item: ``y`` if given, else thresholded ``p`` (0.5 is a tie)."""
        if self.y is not None:
            return float(self.y)
        if self.p is None:
            raise ValidationError(f"record {self} has neither p nor y")
        if self.p > 0.5:
            return 1.0
        if self.p < 0.5:
            return 0.0
        return 0.5


@dataclass(frozen=True)
class ComparisonSet:
    n_items: int
    records: tuple[ComparisonRecord, ...]
    directed: bool = True
    n_clamped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def firsts(self) -> np.ndarray:
        return np.fromiter((r.i for r in self.records), dtype=np.intp, count=len(self.records))

    @property
    def seconds(self) -> np.ndarray:
        return np.fromiter((r.j for r in self.records), dtype=np.intp, count=len(self.records))

    @property
    def has_probs(self) -> bool:
        return all(r.p is not None for r in self.records)

    def probs(self) -> np.ndarray:
        if not self.has_probs:
            missing = next(r for r in self.records if r.p is None)
            raise ValidationError(f"record {missing} has no probability")
        return np.array([r.p for r in self.records], dtype=float)

    def outcomes(self) -> np.ndarray:
        return np.array([r.outcome() for r in self.records], dtype=float)

    def pairs(self) -> list[Pair]:
        return [(r.i, r.j) for r in self.records]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.firsts, minlength=self.n_items) + np.bincount(self.seconds, minlength=self.n_items)


@dataclass(frozen=True)
class ScoreEstimate:
    scores: np.ndarray
    method: str
    covariance: np.ndarray | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.method} produced non-finite scores")

    def ranking(self) -> np.ndarray:
        """Item indices from best to worst."""
        return np.argsort(-self.scores, kind="stable")


def _coerce(rec: ComparisonRecord | Mapping) -> ComparisonRecord:
    if isinstance(rec, ComparisonRecord):
        return rec
    p = rec.get("p")
    y = rec.get("y")
    return ComparisonRecord(
        i=int(rec["i"]),
        j=int(rec["j"]),
        p=None if p is None else float(p),
        y=None if y is None else int(y),
    )


def validate_set(
    records: Iterable[ComparisonRecord | Mapping],
    n: int,
    directed: bool = True,
    eps: float = PROB_EPS,
) -> ComparisonSet:
    """Check indices and outcomes, clamp probabilities into ``[eps, 1 - eps]``.

    Records may be ``ComparisonRecord`` instances or mappings with keys
    ``i``, ``j`` and at least one of ``p``/``y``.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 items, got n={n}")
    checked = []
    n_clamped = 0
    for idx, raw in enumerate(records):
        try:
            rec = _coerce(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"record {idx} is malformed: {raw!r}") from exc
        if not (0 <= rec.i < n and 0 <= rec.j < n):
            raise ValidationError(f"record {idx} ({rec.i}, {rec.j}): index out of range for n={n}")
        if rec.i == rec.j:
            raise ValidationError(f"record {idx} ({rec.i}, {rec.j}): self-comparison")
        if rec.p is None and rec.y is None:
            raise ValidationError(f"record {idx} ({rec.i}, {rec.j}): needs p or y")
        if rec.y is not None and rec.y not in (0, 1):
            raise ValidationError(f"record {idx} ({rec.i}, {rec.j}): y must be 0 or 1, got {rec.y}")
        if rec.p is not None:
            if not np.isfinite(rec.p) or rec.p < 0.0 or rec.p > 1.0:
                raise ValidationError(f"record {idx} ({rec.i}, {rec.j}): p={rec.p} outside [0, 1]")
            clamped = min(max(rec.p, eps), 1.0 - eps)
            if clamped != rec.p:
                n_clamped += 1
                rec = ComparisonRecord(rec.i, rec.j, clamped, rec.y)
        checked.append(rec)
    if not checked:
        raise ValidationError("no comparison records")
    if n_clamped:
        logger.warning("clamped %d probabilities into [%g, %g]", n_clamped, eps, 1.0 - eps)
    return ComparisonSet(n_items=n, records=tuple(checked), directed=directed, n_clamped=n_clamped)


def symmetrize(cset: ComparisonSet) -> ComparisonSet:
    """Combine both presentation orders into one record per unordered pair.

    Repeated draws of the same ordered pair are averaged before combining.
    The output keeps the orientation in which a pair first appears.
    """
    sums: dict[Pair, list[float]] = {}
    order: list[Pair] = []
    for r in cset.records:
        if r.p is None:
            raise ValidationError(f"record ({r.i}, {r.j}) has no probability to symmetrize")
        key = (r.i, r.j)
        if key not in sums:
            sums[key] = [0.0, 0]
            if (r.j, r.i) not in sums:
                order.append(key)
        sums[key][0] += r.p
        sums[key][1] += 1

    out = []
    for i, j in order:
        if (j, i) not in sums:
            raise ValidationError(f"pair ({i}, {j}) has no reversed comparison ({j}, {i})")
        fwd = sums[(i, j)][0] / sums[(i, j)][1]
        rev = sums[(j, i)][0] / sums[(j, i)][1]
        out.append(ComparisonRecord(i, j, 0.5 * (fwd + (1.0 - rev))))
    return ComparisonSet(n_items=cset.n_items, records=tuple(out), directed=False, n_clamped=cset.n_clamped)


def all_pairs(n: int, directed: bool = False) -> list[Pair]:
    if directed:
        return [(i, j) for i in range(n) for j in range(n) if i != j]
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def max_pairs(n: int, directed: bool = False) -> int:
    return n * (n - 1) if directed else n * (n - 1) // 2


def sample_subset(n: int, k: int, rng_seed: int | np.random.Generator, directed: bool = False) -> list[Pair]:
    """Draw ``k`` unique pairs such that every item is compared at least once.

    A random chain over a permutation of the items guarantees coverage; the
    remaining ``k - (n - 1)`` pairs are drawn uniformly without replacement
    from the pairs not yet used. Undirected pairs are returned as ``(lo, hi)``.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 items, got n={n}")
    hi = max_pairs(n, directed)
    if not (n - 1 <= k <= hi):
        kind = "directed" if directed else "undirected"
        raise ValidationError(f"k={k} infeasible for n={n} ({kind}): need {n - 1} <= k <= {hi}")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    chain = []
    for a, b in zip(perm[:-1], perm[1:]):
        a, b = int(a), int(b)
        if directed:
            chain.append((a, b) if rng.random() < 0.5 else (b, a))
        else:
            chain.append((min(a, b), max(a, b)))
    used = set(chain)
    rest = [pr for pr in all_pairs(n, directed) if pr not in used]
    extra = rng.choice(len(rest), size=k - len(chain), replace=False) if k > len(chain) else []
    pairs = chain + [rest[int(t)] for t in extra]
    return [pairs[int(t)] for t in rng.permutation(len(pairs))]


def components(n: int, pairs: Iterable[Pair]) -> list[list[int]]:
    """Connected components of the comparison graph, each sorted, ordered by smallest member."""
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    return sorted(groups.values(), key=lambda g: g[0])
