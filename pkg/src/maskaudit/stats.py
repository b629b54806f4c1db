"""False-negative metrics and nonparametric significance tests.

The detection-rate pipeline: per-group false negative rates, the normalized
false negative equality difference (mean absolute deviation of group FNRs
from the overall FNR), and rank tests over per-template FNR vectors --
Friedman across 3+ groups with Nemenyi post-hoc pairs, Wilcoxon signed-rank
for exactly 2 groups, plus Bonferroni correction across a run's tests.

Small samples use exact enumeration (all sign assignments for Wilcoxon, all
rank splits for Mann-Whitney); larger ones use the usual tie-corrected
normal / chi-square approximations via :mod:`maskaudit.distributions`.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from itertools import combinations
from typing import TYPE_CHECKING, Iterable, Sequence

from .distributions import chi_square_sf, normal_sf, studentized_range_sf

if TYPE_CHECKING:
    from .maskers import MaskOutcome

EXACT_LIMIT = 12  # combined sample size below which tests enumerate exactly

TEST_KINDS = ("friedman", "wilcoxon", "mann_whitney", "nemenyi_pair")


@dataclass(frozen=True)
class SignificanceResult:
    """Outcome of one hypothesis test."""

    kind: str
    statistic: float
    p_value: float
    groups: tuple[str, ...] = ()
    significant_at: float | None = None
    method: str = ""

    def __post_init__(self):
        if self.kind not in TEST_KINDS:
            raise ValueError(f"unknown test kind {self.kind!r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def significant(self) -> bool | None:
        """True/False once a threshold has been applied, else None."""
        if self.significant_at is None:
            return None
        return self.p_value < self.significant_at


@dataclass(frozen=True)
class CorrectionPlan:
    """Bonferroni correction across a run's comparisons."""

    alpha: float = 0.05
    num_comparisons: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha {self.alpha} outside (0, 1)")
        if self.num_comparisons < 1:
            raise ValueError("num_comparisons must be >= 1")

    @property
    def adjusted_threshold(self) -> float:
        return self.alpha / self.num_comparisons

    @property
    def display_threshold(self) -> str:
        return f"{self.adjusted_threshold:.3f}"


@dataclass(frozen=True)
class GroupMetrics:
    """Per-group detection metrics for one dataset/masker pair."""

    group: str
    n_names: int
    fnr: float
    per_template_fnr: tuple[float, ...]
    n_instances: int = 0
    low_support: bool = False


def midranks(values: Sequence[float]) -> list[float]:
    """Fractional ranks (1-based); tied values share the mean of their ranks."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for idx in order[i : j + 1]:
            ranks[idx] = rank
        i = j + 1
    return ranks


def tie_counts(values: Sequence[float]) -> list[int]:
    counts: dict[float, int] = defaultdict(int)
    for v in values:
        counts[v] += 1
    return [c for c in counts.values() if c > 1]


def fnr(outcomes: Sequence["MaskOutcome"]) -> float:
    """Fraction of outcomes where the name was not fully detected."""
    if not outcomes:
        raise ValueError("cannot compute FNR over an empty outcome list")
    missed = sum(1 for o in outcomes if not o.detected)
    return missed / len(outcomes)


def per_template_fnr(
    outcomes: Iterable["MaskOutcome"], group: str, dimension: str = "race"
) -> list[float]:
    """Per-template miss rates for one group, ordered by template id.

    The template universe is every template id present in ``outcomes``; the
    design must be balanced, so a template with no instances for the group
    is an error.
    """
    if dimension not in ("race", "gender"):
        raise ValueError(f"unknown dimension {dimension!r}")
    by_template: dict[int, list[bool]] = defaultdict(list)
    template_ids: set[int] = set()
    for o in outcomes:
        template_ids.add(o.template_id)
        label = o.group if dimension == "race" else o.gender
        if label == group:
            by_template[o.template_id].append(not o.detected)
    if not template_ids:
        raise ValueError("no outcomes supplied")
    rates = []
    for tid in sorted(template_ids):
        misses = by_template.get(tid)
        if not misses:
            raise ValueError(
                f"unbalanced design: group {group!r} has no instances for template {tid}"
            )
        rates.append(sum(misses) / len(misses))
    return rates


def fned(overall_fnr: float, group_fnrs: Sequence[float]) -> float:
    """Mean absolute deviation of group FNRs from the overall FNR.

    Scale-agnostic: feed fractions to get a fraction, percentages to get
    percentage points.
    """
    if not group_fnrs:
        raise ValueError("fned requires at least one group FNR")
    for value in (overall_fnr, *group_fnrs):
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"FNR value {value} outside [0, 100]")
    return sum(abs(overall_fnr - g) for g in group_fnrs) / len(group_fnrs)


def _check_matrix(x: Sequence[Sequence[float]]) -> tuple[int, int]:
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 blocks (rows)")
    k = len(x[0])
    if any(len(row) != k for row in x):
        raise ValueError("ragged matrix: all rows must have the same length")
    if k < 3:
        raise ValueError(
            f"{k} groups: the Friedman test needs >= 3; use wilcoxon_signed_rank for 2"
        )
    return n, k


def friedman(
    x: Sequence[Sequence[float]], groups: Sequence[str] = ()
) -> SignificanceResult:
    """Friedman rank test over blocks (rows) x groups (columns).

    Within-block fractional ranks with the standard tie correction; the
    statistic is referred to chi-square with k-1 degrees of freedom.
    """
    n, k = _check_matrix(x)
    rank_sums = [0.0] * k
    ties = 0.0
    for row in x:
        row_ranks = midranks(row)
        for j, r in enumerate(row_ranks):
            rank_sums[j] += r
        for t in tie_counts(row):
            ties += t**3 - t
    correction = 1.0 - ties / (k * (k * k - 1) * n)
    if correction <= 0.0:
        # Every block fully tied: no information, by convention a null result.
        statistic, p = 0.0, 1.0
        method = "chi-square approximation (degenerate: all blocks tied)"
    else:
        ssbn = sum(r * r for r in rank_sums)
        statistic = (12.0 / (k * n * (k + 1)) * ssbn - 3.0 * n * (k + 1)) / correction
        statistic = max(statistic, 0.0)
        p = chi_square_sf(statistic, k - 1)
        method = "chi-square approximation, tie-corrected"
    return SignificanceResult(
        kind="friedman", statistic=statistic, p_value=p, groups=tuple(groups), method=method
    )


def nemenyi(
    x: Sequence[Sequence[float]], groups: Sequence[str] = ()
) -> list[list[SignificanceResult]]:
    """Pairwise post-hoc comparisons of average ranks after a Friedman test.

    Each pair's standardized rank difference is referred to the
    studentized range distribution (infinite degrees of freedom).  Returns
    a symmetric k x k matrix of results with a unit diagonal.
    """
    n, k = _check_matrix(x)
    labels = tuple(groups) if groups else tuple(str(j) for j in range(k))
    if len(labels) != k:
        raise ValueError("group labels must match the number of columns")
    mean_ranks = [0.0] * k
    for row in x:
        for j, r in enumerate(midranks(row)):
            mean_ranks[j] += r
    mean_ranks = [r / n for r in mean_ranks]
    scale = (k * (k + 1) / (12.0 * n)) ** 0.5

    matrix: list[list[SignificanceResult]] = [[None] * k for _ in range(k)]  # type: ignore[list-item]
    for i in range(k):
        matrix[i][i] = SignificanceResult(
            kind="nemenyi_pair",
            statistic=0.0,
            p_value=1.0,
            groups=(labels[i], labels[i]),
            method="studentized range, infinite df",
        )
    for i, j in combinations(range(k), 2):
        q = abs(mean_ranks[i] - mean_ranks[j]) / scale
        p = studentized_range_sf(q, k)
        res = SignificanceResult(
            kind="nemenyi_pair",
            statistic=q,
            p_value=p,
            groups=(labels[i], labels[j]),
            method="studentized range, infinite df",
        )
        matrix[i][j] = res
        matrix[j][i] = replace(res, groups=(labels[j], labels[i]))
    return matrix


def _wilcoxon_exact_p(scaled_ranks: Sequence[int], w_plus_scaled: int) -> float:
    # Enumerate all 2^n sign assignments over the (doubled, integer) ranks.
    total = sum(scaled_ranks)
    w_min = min(w_plus_scaled, total - w_plus_scaled)
    n = len(scaled_ranks)
    hits = 0
    for mask in range(1 << n):
        w = 0
        m = mask
        idx = 0
        while m:
            if m & 1:
                w += scaled_ranks[idx]
            m >>= 1
            idx += 1
        if w <= w_min or w >= total - w_min:
            hits += 1
    return hits / (1 << n)


def wilcoxon_signed_rank(
    x: Sequence[float],
    y: Sequence[float],
    method: str = "auto",
    groups: Sequence[str] = (),
) -> SignificanceResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are discarded (classic handling); tied absolute
    differences get fractional ranks.  Exact enumeration of sign
    assignments for n <= 12 nonzero pairs, otherwise a tie- and
    continuity-corrected normal approximation.
    """
    if len(x) != len(y):
        raise ValueError("paired samples must have equal length")
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    diffs = [a - b for a, b in zip(x, y)]
    nonzero = [d for d in diffs if d != 0.0]
    zeros_discarded = len(diffs) - len(nonzero)
    if not nonzero:
        raise ValueError("no nonzero pairs: all differences are zero")
    n = len(nonzero)
    if n < 5:
        raise ValueError(f"only {n} nonzero pairs; need at least 5")

    abs_ranks = midranks([abs(d) for d in nonzero])
    w_plus = sum(r for r, d in zip(abs_ranks, nonzero) if d > 0)
    w_minus = sum(r for r, d in zip(abs_ranks, nonzero) if d < 0)
    statistic = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        scaled = [int(round(2 * r)) for r in abs_ranks]  # fractional ranks are half-integers
        p = _wilcoxon_exact_p(scaled, int(round(2 * w_plus)))
        how = "exact enumeration"
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        var -= sum(t**3 - t for t in tie_counts(abs_ranks)) / 48.0
        if var <= 0:
            p = 1.0
        else:
            z = (max(w_plus, w_minus) - mean - 0.5) / var**0.5
            p = min(1.0, 2.0 * normal_sf(z))
        how = "normal approximation, tie- and continuity-corrected"
    return SignificanceResult(
        kind="wilcoxon",
        statistic=statistic,
        p_value=p,
        groups=tuple(groups),
        method=f"{how}; zeros discarded: {zeros_discarded}",
    )


def apply_correction(
    results: Iterable[SignificanceResult], plan: CorrectionPlan
) -> list[SignificanceResult]:
    """Stamp each result with the plan's adjusted threshold."""
    return [replace(r, significant_at=plan.adjusted_threshold) for r in results]
