"""Frequency matching of name pools across demographic groups.

Popularity is a confound for detection rates, so pools are trimmed to a
shared frequency band and, when one group's distribution is hard to reach
by trimming alone, the remaining groups are thinned toward an exponential
target.  A Mann-Whitney U test per group pair then checks that no pair
differs significantly in frequency.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

from .corpus import AssociatedName
from .stats import EXACT_LIMIT, SignificanceResult, midranks, tie_counts
from .distributions import normal_sf

DEFAULT_MIN_COUNT = 2_000
DEFAULT_MAX_COUNT = 150_000
DEFAULT_EXPONENTIAL_RATE = 480.0


@dataclass(frozen=True)
class MatchConfig:
    """Knobs for one frequency-matching pass."""

    min_count: Optional[int] = DEFAULT_MIN_COUNT
    max_count: Optional[int] = DEFAULT_MAX_COUNT
    exponential_rate: Optional[float] = None  # mean of the target shape, in scaled counts
    scale: float = 1.0
    target_group: Optional[str] = None  # kept as-is; other groups are thinned toward it
    seed: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        if self.min_count is not None and self.max_count is not None:
            if self.min_count >= self.max_count:
                raise ValueError("min_count must be below max_count")
        if self.exponential_rate is not None and self.exponential_rate <= 0:
            raise ValueError("exponential_rate must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha outside (0, 1)")


@dataclass(frozen=True)
class MatchReport:
    """Result of validating a matched pool."""

    retained: dict[str, int]
    mean_frequency: dict[str, float]
    pairwise: dict[tuple[str, str], SignificanceResult]
    matched: bool
    alpha: float
    skipped_groups: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "retained": dict(sorted(self.retained.items())),
            "mean_frequency": dict(sorted(self.mean_frequency.items())),
            "pairwise": [
                {
                    "groups": list(pair),
                    "statistic": res.statistic,
                    "p_value": res.p_value,
                    "method": res.method,
                }
                for pair, res in sorted(self.pairwise.items())
            ],
            "matched": self.matched,
            "alpha": self.alpha,
            "skipped_groups": list(self.skipped_groups),
        }


def _sort_key(entry: AssociatedName):
    return (entry.name, entry.group.label, entry.gender, entry.frequency)


def filter_by_frequency(
    pool: Sequence[AssociatedName],
    min_count: Optional[int],
    max_count: Optional[int],
) -> list[AssociatedName]:
    """Keep names whose frequency lies in [min_count, max_count], inclusive."""
    if min_count is not None and max_count is not None and min_count >= max_count:
        raise ValueError("min_count must be below max_count")
    out = []
    for entry in pool:
        if min_count is not None and entry.frequency < min_count:
            continue
        if max_count is not None and entry.frequency > max_count:
            continue
        out.append(entry)
    return out


def sample_exponential(
    pool: Sequence[AssociatedName],
    rate: float,
    seed: int,
    scale: float = 1.0,
) -> list[AssociatedName]:
    """Thin a pool so retained frequencies decay like an exponential.

    Acceptance probability is the target density at a name's frequency,
    normalized so the pool's smallest frequency is always accepted:
    ``exp(-(f - f_min) / (rate * scale))``.  Deterministic for a fixed
    (pool, rate, seed); entries are visited in a canonical order so the
    result does not depend on input ordering.  Output is a subset of the
    input.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not pool:
        return []
    mean = rate * scale
    f_min = min(entry.frequency for entry in pool)
    rng = random.Random(f"exp-sample:{seed}:{rate}:{scale}")
    out = []
    for entry in sorted(pool, key=_sort_key):
        accept = 1.0 if math.isinf(mean) else math.exp(-(entry.frequency - f_min) / mean)
        if rng.random() < accept:
            out.append(entry)
    return out


def _exact_mwu_p(pooled_double_ranks: Sequence[int], n1: int, u_obs_doubled: int) -> float:
    # Enumerate every split of the pooled ranks into the two samples.  Ranks
    # are doubled to stay in integers (fractional ranks are half-integers).
    n = len(pooled_double_ranks)
    n2 = n - n1
    center = n1 * n2  # doubled U has mean n1*n2
    obs_dev = abs(u_obs_doubled - center)
    hits = 0
    total = 0
    for idx in combinations(range(n), n1):
        u2 = sum(pooled_double_ranks[i] for i in idx) - n1 * (n1 + 1)
        if abs(u2 - center) >= obs_dev:
            hits += 1
        total += 1
    return hits / total


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    method: str = "auto",
    groups: Sequence[str] = (),
) -> SignificanceResult:
    """Two-sided Mann-Whitney U test.

    Exact enumeration of all rank splits when the combined sample size is
    at most 12, otherwise the tie-corrected normal approximation with a
    continuity correction.  The reported statistic is min(U_a, U_b).
    """
    if not a or not b:
        raise ValueError("both samples must be non-empty")
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    n1, n2 = len(a), len(b)
    pooled = list(a) + list(b)
    ranks = midranks(pooled)
    u_a = sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0
    u_b = n1 * n2 - u_a
    statistic = min(u_a, u_b)

    use_exact = method == "exact" or (method == "auto" and n1 + n2 <= EXACT_LIMIT)
    if use_exact:
        doubled = [int(round(2 * r)) for r in ranks]
        p = _exact_mwu_p(doubled, n1, int(round(2 * u_a)))
        how = "exact enumeration"
    else:
        mean = n1 * n2 / 2.0
        n = n1 + n2
        tie_term = sum(t**3 - t for t in tie_counts(ranks))
        var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
        if var <= 0:
            p = 1.0
        else:
            z = (max(u_a, u_b) - mean - 0.5) / var**0.5
            p = min(1.0, 2.0 * normal_sf(z))
        how = "normal approximation, tie- and continuity-corrected"
    return SignificanceResult(
        kind="mann_whitney",
        statistic=statistic,
        p_value=p,
        groups=tuple(groups),
        method=how,
    )


def validate_matching(
    pool: Sequence[AssociatedName],
    alpha: float = 0.05,
    expected_groups: Sequence[str] = (),
) -> MatchReport:
    """All-pairs Mann-Whitney check that group frequencies are comparable.

    ``matched`` is True iff every pairwise p-value is at least alpha.
    Groups with fewer than 2 names (including groups that emptied out
    entirely, when listed in expected_groups) are skipped and flagged.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha outside (0, 1)")
    freqs: dict[str, list[int]] = defaultdict(list)
    for label in expected_groups:
        freqs[label] = []
    for entry in pool:
        freqs[entry.group.label].append(entry.frequency)
    if len(freqs) < 2:
        raise ValueError("matching validation needs at least 2 groups")

    testable = sorted(label for label, f in freqs.items() if len(f) >= 2)
    skipped = tuple(sorted(label for label, f in freqs.items() if len(f) < 2))
    pairwise: dict[tuple[str, str], SignificanceResult] = {}
    matched = True
    for g1, g2 in combinations(testable, 2):
        res = mann_whitney_u(freqs[g1], freqs[g2], groups=(g1, g2))
        pairwise[(g1, g2)] = res
        if res.p_value < alpha:
            matched = False
    return MatchReport(
        retained={label: len(f) for label, f in freqs.items()},
        mean_frequency={
            label: (sum(f) / len(f) if f else 0.0) for label, f in freqs.items()
        },
        pairwise=pairwise,
        matched=matched,
        alpha=alpha,
        skipped_groups=skipped,
    )


def frequency_match(
    pool: Sequence[AssociatedName], config: MatchConfig
) -> tuple[list[AssociatedName], MatchReport]:
    """Run the configured matching steps and validate the result.

    Bounds filtering applies to every group.  When an exponential target is
    configured, the target group (if named) is kept untouched and all other
    groups are thinned toward the target shape.
    """
    original_groups = sorted({entry.group.label for entry in pool})
    matched_pool = filter_by_frequency(pool, config.min_count, config.max_count)
    if config.exponential_rate is not None:
        if config.target_group is not None:
            kept = [e for e in matched_pool if e.group.label == config.target_group]
            rest = [e for e in matched_pool if e.group.label != config.target_group]
        else:
            kept, rest = [], list(matched_pool)
        thinned = sample_exponential(rest, config.exponential_rate, config.seed, config.scale)
        matched_pool = sorted(kept + thinned, key=_sort_key)
    report = validate_matching(matched_pool, config.alpha, expected_groups=original_groups)
    return list(matched_pool), report
