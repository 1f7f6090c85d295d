"""Mann-Whitney U test with midrank ties, exact or normal-approximated.

Small samples (both sides <= 8) get the exact two-sided p by enumerating
every C(n1+n2, n1) assignment of the pooled midranks; larger samples use the
normal approximation with tie-corrected variance and a 0.5 continuity
correction. Significance labels follow the usual star convention with "ns"
above 0.05.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .errors import StatisticsError

EXACT_LIMIT = 8  # per-side sample size up to which enumeration runs


def midranks(values) -> list[float]:
    """Ranks 1..n with tied values sharing the average of their positions."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def significance_label(p: float) -> str:
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return "ns"


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float  # U statistic of sample_a; u + u_other = n_a * n_b
    u_other: float
    p: float
    label: str
    method: str  # "exact" or "asymptotic"
    n_a: int
    n_b: int


def _exact_two_sided_p(pooled_ranks: list[float], n_a: int, u_min: float) -> float:
    """P(U <= u_min) by full enumeration, doubled and capped at 1."""
    n = len(pooled_ranks)
    base = n_a * (n_a + 1) / 2
    at_most = 0
    total = 0
    for combo in itertools.combinations(range(n), n_a):
        u = sum(pooled_ranks[i] for i in combo) - base
        total += 1
        if u <= u_min + 1e-12:
            at_most += 1
    return min(1.0, 2 * at_most / total)


def _asymptotic_two_sided_p(values, n_a: int, n_b: int, u_a: float) -> float:
    n = n_a + n_b
    mean = n_a * n_b / 2
    tie_sizes = []
    for value in set(values):
        t = values.count(value)
        if t > 1:
            tie_sizes.append(t)
    tie_term = sum(t**3 - t for t in tie_sizes)
    variance = n_a * n_b / 12 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0  # all values tied: no evidence either way
    z = (abs(u_a - mean) - 0.5) / math.sqrt(variance)
    z = max(z, 0.0)
    return math.erfc(z / math.sqrt(2))


def mann_whitney_u(sample_a, sample_b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U comparing two independent samples.

    U for sample_a is the rank-sum statistic R_a - n_a(n_a+1)/2 over pooled
    midranks. Exact when both samples have at most EXACT_LIMIT values.
    """
    sample_a = list(sample_a)
    sample_b = list(sample_b)
    if not sample_a or not sample_b:
        raise StatisticsError("both samples must be non-empty")
    n_a, n_b = len(sample_a), len(sample_b)
    pooled = sample_a + sample_b
    ranks = midranks(pooled)
    r_a = sum(ranks[:n_a])
    u_a = r_a - n_a * (n_a + 1) / 2
    u_b = n_a * n_b - u_a
    if n_a <= EXACT_LIMIT and n_b <= EXACT_LIMIT:
        p = _exact_two_sided_p(ranks, n_a, min(u_a, u_b))
        method = "exact"
    else:
        p = _asymptotic_two_sided_p(pooled, n_a, n_b, u_a)
        method = "asymptotic"
    return MannWhitneyResult(
        u=u_a,
        u_other=u_b,
        p=p,
        label=significance_label(p),
        method=method,
        n_a=n_a,
        n_b=n_b,
    )


def compare_all_pairs(values_by_method: dict[str, list[float]]) -> dict[str, MannWhitneyResult]:
    """Pairwise tests over every unordered method pair, keyed "a_vs_b"."""
    names = sorted(values_by_method)
    if len(names) < 2:
        raise StatisticsError(f"need at least 2 methods to compare, got {len(names)}")
    out = {}
    for a, b in itertools.combinations(names, 2):
        out[f"{a}_vs_{b}"] = mann_whitney_u(values_by_method[a], values_by_method[b])
    return out
