"""Repeated-measures test statistics for the target-acquisition analysis.

Implements the full pipeline of the study analysis: two-way repeated-measures
ANOVA (each effect tested against its own subject-interaction mean square),
Friedman's rank test with average-rank tie handling, paired t, Wilcoxon
signed-rank with the exact small-sample distribution, and the Bonferroni /
Bonferroni-Holm family corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import special


class IncompleteDesignError(ValueError):
    """Input table is missing cells or whole levels."""


class DegenerateSampleError(ValueError):
    """Sample carries no usable information for the test."""


@dataclass(frozen=True)
class StatResult:
    """One test outcome; df is a number, a (num, den) pair, or None."""

    test_name: str
    statistic: float
    df: float | tuple[float, float] | None
    p_value: float
    correction: str = "none"

    def to_json(self) -> dict:
        df: object
        if isinstance(self.df, tuple):
            df = list(self.df)
        else:
            df = self.df
        return {
            "test_name": self.test_name,
            "statistic": self.statistic,
            "df": df,
            "p_value": self.p_value,
            "correction": self.correction,
        }


def _f_ratio(ss_effect: float, df_effect: int, ss_error: float, df_error: int) -> tuple[float, float]:
    """F statistic and upper-tail p, with the degenerate cases pinned."""
    ms_effect = ss_effect / df_effect
    ms_error = ss_error / df_error
    if ms_effect <= 0.0:
        return 0.0, 1.0
    if ms_error <= 0.0:
        return math.inf, 0.0
    f = ms_effect / ms_error
    return f, special.f_sf(f, df_effect, df_error)


def rm_anova_2way(
    values: np.ndarray,
    log_transform: bool = False,
    factor_names: tuple[str, str] = ("density", "scheme"),
) -> dict[str, StatResult]:
    """Two-way fully-within ANOVA on a (subjects, a, b) table of cell means.

    Each effect is tested against its interaction with subjects, giving
    dfs (a-1, (a-1)(n-1)) etc. Sphericity corrections are not applied.
    """
    data = np.asarray(values, dtype=float)
    if data.ndim != 3:
        raise IncompleteDesignError(f"expected a (subjects, a, b) table, got shape {data.shape}")
    n, a, b = data.shape
    if n < 2 or a < 2 or b < 2:
        raise IncompleteDesignError(f"need >= 2 levels everywhere, got shape {data.shape}")
    if np.isnan(data).any():
        raise IncompleteDesignError("table contains missing cells")
    if log_transform:
        if (data <= 0).any():
            raise ValueError("log transform requires strictly positive values")
        data = np.log(data)

    grand = data.mean()
    mean_s = data.mean(axis=(1, 2))            # per subject
    mean_a = data.mean(axis=(0, 2))            # per level of factor A
    mean_b = data.mean(axis=(0, 1))
    mean_sa = data.mean(axis=2)                # (n, a)
    mean_sb = data.mean(axis=1)                # (n, b)
    mean_ab = data.mean(axis=0)                # (a, b)

    ss_a = n * b * float(((mean_a - grand) ** 2).sum())
    ss_b = n * a * float(((mean_b - grand) ** 2).sum())
    ss_ab = n * float(
        ((mean_ab - mean_a[:, None] - mean_b[None, :] + grand) ** 2).sum()
    )
    ss_as = b * float(
        ((mean_sa - mean_s[:, None] - mean_a[None, :] + grand) ** 2).sum()
    )
    ss_bs = a * float(
        ((mean_sb - mean_s[:, None] - mean_b[None, :] + grand) ** 2).sum()
    )
    residual = (
        data
        - mean_ab[None, :, :]
        - mean_sa[:, :, None]
        - mean_sb[:, None, :]
        + mean_a[None, :, None]
        + mean_b[None, None, :]
        + mean_s[:, None, None]
        - grand
    )
    ss_abs = float((residual**2).sum())

    df_a, df_b = a - 1, b - 1
    df_ab = df_a * df_b
    df_as, df_bs, df_abs = df_a * (n - 1), df_b * (n - 1), df_ab * (n - 1)

    name_a, name_b = factor_names
    out: dict[str, StatResult] = {}
    for key, ss_eff, df_eff, ss_err, df_err in (
        (name_a, ss_a, df_a, ss_as, df_as),
        (name_b, ss_b, df_b, ss_bs, df_bs),
        ("interaction", ss_ab, df_ab, ss_abs, df_abs),
    ):
        f, p = _f_ratio(ss_eff, df_eff, ss_err, df_err)
        out[key] = StatResult(
            test_name=f"rm_anova[{key}]",
            statistic=f,
            df=(float(df_eff), float(df_err)),
            p_value=p,
        )
    return out


def rank_average(row: Sequence[float]) -> list[float]:
    """Ranks 1..k with ties sharing the average of their rank positions."""
    order = sorted(range(len(row)), key=lambda i: row[i])
    ranks = [0.0] * len(row)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and row[order[j + 1]] == row[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for idx in order[i : j + 1]:
            ranks[idx] = avg
        i = j + 1
    return ranks


def friedman(values: np.ndarray) -> StatResult:
    """Friedman chi-square over a (subjects, conditions) matrix.

    Average ranks handle ties, with the standard tie correction of the
    variance. A fully tied matrix yields statistic 0 and p 1.
    """
    data = np.asarray(values, dtype=float)
    if data.ndim != 2:
        raise IncompleteDesignError(f"expected (subjects, conditions), got shape {data.shape}")
    n, k = data.shape
    if n < 2 or k < 2:
        raise IncompleteDesignError("need >= 2 subjects and >= 2 conditions")

    rank_sums = np.zeros(k)
    tie_term = 0.0
    for row in data:
        ranks = rank_average(list(row))
        rank_sums += ranks
        seen: dict[float, int] = {}
        for v in row:
            seen[v] = seen.get(v, 0) + 1
        tie_term += sum(t**3 - t for t in seen.values())

    correction = 1.0 - tie_term / (n * k * (k * k - 1))
    raw = 12.0 / (n * k * (k + 1)) * float((rank_sums**2).sum()) - 3.0 * n * (k + 1)
    if correction <= 0.0:
        statistic = 0.0
    else:
        statistic = raw / correction
        if statistic < 0.0 and statistic > -1e-12:
            statistic = 0.0
    df = k - 1
    p = 1.0 if statistic == 0.0 else special.chi2_sf(statistic, df)
    return StatResult("friedman", statistic, float(df), min(p, 1.0))


def paired_t(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Two-sided paired t-test."""
    if len(a) != len(b):
        raise ValueError("samples must have equal length")
    n = len(a)
    if n < 2:
        raise DegenerateSampleError("paired t needs at least 2 pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    df = n - 1
    if var == 0.0:
        if mean == 0.0:
            return StatResult("paired_t", 0.0, float(df), 1.0)
        return StatResult("paired_t", math.copysign(math.inf, mean), float(df), 0.0)
    t = mean / math.sqrt(var / n)
    return StatResult("paired_t", t, float(df), special.t_two_sided_p(t, df))


def _signed_rank_terms(a: Sequence[float], b: Sequence[float]) -> tuple[list[float], list[int]]:
    """Midranks of |d| for nonzero differences, and their signs."""
    diffs = [x - y for x, y in zip(a, b)]
    nonzero = [d for d in diffs if d != 0.0]
    if not nonzero:
        raise DegenerateSampleError("all differences are zero")
    ranks = rank_average([abs(d) for d in nonzero])
    signs = [1 if d > 0 else -1 for d in nonzero]
    return ranks, signs


def _exact_signed_rank_p(ranks: list[float], w_small: float) -> float:
    """P(W+ <= w_small) * 2 from the exact null distribution.

    Midranks are multiples of 1/2, so doubling makes every rank an integer
    and the distribution of 2*W+ tabulates by dynamic programming over all
    sign assignments.
    """
    doubled = [round(2 * r) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for s in range(total - r, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
    threshold = 2.0 * w_small + 1e-9
    favorable = sum(c for s, c in enumerate(counts) if s <= threshold)
    p = 2.0 * favorable / (2 ** len(ranks))
    return min(1.0, p)


def wilcoxon_signed_rank(
    a: Sequence[float], b: Sequence[float], exact_threshold: int = 20
) -> StatResult:
    """Two-sided Wilcoxon signed-rank test.

    Zero differences are dropped. Up to exact_threshold nonzero pairs the
    p-value comes from the exact distribution over all 2^n sign
    assignments; above it, from the normal approximation with the tie
    correction.
    """
    if len(a) != len(b):
        raise ValueError("samples must have equal length")
    ranks, signs = _signed_rank_terms(a, b)
    n = len(ranks)
    w_plus = sum(r for r, s in zip(ranks, signs) if s > 0)
    w_minus = sum(r for r, s in zip(ranks, signs) if s < 0)
    w = min(w_plus, w_minus)

    if n <= exact_threshold:
        p = _exact_signed_rank_p(ranks, w)
        return StatResult("wilcoxon_signed_rank", w, None, p)

    mean = n * (n + 1) / 4.0
    seen: dict[float, int] = {}
    for r in ranks:
        seen[r] = seen.get(r, 0) + 1
    tie_term = sum(t**3 - t for t in seen.values())
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    if var <= 0.0:
        raise DegenerateSampleError("variance vanished under ties")
    z = (w_plus - mean) / math.sqrt(var)
    p = min(1.0, 2.0 * special.normal_sf(abs(z)))
    return StatResult("wilcoxon_signed_rank", w, None, p)


def bonferroni(p_values: Sequence[float], family_size: int | None = None) -> list[float]:
    m = family_size if family_size is not None else len(p_values)
    return [min(1.0, p * m) for p in p_values]


def bonferroni_holm(p_values: Sequence[float]) -> list[float]:
    """Step-down Holm adjustment, monotone and capped at 1."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for pos, idx in enumerate(order):
        running = max(running, min(1.0, (m - pos) * p_values[idx]))
        adjusted[idx] = running
    return adjusted


def correct_family(results: Sequence[StatResult], method: str) -> list[StatResult]:
    """Apply a multiple-comparison correction across one family of results."""
    ps = [r.p_value for r in results]
    if method == "bonferroni":
        adj = bonferroni(ps)
    elif method == "bonferroni_holm":
        adj = bonferroni_holm(ps)
    elif method == "none":
        adj = list(ps)
    else:
        raise ValueError(f"unknown correction {method!r}")
    return [replace(r, p_value=p, correction=method) for r, p in zip(results, adj)]
