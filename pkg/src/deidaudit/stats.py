"""Fairness gap metrics, bootstrap uncertainty, and nonparametric tests.

The recall equality difference of a dimension is the mean absolute
deviation of each group's recall from the pooled recall; the recall maximum
difference is the largest such deviation. Group differences are tested with
the Wilcoxon signed-rank test (two groups) or the Friedman test (three or
more), at Bonferroni-adjusted levels dividing the base alpha by the number
of pairwise group comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .names import DIMENSIONS
from .rng import derive_key
from .scoring import GroupRecall, MentionOutcome
from .special import chi2_sf, normal_sf

WILCOXON_EXACT_LIMIT = 12


@dataclass(frozen=True)
class GapMetrics:
    dimension: str
    red: float  # recall equality difference
    rmd: float  # recall maximum difference
    per_group_deviation: dict[str, float]
    pooled_recall: float


@dataclass(frozen=True)
class TestResult:
    dimension: str
    statistic: float
    p_value: float
    method: str  # wilcoxon_signed_rank | friedman
    n_units: int
    alpha_adjusted: float
    significant: bool
    degenerate: bool = False
    dropped_units: int = 0
    p_permutation: float | None = None


@dataclass(frozen=True)
class BootstrapEstimate:
    point: float
    standard_error: float
    ci_low: float
    ci_high: float
    n_resamples: int
    seed: int
    n_degenerate: int = 0  # resamples where the statistic was undefined


@dataclass(frozen=True)
class CorrelationResult:
    r: float | None
    p_value: float | None
    n_rounds: int
    at_floor: bool
    defined: bool


@dataclass(frozen=True)
class UnitRecallTable:
    groups: list[str]
    unit_ids: list
    matrix: np.ndarray  # n_units x n_groups recalls
    dropped_units: int


def _pooled_recall(group_recalls: list[GroupRecall], mode: str) -> float:
    if mode == "micro":
        total = sum(g.mention_count for g in group_recalls)
        return sum(g.recalled_count for g in group_recalls) / total
    if mode == "macro":
        return sum(g.recall for g in group_recalls) / len(group_recalls)
    raise ValueError(f"unknown pooled recall mode {mode!r}")


def _check_groups(group_recalls: list[GroupRecall]) -> None:
    if len(group_recalls) < 2:
        raise ValueError("need at least 2 groups")
    if any(g.mention_count <= 0 for g in group_recalls):
        raise ValueError("every group needs a positive mention count")


def recall_equality_difference(
    group_recalls: list[GroupRecall], pooled: str = "micro"
) -> float:
    """Mean absolute deviation of group recalls from the pooled recall."""
    _check_groups(group_recalls)
    center = _pooled_recall(group_recalls, pooled)
    return sum(abs(g.recall - center) for g in group_recalls) / len(group_recalls)


def recall_maximum_difference(
    group_recalls: list[GroupRecall], pooled: str = "micro"
) -> float:
    """Largest absolute deviation of any group's recall from the pooled recall."""
    _check_groups(group_recalls)
    center = _pooled_recall(group_recalls, pooled)
    return max(abs(g.recall - center) for g in group_recalls)


def gap_metrics(
    dimension: str, group_recalls: list[GroupRecall], pooled: str = "micro"
) -> GapMetrics:
    _check_groups(group_recalls)
    center = _pooled_recall(group_recalls, pooled)
    deviations = {g.label: g.recall - center for g in group_recalls}
    return GapMetrics(
        dimension=dimension,
        red=sum(abs(d) for d in deviations.values()) / len(deviations),
        rmd=max(abs(d) for d in deviations.values()),
        per_group_deviation=deviations,
        pooled_recall=center,
    )


def bonferroni_level(base_alpha: float, dimension: str) -> float:
    """base_alpha divided by the dimension's pairwise group comparisons."""
    if not 0.0 < base_alpha < 1.0:
        raise ValueError("base_alpha must be in (0, 1)")
    k = len(DIMENSIONS[dimension].groups)
    comparisons = k * (k - 1) // 2
    return base_alpha / comparisons


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap(statistic, notes, n_resamples: int, seed: int) -> BootstrapEstimate:
    """Nonparametric bootstrap with the note as the resampling unit.

    `statistic` must be a pure function of a note multiset; it receives a
    fancy-indexed array when `notes` is an ndarray, else a list. SE is the
    sample standard deviation of the resampled statistics, the interval the
    2.5/97.5 percentiles. Resamples where the statistic is NaN are dropped
    and counted.
    """
    n = len(notes)
    if n == 0:
        raise ValueError("empty note set")
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    point = float(statistic(notes))
    rng = np.random.default_rng(seed)
    is_array = isinstance(notes, np.ndarray)
    values = np.empty(n_resamples)
    for b in range(n_resamples):
        idx = rng.integers(0, n, n)
        sample = notes[idx] if is_array else [notes[i] for i in idx]
        values[b] = statistic(sample)
    finite = values[np.isfinite(values)]
    n_degenerate = n_resamples - finite.size
    if finite.size == 0:
        return BootstrapEstimate(point, math.nan, math.nan, math.nan,
                                 n_resamples, seed, n_degenerate)
    se = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
    ci_low, ci_high = np.percentile(finite, [2.5, 97.5])
    return BootstrapEstimate(
        point=point,
        standard_error=se,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        n_resamples=n_resamples,
        seed=seed,
        n_degenerate=n_degenerate,
    )


def ratio_statistic(numerator_col: int = 0, denominator_col: int = 1):
    """Statistic factory: column sum ratio over a (n, k) count array."""

    def stat(sample) -> float:
        arr = np.asarray(sample)
        denom = arr[:, denominator_col].sum()
        if denom == 0:
            return math.nan
        return arr[:, numerator_col].sum() / denom

    return stat


# ---------------------------------------------------------------------------
# rank helpers


def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mid-rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _tie_term(values: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(values, return_counts=True)
    return float(np.sum(counts.astype(np.int64) ** 3 - counts))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test


def _wilcoxon_exact_p(ranks2: list[int], w_obs2: int) -> float:
    """P(min(W+, W-) <= observed) over all sign assignments.

    Works on doubled ranks so mid-ranks stay integral; counts via the
    polynomial-product distribution of W+, exact in integer arithmetic.
    """
    total2 = sum(ranks2)
    counts = [0] * (total2 + 1)
    counts[0] = 1
    for r in ranks2:
        for w in range(total2, r - 1, -1):
            counts[w] += counts[w - r]
    threshold = min(w_obs2, total2 - w_obs2)
    favorable = 0
    for w, c in enumerate(counts):
        if w <= threshold or total2 - w <= threshold:
            favorable += c
    return favorable / (1 << len(ranks2))


def wilcoxon_signed_rank(
    paired_values,
    dimension: str = "",
    alpha_adjusted: float = 0.05,
    exact_limit: int = WILCOXON_EXACT_LIMIT,
) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on (a, b) pairs.

    Zero differences are dropped; ties mid-ranked. The statistic is
    W = min(W+, W-). p is exact (full sign-flip distribution) when the
    effective n is at most `exact_limit`, else a normal approximation with
    tie and continuity corrections.
    """
    diffs = np.array([a - b for a, b in paired_values], dtype=float)
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return TestResult(
            dimension=dimension, statistic=0.0, p_value=1.0,
            method="wilcoxon_signed_rank", n_units=0,
            alpha_adjusted=alpha_adjusted, significant=False, degenerate=True,
        )
    ranks = _midranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w = min(w_plus, w_minus)
    if n <= exact_limit:
        ranks2 = [int(round(2 * r)) for r in ranks]
        p = _wilcoxon_exact_p(ranks2, int(round(2 * w)))
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(diffs)) / 48.0
        if var <= 0:
            p = 1.0
        else:
            z = (mean - w - 0.5) / math.sqrt(var)  # continuity correction
            p = min(1.0, 2.0 * normal_sf(z))
    return TestResult(
        dimension=dimension, statistic=w, p_value=p,
        method="wilcoxon_signed_rank", n_units=n,
        alpha_adjusted=alpha_adjusted, significant=p < alpha_adjusted,
    )


# ---------------------------------------------------------------------------
# Friedman test


def _friedman_q(matrix: np.ndarray) -> tuple[float, float]:
    """(uncorrected Q, tie correction factor) for an n x k block matrix."""
    n, k = matrix.shape
    ranks = np.vstack([_midranks(row) for row in matrix])
    column_sums = ranks.sum(axis=0)
    q = 12.0 / (n * k * (k + 1)) * float(np.sum(column_sums**2)) - 3.0 * n * (k + 1)
    ties = sum(_tie_term(row) for row in matrix)
    correction = 1.0 - ties / (n * k * (k**2 - 1))
    return q, correction


def friedman(
    block_values,
    dimension: str = "",
    alpha_adjusted: float = 0.05,
    permutation_rounds: int = 0,
    seed: int = 0,
) -> TestResult:
    """Friedman rank test over an n_blocks x k_treatments matrix.

    Within-block mid-ranks with tie correction; p from the chi-square tail
    with k-1 degrees of freedom. Optionally also estimates a within-block
    permutation p (reported separately, not used for the significance flag).
    """
    matrix = np.asarray(block_values, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("block_values must be a 2-D matrix")
    n, k = matrix.shape
    if k < 3:
        raise ValueError("Friedman needs >= 3 treatments; use wilcoxon_signed_rank for 2")
    if n < 2:
        raise ValueError("Friedman needs >= 2 blocks")
    q_raw, correction = _friedman_q(matrix)
    if correction <= 0.0:  # every block fully tied
        return TestResult(
            dimension=dimension, statistic=0.0, p_value=1.0, method="friedman",
            n_units=n, alpha_adjusted=alpha_adjusted, significant=False,
            degenerate=True,
        )
    q = q_raw / correction
    p = chi2_sf(q, k - 1)
    p_perm = None
    if permutation_rounds > 0:
        rng = np.random.default_rng(seed)
        hits = 0
        for _ in range(permutation_rounds):
            permuted = np.vstack([rng.permutation(row) for row in matrix])
            q_b, corr_b = _friedman_q(permuted)
            if corr_b > 0 and q_b / corr_b >= q - 1e-12:
                hits += 1
        p_perm = (1 + hits) / (permutation_rounds + 1)
    return TestResult(
        dimension=dimension, statistic=q, p_value=p, method="friedman",
        n_units=n, alpha_adjusted=alpha_adjusted, significant=p < alpha_adjusted,
        p_permutation=p_perm,
    )


# ---------------------------------------------------------------------------
# correlation


def correlate(
    feature_values,
    recalls,
    permutation_rounds: int = 10_000,
    seed: int = 0,
) -> CorrelationResult:
    """Pearson r with a two-sided permutation p-value.

    p is the fraction of label permutations whose |r| reaches the observed
    |r| (with the +1 adjustment, so it can never be zero); `at_floor` marks
    estimates at the resolution limit 1/(rounds+1).
    """
    x = np.asarray(feature_values, dtype=float)
    y = np.asarray(recalls, dtype=float)
    if len(x) != len(y):
        raise ValueError("feature and recall vectors differ in length")
    if len(x) < 3:
        raise ValueError("need at least 3 templates")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc**2).sum()))
    sy = float(np.sqrt((yc**2).sum()))
    if sx == 0.0 or sy == 0.0:
        return CorrelationResult(None, None, permutation_rounds, False, False)
    r_obs = float(xc @ yc / (sx * sy))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutation_rounds):
        r_b = float(xc @ rng.permutation(yc) / (sx * sy))
        if abs(r_b) >= abs(r_obs) - 1e-12:
            hits += 1
    p = (1 + hits) / (permutation_rounds + 1)
    return CorrelationResult(
        r=r_obs, p_value=p, n_rounds=permutation_rounds,
        at_floor=hits == 0, defined=True,
    )


# ---------------------------------------------------------------------------
# per-unit recall tables for the hypothesis tests


def hypothesis_unit_recalls(
    outcomes: list[MentionOutcome],
    pooling: dict[str, list[int]],
    unit: str = "template",
) -> UnitRecallTable:
    """Per-unit per-group recall matrix for the paired/blocked tests.

    The unit is the template (default) or the note. Units that lack
    mentions for any group are dropped and counted.
    """
    if unit not in ("template", "note"):
        raise ValueError(f"unit must be template or note, got {unit!r}")
    set_to_group = {
        set_id: group for group, set_ids in pooling.items() for set_id in set_ids
    }
    groups = list(pooling)
    recalled: dict[tuple, int] = {}
    totals: dict[tuple, int] = {}
    for o in outcomes:
        group = set_to_group.get(o.set_id)
        if group is None:
            continue
        unit_id = o.template_id if unit == "template" else o.note_id
        key = (unit_id, group)
        totals[key] = totals.get(key, 0) + 1
        recalled[key] = recalled.get(key, 0) + int(o.recalled)
    unit_ids = sorted({key[0] for key in totals})
    rows = []
    kept_ids = []
    dropped = 0
    for unit_id in unit_ids:
        if all(totals.get((unit_id, g), 0) > 0 for g in groups):
            rows.append(
                [recalled[(unit_id, g)] / totals[(unit_id, g)] for g in groups]
            )
            kept_ids.append(unit_id)
        else:
            dropped += 1
    if len(rows) < 2:
        raise ValueError(f"only {len(rows)} usable units; need at least 2")
    return UnitRecallTable(
        groups=groups,
        unit_ids=kept_ids,
        matrix=np.array(rows),
        dropped_units=dropped,
    )


def dimension_test(
    table: UnitRecallTable,
    dimension: str,
    alpha_adjusted: float,
    permutation_rounds: int = 0,
    seed: int = 0,
) -> TestResult:
    """Pick the test matching the group count and run it on a unit table."""
    if len(table.groups) == 2:
        pairs = [(row[0], row[1]) for row in table.matrix]
        result = wilcoxon_signed_rank(pairs, dimension, alpha_adjusted)
    else:
        result = friedman(
            table.matrix, dimension, alpha_adjusted,
            permutation_rounds=permutation_rounds, seed=seed,
        )
    return TestResult(
        dimension=result.dimension,
        statistic=result.statistic,
        p_value=result.p_value,
        method=result.method,
        n_units=result.n_units,
        alpha_adjusted=result.alpha_adjusted,
        significant=result.significant,
        degenerate=result.degenerate,
        dropped_units=table.dropped_units,
        p_permutation=result.p_permutation,
    )


def stats_seed(global_seed: int, *labels) -> int:
    """Derive a bootstrap/permutation seed from the run seed and labels."""
    return derive_key(global_seed, "stats", *labels)
