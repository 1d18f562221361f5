"""Hypothesis tests and regressions used to compare models and groups."""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from ._hashing import stable_int
from .groups import ALL_GROUPS, REFERENCE_GROUP, DemographicGroup
from .pipeline import sample_ids

logger = logging.getLogger(__name__)

UNDEFINED = None  # marker for ratios with a zero reference count


# -- chi-square tail ---------------------------------------------------------

_EPS = 1e-15
_MAX_ITER = 10_000


def _lower_gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by modified Lentz continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_gamma_series(a, x)
    return _upper_gamma_fraction(a, x)


def chi2_sf(x: float, df: int = 1) -> float:
    """Survival function of the chi-square distribution."""
    if x <= 0:
        return 1.0
    return gamma_q(df / 2.0, x / 2.0)


# -- Mood's median test --------------------------------------------------------

@dataclass
class MedianTestResult:
    grand_median: float
    # rows: above / not above the grand median; columns: sample a / sample b
    contingency: np.ndarray
    chi2: float
    p_value: float
    median_a: float = float("nan")
    median_b: float = float("nan")


def moods_median_test(a, b, ties: str = "below", correction: bool = False) -> MedianTestResult:
    """Mood's median test on two samples.

    ``ties`` decides where values equal to the grand median go: ``"below"``
    (counted as not above), ``"above"`` or ``"ignore"``. The Pearson
    chi-square has one degree of freedom; ``correction`` applies Yates.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    if ties not in ("below", "above", "ignore"):
        raise ValueError(f"ties must be 'below', 'above' or 'ignore', got {ties!r}")
    grand = float(np.median(np.concatenate([a, b])))

    def split(x):
        above = int(np.sum(x > grand))
        equal = int(np.sum(x == grand))
        below = int(np.sum(x < grand))
        if ties == "below":
            return above, below + equal
        if ties == "above":
            return above + equal, below
        return above, below

    above_a, below_a = split(a)
    above_b, below_b = split(b)
    table = np.array([[above_a, above_b], [below_a, below_b]], dtype=np.int64)
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("no variation: every pooled value falls on one side of the grand median")
    n = table.sum()
    diff = abs(table[0, 0] * table[1, 1] - table[0, 1] * table[1, 0])
    if correction:
        diff = max(0.0, diff - n / 2.0)
    chi2 = float(n * diff ** 2 / (rows[0] * rows[1] * cols[0] * cols[1]))
    return MedianTestResult(grand, table, chi2, chi2_sf(chi2, 1), float(np.median(a)), float(np.median(b)))


# -- Bonferroni ----------------------------------------------------------------

@dataclass
class BonferroniResult:
    adjusted: np.ndarray
    reject: np.ndarray
    m: int
    alpha: float


def bonferroni(p_values, alpha: float = 0.05, m: int | None = None) -> BonferroniResult:
    """``adjusted = min(1, p * m)``; reject when ``adjusted < alpha``. ``m`` defaults to ``len(p_values)``."""
    p = np.asarray(p_values, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    m = p.size if m is None else m
    adjusted = np.minimum(1.0, p * m)
    return BonferroniResult(adjusted, adjusted < alpha, m, alpha)


# -- linear probability model with clustered errors -----------------------------

@dataclass
class RegressionResult:
    names: list
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    n_clusters: int
    n_obs: int
    covariance: np.ndarray = field(repr=False, default=None)

    def coef(self, name) -> float:
        return float(self.coefficients[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            name: {"coef": float(c), "se": float(s), "t": float(t), "p": float(p)}
            for name, c, s, t, p in zip(self.names, self.coefficients, self.std_errors, self.t_stats, self.p_values)
        } | {"n_clusters": self.n_clusters, "n_obs": self.n_obs}


def _category_name(value) -> str:
    if isinstance(value, DemographicGroup):
        return value.canonical_name
    try:
        return DemographicGroup.parse(value).canonical_name
    except (ValueError, TypeError):
        return str(value)


def lpm_cluster_regression(outcome, group, cluster_ids, reference=REFERENCE_GROUP,
                           categories: Sequence | None = None) -> RegressionResult:
    """OLS of a binary outcome on group dummies with CR1 cluster-robust errors.

    The intercept is the reference group's mean outcome and each dummy
    coefficient is that group's difference from it. Variance is the sandwich
    ``(X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1`` scaled by
    ``G/(G-1) * (n-1)/(n-k)``; p-values are two-sided from t with G-1 df.

    ``categories`` lists every group expected in the data (default: the four
    canonical groups when the values are groups, else the observed values); a
    missing one is an error since its dummy would be all zero.
    """
    y = np.asarray(outcome, dtype=float).ravel()
    names_in = [_category_name(g) for g in group]
    clusters = np.asarray([str(c) for c in cluster_ids])
    if not (len(y) == len(names_in) == len(clusters)):
        raise ValueError("outcome, group and cluster_ids must have equal length")
    ref = _category_name(reference)
    if categories is None:
        canonical = [g.canonical_name for g in ALL_GROUPS]
        if set(names_in) <= set(canonical):
            categories = canonical
        else:
            categories = sorted(set(names_in))
    categories = [_category_name(c) for c in categories]
    for cat in [ref] + categories:
        if cat not in names_in:
            raise ValueError(f"rank deficient design: category {cat!r} is absent from the data")
    others = [c for c in categories if c != ref]
    unexpected = set(names_in) - set(categories) - {ref}
    if unexpected:
        raise ValueError(f"unexpected categories {sorted(unexpected)}")

    n = len(y)
    X = np.column_stack([np.ones(n)] + [[1.0 if g == c else 0.0 for g in names_in] for c in others])
    k = X.shape[1]
    uniq, cluster_index = np.unique(clusters, return_inverse=True)
    n_clusters = len(uniq)
    if n_clusters < 2:
        raise ValueError("clustered standard errors need at least 2 clusters")
    if n <= k:
        raise ValueError("more observations than parameters are required")
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < k:
        raise ValueError("rank deficient design matrix")
    bread = np.linalg.inv(xtx)
    beta = bread @ (X.T @ y)
    resid = y - X @ beta
    scores = np.zeros((n_clusters, k))
    np.add.at(scores, cluster_index, X * resid[:, None])
    meat = scores.T @ scores
    scale = n_clusters / (n_clusters - 1) * (n - 1) / (n - k)
    cov = scale * bread @ meat @ bread
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    p = 2.0 * _scipy_stats.t.sf(np.abs(t), df=n_clusters - 1)
    return RegressionResult(["Intercept"] + others, beta, se, t, p, n_clusters, n, cov)


def regress_predictions(predictions, reference=REFERENCE_GROUP) -> RegressionResult:
    """Correctness on perceived group, clustered by perturbation set."""
    predictions = list(predictions)
    return lpm_cluster_regression([p.correct for p in predictions], [p.group for p in predictions],
                                  [p.set_id for p in predictions], reference=reference)


# -- misclassification analysis -----------------------------------------------

@dataclass
class MisclassTable:
    counts: dict  # (group, predicted_label) -> count of misclassified predictions
    totals: dict  # group -> misclassified total
    target_label: str
    reference_group: DemographicGroup
    relative_rates: dict  # group -> percent more than reference, or UNDEFINED

    def count(self, group, label) -> int:
        return self.counts.get((DemographicGroup.parse(group), label), 0)


def misclass_ratios(predictions, target_label: str, reference_group=REFERENCE_GROUP) -> MisclassTable:
    """How much more often each group is mispredicted as ``target_label`` than the reference.

    ``rate = (count_group / count_reference - 1) * 100``; a zero reference
    count leaves the rate ``UNDEFINED``.
    """
    reference_group = DemographicGroup.parse(reference_group)
    counts: Counter = Counter()
    totals: Counter = Counter()
    for p in predictions:
        if not p.correct:
            counts[(p.group, p.predicted_label)] += 1
            totals[p.group] += 1
    ref_count = counts[(reference_group, target_label)]
    if ref_count == 0:
        logger.warning("reference group %s never predicted as %r; ratios undefined",
                       reference_group.canonical_name, target_label)
    rates = {}
    for g in ALL_GROUPS:
        if g is reference_group:
            continue
        rates[g] = UNDEFINED if ref_count == 0 else (counts[(g, target_label)] / ref_count - 1.0) * 100.0
    return MisclassTable(dict(counts), dict(totals), target_label, reference_group, rates)


def ratio_from_counts(count: int, reference_count: int):
    return UNDEFINED if reference_count == 0 else (count / reference_count - 1.0) * 100.0


def top_misclassified_label(predictions, occupation: str):
    """Most frequent wrong label for ``occupation``; alphabetical tie-break; None if no errors."""
    counts = Counter(p.predicted_label for p in predictions if p.occupation == occupation and not p.correct)
    if not counts:
        return None
    best = max(counts.values())
    return min(label for label, c in counts.items() if c == best)


def label_robust_labels(predictions, occupations) -> dict[str, list[str]]:
    """Per occupation, the true label plus its top misclassified label."""
    out = {}
    for occ in occupations:
        top = top_misclassified_label(predictions, occ.name)
        out[occ.name] = [occ.true_label] + ([top] if top else [])
    return out


def dataset_robust_sets(base_predictions_by_model: Mapping[str, Sequence]) -> set[str]:
    """Sets whose base image every model classified correctly."""
    per_model = []
    for preds in base_predictions_by_model.values():
        per_model.append({p.set_id for p in preds if p.correct})
    return set.intersection(*per_model) if per_model else set()


def error_analysis_sample(predictions, n_per_group: int = 10, seed: int = 0) -> dict[DemographicGroup, list[str]]:
    """Per non-reference group, a seeded sample of sets where the reference variant is
    correct and that group's variant is not."""
    by_set: dict[str, dict] = defaultdict(dict)
    for p in predictions:
        by_set[p.set_id][p.group] = p.correct
    out = {}
    for g in ALL_GROUPS:
        if g is REFERENCE_GROUP:
            continue
        eligible = [sid for sid, res in by_set.items()
                    if res.get(REFERENCE_GROUP) is True and res.get(g) is False]
        out[g] = sample_ids(eligible, n_per_group, stable_int(seed, "error-analysis", g.canonical_name),
                            lambda msg: logger.warning(msg), g.canonical_name)
    return out


# -- model comparison ----------------------------------------------------------

@dataclass
class PairwiseComparison:
    model_a: str
    model_b: str
    test: MedianTestResult
    adjusted_p: float
    reject: bool
    # the model with the lower median std, when the null is rejected
    fairer: str | None


@dataclass
class ModelComparison:
    comparisons: list
    ordering: list  # (fairer, less fair) pairs backed by a rejection
    m: int
    alpha: float

    def ranked(self) -> list[str]:
        """Models ordered by how many others they significantly beat."""
        wins = Counter(a for a, _ in self.ordering)
        models = {c.model_a for c in self.comparisons} | {c.model_b for c in self.comparisons}
        return sorted(models, key=lambda m: (-wins[m], m))


def compare_models(per_model_set_stds: Mapping[str, Sequence[float]], alpha: float = 0.01,
                   ties: str = "below") -> ModelComparison:
    """All pairwise Mood tests on per-set standard deviations, Bonferroni over C(models, 2)."""
    models = list(per_model_set_stds)
    if len(models) < 2:
        raise ValueError("need at least 2 models to compare")
    pairs = list(itertools.combinations(models, 2))
    tests = [moods_median_test(per_model_set_stds[a], per_model_set_stds[b], ties=ties) for a, b in pairs]
    adj = bonferroni([t.p_value for t in tests], alpha=alpha)
    comparisons = []
    ordering = []
    for (a, b), t, p_adj, rej in zip(pairs, tests, adj.adjusted, adj.reject):
        fairer = None
        if rej and t.median_a != t.median_b:
            fairer = a if t.median_a < t.median_b else b
            ordering.append((fairer, b if fairer == a else a))
        comparisons.append(PairwiseComparison(a, b, t, float(p_adj), bool(rej), fairer))
    return ModelComparison(comparisons, ordering, adj.m, alpha)
