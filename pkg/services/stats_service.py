import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.spatial
import scipy.stats

from errors import (
    EmptyInputError,
    FewerThanTwoPointsError,
    LengthMismatchError,
    MissingValueError,
    ZeroMarginalError,
)
from models import (
    BinSummary,
    ChiSquareResult,
    ClassificationMetrics,
    ContingencyTable2x2,
    DcorResult,
    DcorValue,
    MetricOrientation,
    OddsRatioResult,
    TrendResult,
)

logger = logging.getLogger(__name__)

PERMUTATION_CHUNK = 100
DCOR_TIE_TOLERANCE = 1e-12
TOTAL_GROUP = 'Total'


# ---------------------------------------------------------------------------
# 2x2 tables
# ---------------------------------------------------------------------------

def _paired(xs: Sequence, ys: Sequence, what: str) -> int:
    if len(xs) != len(ys):
        raise LengthMismatchError(f'{what}: {len(xs)} vs {len(ys)} values')
    if len(xs) == 0:
        raise EmptyInputError(f'{what}: no values')
    return len(xs)


def contingency(preds: Sequence[int], truths: Sequence[int]) -> ContingencyTable2x2:
    """Count (prediction, truth) pairs into n[pred][truth]"""
    _paired(preds, truths, 'contingency')
    n = [[0, 0], [0, 0]]
    for p, s in zip(preds, truths):
        if p not in (0, 1) or s not in (0, 1):
            raise MissingValueError(f'contingency needs binary values, got ({p!r}, {s!r})')
        n[int(p)][int(s)] += 1
    return ContingencyTable2x2.from_rows(n)


def chi_square(table: ContingencyTable2x2, yates: bool) -> ChiSquareResult:
    """Pearson chi-square with df=1, optionally with the continuity correction"""
    observed = table.as_array()
    if (observed.sum(axis=0) == 0).any() or (observed.sum(axis=1) == 0).any():
        raise ZeroMarginalError(f'contingency table {table.n} has an empty row or column')
    statistic, p_value, dof, _ = scipy.stats.chi2_contingency(observed, correction=yates)
    return ChiSquareResult(statistic=float(statistic), p_value=float(p_value), yates=yates)


def odds_ratio(table: ContingencyTable2x2) -> OddsRatioResult:
    """(n11/n10) / (n01/n00); a zero cell switches to the +0.5 Haldane-Anscombe correction"""
    (n00, n01), (n10, n11) = table.n
    corrected = 0 in (n00, n01, n10, n11)
    if corrected:
        logger.warning(f"⚠️ Zero cell in {table.n}, applying Haldane-Anscombe correction")
        n00, n01, n10, n11 = (c + 0.5 for c in (n00, n01, n10, n11))
    return OddsRatioResult(ratio=(n11 * n00) / (n10 * n01), haldane_corrected=corrected)


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def classification_metrics(table: ContingencyTable2x2,
                           orientation: MetricOrientation = MetricOrientation.STANDARD) -> ClassificationMetrics:
    """Accuracy, precision, recall, specificity and F1; undefined metrics come back as None.

    ``standard`` reads TP=n11, FP=n10, FN=n01, TN=n00. ``transposed`` reads the transposed
    table, i.e. FP and FN exchanged.
    """
    orientation = MetricOrientation(orientation)
    source = table.transpose() if orientation == MetricOrientation.TRANSPOSED else table
    (tn, fn), (fp, tp) = source.n
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassificationMetrics(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        precision=precision,
        recall=recall,
        specificity=_ratio(tn, tn + fp),
        f1=f1,
        orientation=orientation,
    )


# ---------------------------------------------------------------------------
# Distance correlation
# ---------------------------------------------------------------------------

def _as_column(values: Sequence[float], what: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if np.isnan(array).any():
        raise MissingValueError(f'{what} contains missing values')
    return array.reshape(-1, 1) if array.ndim == 1 else array


def _centered_distances(values: np.ndarray) -> np.ndarray:
    d = scipy.spatial.distance.squareform(scipy.spatial.distance.pdist(values, metric='euclidean'))
    return d - d.mean(axis=0)[None, :] - d.mean(axis=1)[:, None] + d.mean()


def _prepare(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _as_column(x, 'x'), _as_column(y, 'y')
    n = _paired(x, y, 'distance correlation')
    if n < 2:
        raise EmptyInputError('distance correlation needs at least two paired samples')
    return _centered_distances(x), _centered_distances(y)


def _dcor_from_centered(A: np.ndarray, B: np.ndarray, dvar_x: float, dvar_y: float) -> float:
    n2 = A.shape[0] ** 2
    dcov2_xy = max(np.vdot(A, B) / n2, 0.0)
    return min(math.sqrt(dcov2_xy / math.sqrt(dvar_x * dvar_y)), 1.0)


def distance_correlation(x: Sequence[float], y: Sequence[float]) -> DcorValue:
    """Sample distance correlation of two paired sequences"""
    A, B = _prepare(x, y)
    n2 = A.shape[0] ** 2
    dvar_x, dvar_y = np.vdot(A, A) / n2, np.vdot(B, B) / n2
    if dvar_x <= 0 or dvar_y <= 0:
        return DcorValue(dcor=0.0, constant_input=True)
    return DcorValue(dcor=_dcor_from_centered(A, B, dvar_x, dvar_y))


def _count_exceeding(A: np.ndarray, B: np.ndarray, dvar_x: float, dvar_y: float, observed: float,
                     n_perm: int, seed_seq: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed_seq)
    count = 0
    for _ in range(n_perm):
        p = rng.permutation(A.shape[0])
        if _dcor_from_centered(A, B[p][:, p], dvar_x, dvar_y) >= observed - DCOR_TIE_TOLERANCE:
            count += 1
    return count


def permutation_pvalue(x: Sequence[float], y: Sequence[float], n_iter: int = 1000, seed: int = 0,
                       max_workers: int = 4) -> DcorResult:
    """dCor with an add-one permutation p-value.

    Permutations are drawn in fixed-size chunks, each from its own child of
    ``SeedSequence(seed)``, so the result does not depend on ``max_workers``.
    """
    if n_iter < 0:
        raise EmptyInputError(f'n_iter must be >= 0, got {n_iter}')
    A, B = _prepare(x, y)
    n2 = A.shape[0] ** 2
    dvar_x, dvar_y = np.vdot(A, A) / n2, np.vdot(B, B) / n2
    if dvar_x <= 0 or dvar_y <= 0:
        logger.warning("⚠️ Constant input to distance correlation, dCor set to 0")
        return DcorResult(dcor=0.0, p_value=1.0, n_permutations=n_iter, seed=seed, constant_input=True)

    observed = _dcor_from_centered(A, B, dvar_x, dvar_y)
    sizes = [PERMUTATION_CHUNK] * (n_iter // PERMUTATION_CHUNK)
    if n_iter % PERMUTATION_CHUNK:
        sizes.append(n_iter % PERMUTATION_CHUNK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    exceeding = 0
    if sizes:
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as executor:
            futures = [
                executor.submit(_count_exceeding, A, B, dvar_x, dvar_y, observed, size, child)
                for size, child in zip(sizes, children)
            ]
            for future in as_completed(futures):
                exceeding += future.result()

    p_value = (1 + exceeding) / (1 + n_iter)
    return DcorResult(dcor=observed, p_value=p_value, n_permutations=n_iter, seed=seed)


# ---------------------------------------------------------------------------
# Trends and summaries
# ---------------------------------------------------------------------------

def linear_trend(values: Sequence[Tuple[float, float]]) -> TrendResult:
    """OLS of mean comfort on trial index with the slope t-test p-value"""
    points = [(float(i), float(m)) for i, m in values if m is not None and not math.isnan(float(m))]
    xs = np.array([p[0] for p in points])
    if len(points) < 2 or np.unique(xs).size < 2:
        raise FewerThanTwoPointsError(f'linear trend needs two distinct trial indices, got {len(points)} point(s)')
    ys = np.array([p[1] for p in points])
    fit = scipy.stats.linregress(xs, ys)
    p_value = float(fit.pvalue) if len(points) > 2 and math.isfinite(fit.pvalue) else None
    return TrendResult(slope=float(fit.slope), intercept=float(fit.intercept), p_value=p_value, n_points=len(points))


def _box(label: str, comforts: Sequence[float]) -> BinSummary:
    values = np.asarray(comforts, dtype=float)
    if values.size == 0:
        return BinSummary(label, 0, None, None, None, None, None, None, None, 0)
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return BinSummary(
        label=label,
        count=int(values.size),
        mean=float(values.mean()),
        sd=float(values.std(ddof=1)) if values.size > 1 else None,
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        n_outliers=int(values.size - inside.size),
    )


def bin_summary(values: Sequence, comforts: Sequence[int], variable: str, config) -> List[BinSummary]:
    """Boxplot statistics of reported comfort per bin of one variable.

    Unbinned values are excluded from the bins and reported as a trailing
    ``Unbinned`` entry when present.
    """
    from services.predictor_service import UNBINNED, assign_bin

    _paired(values, comforts, f'bin summary of {variable}')
    grouped: Dict[str, List[int]] = {label: [] for label in config.bins[variable].labels}
    unbinned: List[int] = []
    for value, comfort in zip(values, comforts):
        label = assign_bin(variable, value, config)
        (unbinned if label == UNBINNED else grouped[label]).append(comfort)
    summaries = [_box(label, members) for label, members in grouped.items()]
    if unbinned:
        summaries.append(_box(UNBINNED, unbinned))
    return summaries


def score_summary(scores: Sequence[Optional[int]], comforts: Sequence[int]) -> List[BinSummary]:
    """Boxplot statistics of reported comfort per composite score E"""
    _paired(scores, comforts, 'score summary')
    grouped: Dict[int, List[int]] = {}
    for score, comfort in zip(scores, comforts):
        if score is not None:
            grouped.setdefault(int(score), []).append(comfort)
    return [_box(str(score), grouped[score]) for score in sorted(grouped)]


def _labelled(records: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    missing = [c for c in columns if c not in records.columns]
    if missing:
        raise MissingValueError(f'comfort records lack column(s) {missing}')
    frame = records.dropna(subset=list(columns)).copy()
    if frame.empty:
        raise EmptyInputError('no comfort records with the required columns')
    frame['speed_group'] = frame['speed_group'].astype(str)
    frame['reported_comfort'] = frame['reported_comfort'].astype(float)
    return frame


def group_comfort(records: pd.DataFrame) -> Dict[str, Dict[str, Optional[float]]]:
    """Mean and SD of reported comfort per speed group, plus the total"""
    frame = _labelled(records, ['speed_group', 'reported_comfort'])
    result = {}
    groups = [(group, part['reported_comfort']) for group, part in frame.groupby('speed_group', sort=True)]
    for group, comfort in groups + [(TOTAL_GROUP, frame['reported_comfort'])]:
        result[group] = {
            'n': int(comfort.size),
            'mean': float(comfort.mean()),
            'sd': float(comfort.std()) if comfort.size > 1 else None,
        }
    return result


def comfort_by_trial(records: pd.DataFrame) -> Dict[str, Dict]:
    """Learning-effect table: mean and relative SD of comfort per group and trial index, with a trend per group"""
    frame = _labelled(records, ['speed_group', 'trial_index', 'reported_comfort'])
    frame['trial_index'] = frame['trial_index'].astype(int)
    parts = [(group, part) for group, part in frame.groupby('speed_group', sort=True)]
    parts.append((TOTAL_GROUP, frame))

    result = {}
    for group, part in parts:
        stats = part.groupby('trial_index')['reported_comfort'].agg(['count', 'mean', 'std']).sort_index()
        rows = []
        for trial_index, row in stats.iterrows():
            rel_sd = abs(row['std'] / row['mean']) * 100 if row['count'] > 1 and row['mean'] else None
            rows.append({
                'trial_index': int(trial_index),
                'n': int(row['count']),
                'mean': float(row['mean']),
                'rel_sd_pct': float(rel_sd) if rel_sd is not None else None,
            })
        try:
            trend = linear_trend([(r['trial_index'], r['mean']) for r in rows])
            trend_payload = {'slope': trend.slope, 'intercept': trend.intercept,
                             'p_value': trend.p_value, 'n_points': trend.n_points}
        except FewerThanTwoPointsError as e:
            logger.warning(f"⚠️ No trend for group {group}: {e}")
            trend_payload = None
        result[group] = {'trials': rows, 'trend': trend_payload}
    return result
