import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple, Union

import pandas as pd

from errors import ConfigError, MissingValueError, OutOfRangeError
from models import FEATURE_NAMES, ComfortLabel, KinematicFeatures, Prediction, Predictor, SpeedGroup
from settings import DEFAULT_PREDICTOR_CONFIG
from tools.io_utils import PathLike, read_json

logger = logging.getLogger(__name__)

UNBINNED = 'Unbinned'
COMFORT_THRESHOLD = 4
MISSING_WEIGHT_ZERO = 'missing-weight-0'
MISSING_NOT_APPLICABLE = 'missing-not-applicable'
MISSING_POLICIES = (MISSING_WEIGHT_ZERO, MISSING_NOT_APPLICABLE)
BIN_LABELS = 'ABCDEFGHIJ'


@dataclass(frozen=True)
class VariableBins:
    """Bins of one variable: lower edges (left-closed, last bin open to +inf) or categories"""
    variable: str
    labels: Tuple[str, ...]
    edges: Tuple[float, ...] = ()
    categories: Mapping[str, str] = field(default_factory=dict)
    nominal_speeds: Mapping[str, float] = field(default_factory=dict)

    @property
    def categorical(self) -> bool:
        return bool(self.categories)

    def assign(self, value) -> str:
        if value is None:
            return UNBINNED
        if self.categorical:
            return self._assign_category(value)
        value = float(value)
        if math.isnan(value):
            return UNBINNED
        if value < self.edges[0]:
            raise OutOfRangeError(f'{self.variable}={value} lies below the first bin edge {self.edges[0]}')
        return self.labels[bisect_right(self.edges, value) - 1]

    def _assign_category(self, value) -> str:
        if isinstance(value, SpeedGroup):
            value = value.value
        if isinstance(value, str):
            key = value.strip().upper()
            if key not in self.categories:
                raise OutOfRangeError(f'{self.variable} category {value!r} has no bin')
            return self.categories[key]
        value = float(value)
        if math.isnan(value):
            return UNBINNED
        # a measured speed maps to the nearest nominal speed group
        group = min(self.nominal_speeds, key=lambda g: abs(value - self.nominal_speeds[g]))
        return self.categories[group]


@dataclass(frozen=True)
class PredictorConfig:
    """Binning scheme, weight table, thresholds and the missing-feature policy"""
    bins: Mapping[str, VariableBins]
    weights: Mapping[str, Mapping[str, int]]
    min_distance_threshold: float = 1.0
    min_pttc_threshold: float = 0.7
    composite_threshold: int = 4
    missing_policy: str = MISSING_WEIGHT_ZERO
    provenance: Mapping[str, object] = field(default_factory=dict)
    raw: Mapping[str, object] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, payload: Dict) -> 'PredictorConfig':
        try:
            bins = {name: _parse_bins(name, spec) for name, spec in payload['bins'].items()}
            weights = {name: {str(k): v for k, v in table.items()} for name, table in payload['weights'].items()}
            thresholds = payload.get('thresholds', {})
            config = cls(
                bins=bins,
                weights=weights,
                min_distance_threshold=float(thresholds.get('min_distance', 1.0)),
                min_pttc_threshold=float(thresholds.get('min_pttc', 0.7)),
                composite_threshold=int(thresholds.get('composite', 4)),
                missing_policy=payload.get('missing_policy', MISSING_WEIGHT_ZERO),
                provenance=payload.get('provenance', {}),
                raw=payload,
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f'malformed predictor config: {e}')
        config.validate()
        return config

    @classmethod
    def load(cls, path: Optional[PathLike] = None) -> 'PredictorConfig':
        path = path or DEFAULT_PREDICTOR_CONFIG
        try:
            payload = read_json(path)
        except (OSError, ValueError) as e:
            raise ConfigError(f'cannot read predictor config {path}: {e}')
        return cls.from_dict(payload)

    @classmethod
    def default(cls) -> 'PredictorConfig':
        return cls.load(DEFAULT_PREDICTOR_CONFIG)

    def validate(self) -> None:
        missing = [name for name in FEATURE_NAMES if name not in self.bins]
        if missing:
            raise ConfigError(f'binning scheme lacks variable(s) {missing}')
        if self.missing_policy not in MISSING_POLICIES:
            raise ConfigError(f'missing_policy must be one of {MISSING_POLICIES}')
        for name, spec in self.bins.items():
            table = self.weights.get(name)
            if table is None:
                raise ConfigError(f'weight table lacks variable {name}')
            for label in spec.labels:
                weight = table.get(label)
                if not isinstance(weight, int) or isinstance(weight, bool) or weight < 0:
                    raise ConfigError(f'weight for ({name}, {label}) must be a non-negative integer, got {weight!r}')

    def to_dict(self) -> Dict:
        return dict(self.raw)

    def max_score(self) -> int:
        return sum(max(self.weights[name][label] for label in spec.labels) for name, spec in self.bins.items())


def _parse_bins(name: str, spec: Dict) -> VariableBins:
    if 'categories' in spec:
        categories = {str(k).upper(): str(v) for k, v in spec['categories'].items()}
        labels = tuple(sorted(set(categories.values())))
        nominal = {str(k).upper(): float(v) for k, v in spec.get('nominal_speeds', {}).items()}
        if set(nominal) != set(categories):
            raise ConfigError(f'{name}: nominal_speeds must name every category')
        bins = VariableBins(variable=name, labels=labels, categories=categories, nominal_speeds=nominal)
    else:
        edges = tuple(float(e) for e in spec['edges'])
        labels = tuple(str(label) for label in spec['labels'])
        if len(edges) != len(labels):
            raise ConfigError(f'{name}: {len(edges)} edges but {len(labels)} labels')
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError(f'{name}: bin edges must be strictly increasing')
        bins = VariableBins(variable=name, labels=labels, edges=edges)
    if bins.labels != tuple(BIN_LABELS[:len(bins.labels)]):
        raise ConfigError(f'{name}: bin labels must be contiguous from A, got {bins.labels}')
    return bins


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

def binarize_comfort(s: int) -> int:
    """Binary comfort index: 1 when the Likert answer is 4 or 5"""
    if isinstance(s, bool) or not isinstance(s, int) or not 1 <= s <= 5:
        raise OutOfRangeError(f'reported comfort {s!r} not in 1..5')
    return ComfortLabel(s=s, s_e=1 if s >= COMFORT_THRESHOLD else 0).s_e


def assign_bin(variable: str, value: Union[float, str, SpeedGroup, None], config: PredictorConfig) -> str:
    if variable not in config.bins:
        raise ConfigError(f'no bins defined for variable {variable!r}')
    return config.bins[variable].assign(value)


def predict_min_distance(d_min: Optional[float], threshold: float = 1.0) -> Prediction:
    if d_min is None or math.isnan(d_min):
        raise MissingValueError('minimum distance is missing')
    return Prediction(Predictor.MIN_DISTANCE, 1 if d_min >= threshold else 0)


def predict_min_pttc(t_p: Optional[float], threshold: float = 0.7) -> Prediction:
    if t_p is None or math.isnan(t_p):
        raise MissingValueError('minimum PTTC is missing')
    return Prediction(Predictor.MIN_PTTC, 1 if t_p >= threshold else 0)


def predict_composite(score: int, threshold: int = 4) -> Prediction:
    return Prediction(Predictor.COMPOSITE, 1 if score >= threshold else 0, score=int(score))


def _never_approaching(features: KinematicFeatures) -> bool:
    return features.t_p is None and features.flags.get('t_p') == 'NeverApproaching'


def _effective_value(features: KinematicFeatures, name: str):
    if name == 't_p' and _never_approaching(features):
        return math.inf
    return features.value(name)


@dataclass(frozen=True)
class CompositeBreakdown:
    score: int
    bins: Dict[str, str]
    weights: Dict[str, int]
    missing: Tuple[str, ...]


def composite_breakdown(features: KinematicFeatures, config: PredictorConfig) -> CompositeBreakdown:
    """Bin label and weight per variable; unbinned variables contribute 0 and are listed as missing"""
    bins, weights, missing = {}, {}, []
    for name in FEATURE_NAMES:
        label = assign_bin(name, _effective_value(features, name), config)
        bins[name] = label
        if label == UNBINNED:
            missing.append(name)
            weights[name] = 0
        else:
            weights[name] = config.weights[name][label]
    return CompositeBreakdown(score=sum(weights.values()), bins=bins, weights=weights, missing=tuple(missing))


def composite_score(features: KinematicFeatures, config: PredictorConfig) -> int:
    """E: the sum of the six per-variable bin weights"""
    return composite_breakdown(features, config).score


def predict_all(features: KinematicFeatures, config: PredictorConfig) -> Dict[Predictor, Prediction]:
    """Run all three predictors; inapplicable ones come back with value None and a flag"""
    predictions: Dict[Predictor, Prediction] = {}

    try:
        predictions[Predictor.MIN_DISTANCE] = predict_min_distance(features.d_min, config.min_distance_threshold)
    except MissingValueError:
        predictions[Predictor.MIN_DISTANCE] = Prediction(Predictor.MIN_DISTANCE, None, flags=('NotApplicable',))

    if _never_approaching(features):
        base = predict_min_pttc(math.inf, config.min_pttc_threshold)
        predictions[Predictor.MIN_PTTC] = Prediction(Predictor.MIN_PTTC, base.value, flags=('NeverApproachingAsInfinite',))
    else:
        try:
            predictions[Predictor.MIN_PTTC] = predict_min_pttc(features.t_p, config.min_pttc_threshold)
        except MissingValueError:
            predictions[Predictor.MIN_PTTC] = Prediction(Predictor.MIN_PTTC, None, flags=('NotApplicable',))

    breakdown = composite_breakdown(features, config)
    missing_flags = tuple(f'MissingWeight0:{name}' for name in breakdown.missing)
    if breakdown.missing and config.missing_policy == MISSING_NOT_APPLICABLE:
        predictions[Predictor.COMPOSITE] = Prediction(
            Predictor.COMPOSITE, None, score=None, flags=('NotApplicable',) + tuple(f'Missing:{n}' for n in breakdown.missing))
    else:
        base = predict_composite(breakdown.score, config.composite_threshold)
        predictions[Predictor.COMPOSITE] = Prediction(Predictor.COMPOSITE, base.value, score=base.score, flags=missing_flags)
    return predictions


class PredictorService:
    """Batch prediction over feature rows"""

    def __init__(self, config: Optional[PredictorConfig] = None):
        self.config = config or PredictorConfig.default()
        self.logger = logger

    def predict_batch(self, features: List[KinematicFeatures]) -> List[Dict]:
        rows = []
        for f in features:
            predictions = predict_all(f, self.config)
            breakdown = composite_breakdown(f, self.config)
            flags = sorted({flag for p in predictions.values() for flag in p.flags})
            rows.append({
                'trial_id': f.trial_id,
                'E': predictions[Predictor.COMPOSITE].score,
                'S_d': predictions[Predictor.MIN_DISTANCE].value,
                'S_t': predictions[Predictor.MIN_PTTC].value,
                'S_E': predictions[Predictor.COMPOSITE].value,
                'bins': ''.join(breakdown.bins[name][0] if breakdown.bins[name] != UNBINNED else '-' for name in FEATURE_NAMES),
                'flags': ';'.join(flags),
            })
        not_applicable = sum(1 for r in rows if r['S_E'] is None or r['S_t'] is None or r['S_d'] is None)
        self.logger.info(f"🎯 Predicted comfort for {len(rows)} trials ({not_applicable} with a non-applicable predictor)")
        return rows

    def predictions_frame(self, features: List[KinematicFeatures]) -> pd.DataFrame:
        frame = pd.DataFrame(self.predict_batch(features), columns=['trial_id', 'E', 'S_d', 'S_t', 'S_E', 'bins', 'flags'])
        return frame.astype({'E': 'Int64', 'S_d': 'Int64', 'S_t': 'Int64', 'S_E': 'Int64'})
