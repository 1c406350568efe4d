import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import ComfortOutOfRangeError, ComputationError, EmptyInputError, InputError, MissingColumnError
from models import FEATURE_NAMES, KinematicFeatures, MetricOrientation, Predictor
from services.predictor_service import PredictorConfig, binarize_comfort, composite_breakdown, predict_all
from services.stats_service import (
    bin_summary,
    chi_square,
    classification_metrics,
    comfort_by_trial,
    contingency,
    group_comfort,
    odds_ratio,
    permutation_pvalue,
    score_summary,
)
from settings import TOOL_NAME, TOOL_VERSION
from tools.io_utils import PathLike, read_string_table

logger = logging.getLogger(__name__)

LABELS_FILE = 'labels.csv'
LABEL_COLUMNS = ['trial_id', 'reported_comfort']
OPTIONAL_LABEL_COLUMNS = ['participant_id', 'trial_index', 'speed_group', 'label_source']
DCOR_VARIABLES = (*FEATURE_NAMES, 'E')


def comfort_values(values: pd.Series, trial_ids: pd.Series, source: str) -> np.ndarray:
    """Reported comfort as integers; anything that is not a whole number in 1..5 is rejected"""
    comfort = pd.to_numeric(pd.Series(values).reset_index(drop=True), errors='coerce')
    trial_ids = pd.Series(trial_ids).reset_index(drop=True).astype(str)
    bad = trial_ids[comfort.isna() | (comfort % 1 != 0) | (comfort < 1) | (comfort > 5)]
    if not bad.empty:
        raise ComfortOutOfRangeError(f'{source}: reported comfort outside 1..5 for trial(s) {", ".join(bad)}')
    return comfort.astype(int).to_numpy()


def read_labels(path: PathLike) -> pd.DataFrame:
    """Read comfort labels from a labels CSV, a trials.csv, or a dataset directory holding either"""
    path = Path(path)
    if path.is_dir():
        candidates = [path / LABELS_FILE, path / 'trials.csv']
        path = next((c for c in candidates if c.is_file()), candidates[0])
    if not path.is_file():
        raise InputError(f'labels file not found: {path}')
    frame = read_string_table(path, 'labels file')
    missing = [c for c in LABEL_COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumnError(f'{path} is missing column(s) {", ".join(missing)}')
    frame = frame[frame['reported_comfort'].str.strip() != '']
    if frame.empty:
        raise EmptyInputError(f'labels file {path} has no labelled trials')

    labels = pd.DataFrame({'trial_id': frame['trial_id'].str.strip()})
    labels['reported_comfort'] = comfort_values(frame['reported_comfort'], labels['trial_id'], str(path))
    for column in OPTIONAL_LABEL_COLUMNS:
        if column in frame.columns:
            values = frame[column].str.strip()
            labels[column] = values.where(values != '').to_numpy()
    if 'trial_index' in labels.columns:
        labels['trial_index'] = pd.to_numeric(labels['trial_index'], errors='coerce')
    if labels['trial_id'].duplicated().any():
        dupes = sorted(labels.loc[labels['trial_id'].duplicated(), 'trial_id'].unique())
        raise InputError(f'{path}: duplicate trial id(s) {", ".join(dupes)}')
    return labels.reset_index(drop=True)


def _table_payload(table) -> List[List[int]]:
    return [list(row) for row in table.n]


def _metrics_payload(metrics) -> Dict:
    payload = asdict(metrics)
    payload.pop('orientation')
    return payload


def evaluate_predictor(preds: Sequence[Optional[int]], truths: Sequence[int]) -> Dict:
    """Contingency table, chi-square (both conventions), odds ratio and metrics (both orientations) for one predictor"""
    pairs = [(p, s) for p, s in zip(preds, truths) if p is not None]
    result = {'n': len(pairs), 'n_not_applicable': len(preds) - len(pairs)}
    if not pairs:
        result['error'] = {'code': 'Empty', 'message': 'predictor was not applicable to any trial'}
        return result

    table = contingency([p for p, _ in pairs], [s for _, s in pairs])
    result['contingency'] = _table_payload(table)

    chi = {}
    for name, yates in (('pearson', False), ('yates', True)):
        try:
            res = chi_square(table, yates=yates)
            chi[name] = {'statistic': res.statistic, 'p_value': res.p_value}
        except ComputationError as e:
            chi[name] = {'error': e.to_dict()}
    result['chi_square'] = chi

    ratio = odds_ratio(table)
    result['odds_ratio'] = {'ratio': ratio.ratio, 'haldane_corrected': ratio.haldane_corrected}
    result['metrics'] = {
        orientation.value: _metrics_payload(classification_metrics(table, orientation))
        for orientation in (MetricOrientation.STANDARD, MetricOrientation.TRANSPOSED)
    }
    return result


class EvaluationService:
    """Joins features with comfort labels and assembles the evaluation report"""

    def __init__(self, config: PredictorConfig, n_permutations: int = 1000, seed: int = 0, max_workers: int = 4):
        self.config = config
        self.n_permutations = n_permutations
        self.seed = seed
        self.max_workers = max_workers
        self.logger = logger

    def _join(self, features: List[KinematicFeatures], labels: pd.DataFrame):
        by_id = labels.set_index('trial_id', drop=False)
        matched = [f for f in features if f.trial_id in by_id.index]
        unlabelled = len(features) - len(matched)
        unmatched = len(set(by_id.index) - {f.trial_id for f in features})
        if unlabelled:
            self.logger.warning(f"⚠️ {unlabelled} feature rows have no comfort label and are skipped")
        if unmatched:
            self.logger.warning(f"⚠️ {unmatched} labels have no feature row and are skipped")
        if not matched:
            raise EmptyInputError('no trial appears in both the features and the labels')
        rows = by_id.loc[[f.trial_id for f in matched]].reset_index(drop=True)
        return matched, rows, unlabelled, unmatched

    def _dcor_table(self, columns: Dict[str, List], comforts: List[int]) -> Dict:
        table = {}
        for name in DCOR_VARIABLES:
            pairs = [(v, s) for v, s in zip(columns[name], comforts) if v is not None and np.isfinite(v)]
            entry = {'n': len(pairs)}
            if len(pairs) < 2:
                entry['error'] = {'code': 'TooFewSamples', 'message': f'{len(pairs)} usable value(s)'}
            else:
                res = permutation_pvalue([v for v, _ in pairs], [s for _, s in pairs],
                                         n_iter=self.n_permutations, seed=self.seed, max_workers=self.max_workers)
                entry.update({'dcor': res.dcor, 'p_value': res.p_value, 'constant_input': res.constant_input})
            table[name] = entry
            self.logger.info(f"📊 dCor({name}, S) over {len(pairs)} trials: {entry.get('dcor')}")
        return table

    def evaluate(self, features: List[KinematicFeatures], labels: pd.DataFrame,
                 params: Optional[Dict] = None, manifest_file: Optional[str] = None) -> Dict:
        self.logger.info(f"🚀 Evaluating {len(features)} feature rows against {len(labels)} labels")
        matched, rows, unlabelled, unmatched = self._join(features, labels)
        comforts = [int(s) for s in rows['reported_comfort']]
        truths = [binarize_comfort(s) for s in comforts]

        predictions = [predict_all(f, self.config) for f in matched]
        breakdowns = [composite_breakdown(f, self.config) for f in matched]
        scores = [p[Predictor.COMPOSITE].score for p in predictions]

        columns = {name: [f.value(name) for f in matched] for name in FEATURE_NAMES}
        columns['E'] = [float(s) if s is not None else None for s in scores]

        comfort_records = rows.drop(columns=['label_source'], errors='ignore')
        report = {
            'tool': f'{TOOL_NAME} {TOOL_VERSION}',
            'manifest': manifest_file,
            'seed': self.seed,
            'n_permutations': self.n_permutations,
            'inputs': {
                'n_trials': len(matched),
                'n_features_without_label': unlabelled,
                'n_labels_without_features': unmatched,
                'label_sources': sorted(rows['label_source'].dropna().unique().tolist())
                if 'label_source' in rows.columns else [],
            },
            'predictor_config': {
                'thresholds': {
                    'min_distance': self.config.min_distance_threshold,
                    'min_pttc': self.config.min_pttc_threshold,
                    'composite': self.config.composite_threshold,
                },
                'missing_policy': self.config.missing_policy,
                'provenance': self.config.provenance,
            },
            'kinematics_params': params,
            'comfort': {
                'distribution': {str(level): comforts.count(level) for level in range(1, 6)},
                'comfortable_share': sum(truths) / len(truths),
                'by_group': self._optional(group_comfort, comfort_records, ['speed_group']),
                'by_trial': self._optional(comfort_by_trial, comfort_records, ['speed_group', 'trial_index']),
            },
            'dcor': self._dcor_table(columns, comforts),
            'bins': {
                name: [asdict(b) for b in bin_summary(columns[name], comforts, name, self.config)]
                for name in FEATURE_NAMES
            },
            'score_summary': [asdict(b) for b in score_summary(scores, comforts)],
            'missing_features': {
                name: sum(1 for b in breakdowns if name in b.missing) for name in FEATURE_NAMES
            },
            'predictors': {
                predictor.value: evaluate_predictor([p[predictor].value for p in predictions], truths)
                for predictor in Predictor
            },
        }
        self.logger.info(f"✅ Evaluation complete for {len(matched)} trials")
        return report

    def _optional(self, func, records: pd.DataFrame, needed: List[str]):
        if any(c not in records.columns or records[c].isna().all() for c in needed):
            return None
        try:
            return func(records)
        except (InputError, ComputationError) as e:
            self.logger.warning(f"⚠️ Skipping {func.__name__}: {e.message}")
            return None


def summary_tables(report: Dict) -> Dict[str, pd.DataFrame]:
    """Flatten a report into the dCor table and the predictor comparison table"""
    dcor_rows = [
        {'variable': name, 'n': entry.get('n'), 'dcor': entry.get('dcor'), 'p_value': entry.get('p_value')}
        for name, entry in report['dcor'].items()
    ]
    predictor_rows = []
    for name, entry in report['predictors'].items():
        row = {'predictor': name, 'n': entry.get('n'), 'n_not_applicable': entry.get('n_not_applicable')}
        row['odds_ratio'] = entry.get('odds_ratio', {}).get('ratio')
        for convention in ('pearson', 'yates'):
            chi = entry.get('chi_square', {}).get(convention, {})
            row[f'chi2_{convention}'] = chi.get('statistic')
            row[f'p_{convention}'] = chi.get('p_value')
        for orientation, metrics in entry.get('metrics', {}).items():
            for metric, value in metrics.items():
                row[f'{metric}_{orientation}'] = value
        predictor_rows.append(row)
    return {'dcor': pd.DataFrame(dcor_rows), 'predictors': pd.DataFrame(predictor_rows)}
