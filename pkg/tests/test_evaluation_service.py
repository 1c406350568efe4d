import pandas as pd
import pytest

from conftest import features
from errors import ComfortOutOfRangeError, EmptyInputError, InputError, MissingColumnError
from services.evaluation_service import (
    EvaluationService, comfort_values, evaluate_predictor, read_labels, summary_tables,
)
from services.kinematics_service import KinematicsService
from services.synthgen_service import ScenarioSweep, SimulationService

COMPOSITE_PAIRS = [(0, 0)] * 32 + [(0, 1)] * 31 + [(1, 0)] * 18 + [(1, 1)] * 64
SWEEP = {'base': {'noise_sigma': 0.01}, 'sweep': {'robot_speed': [1.4, 2.8], 'lateral_offset': [0.5, 1.2],
                                                 'avoidance_radius': [0.0, 1.25]}}


def _labels_csv(path, text):
    path.write_text(text, encoding='utf-8')
    return path


@pytest.fixture(scope='module')
def simulated():
    service = SimulationService(max_workers=2)
    dataset, _ = service.simulate(ScenarioSweep.from_dict(SWEEP), 20, seed=5)
    extracted, errors = KinematicsService(max_workers=2).extract_all(dataset)
    assert errors == []
    labels = pd.DataFrame([
        {'trial_id': t.trial_id, 'reported_comfort': t.reported_comfort, 'participant_id': t.participant_id,
         'trial_index': t.trial_index, 'speed_group': t.speed_group.value, 'label_source': 'synthetic-label'}
        for t in dataset
    ])
    return extracted, labels


class TestEvaluatePredictor:
    def test_composite_table(self):
        preds = [p for p, _ in COMPOSITE_PAIRS] + [None] * 3
        truths = [s for _, s in COMPOSITE_PAIRS] + [1, 0, 1]
        result = evaluate_predictor(preds, truths)

        assert (result['n'], result['n_not_applicable']) == (145, 3)
        assert result['contingency'] == [[32, 31], [18, 64]]
        assert result['odds_ratio']['ratio'] == pytest.approx(3.670, abs=0.001)
        assert result['chi_square']['yates']['statistic'] == pytest.approx(11.874, abs=0.005)
        transposed = result['metrics']['transposed']
        assert transposed['precision'] == pytest.approx(64 / 95)
        assert transposed['recall'] == pytest.approx(64 / 82)
        assert result['metrics']['standard']['precision'] == pytest.approx(64 / 82)

    def test_never_applicable(self):
        result = evaluate_predictor([None, None], [1, 0])
        assert result['error']['code'] == 'Empty'
        assert result['n'] == 0

    def test_constant_predictions_keep_odds_ratio(self):
        result = evaluate_predictor([1, 1, 1, 1], [1, 0, 1, 1])
        assert result['chi_square']['pearson']['error']['code'] == 'ZeroMarginal'
        assert result['odds_ratio']['haldane_corrected']


class TestComfortValues:
    def test_whole_numbers_pass(self):
        values = comfort_values(pd.Series(['4', 2, 5.0]), pd.Series(['a', 'b', 'c']), 'labels')
        assert values.tolist() == [4, 2, 5]

    def test_fractional_comfort_is_not_truncated(self):
        with pytest.raises(ComfortOutOfRangeError, match=r'trial\(s\) b$'):
            comfort_values(pd.Series([4, 3.7]), pd.Series(['a', 'b']), 'labels')


class TestReadLabels:
    def test_reads_optional_columns(self, tmp_path):
        path = _labels_csv(tmp_path / 'labels.csv',
                           'trial_id,reported_comfort,participant_id,trial_index,speed_group\n'
                           'a,4,P01,1,R14\nb,2,P01,2,\nc,,P01,3,R14\n')
        labels = read_labels(tmp_path)
        assert labels['trial_id'].tolist() == ['a', 'b']
        assert labels['reported_comfort'].tolist() == [4, 2]
        assert labels['trial_index'].tolist() == [1, 2]
        assert pd.isna(labels.loc[1, 'speed_group'])

    def test_falls_back_to_trials_index(self, tmp_path):
        _labels_csv(tmp_path / 'trials.csv', 'trial_id,reported_comfort\nx,5\n')
        assert read_labels(tmp_path)['reported_comfort'].tolist() == [5]

    def test_empty_file_names_the_path(self, tmp_path):
        path = _labels_csv(tmp_path / 'labels.csv', '')
        with pytest.raises(EmptyInputError, match='labels.csv'):
            read_labels(path)

    def test_header_only_file(self, tmp_path):
        path = _labels_csv(tmp_path / 'labels.csv', 'trial_id,reported_comfort\n')
        with pytest.raises(EmptyInputError):
            read_labels(path)

    @pytest.mark.parametrize('text,error', [
        ('trial_id,comfort\na,4\n', MissingColumnError),
        ('trial_id,reported_comfort\na,6\n', ComfortOutOfRangeError),
        ('trial_id,reported_comfort\na,3.5\n', ComfortOutOfRangeError),
        ('trial_id,reported_comfort\na,good\n', ComfortOutOfRangeError),
        ('trial_id,reported_comfort\na,4\na,3\n', InputError),
    ])
    def test_rejects_bad_labels(self, tmp_path, text, error):
        with pytest.raises(error):
            read_labels(_labels_csv(tmp_path / 'labels.csv', text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            read_labels(tmp_path / 'nope.csv')


class TestEvaluationService:
    def test_report_layout(self, simulated, predictor_config):
        extracted, labels = simulated
        report = EvaluationService(predictor_config, n_permutations=20, seed=1, max_workers=2).evaluate(
            extracted, labels, params={'dt': 0.05}, manifest_file='evaluate.manifest.json')

        assert list(report) == ['tool', 'manifest', 'seed', 'n_permutations', 'inputs', 'predictor_config',
                                'kinematics_params', 'comfort', 'dcor', 'bins', 'score_summary',
                                'missing_features', 'predictors']
        assert report['inputs']['n_trials'] == 20
        assert report['inputs']['label_sources'] == ['synthetic-label']
        assert sum(report['comfort']['distribution'].values()) == 20
        assert list(report['comfort']['by_group']) == ['R14', 'R28', 'Total']
        assert list(report['dcor']) == ['v', 'd_min', 'd_lat', 'rho', 't_p', 'd_tp', 'E']
        assert all(0 < entry['p_value'] <= 1 for entry in report['dcor'].values())
        assert list(report['predictors']) == ['MinDistance', 'MinPttc', 'Composite']
        assert sum(sum(row) for row in report['predictors']['Composite']['contingency']) == 20
        assert [b['label'] for b in report['bins']['t_p']] == ['A', 'B', 'C', 'D', 'E']

    def test_report_is_deterministic(self, simulated, predictor_config):
        extracted, labels = simulated
        first = EvaluationService(predictor_config, n_permutations=30, seed=2, max_workers=1).evaluate(extracted, labels)
        second = EvaluationService(predictor_config, n_permutations=30, seed=2, max_workers=4).evaluate(extracted, labels)
        assert first == second

    def test_partial_overlap_is_counted(self, simulated, predictor_config):
        extracted, labels = simulated
        extra = extracted + [features('unlabelled')]
        report = EvaluationService(predictor_config, n_permutations=5).evaluate(extra, labels.iloc[:15])
        assert report['inputs'] == {'n_trials': 15, 'n_features_without_label': 6, 'n_labels_without_features': 0,
                                    'label_sources': ['synthetic-label']}

    def test_labels_without_groups_skip_group_tables(self, simulated, predictor_config):
        extracted, labels = simulated
        report = EvaluationService(predictor_config, n_permutations=5).evaluate(
            extracted, labels[['trial_id', 'reported_comfort']])
        assert report['comfort']['by_group'] is None
        assert report['comfort']['by_trial'] is None

    def test_disjoint_inputs(self, simulated, predictor_config):
        extracted, _ = simulated
        labels = pd.DataFrame({'trial_id': ['other'], 'reported_comfort': [3]})
        with pytest.raises(EmptyInputError):
            EvaluationService(predictor_config, n_permutations=5).evaluate(extracted, labels)

    def test_summary_tables(self, simulated, predictor_config):
        extracted, labels = simulated
        report = EvaluationService(predictor_config, n_permutations=5).evaluate(extracted, labels)
        tables = summary_tables(report)
        assert tables['dcor']['variable'].tolist() == ['v', 'd_min', 'd_lat', 'rho', 't_p', 'd_tp', 'E']
        predictors = tables['predictors']
        assert predictors['predictor'].tolist() == ['MinDistance', 'MinPttc', 'Composite']
        assert {'odds_ratio', 'chi2_yates', 'precision_transposed', 'f1_standard'} <= set(predictors.columns)
