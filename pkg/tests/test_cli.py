import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from cli import cli
from models import EncounterDataset, SpeedGroup, Trajectory, TrialRecord
from services.dataset_service import TRIALS_DIR, write_dataset


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def _write_json(path, payload):
    path.write_text(json.dumps(payload), encoding='utf-8')
    return path


def _data_files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob('*')) if p.is_file() and not p.name.endswith('.manifest.json')}


def _pipeline(runner, root, seed=7, permutations=40):
    root.mkdir(parents=True, exist_ok=True)
    sim, feats, ev = root / 'sim', root / 'features', root / 'eval'
    scenario = _write_json(root / 'scenario.json', {'sweep': {'robot_speed': [1.4, 2.8], 'lateral_offset': [0.5, 1.2],
                                                              'avoidance_radius': [0.0, 1.25]}})
    assert invoke(runner, '--out', sim, '--seed', seed, 'simulate', scenario, '--n-trials', 20).exit_code == 0
    assert invoke(runner, '--out', feats, 'features', sim).exit_code == 0
    result = invoke(runner, '--out', ev, '--seed', seed, 'evaluate', feats, sim, '--permutations', permutations)
    assert result.exit_code == 0, result.output
    return sim, feats, ev


class TestSimulate:
    def test_same_seed_gives_identical_files(self, runner, tmp_path):
        assert invoke(runner, '--out', tmp_path / 'a', '--seed', 3, 'simulate').exit_code == 0
        assert invoke(runner, '--out', tmp_path / 'b', '--seed', 3, 'simulate').exit_code == 0
        first, second = _data_files(tmp_path / 'a'), _data_files(tmp_path / 'b')
        assert len(first) == 10 * 3 + 3
        assert first == second

    def test_writes_manifest(self, runner, tmp_path):
        assert invoke(runner, '--out', tmp_path, '--seed', 1, 'simulate', '--n-trials', 2).exit_code == 0
        manifest = json.loads((tmp_path / 'simulate.manifest.json').read_text(encoding='utf-8'))
        assert manifest['command'] == 'simulate'
        assert manifest['seed'] == 1
        assert set(manifest['outputs']) == {'provenance.json', 'labels.csv', 'ground_truth.csv'}
        assert {'scenario', 'predictor_config'} <= set(manifest['config_hashes'])

    def test_invalid_scenario_exits_with_input_error(self, runner, tmp_path):
        scenario = _write_json(tmp_path / 'bad.json', {'dt': 0})
        result = invoke(runner, '--out', tmp_path / 'out', 'simulate', scenario)
        assert result.exit_code == 2
        assert 'InvalidConfig' in result.output
        assert not (tmp_path / 'out').exists()

    def test_two_speeds_label_both_groups(self, runner, tmp_path):
        scenario = _write_json(tmp_path / 'speeds.json', {'sweep': {'robot_speed': [1.4, 2.8]}})
        assert invoke(runner, '--out', tmp_path / 'sim', 'simulate', scenario).exit_code == 0
        labels = pd.read_csv(tmp_path / 'sim' / 'labels.csv')
        assert sorted(labels['speed_group'].unique()) == ['R14', 'R28']


class TestFeatures:
    def test_clean_synthetic_trials_have_no_flags(self, runner, tmp_path):
        invoke(runner, '--out', tmp_path / 'sim', 'simulate', '--n-trials', 10)
        result = invoke(runner, '--out', tmp_path / 'feat', 'features', tmp_path / 'sim')
        assert result.exit_code == 0, result.output

        frame = pd.read_csv(tmp_path / 'feat' / 'features.csv', keep_default_na=False)
        assert len(frame) == 10
        assert (frame['flags'] == '').all()
        sidecar = json.loads((tmp_path / 'feat' / 'features.params.json').read_text(encoding='utf-8'))
        assert sidecar['params']['dt'] == 0.05
        assert sidecar['manifest'] == 'features.manifest.json'

    def test_lateral_loss_leaves_empty_cell(self, runner, tmp_path):
        scenario = _write_json(tmp_path / 'loss.json', {'base': {}, 'lateral_loss_rate': 1.0})
        invoke(runner, '--out', tmp_path / 'sim', 'simulate', scenario, '--n-trials', 3)
        assert invoke(runner, '--out', tmp_path / 'feat', 'features', tmp_path / 'sim').exit_code == 0

        frame = pd.read_csv(tmp_path / 'feat' / 'features.csv', dtype=str, keep_default_na=False)
        assert (frame['d_lat'] == '').all()
        assert (frame['flags'] == 'd_lat=LateralExcluded').all()
        assert (frame['d_min'] != '').all()

    def test_missing_dataset(self, runner, tmp_path):
        result = invoke(runner, '--out', tmp_path / 'out', 'features', tmp_path / 'nowhere')
        assert result.exit_code == 2
        assert not (tmp_path / 'out').exists()

    def test_malformed_meta_is_an_input_error(self, runner, tmp_path):
        invoke(runner, '--out', tmp_path / 'sim', 'simulate', '--n-trials', 2)
        (tmp_path / 'sim' / 'sim-0000' / 'meta.json').write_text('{"trial_id": ', encoding='utf-8')
        result = invoke(runner, '--out', tmp_path / 'out', 'features', tmp_path / 'sim')
        assert result.exit_code == 2
        assert 'InvalidTrial' in result.output

    def test_empty_trials_index_is_an_input_error(self, runner, tmp_path):
        (tmp_path / 'ds').mkdir()
        (tmp_path / 'ds' / 'trials.csv').write_text('', encoding='utf-8')
        result = invoke(runner, '--out', tmp_path / 'out', 'features', tmp_path / 'ds')
        assert result.exit_code == 2
        assert 'Empty' in result.output

    def test_failed_trial_blocks_output(self, runner, tmp_path):
        t1, t2 = np.arange(5) * 0.1, 2 + np.arange(5) * 0.1
        trial = TrialRecord(
            trial_id='gap', participant_id='P01', trial_index=1, speed_group=SpeedGroup.R14,
            robot=Trajectory.from_arrays(t1, t1, 0 * t1), pedestrian=Trajectory.from_arrays(t2, 5 - t2, 0 * t2),
            reported_comfort=3,
        )
        write_dataset(EncounterDataset(trials=(trial,)), tmp_path / 'ds', TRIALS_DIR)
        result = invoke(runner, '--out', tmp_path / 'out', 'features', tmp_path / 'ds')
        assert result.exit_code == 3
        assert 'NoTemporalOverlap' in result.output
        assert not (tmp_path / 'out' / 'features.csv').exists()


class TestPredictAndEvaluate:
    def test_predict_formats(self, runner, tmp_path):
        invoke(runner, '--out', tmp_path / 'sim', 'simulate', '--n-trials', 4)
        invoke(runner, '--out', tmp_path / 'feat', 'features', tmp_path / 'sim')

        assert invoke(runner, '--out', tmp_path / 'json', 'predict', tmp_path / 'feat').exit_code == 0
        payload = json.loads((tmp_path / 'json' / 'predictions.json').read_text(encoding='utf-8'))
        assert payload['manifest'] == 'predict.manifest.json'
        assert [row['trial_id'] for row in payload['predictions']] == [f'sim-{i:04d}' for i in range(4)]

        result = invoke(runner, '--out', tmp_path / 'csv', '--format', 'csv', 'predict',
                        tmp_path / 'feat' / 'features.csv')
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / 'csv' / 'predictions.csv')
        assert list(frame.columns) == ['trial_id', 'E', 'S_d', 'S_t', 'S_E', 'bins', 'flags']

    def test_empty_features_file(self, runner, tmp_path):
        (tmp_path / 'features.csv').write_text('', encoding='utf-8')
        result = invoke(runner, '--out', tmp_path / 'out', 'predict', tmp_path / 'features.csv')
        assert result.exit_code == 2
        assert 'features.csv' in result.output

    def test_bad_predictor_config(self, runner, tmp_path):
        config = _write_json(tmp_path / 'config.json', {'bins': {}})
        result = invoke(runner, '--config', config, '--out', tmp_path / 'out', 'predict', tmp_path)
        assert result.exit_code == 2
        assert 'ConfigError' in result.output

    def test_pipeline_report_is_reproducible(self, runner, tmp_path):
        _, _, first = _pipeline(runner, tmp_path / 'one')
        _, _, second = _pipeline(runner, tmp_path / 'two')
        assert (first / 'report.json').read_bytes() == (second / 'report.json').read_bytes()

        report = json.loads((first / 'report.json').read_text(encoding='utf-8'))
        assert report['seed'] == 7
        assert report['n_permutations'] == 40
        assert report['manifest'] == 'evaluate.manifest.json'
        assert report['kinematics_params']['dt'] == 0.05
        assert list(report['comfort']['by_group']) == ['R14', 'R28', 'Total']

    def test_empty_labels_name_the_file(self, runner, tmp_path):
        _, feats, _ = _pipeline(runner, tmp_path, permutations=5)
        labels = tmp_path / 'empty.csv'
        labels.write_text('', encoding='utf-8')
        result = invoke(runner, '--out', tmp_path / 'e2', 'evaluate', feats, labels)
        assert result.exit_code == 2
        assert 'empty.csv' in result.output
        assert not (tmp_path / 'e2' / 'report.json').exists()

    @pytest.mark.parametrize('fmt,files', [
        ('csv', {'dcor_table.csv', 'predictors_table.csv'}),
        ('json', {'summary.json'}),
    ])
    def test_report_tables(self, runner, tmp_path, fmt, files):
        _, _, ev = _pipeline(runner, tmp_path, permutations=5)
        result = invoke(runner, '--out', tmp_path / 'tables', '--format', fmt, 'report', ev)
        assert result.exit_code == 0
        written = {p.name for p in (tmp_path / 'tables').iterdir()}
        assert written == files | {'report.manifest.json'}

    def test_report_of_missing_file(self, runner, tmp_path):
        assert invoke(runner, '--out', tmp_path / 'out', 'report', tmp_path / 'none.json').exit_code == 2


def test_version(runner):
    result = invoke(runner, '--version')
    assert result.exit_code == 0
    assert '0.4.0' in result.output
