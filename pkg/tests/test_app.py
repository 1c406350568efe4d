import pytest

from app import app
from conftest import features
from services.synthgen_service import ScenarioConfig, generate_encounter


@pytest.fixture
def client():
    app.config['TESTING'] = True
    with app.test_client() as client:
        yield client


def _trajectory(traj):
    return {'t': traj.times.tolist(), 'x': traj.positions[:, 0].tolist(), 'y': traj.positions[:, 1].tolist()}


def _feature_rows(n=8):
    rows = []
    for i in range(n):
        rows.append(features(f'f{i}', v=1.4 if i % 2 else 2.8, d_min=0.3 + 0.15 * i, d_lat=0.2 + 0.1 * i,
                             rho=0.1 * i, t_p=0.2 + 0.15 * i, d_tp=0.4 + 0.1 * i).to_dict())
    return rows


def test_health(client):
    response = client.get('/api/health')
    assert response.status_code == 200
    assert response.get_json()['status'] == 'ok'


def test_config(client):
    payload = client.get('/api/config').get_json()
    assert payload['predictor_config']['weights']['v'] == {'A': 2, 'B': 0}
    assert payload['kinematics_params']['dt'] == 0.05


class TestFeatures:
    def test_trial_features(self, client):
        trial, _ = generate_encounter(ScenarioConfig(lateral_offset=0.9))
        body = {'trial': {'trial_id': 'api-1', 'speed_group': 'R14',
                          'robot': _trajectory(trial.robot), 'pedestrian': _trajectory(trial.pedestrian)}}
        response = client.post('/api/features', json=body)
        assert response.status_code == 200
        payload = response.get_json()
        assert payload['trial_id'] == 'api-1'
        assert payload['d_min'] == pytest.approx(0.9, rel=2e-3)
        assert payload['flags'] == {}

    def test_incomplete_trial(self, client):
        response = client.post('/api/features', json={'trial_id': 'x', 'speed_group': 'R14', 'robot': {}})
        assert response.status_code == 400
        assert response.get_json()['error']['code'] == 'MissingColumn'

    def test_bad_params(self, client):
        response = client.post('/api/features', json={'params': {'dt': -1}, 'trial_id': 'x'})
        assert response.status_code == 400
        assert response.get_json()['error']['code'] == 'ConfigError'


class TestPredict:
    def test_batch(self, client):
        response = client.post('/api/predict', json={'features': [features('a').to_dict(),
                                                                   features('b', d_lat=None).to_dict()]})
        assert response.status_code == 200
        rows = response.get_json()['predictions']
        assert [r['E'] for r in rows] == [12, 10]
        assert rows[1]['flags'] == 'MissingWeight0:d_lat'

    def test_single_row(self, client):
        rows = client.post('/api/predict', json=features('solo', t_p=0.1).to_dict()).get_json()['predictions']
        assert rows[0]['S_t'] == 0

    def test_body_must_be_json(self, client):
        response = client.post('/api/predict', data='not json', content_type='text/plain')
        assert response.status_code == 400
        assert response.get_json()['error']['code'] == 'InputError'


class TestEvaluate:
    def test_report(self, client):
        labels = [{'trial_id': f'f{i}', 'reported_comfort': 1 + i % 5} for i in range(8)]
        response = client.post('/api/evaluate', json={'features': _feature_rows(), 'labels': labels,
                                                      'n_permutations': 10, 'seed': 3})
        assert response.status_code == 200
        report = response.get_json()
        assert report['seed'] == 3
        assert report['inputs']['n_trials'] == 8
        assert list(report['predictors']) == ['MinDistance', 'MinPttc', 'Composite']
        assert report['comfort']['by_group'] is None

    @pytest.mark.parametrize('comfort', [7, 3.5, 0, 'good', None])
    def test_comfort_out_of_range(self, client, comfort):
        labels = [{'trial_id': 'f0', 'reported_comfort': comfort}]
        response = client.post('/api/evaluate', json={'features': _feature_rows(1), 'labels': labels})
        assert response.status_code == 400
        assert response.get_json()['error']['code'] == 'ComfortOutOfRange'

    def test_missing_labels(self, client):
        response = client.post('/api/evaluate', json={'features': _feature_rows(1)})
        assert response.status_code == 400
        assert response.get_json()['error']['code'] == 'BadRequest'
