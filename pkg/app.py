from flask import Flask, jsonify, request
from flask_cors import CORS
import os
import logging

import pandas as pd

from errors import ComfortToolkitError, InputError
from models import KinematicFeatures
from settings import TOOL_NAME, TOOL_VERSION, configure_logging, load_settings
from tools.io_utils import to_jsonable

settings = load_settings()

# Initialize Flask app
app = Flask(__name__)
app.json.sort_keys = False
CORS(app)

# Configure logging with detailed format
configure_logging(settings.log_level)
logger = logging.getLogger(__name__)

# Import services after logging is configured
from cli import cli
from services.dataset_service import trial_from_dict
from services.evaluation_service import EvaluationService, comfort_values
from services.kinematics_service import KinematicsParams, extract_features
from services.predictor_service import PredictorConfig, PredictorService

# Initialize services
kinematics_params = KinematicsParams.load(settings.kinematics_params)
predictor_config = PredictorConfig.load(settings.predictor_config)
predictor_service = PredictorService(predictor_config)

# `flask --app app comfort ...` runs the command-line front end
app.cli.add_command(cli, 'comfort')


def _error_response(e: Exception, what: str):
    if isinstance(e, ComfortToolkitError):
        status = 400 if isinstance(e, InputError) else 422
        logger.error(f"❌ {what}: {e.code}: {e.message}")
        return jsonify({'error': e.to_dict()}), status
    if isinstance(e, (KeyError, TypeError, ValueError)):
        logger.error(f"❌ {what}: malformed request: {str(e)}")
        return jsonify({'error': {'code': 'BadRequest', 'message': str(e)}}), 400
    logger.error(f"Error in {what}: {str(e)}")
    return jsonify({'error': f'Failed to {what}'}), 500


def _json_body() -> dict:
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        raise InputError('request body must be a JSON object')
    return payload


def _feature_rows(payload) -> list:
    rows = payload if isinstance(payload, list) else [payload]
    return [KinematicFeatures.from_dict(row) for row in rows]


@app.route('/api/health')
def health():
    """Liveness probe"""
    return jsonify({'status': 'ok', 'tool': TOOL_NAME, 'version': TOOL_VERSION})


@app.route('/api/config')
def get_config():
    """Active predictor configuration and kinematics parameters"""
    try:
        return jsonify({
            'predictor_config': predictor_config.to_dict(),
            'kinematics_params': kinematics_params.to_dict(),
        })
    except Exception as e:
        return _error_response(e, 'fetch config')


@app.route('/api/features', methods=['POST'])
def compute_features():
    """Extract the six kinematic variables of one submitted trial"""
    try:
        payload = _json_body()
        params = KinematicsParams.from_dict(payload['params']) if payload.get('params') else kinematics_params
        trial = trial_from_dict(payload.get('trial', payload))
        features = extract_features(trial, params)
        logger.info(f"✅ Features computed for trial {trial.trial_id}")
        return jsonify(to_jsonable(features.to_dict()))
    except Exception as e:
        return _error_response(e, 'compute features')


@app.route('/api/predict', methods=['POST'])
def predict():
    """Composite score and the three binary predictions for one or more feature rows"""
    try:
        payload = _json_body()
        rows = _feature_rows(payload.get('features', payload))
        return jsonify({'predictions': predictor_service.predict_batch(rows)})
    except Exception as e:
        return _error_response(e, 'predict comfort')


@app.route('/api/evaluate', methods=['POST'])
def evaluate():
    """Evaluation report for submitted feature rows and comfort labels"""
    try:
        payload = _json_body()
        rows = _feature_rows(payload['features'])
        labels = pd.DataFrame(payload['labels'])
        if labels.empty or 'trial_id' not in labels or 'reported_comfort' not in labels:
            raise InputError('labels must be a non-empty list of {trial_id, reported_comfort} objects')
        labels['trial_id'] = labels['trial_id'].astype(str)
        labels['reported_comfort'] = comfort_values(labels['reported_comfort'], labels['trial_id'], 'labels')
        service = EvaluationService(
            predictor_config,
            n_permutations=int(payload.get('n_permutations', settings.n_permutations)),
            seed=int(payload.get('seed', settings.seed)),
            max_workers=settings.workers,
        )
        return jsonify(to_jsonable(service.evaluate(rows, labels, params=kinematics_params.to_dict())))
    except Exception as e:
        return _error_response(e, 'evaluate predictors')


if __name__ == '__main__':
    # Get port from environment variable or default to 8000
    port = int(os.environ.get('PORT', 8000))
    debug_mode = os.environ.get('FLASK_ENV', 'development') == 'development'

    if debug_mode:
        print("🚀 Starting comfort API on port", port)

    app.run(debug=debug_mode, host='0.0.0.0', port=port)
