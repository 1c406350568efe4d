import functools
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from errors import ComfortToolkitError, ComputationError
from services.dataset_service import DATASET_FORMATS, detect_format, load_dataset
from services.evaluation_service import EvaluationService, read_labels, summary_tables
from services.kinematics_service import FEATURES_SIDECAR, KinematicsParams, KinematicsService, read_features, write_features
from services.predictor_service import PredictorConfig, PredictorService
from services.synthgen_service import ScenarioSweep, SimulationService
from settings import TOOL_NAME, TOOL_VERSION, Settings, configure_logging, load_settings
from tools.io_utils import read_json_input, write_csv, write_json
from tools.manifest import RunManifest

logger = logging.getLogger(__name__)

REPORT_FILE = 'report.json'


@dataclass
class RunContext:
    """Options shared by every command"""
    settings: Settings
    config_path: Path
    seed: int
    out: Path
    fmt: str
    workers: int

    def predictor_config(self, manifest: RunManifest) -> PredictorConfig:
        config = PredictorConfig.load(self.config_path)
        manifest.add_config('predictor_config', config.to_dict())
        return config

    def manifest(self, command: str) -> RunManifest:
        return RunManifest(command=command, seed=self.seed)


def handle_errors(func):
    """Turn toolkit errors into a JSON diagnostic on stderr and the matching exit code"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ComfortToolkitError as e:
            logger.error(f"❌ {e.code}: {e.message}")
            click.echo(json.dumps(e.to_dict(), ensure_ascii=False), err=True)
            sys.exit(e.exit_code)
    return wrapper


@click.group(name='comfort')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Predictor config JSON (bins, weights, thresholds).')
@click.option('--seed', type=int, default=None, help='Seed for every random draw of the command.')
@click.option('--out', type=click.Path(file_okay=False), default='out', show_default=True,
              help='Output directory; commands write nowhere else.')
@click.option('--format', 'fmt', type=click.Choice(['json', 'csv']), default='json', show_default=True,
              help='Format of tabular outputs.')
@click.option('--workers', type=int, default=None, help='Thread pool size.')
@click.option('--log-level', default=None, help='Logging level (default from COMFORT_LOG_LEVEL).')
@click.version_option(TOOL_VERSION, prog_name=TOOL_NAME)
@click.pass_context
def cli(ctx, config_path, seed, out, fmt, workers, log_level):
    """Pedestrian comfort analysis for hallway robot encounters."""
    settings = load_settings()
    configure_logging(log_level.upper() if log_level else settings.log_level)
    ctx.obj = RunContext(
        settings=settings,
        config_path=Path(config_path) if config_path else settings.predictor_config,
        seed=settings.seed if seed is None else seed,
        out=Path(out),
        fmt=fmt,
        workers=max(1, workers or settings.workers),
    )


@cli.command()
@click.argument('dataset', type=click.Path())
@click.option('--params', 'params_path', type=click.Path(dir_okay=False), default=None,
              help='Kinematics parameters JSON.')
@click.option('--dataset-format', type=click.Choice(['auto', *DATASET_FORMATS]), default='auto', show_default=True)
@click.pass_obj
@handle_errors
def features(run: RunContext, dataset, params_path, dataset_format):
    """Extract the six kinematic variables of every trial."""
    manifest = run.manifest('features')
    params = KinematicsParams.load(params_path or run.settings.kinematics_params)
    manifest.add_config('kinematics_params', params.to_dict())
    fmt = detect_format(dataset) if dataset_format == 'auto' else dataset_format
    data = load_dataset(dataset, fmt)
    manifest.add_input('dataset', dataset)

    rows, errors = KinematicsService(params, run.workers).extract_all(data)
    if errors:
        for item in errors:
            click.echo(f"{item['trial_id']}: {item['code']}: {item['message']}", err=True)
        click.echo(f'{len(errors)} of {len(data)} trials failed; no features written', err=True)
        sys.exit(ComputationError.exit_code)

    for path in write_features(run.out, rows, params, manifest.file_name):
        manifest.add_output(path)
    manifest.write(run.out)
    click.echo(f'✅ {len(rows)} feature rows written to {run.out}')


@cli.command()
@click.argument('features_path', metavar='FEATURES', type=click.Path())
@click.pass_obj
@handle_errors
def predict(run: RunContext, features_path):
    """Apply the three comfort predictors to a feature file."""
    manifest = run.manifest('predict')
    service = PredictorService(run.predictor_config(manifest))
    rows = read_features(features_path)
    manifest.add_input('features', features_path)

    if run.fmt == 'csv':
        path = write_csv(run.out / 'predictions.csv', service.predictions_frame(rows))
    else:
        path = write_json(run.out / 'predictions.json', {
            'manifest': manifest.file_name,
            'predictions': service.predict_batch(rows),
        })
    manifest.add_output(path)
    manifest.write(run.out)
    click.echo(f'✅ Predictions for {len(rows)} trials written to {path}')


def _sidecar_params(features_path: Path) -> Optional[dict]:
    sidecar = (features_path if features_path.is_dir() else features_path.parent) / FEATURES_SIDECAR
    if sidecar.is_file():
        return read_json_input(sidecar, 'feature params').get('params')
    return None


@cli.command()
@click.argument('features_path', metavar='FEATURES', type=click.Path())
@click.argument('labels_path', metavar='LABELS', type=click.Path())
@click.option('--permutations', type=int, default=None, help='Permutation iterations per dCor test.')
@click.pass_obj
@handle_errors
def evaluate(run: RunContext, features_path, labels_path, permutations):
    """Score the predictors against reported comfort and write report.json."""
    manifest = run.manifest('evaluate')
    config = run.predictor_config(manifest)
    rows = read_features(features_path)
    labels = read_labels(labels_path)
    manifest.add_input('features', features_path)
    manifest.add_input('labels', labels_path)

    n_permutations = run.settings.n_permutations if permutations is None else permutations
    service = EvaluationService(config, n_permutations=n_permutations, seed=run.seed, max_workers=run.workers)
    report = service.evaluate(rows, labels, params=_sidecar_params(Path(features_path)),
                              manifest_file=manifest.file_name)
    path = write_json(run.out / REPORT_FILE, report)
    manifest.add_output(path)
    manifest.write(run.out)
    click.echo(f'✅ Evaluation report written to {path}')


@cli.command()
@click.argument('scenario', required=False, type=click.Path(dir_okay=False))
@click.option('--n-trials', type=int, default=10, show_default=True)
@click.pass_obj
@handle_errors
def simulate(run: RunContext, scenario, n_trials):
    """Generate a synthetic trials-dir dataset with ground truth and synthetic labels."""
    manifest = run.manifest('simulate')
    sweep = ScenarioSweep.load(scenario)
    manifest.add_config('scenario', sweep.to_dict())
    if scenario:
        manifest.add_input('scenario', scenario)

    service = SimulationService(run.predictor_config(manifest), run.workers)
    dataset, truth = service.simulate(sweep, n_trials, run.seed)
    for path in service.write(dataset, truth, run.out):
        manifest.add_output(path)
    manifest.write(run.out)
    click.echo(f'✅ {n_trials} synthetic trials written to {run.out}')


@cli.command()
@click.argument('report_path', metavar='REPORT', type=click.Path())
@click.pass_obj
@handle_errors
def report(run: RunContext, report_path):
    """Render an evaluation report as dCor and predictor comparison tables."""
    manifest = run.manifest('report')
    path = Path(report_path)
    if path.is_dir():
        path = path / REPORT_FILE
    payload = read_json_input(path, 'report')
    manifest.add_input('report', path)

    tables = summary_tables(payload)
    if run.fmt == 'csv':
        outputs = [write_csv(run.out / f'{name}_table.csv', frame) for name, frame in tables.items()]
    else:
        outputs = [write_json(run.out / 'summary.json', {
            'manifest': manifest.file_name,
            'source_manifest': payload.get('manifest'),
            **{name: frame.to_dict(orient='records') for name, frame in tables.items()},
        })]
    for output in outputs:
        manifest.add_output(output)
    manifest.write(run.out)
    click.echo(f'✅ Summary tables written to {run.out}')


def main():
    cli(prog_name=TOOL_NAME)


if __name__ == '__main__':
    main()
