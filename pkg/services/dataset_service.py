import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import (
    ComfortOutOfRangeError, DuplicateTrialIdError, InputError, InvalidTrialError,
    MissingColumnError, NonMonotoneTimeError,
)
from models import EncounterDataset, SpeedGroup, Trajectory, TrialRecord, Violation
from tools.io_utils import PathLike, read_json_input, read_string_table, write_csv, write_json

logger = logging.getLogger(__name__)

TRIALS_CSV = 'trials-csv'
TRIALS_DIR = 'trials-dir'
DATASET_FORMATS = (TRIALS_CSV, TRIALS_DIR)

TRIAL_COLUMNS = [
    'trial_id', 'participant_id', 'trial_index', 'speed_group',
    'reported_comfort', 'lateral_valid', 'robot_file', 'pedestrian_file',
]
TRAJECTORY_COLUMNS = ['t', 'x', 'y', 'vx', 'vy', 'heading']
RELATIVE_COLUMNS = ['t', 'rx', 'ry']
META_KEYS = ['trial_id', 'participant_id', 'trial_index', 'speed_group', 'reported_comfort', 'lateral_valid']

MIN_SAMPLES = 2
TRIALS_PER_PARTICIPANT = 5


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _trajectory_violations(name: str, traj: Trajectory) -> List[Violation]:
    violations = []
    if len(traj) < MIN_SAMPLES:
        violations.append(Violation('TooFewSamples', f'{name} trajectory has {len(traj)} sample(s); at least {MIN_SAMPLES} required'))
    for i, s in enumerate(traj.samples):
        values = [s.t, s.x, s.y] + ([s.vx, s.vy] if s.has_velocity else [])
        if any(v is None or not math.isfinite(v) for v in values):
            violations.append(Violation('NonFiniteValue', f'{name} sample {i} has a non-finite value'))
            break
        if (s.vx is None) != (s.vy is None):
            violations.append(Violation('PartialVelocity', f'{name} sample {i} has only one velocity component'))
            break
    times = traj.times
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        bad = int(np.argmax(np.diff(times) <= 0)) + 1
        violations.append(Violation('NonMonotoneTime', f'{name} timestamps not strictly increasing at sample {bad}'))
    return violations


def validate_trial(trial: TrialRecord, require_comfort: bool = True) -> List[Violation]:
    """Check every TrialRecord invariant; returns an empty list for a valid trial"""
    violations: List[Violation] = []

    comfort = trial.reported_comfort
    if comfort is None:
        if require_comfort:
            violations.append(Violation('ComfortOutOfRange', 'reported_comfort is missing'))
    elif not isinstance(comfort, (int, np.integer)) or isinstance(comfort, bool) or not 1 <= comfort <= 5:
        violations.append(Violation('ComfortOutOfRange', f'reported_comfort {comfort!r} not in 1..5'))

    try:
        SpeedGroup(trial.speed_group)
    except ValueError:
        violations.append(Violation('InvalidSpeedGroup', f'speed_group {trial.speed_group!r} not in R14/R28'))

    if not isinstance(trial.trial_index, (int, np.integer)) or not 1 <= trial.trial_index <= TRIALS_PER_PARTICIPANT:
        violations.append(Violation('TrialIndexOutOfRange', f'trial_index {trial.trial_index!r} not in 1..{TRIALS_PER_PARTICIPANT}'))

    if not isinstance(trial.lateral_valid, (bool, np.bool_)):
        violations.append(Violation('InvalidLateralFlag', f'lateral_valid {trial.lateral_valid!r} is not boolean'))

    violations.extend(_trajectory_violations('robot', trial.robot))
    violations.extend(_trajectory_violations('pedestrian', trial.pedestrian))
    return violations


def _raise_for_violations(trial: TrialRecord, violations: List[Violation]) -> None:
    if not violations:
        return
    codes = {v.code for v in violations}
    detail = '; '.join(v.message for v in violations)
    message = f'trial {trial.trial_id}: {detail}'
    if 'ComfortOutOfRange' in codes:
        raise ComfortOutOfRangeError(message, trial_id=trial.trial_id)
    if 'NonMonotoneTime' in codes:
        raise NonMonotoneTimeError(message, trial_id=trial.trial_id)
    raise InvalidTrialError(message, trial_id=trial.trial_id)


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

def _parse_bool(value, trial_id: str) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    text = str(value).strip().lower()
    if text in ('true', '1', 'yes', 't', 'y'):
        return True
    if text in ('false', '0', 'no', 'f', 'n'):
        return False
    raise InvalidTrialError(f'trial {trial_id}: lateral_valid {value!r} is not a boolean', trial_id=trial_id)


def _parse_int(value, field_name: str, trial_id: str, error_cls=InvalidTrialError) -> int:
    try:
        number = float(str(value).strip())
    except ValueError:
        raise error_cls(f'trial {trial_id}: {field_name} {value!r} is not an integer', trial_id=trial_id)
    if not number.is_integer():
        raise error_cls(f'trial {trial_id}: {field_name} {value!r} is not an integer', trial_id=trial_id)
    return int(number)


def _read_frame(path: Path, trial_id: str) -> pd.DataFrame:
    if not path.is_file():
        raise InvalidTrialError(f'trial {trial_id}: trajectory file not found: {path}', trial_id=trial_id)
    try:
        return pd.read_csv(path, encoding='utf-8', float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InvalidTrialError(f'trial {trial_id}: cannot parse {path}: {e}', trial_id=trial_id)


def _numeric(frame: pd.DataFrame, column: str, path: Path, trial_id: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors='coerce')
    raw_present = frame[column].notna() & (frame[column].astype(str).str.strip() != '')
    if (values.isna() & raw_present).any():
        raise InvalidTrialError(f'trial {trial_id}: non-numeric value in column {column!r} of {path}', trial_id=trial_id)
    return values.to_numpy(dtype=float)


def _optional(frame: pd.DataFrame, column: str, path: Path, trial_id: str) -> Optional[np.ndarray]:
    if column not in frame.columns:
        return None
    return _numeric(frame, column, path, trial_id)


def read_trajectory(path: PathLike, trial_id: str) -> Trajectory:
    """Read a world-frame trajectory file with columns t,x,y[,vx,vy,heading]"""
    path = Path(path)
    frame = _read_frame(path, trial_id)
    missing = [c for c in ('t', 'x', 'y') if c not in frame.columns]
    if missing:
        raise MissingColumnError(f'trial {trial_id}: {path} is missing column(s) {", ".join(missing)}', trial_id=trial_id)
    t = _numeric(frame, 't', path, trial_id)
    x = _numeric(frame, 'x', path, trial_id)
    y = _numeric(frame, 'y', path, trial_id)
    if np.isnan(t).any() or np.isnan(x).any() or np.isnan(y).any():
        raise InvalidTrialError(f'trial {trial_id}: empty t/x/y cell in {path}', trial_id=trial_id)
    return Trajectory.from_arrays(
        t, x, y,
        vx=_optional(frame, 'vx', path, trial_id),
        vy=_optional(frame, 'vy', path, trial_id),
        heading=_optional(frame, 'heading', path, trial_id),
    )


def _robot_pose_at(robot: Trajectory, t: np.ndarray, trial_id: str) -> Tuple[np.ndarray, np.ndarray]:
    from services.kinematics_service import robot_headings

    rt = robot.times
    if t[0] < rt[0] - 1e-9 or t[-1] > rt[-1] + 1e-9:
        raise InvalidTrialError(
            f'trial {trial_id}: relative pedestrian samples fall outside the robot time span', trial_id=trial_id)
    pos = robot.positions
    heading = np.unwrap(robot_headings(robot))
    xy = np.column_stack([np.interp(t, rt, pos[:, 0]), np.interp(t, rt, pos[:, 1])])
    return xy, np.interp(t, rt, heading)


def read_pedestrian(path: PathLike, robot: Trajectory, trial_id: str) -> Tuple[Trajectory, bool]:
    """Read the pedestrian file; robot-frame relative columns rx,ry are converted to the world frame.

    Returns the trajectory and whether a frame conversion happened.
    """
    path = Path(path)
    frame = _read_frame(path, trial_id)
    if 'x' in frame.columns or 'rx' not in frame.columns:
        return read_trajectory(path, trial_id), False

    missing = [c for c in RELATIVE_COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumnError(f'trial {trial_id}: {path} is missing column(s) {", ".join(missing)}', trial_id=trial_id)
    t = _numeric(frame, 't', path, trial_id)
    rel = np.column_stack([_numeric(frame, 'rx', path, trial_id), _numeric(frame, 'ry', path, trial_id)])
    if np.isnan(t).any() or np.isnan(rel).any():
        raise InvalidTrialError(f'trial {trial_id}: empty t/rx/ry cell in {path}', trial_id=trial_id)
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise NonMonotoneTimeError(f'trial {trial_id}: pedestrian timestamps not strictly increasing', trial_id=trial_id)

    robot_xy, psi = _robot_pose_at(robot, t, trial_id)
    cos, sin = np.cos(psi), np.sin(psi)
    world_x = robot_xy[:, 0] + cos * rel[:, 0] - sin * rel[:, 1]
    world_y = robot_xy[:, 1] + sin * rel[:, 0] + cos * rel[:, 1]
    logger.info(f"🔄 Trial {trial_id}: converted {len(t)} robot-frame pedestrian samples to world frame")
    return Trajectory.from_arrays(t, world_x, world_y), True


def _build_trial(meta: Dict, robot: Trajectory, pedestrian: Trajectory) -> TrialRecord:
    trial_id = str(meta['trial_id']).strip()
    speed_text = str(meta['speed_group']).strip().upper()
    try:
        speed_group = SpeedGroup(speed_text)
    except ValueError:
        raise InvalidTrialError(f'trial {trial_id}: speed_group {meta["speed_group"]!r} not in R14/R28', trial_id=trial_id)
    trial = TrialRecord(
        trial_id=trial_id,
        participant_id=str(meta['participant_id']).strip(),
        trial_index=_parse_int(meta['trial_index'], 'trial_index', trial_id),
        speed_group=speed_group,
        robot=robot,
        pedestrian=pedestrian,
        reported_comfort=_parse_int(meta['reported_comfort'], 'reported_comfort', trial_id, ComfortOutOfRangeError),
        lateral_valid=_parse_bool(meta['lateral_valid'], trial_id),
    )
    _raise_for_violations(trial, validate_trial(trial))
    return trial


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _load_trials_csv(path: Path) -> Tuple[List[TrialRecord], List[str]]:
    index_path = path / 'trials.csv' if path.is_dir() else path
    if not index_path.is_file():
        raise InputError(f'trials file not found: {index_path}')
    base = index_path.parent
    table = read_string_table(index_path, 'trials file')
    missing = [c for c in TRIAL_COLUMNS if c not in table.columns]
    if missing:
        raise MissingColumnError(f'{index_path} is missing column(s) {", ".join(missing)}')

    trials, converted = [], []
    for row in table.to_dict(orient='records'):
        trial_id = str(row['trial_id']).strip()
        robot = read_trajectory(base / row['robot_file'], trial_id)
        pedestrian, was_converted = read_pedestrian(base / row['pedestrian_file'], robot, trial_id)
        if was_converted:
            converted.append(trial_id)
        trials.append(_build_trial(row, robot, pedestrian))
    return trials, converted


def _load_trials_dir(path: Path) -> Tuple[List[TrialRecord], List[str]]:
    if not path.is_dir():
        raise InputError(f'dataset directory not found: {path}')
    trials, converted = [], []
    for trial_dir in sorted(p for p in path.iterdir() if p.is_dir() and not p.name.startswith('.')):
        meta_path = trial_dir / 'meta.json'
        if not meta_path.is_file():
            raise InvalidTrialError(f'{trial_dir} has no meta.json')
        meta = read_json_input(meta_path, 'trial metadata', InvalidTrialError)
        if not isinstance(meta, dict):
            raise InvalidTrialError(f'{meta_path} must hold a JSON object')
        missing = [k for k in META_KEYS if k not in meta]
        if missing:
            raise MissingColumnError(f'{meta_path} is missing key(s) {", ".join(missing)}')
        trial_id = str(meta['trial_id']).strip()
        robot = read_trajectory(trial_dir / 'robot.csv', trial_id)
        pedestrian, was_converted = read_pedestrian(trial_dir / 'pedestrian.csv', robot, trial_id)
        if was_converted:
            converted.append(trial_id)
        trials.append(_build_trial(meta, robot, pedestrian))
    return trials, converted


def _trajectory_from_dict(payload: Dict, name: str, trial_id: str) -> Trajectory:
    missing = [c for c in ('t', 'x', 'y') if c not in payload]
    if missing:
        raise MissingColumnError(f'trial {trial_id}: {name} trajectory lacks {", ".join(missing)}', trial_id=trial_id)
    try:
        return Trajectory.from_arrays(
            payload['t'], payload['x'], payload['y'],
            *([np.array(payload[c], dtype=float) if payload.get(c) is not None else None
               for c in ('vx', 'vy', 'heading')]),
        )
    except (TypeError, ValueError) as e:
        raise InvalidTrialError(f'trial {trial_id}: malformed {name} trajectory: {e}', trial_id=trial_id)


def trial_from_dict(payload: Dict) -> TrialRecord:
    """Build and validate a trial from a JSON object; reported comfort is optional here"""
    trial_id = str(payload.get('trial_id', 'trial')).strip()
    for key in ('speed_group', 'robot', 'pedestrian'):
        if key not in payload:
            raise MissingColumnError(f'trial {trial_id}: missing {key!r}', trial_id=trial_id)
    try:
        speed_group = SpeedGroup(str(payload['speed_group']).strip().upper())
    except ValueError:
        raise InvalidTrialError(f'trial {trial_id}: speed_group {payload["speed_group"]!r} not in R14/R28', trial_id=trial_id)
    comfort = payload.get('reported_comfort')
    trial = TrialRecord(
        trial_id=trial_id,
        participant_id=str(payload.get('participant_id', '')),
        trial_index=_parse_int(payload.get('trial_index', 1), 'trial_index', trial_id),
        speed_group=speed_group,
        robot=_trajectory_from_dict(payload['robot'], 'robot', trial_id),
        pedestrian=_trajectory_from_dict(payload['pedestrian'], 'pedestrian', trial_id),
        reported_comfort=None if comfort is None else _parse_int(comfort, 'reported_comfort', trial_id, ComfortOutOfRangeError),
        lateral_valid=_parse_bool(payload.get('lateral_valid', True), trial_id),
    )
    _raise_for_violations(trial, validate_trial(trial, require_comfort=False))
    return trial


def detect_format(path: PathLike) -> str:
    """trials-csv for a trials.csv file or a directory holding one, trials-dir otherwise"""
    path = Path(path)
    if path.is_file() or (path / 'trials.csv').is_file():
        return TRIALS_CSV
    return TRIALS_DIR


def load_dataset(path: PathLike, format: str = TRIALS_CSV) -> EncounterDataset:
    """Load and validate an encounter dataset in the trials-csv or trials-dir layout"""
    path = Path(path)
    if not path.exists():
        raise InputError(f'dataset path does not exist: {path}')
    if format == TRIALS_CSV:
        trials, converted = _load_trials_csv(path)
        root = path if path.is_dir() else path.parent
    elif format == TRIALS_DIR:
        trials, converted = _load_trials_dir(path)
        root = path
    else:
        raise InputError(f'unknown dataset format {format!r}; expected one of {", ".join(DATASET_FORMATS)}')

    seen = set()
    for trial in trials:
        if trial.trial_id in seen:
            raise DuplicateTrialIdError(f'duplicate trial_id {trial.trial_id}', trial_id=trial.trial_id)
        seen.add(trial.trial_id)

    provenance: Dict[str, object] = {}
    provenance_path = root / 'provenance.json'
    if provenance_path.is_file():
        provenance.update(read_json_input(provenance_path, 'dataset provenance'))
    if converted:
        provenance['frame_conversions'] = sorted(set(provenance.get('frame_conversions', [])) | set(converted))

    logger.info(f"✅ Loaded {len(trials)} trials from {path} ({format})")
    return EncounterDataset(trials=tuple(trials), provenance=provenance)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    # object columns keep None as an empty cell and format floats with repr
    columns = {name: pd.Series([getattr(s, name) for s in traj], dtype=object) for name in TRAJECTORY_COLUMNS}
    return pd.DataFrame(columns, columns=TRAJECTORY_COLUMNS)


def _meta(trial: TrialRecord) -> Dict:
    return {
        'trial_id': trial.trial_id,
        'participant_id': trial.participant_id,
        'trial_index': trial.trial_index,
        'speed_group': SpeedGroup(trial.speed_group).value,
        'reported_comfort': trial.reported_comfort,
        'lateral_valid': bool(trial.lateral_valid),
    }


def write_dataset(dataset: EncounterDataset, path: PathLike, format: str = TRIALS_DIR) -> Path:
    """Write a dataset that load_dataset reads back unchanged"""
    path = Path(path)
    if format == TRIALS_CSV:
        rows = []
        for trial in dataset:
            robot_file = f'trajectories/{trial.trial_id}_robot.csv'
            pedestrian_file = f'trajectories/{trial.trial_id}_pedestrian.csv'
            write_csv(path / robot_file, trajectory_frame(trial.robot))
            write_csv(path / pedestrian_file, trajectory_frame(trial.pedestrian))
            meta = _meta(trial)
            meta['lateral_valid'] = 'true' if trial.lateral_valid else 'false'
            rows.append({**meta, 'robot_file': robot_file, 'pedestrian_file': pedestrian_file})
        write_csv(path / 'trials.csv', pd.DataFrame(rows, columns=TRIAL_COLUMNS))
    elif format == TRIALS_DIR:
        for trial in dataset:
            trial_dir = path / trial.trial_id
            write_json(trial_dir / 'meta.json', _meta(trial))
            write_csv(trial_dir / 'robot.csv', trajectory_frame(trial.robot))
            write_csv(trial_dir / 'pedestrian.csv', trajectory_frame(trial.pedestrian))
    else:
        raise InputError(f'unknown dataset format {format!r}; expected one of {", ".join(DATASET_FORMATS)}')

    write_json(path / 'provenance.json', dict(dataset.provenance))
    logger.info(f"💾 Wrote {len(dataset)} trials to {path} ({format})")
    return path
