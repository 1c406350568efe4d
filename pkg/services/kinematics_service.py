import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from errors import (
    ComputationError, ConfigError, DegenerateTrajectoryError, EmptySeriesError, HeadingUnavailableError,
    InputError, MissingColumnError, NeverApproachingError, NoTemporalOverlapError, TooFewSamplesError,
)
from models import (
    FEATURE_NAMES, EncounterDataset, KinematicFeatures, PttcSeries, RelativeSeries, SpeedGroup,
    Trajectory, TrialRecord,
)
from tools.io_utils import PathLike, read_json, read_string_table, write_csv, write_json

logger = logging.getLogger(__name__)

FEATURES_FILE = 'features.csv'
FEATURES_SIDECAR = 'features.params.json'
FEATURE_COLUMNS = ['trial_id', *FEATURE_NAMES, 'flags']


@dataclass(frozen=True)
class KinematicsParams:
    """Every tunable of the feature pipeline; serialized next to each feature file"""
    dt: float = 0.05
    smoothing_window: int = 5
    v_floor: float = 0.1
    eps_closing: float = 1e-6
    eps_distance: float = 1e-6
    nominal_speeds: Dict[str, float] = field(default_factory=lambda: {'R14': 1.4, 'R28': 2.8})
    speed_tolerance: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f'dt must be positive, got {self.dt}')
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ConfigError(f'smoothing_window must be a positive odd integer, got {self.smoothing_window}')
        if self.v_floor < 0 or self.eps_closing < 0 or self.eps_distance < 0:
            raise ConfigError('v_floor, eps_closing and eps_distance must be non-negative')
        unknown = set(self.nominal_speeds) - {g.value for g in SpeedGroup}
        if unknown:
            raise ConfigError(f'unknown speed group(s) in nominal_speeds: {sorted(unknown)}')

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['nominal_speeds'] = dict(sorted(self.nominal_speeds.items()))
        return payload

    @classmethod
    def from_dict(cls, payload: Dict) -> 'KinematicsParams':
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f'unknown kinematics parameter(s): {sorted(unknown)}')
        return cls(**payload)

    @classmethod
    def load(cls, path: Optional[PathLike]) -> 'KinematicsParams':
        if path is None:
            return cls()
        try:
            return cls.from_dict(read_json(path))
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError(f'cannot read kinematics params {path}: {e}')


DEFAULT_PARAMS = KinematicsParams()


class SpeedEstimate(NamedTuple):
    mean: float
    group: SpeedGroup
    consistent: bool


# ---------------------------------------------------------------------------
# Resampling and derivatives
# ---------------------------------------------------------------------------

def uniform_grid(t_start: float, t_end: float, dt: float) -> np.ndarray:
    n = int(math.floor((t_end - t_start) / dt + 1e-9)) + 1
    return t_start + dt * np.arange(max(n, 0))


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks symmetrically near the ends so linear motion is preserved"""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if window <= 1 or n < 3:
        return values.copy()
    idx = np.arange(n)
    half = np.minimum(window // 2, np.minimum(idx, n - 1 - idx))
    cumsum = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)])
    width = (2 * half + 1).astype(float)
    if values.ndim > 1:
        width = width[:, None]
    return (cumsum[idx + half + 1] - cumsum[idx - half]) / width


def _interp_columns(t_new: np.ndarray, t: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.column_stack([np.interp(t_new, t, values[:, k]) for k in range(values.shape[1])])


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(angle), np.cos(angle))


def _resample_on(traj: Trajectory, grid: np.ndarray, smoothing_window: int) -> Trajectory:
    t = traj.times
    pos = _interp_columns(grid, t, traj.positions)
    given = traj.velocities()
    if given is not None:
        vel = _interp_columns(grid, t, given)
    else:
        if len(grid) < 2:
            raise TooFewSamplesError('cannot derive velocity from a single resampled sample')
        vel = np.gradient(moving_average(pos, smoothing_window), grid, axis=0)
    heading = traj.headings()
    if heading is not None:
        heading = _wrap(np.interp(grid, t, np.unwrap(heading)))
    return Trajectory.from_arrays(grid, pos[:, 0], pos[:, 1], vel[:, 0], vel[:, 1], heading, frame_id=traj.frame_id)


def resample_and_derive(traj: Trajectory, dt: float, smoothing_window: int = 1) -> Trajectory:
    """Resample to a uniform rate and fill missing velocities by central differences.

    Positions are linearly interpolated and returned unsmoothed; the moving average is
    applied only to the copy that gets differenced.
    """
    if len(traj) < 2:
        raise TooFewSamplesError(f'need at least 2 samples to resample, got {len(traj)}')
    if not dt > 0:
        raise ConfigError(f'dt must be positive, got {dt}')
    t = traj.times
    grid = uniform_grid(t[0], t[-1], dt)
    return _resample_on(traj, grid, smoothing_window)


def trajectory_velocities(traj: Trajectory) -> np.ndarray:
    given = traj.velocities()
    if given is not None:
        return given
    if len(traj) < 2:
        raise TooFewSamplesError('cannot derive velocity from fewer than 2 samples')
    return np.gradient(traj.positions, traj.times, axis=0)


def robot_headings(traj: Trajectory, v_floor: float = DEFAULT_PARAMS.v_floor) -> np.ndarray:
    """Per-sample heading: recorded heading if present, else the velocity direction.

    Samples slower than v_floor carry the nearest valid heading.
    """
    recorded = traj.headings()
    if recorded is not None:
        return recorded
    vel = trajectory_velocities(traj)
    speed = np.linalg.norm(vel, axis=1)
    heading = np.where(speed >= v_floor, np.arctan2(vel[:, 1], vel[:, 0]), np.nan)
    if np.isnan(heading).all():
        raise HeadingUnavailableError('robot heading not recorded and robot never exceeds the speed floor')
    return pd.Series(heading).ffill().bfill().to_numpy()


# ---------------------------------------------------------------------------
# Relative state
# ---------------------------------------------------------------------------

def _align(trial: TrialRecord, params: KinematicsParams) -> Tuple[Trajectory, Trajectory, RelativeSeries]:
    robot, pedestrian = trial.robot, trial.pedestrian
    if len(robot) < 2 or len(pedestrian) < 2:
        raise TooFewSamplesError(f'trial {trial.trial_id}: both trajectories need at least 2 samples', trial_id=trial.trial_id)
    start = max(robot.times[0], pedestrian.times[0])
    end = min(robot.times[-1], pedestrian.times[-1])
    if end <= start:
        raise NoTemporalOverlapError(f'trial {trial.trial_id}: robot and pedestrian time ranges do not overlap',
                                     trial_id=trial.trial_id)
    grid = uniform_grid(start, end, params.dt)
    robot_r = _resample_on(robot, grid, params.smoothing_window)
    ped_r = _resample_on(pedestrian, grid, params.smoothing_window)

    p_rel = ped_r.positions - robot_r.positions
    v_rel = ped_r.velocities() - robot_r.velocities()
    rel = RelativeSeries(t=grid, p_rel=p_rel, v_rel=v_rel, dist=np.linalg.norm(p_rel, axis=1))
    return robot_r, ped_r, rel


def relative_series(trial: TrialRecord, params: KinematicsParams = DEFAULT_PARAMS) -> RelativeSeries:
    """Pedestrian-minus-robot position and velocity on the common time grid"""
    return _align(trial, params)[2]


def min_distance(rel: RelativeSeries) -> Tuple[float, float]:
    """Minimum separation and the time it occurs"""
    if len(rel) == 0:
        raise EmptySeriesError('relative series is empty')
    i = int(np.argmin(rel.dist))
    return float(rel.dist[i]), float(rel.t[i])


def _lateral_from_aligned(robot_r: Trajectory, rel: RelativeSeries, params: KinematicsParams) -> Optional[float]:
    psi = robot_headings(robot_r, params.v_floor)
    cos, sin = np.cos(psi), np.sin(psi)
    longitudinal = rel.p_rel[:, 0] * cos + rel.p_rel[:, 1] * sin
    lateral = -rel.p_rel[:, 0] * sin + rel.p_rel[:, 1] * cos

    crossings = np.flatnonzero((longitudinal[:-1] > 0) & (longitudinal[1:] <= 0))
    if len(crossings) == 0:
        return None
    i = int(crossings[0])
    frac = longitudinal[i] / (longitudinal[i] - longitudinal[i + 1])
    return float(abs(lateral[i] + frac * (lateral[i + 1] - lateral[i])))


def lateral_distance(trial: TrialRecord, params: KinematicsParams = DEFAULT_PARAMS) -> Optional[float]:
    """Perpendicular separation when the pedestrian moves from ahead of to behind the robot; None if never"""
    robot_r, _, rel = _align(trial, params)
    return _lateral_from_aligned(robot_r, rel, params)


# ---------------------------------------------------------------------------
# Curvature and speed
# ---------------------------------------------------------------------------

def curvature_profile(traj: Trajectory, params: KinematicsParams = DEFAULT_PARAMS) -> Tuple[np.ndarray, np.ndarray]:
    """Curvature per resampled sample, NaN where slower than the speed floor"""
    if len(traj) < 4:
        raise TooFewSamplesError(f'curvature needs at least 4 samples, got {len(traj)}')
    t = traj.times
    grid = uniform_grid(t[0], t[-1], params.dt)
    if len(grid) < 4:
        raise TooFewSamplesError(f'curvature needs at least 4 resampled samples, got {len(grid)}')
    pos = moving_average(_interp_columns(grid, t, traj.positions), params.smoothing_window)
    d1 = np.gradient(pos, params.dt, axis=0)
    d2 = np.gradient(d1, params.dt, axis=0)
    speed = np.linalg.norm(d1, axis=1)
    moving = speed >= params.v_floor
    kappa = np.full(len(grid), np.nan)
    cross = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    kappa[moving] = cross[moving] / speed[moving] ** 3
    return grid, kappa


def max_curvature(traj: Trajectory, params: KinematicsParams = DEFAULT_PARAMS) -> float:
    """Maximum path curvature (1/m) over samples faster than the speed floor"""
    _, kappa = curvature_profile(traj, params)
    if np.isnan(kappa).all():
        raise DegenerateTrajectoryError(f'every sample is slower than v_floor={params.v_floor} m/s')
    return float(np.nanmax(kappa))


def classify_speed(speed: float, params: KinematicsParams = DEFAULT_PARAMS) -> Tuple[SpeedGroup, bool]:
    group, nominal = min(params.nominal_speeds.items(), key=lambda item: abs(speed - item[1]))
    return SpeedGroup(group), abs(speed - nominal) <= params.speed_tolerance


def mean_speed(traj: Trajectory, params: KinematicsParams = DEFAULT_PARAMS) -> SpeedEstimate:
    """Time-averaged speed plus the nearest speed group"""
    if len(traj) < 2:
        raise TooFewSamplesError(f'need at least 2 samples for speed, got {len(traj)}')
    resampled = resample_and_derive(traj, params.dt, params.smoothing_window)
    speed = float(np.mean(np.linalg.norm(resampled.velocities(), axis=1)))
    group, consistent = classify_speed(speed, params)
    return SpeedEstimate(speed, group, consistent)


# ---------------------------------------------------------------------------
# PTTC
# ---------------------------------------------------------------------------

def pttc_series(rel: RelativeSeries, params: KinematicsParams = DEFAULT_PARAMS) -> PttcSeries:
    """Projected time-to-collision: distance over radial closing speed, inf when not approaching"""
    if len(rel) == 0:
        raise EmptySeriesError('relative series is empty')
    dot = np.einsum('ij,ij->i', rel.p_rel, rel.v_rel)
    dist = rel.dist
    collision = dist < params.eps_distance
    with np.errstate(divide='ignore', invalid='ignore'):
        closing = np.where(collision, 0.0, -dot / dist)
        approaching = ~collision & (closing > params.eps_closing)
        pttc = np.where(approaching, dist ** 2 / -dot, np.inf)
    pttc[collision] = 0.0
    return PttcSeries(t=rel.t.copy(), pttc=pttc, collision=collision)


def min_pttc_index(pttc: PttcSeries) -> int:
    finite = np.isfinite(pttc.pttc)
    if not finite.any():
        raise NeverApproachingError('no sample has a finite PTTC')
    return int(np.argmin(np.where(finite, pttc.pttc, np.inf)))


def min_pttc_and_distance(rel: RelativeSeries, pttc: PttcSeries) -> Tuple[float, float]:
    """(T_p, D_Tp): the minimum finite PTTC and the separation at that same sample"""
    i = min_pttc_index(pttc)
    return float(pttc.pttc[i]), float(rel.dist[i])


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

def extract_features(trial: TrialRecord, params: KinematicsParams = DEFAULT_PARAMS) -> KinematicFeatures:
    """Compute the six variables of one trial; per-feature failures become flags"""
    robot_r, _, rel = _align(trial, params)
    flags: Dict[str, str] = {}
    values: Dict[str, Optional[float]] = {name: None for name in FEATURE_NAMES}

    try:
        estimate = mean_speed(trial.robot, params)
        values['v'] = estimate.mean
        if not estimate.consistent:
            flags['v'] = 'SpeedInconsistent'
        elif estimate.group != SpeedGroup(trial.speed_group):
            flags['v'] = 'SpeedGroupMismatch'
    except ComputationError as e:
        flags['v'] = e.code

    values['d_min'], _ = min_distance(rel)

    if not trial.lateral_valid:
        flags['d_lat'] = 'LateralExcluded'
    else:
        try:
            values['d_lat'] = _lateral_from_aligned(robot_r, rel, params)
            if values['d_lat'] is None:
                flags['d_lat'] = 'NoPassingMoment'
        except ComputationError as e:
            flags['d_lat'] = e.code

    try:
        values['rho'] = max_curvature(trial.robot, params)
    except ComputationError as e:
        flags['rho'] = e.code

    series = pttc_series(rel, params)
    try:
        values['t_p'], values['d_tp'] = min_pttc_and_distance(rel, series)
        if series.collision.any():
            flags['t_p'] = 'Collision'
    except NeverApproachingError as e:
        flags['t_p'] = flags['d_tp'] = e.code

    if flags:
        logger.warning(f"⚠️ Trial {trial.trial_id} feature flags: {flags}")
    return KinematicFeatures(trial_id=trial.trial_id, flags=flags, **values)


class KinematicsService:
    """Runs feature extraction over a whole dataset"""

    def __init__(self, params: KinematicsParams = DEFAULT_PARAMS, max_workers: int = 4):
        self.params = params
        self.max_workers = max(1, max_workers)
        self.logger = logger

    def extract_all(self, dataset: EncounterDataset) -> Tuple[List[KinematicFeatures], List[Dict]]:
        """Extract features for every trial in parallel; returns features in dataset order and per-trial errors"""
        if len(dataset) == 0:
            return [], []
        self.logger.info(f"🚀 Extracting features for {len(dataset)} trials with {self.max_workers} workers")

        results: Dict[str, KinematicFeatures] = {}
        errors: List[Dict] = []
        with ThreadPoolExecutor(max_workers=min(self.max_workers, len(dataset))) as executor:
            future_to_trial = {
                executor.submit(extract_features, trial, self.params): trial.trial_id
                for trial in dataset
            }
            for future in as_completed(future_to_trial):
                trial_id = future_to_trial[future]
                try:
                    results[trial_id] = future.result()
                except ComputationError as e:
                    self.logger.error(f"❌ Trial {trial_id} failed: {e.message}")
                    errors.append({'trial_id': trial_id, 'code': e.code, 'message': e.message})

        features = [results[t] for t in dataset.trial_ids if t in results]
        errors.sort(key=lambda item: dataset.trial_ids.index(item['trial_id']))
        self.logger.info(f"✅ Extracted {len(features)} feature rows, {len(errors)} failed trials")
        return features, errors


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

def features_frame(features: List[KinematicFeatures]) -> pd.DataFrame:
    rows = [
        {'trial_id': f.trial_id, **{name: f.value(name) for name in FEATURE_NAMES}, 'flags': f.flag_string()}
        for f in features
    ]
    frame = pd.DataFrame(rows, columns=FEATURE_COLUMNS)
    for name in FEATURE_NAMES:
        frame[name] = frame[name].astype(object)
    return frame


def write_features(out_dir: PathLike, features: List[KinematicFeatures], params: KinematicsParams,
                   manifest_file: Optional[str] = None) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    csv_path = write_csv(out_dir / FEATURES_FILE, features_frame(features))
    sidecar = write_json(out_dir / FEATURES_SIDECAR, {
        'features_file': FEATURES_FILE,
        'manifest': manifest_file,
        'params': params.to_dict(),
    })
    return csv_path, sidecar


def _cell(value) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    text = str(value).strip()
    if text == '':
        return None
    try:
        return float(text)
    except ValueError:
        raise InputError(f'non-numeric feature value {value!r}')


def read_features(path: PathLike) -> List[KinematicFeatures]:
    """Read a feature CSV; accepts the file itself or the directory holding features.csv"""
    path = Path(path)
    if path.is_dir():
        path = path / FEATURES_FILE
    if not path.is_file():
        raise InputError(f'features file not found: {path}')
    frame = read_string_table(path, 'features file')
    missing = [c for c in FEATURE_COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumnError(f'{path} is missing column(s) {", ".join(missing)}')
    features = []
    for row in frame.to_dict(orient='records'):
        features.append(KinematicFeatures(
            trial_id=str(row['trial_id']).strip(),
            flags=KinematicFeatures.parse_flags(row['flags']),
            **{name: _cell(row[name]) for name in FEATURE_NAMES},
        ))
    return features
