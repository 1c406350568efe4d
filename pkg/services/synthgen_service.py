"""
Synthetic hallway encounters with known kinematics.

The robot drives along +x from the origin at the hallway centre line; the pedestrian
walks a parallel lane ``lateral_offset`` metres to the side, starting ``approach_length``
metres ahead. An optional swerve made of three tangent arcs of equal radius (turn away,
turn back twice as far, straighten out) is centred on the passing point so the robot's
maximum curvature is exactly 1/avoidance_radius. Ground truth is computed on the
noise-free paths before position noise is added.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, InvalidScenarioError, NeverApproachingError
from models import EncounterDataset, KinematicFeatures, RelativeSeries, SpeedGroup, Trajectory, TrialRecord
from services.dataset_service import TRIALS_DIR, TRIALS_PER_PARTICIPANT, write_dataset
from services.kinematics_service import DEFAULT_PARAMS, KinematicsParams, min_pttc_and_distance, pttc_series
from services.predictor_service import PredictorConfig, composite_score
from settings import TOOL_NAME, TOOL_VERSION
from tools.io_utils import PathLike, read_json, write_csv

logger = logging.getLogger(__name__)

ORACLE_REFINEMENT = 100
SYNTHETIC_LABEL = 'synthetic-label'
LABEL_MIDPOINT = 4.0
LABEL_SCALE = 1.5
NOMINAL_SPEEDS = {SpeedGroup.R14: 1.4, SpeedGroup.R28: 2.8}


@dataclass(frozen=True)
class ScenarioConfig:
    """One encounter scenario; lengths in metres, speeds in m/s, times in seconds"""
    hallway_width: float = 3.2
    robot_speed: float = 1.4
    ped_speed: float = 1.4
    approach_length: float = 12.0
    lateral_offset: float = 0.9
    avoidance_radius: float = 0.0
    swerve_angle: float = 0.5
    noise_sigma: float = 0.0
    dt: float = 0.05
    seed: int = 0
    ped_direction: int = -1
    duration: Optional[float] = None
    with_velocity: bool = True

    def validate(self) -> None:
        problems = []
        if self.robot_speed < 0 or self.ped_speed < 0:
            problems.append('speeds must be non-negative')
        if not self.dt > 0:
            problems.append(f'dt must be positive, got {self.dt}')
        if not self.hallway_width > 0:
            problems.append('hallway_width must be positive')
        if abs(self.lateral_offset) >= self.hallway_width / 2:
            problems.append(f'|lateral_offset| must be below hallway_width/2 = {self.hallway_width / 2}')
        if not self.approach_length > 0:
            problems.append('approach_length must be positive')
        if self.avoidance_radius < 0:
            problems.append('avoidance_radius must be >= 0 (0 disables the swerve)')
        if not 0 < self.swerve_angle < math.pi / 2:
            problems.append('swerve_angle must lie in (0, pi/2)')
        if self.noise_sigma < 0:
            problems.append('noise_sigma must be >= 0')
        if self.ped_direction not in (-1, 1):
            problems.append('ped_direction must be -1 (towards the robot) or 1 (same direction)')
        if self.duration is not None and not self.duration > 0:
            problems.append('duration must be positive')
        if self.robot_speed == 0 and self.ped_speed == 0:
            problems.append('robot and pedestrian cannot both stand still')
        if problems:
            raise InvalidScenarioError('invalid scenario: ' + '; '.join(problems))

    @classmethod
    def from_dict(cls, payload: Dict) -> 'ScenarioConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise InvalidScenarioError(f'unknown scenario field(s): {sorted(unknown)}')
        try:
            config = cls(**payload)
        except TypeError as e:
            raise InvalidScenarioError(f'malformed scenario: {e}')
        config.validate()
        return config

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def closing_speed(self) -> float:
        return self.robot_speed - self.ped_direction * self.ped_speed

    @property
    def pass_time(self) -> Optional[float]:
        """Time the two agents are level along x, None if they never are"""
        if self.closing_speed <= 0:
            return None
        return self.approach_length / self.closing_speed

    @property
    def total_duration(self) -> float:
        if self.duration is not None:
            return self.duration
        if self.pass_time is not None:
            return 2 * self.pass_time
        return 2 * self.approach_length / max(self.robot_speed, self.ped_speed)

    @property
    def speed_group(self) -> SpeedGroup:
        return min(NOMINAL_SPEEDS, key=lambda g: abs(self.robot_speed - NOMINAL_SPEEDS[g]))

    @property
    def swerve_side(self) -> int:
        """-1 swerves towards -y; the robot turns away from the pedestrian's lane"""
        return -1 if self.lateral_offset >= 0 else 1


@dataclass(frozen=True)
class GroundTruth:
    """Noise-free values of the six encounter variables"""
    v: float
    d_min: float
    d_lat: Optional[float]
    rho: float
    t_p: Optional[float]
    d_tp: Optional[float]
    never_approaching: bool = False

    def as_features(self, trial_id: str) -> KinematicFeatures:
        flags = {'t_p': 'NeverApproaching', 'd_tp': 'NeverApproaching'} if self.never_approaching else {}
        return KinematicFeatures(trial_id=trial_id, v=self.v, d_min=self.d_min, d_lat=self.d_lat,
                                 rho=self.rho, t_p=self.t_p, d_tp=self.d_tp, flags=flags)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def _segments(config: ScenarioConfig) -> List[Tuple[float, float, float]]:
    """(start arc length, length, curvature) of each swerve arc"""
    r, theta = config.avoidance_radius, config.swerve_angle
    if r <= 0 or config.robot_speed == 0 or config.pass_time is None:
        return []
    k = config.swerve_side / r
    start = config.robot_speed * config.pass_time - 2 * r * theta
    return [(start, r * theta, k), (start + r * theta, 2 * r * theta, -k), (start + 3 * r * theta, r * theta, k)]


def _advance(x, y, heading, length, curvature):
    if curvature == 0:
        return x + length * np.cos(heading), y + length * np.sin(heading), heading
    end = heading + curvature * length
    return (x + (np.sin(end) - np.sin(heading)) / curvature,
            y - (np.cos(end) - np.cos(heading)) / curvature,
            end)


def robot_pose(config: ScenarioConfig, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Robot x, y and heading at times t for a constant path speed"""
    s = config.robot_speed * np.asarray(t, dtype=float)
    x, y, heading = np.zeros_like(s), np.zeros_like(s), np.zeros_like(s)
    segments = _segments(config)
    if not segments:
        return s.copy(), y, heading

    # pose at each arc boundary, then advance every sample from the boundary before it
    boundaries = [(0.0, 0.0, 0.0, 0.0, 0.0)]
    bx, by, bh = _advance(0.0, 0.0, 0.0, segments[0][0], 0.0)
    for start, length, k in segments:
        boundaries.append((start, bx, by, bh, k))
        bx, by, bh = _advance(bx, by, bh, length, k)
    boundaries.append((segments[-1][0] + segments[-1][1], bx, by, bh, 0.0))

    for i, (start, sx, sy, sh, k) in enumerate(boundaries):
        end = boundaries[i + 1][0] if i + 1 < len(boundaries) else np.inf
        mask = (s >= start) & (s < end)
        x[mask], y[mask], heading[mask] = _advance(sx, sy, sh, s[mask] - start, k)
    return x, y, heading


def pedestrian_position(config: ScenarioConfig, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    x = config.approach_length + config.ped_direction * config.ped_speed * t
    return x, np.full_like(t, config.lateral_offset)


def _relative_on(config: ScenarioConfig, t: np.ndarray) -> Tuple[RelativeSeries, np.ndarray]:
    rx, ry, heading = robot_pose(config, t)
    px, py = pedestrian_position(config, t)
    p_rel = np.column_stack([px - rx, py - ry])
    v_robot = config.robot_speed * np.column_stack([np.cos(heading), np.sin(heading)])
    v_ped = np.column_stack([np.full_like(t, config.ped_direction * config.ped_speed), np.zeros_like(t)])
    rel = RelativeSeries(t=t, p_rel=p_rel, v_rel=v_ped - v_robot, dist=np.linalg.norm(p_rel, axis=1))
    return rel, heading


def _dense_grid(config: ScenarioConfig) -> np.ndarray:
    n = int(math.ceil(config.total_duration / (config.dt / ORACLE_REFINEMENT))) + 1
    return np.linspace(0.0, config.total_duration, n)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def closest_approach(p0: Sequence[float], v_rel: Sequence[float],
                     window: Tuple[float, float] = (0.0, math.inf)) -> Tuple[float, float]:
    """Minimum of |p0 + t v_rel| over the window, with its time"""
    p0, v_rel = np.asarray(p0, dtype=float), np.asarray(v_rel, dtype=float)
    vv = float(v_rel @ v_rel)
    t_star = -float(p0 @ v_rel) / vv if vv > 0 else window[0]
    t_star = min(max(t_star, window[0]), window[1])
    return float(np.linalg.norm(p0 + t_star * v_rel)), t_star


def analytic_min_distance(config: ScenarioConfig) -> float:
    """Closed form for straight paths, dense-grid minimum when the robot swerves"""
    config.validate()
    if _segments(config):
        rel, _ = _relative_on(config, _dense_grid(config))
        return float(rel.dist.min())
    p0 = (config.approach_length, config.lateral_offset)
    v_rel = (config.ped_direction * config.ped_speed - config.robot_speed, 0.0)
    return closest_approach(p0, v_rel, (0.0, config.total_duration))[0]


def analytic_min_pttc(config: ScenarioConfig, params: KinematicsParams = DEFAULT_PARAMS) -> Tuple[float, float]:
    """(T_p, D_Tp) from the exact relative state on a grid a hundred times finer than dt"""
    config.validate()
    rel, _ = _relative_on(config, _dense_grid(config))
    return min_pttc_and_distance(rel, pttc_series(rel, params))


def analytic_lateral_distance(config: ScenarioConfig) -> Optional[float]:
    rel, heading = _relative_on(config, _dense_grid(config))
    along = rel.p_rel[:, 0] * np.cos(heading) + rel.p_rel[:, 1] * np.sin(heading)
    across = -rel.p_rel[:, 0] * np.sin(heading) + rel.p_rel[:, 1] * np.cos(heading)
    crossings = np.flatnonzero((along[:-1] > 0) & (along[1:] <= 0))
    if len(crossings) == 0:
        return None
    i = int(crossings[0])
    frac = along[i] / (along[i] - along[i + 1])
    return float(abs(across[i] + frac * (across[i + 1] - across[i])))


def ground_truth(config: ScenarioConfig, params: KinematicsParams = DEFAULT_PARAMS) -> GroundTruth:
    try:
        t_p, d_tp = analytic_min_pttc(config, params)
        never = False
    except NeverApproachingError:
        t_p = d_tp = None
        never = True
    return GroundTruth(
        v=config.robot_speed,
        d_min=analytic_min_distance(config),
        d_lat=analytic_lateral_distance(config),
        rho=1.0 / config.avoidance_radius if _segments(config) else 0.0,
        t_p=t_p,
        d_tp=d_tp,
        never_approaching=never,
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_encounter(config: ScenarioConfig, trial_id: str = 'sim-0000', participant_id: str = 'P00',
                       trial_index: int = 1) -> Tuple[TrialRecord, GroundTruth]:
    """One noise-seeded encounter without a comfort answer, plus its ground truth"""
    config.validate()
    truth = ground_truth(config)

    n = int(math.floor(config.total_duration / config.dt + 1e-9)) + 1
    t = config.dt * np.arange(n)
    rx, ry, heading = robot_pose(config, t)
    px, py = pedestrian_position(config, t)

    rng = np.random.default_rng(config.seed)
    if config.noise_sigma > 0:
        rx, ry = rx + rng.normal(0, config.noise_sigma, n), ry + rng.normal(0, config.noise_sigma, n)
        px, py = px + rng.normal(0, config.noise_sigma, n), py + rng.normal(0, config.noise_sigma, n)

    robot_kwargs, ped_kwargs = {}, {}
    if config.with_velocity:
        robot_kwargs = {'vx': config.robot_speed * np.cos(heading), 'vy': config.robot_speed * np.sin(heading),
                        'heading': heading}
        ped_kwargs = {'vx': np.full(n, config.ped_direction * config.ped_speed), 'vy': np.zeros(n)}

    excursion = float(np.abs(ry).max())
    if excursion > config.hallway_width / 2:
        logger.warning(f"⚠️ Trial {trial_id}: swerve reaches {excursion:.2f} m from the centre line, outside the hallway")

    trial = TrialRecord(
        trial_id=trial_id,
        participant_id=participant_id,
        trial_index=trial_index,
        speed_group=config.speed_group,
        robot=Trajectory.from_arrays(t, rx, ry, **robot_kwargs),
        pedestrian=Trajectory.from_arrays(t, px, py, **ped_kwargs),
    )
    return trial, truth


def synthetic_comfort(score: int, rng: np.random.Generator) -> int:
    """Likert answer drawn from a logistic rule on E; never human data"""
    p_comfortable = 1.0 / (1.0 + math.exp(-(score - LABEL_MIDPOINT) / LABEL_SCALE))
    if rng.random() < p_comfortable:
        return int(rng.choice([4, 5]))
    return int(rng.choice([1, 2, 3]))


@dataclass(frozen=True)
class ScenarioSweep:
    """A base scenario plus per-field value lists expanded as a cartesian product"""
    base: Dict
    sweep: Dict[str, List]
    lateral_loss_rate: float = 0.0

    @classmethod
    def from_dict(cls, payload: Dict) -> 'ScenarioSweep':
        if not isinstance(payload, dict):
            raise InvalidScenarioError('scenario file must hold a JSON object')
        if 'base' not in payload and 'sweep' not in payload:
            payload = {'base': payload}
        unknown = set(payload) - {'base', 'sweep', 'lateral_loss_rate'}
        if unknown:
            raise InvalidScenarioError(f'unknown sweep key(s): {sorted(unknown)}')
        sweep = dict(payload.get('sweep', {}))
        for name, values in sweep.items():
            if not isinstance(values, list) or not values:
                raise InvalidScenarioError(f'sweep field {name!r} needs a non-empty list of values')
        rate = float(payload.get('lateral_loss_rate', 0.0))
        if not 0.0 <= rate <= 1.0:
            raise InvalidScenarioError(f'lateral_loss_rate must lie in [0, 1], got {rate}')
        result = cls(base=dict(payload.get('base', {})), sweep=sweep, lateral_loss_rate=rate)
        result.scenarios()
        return result

    @classmethod
    def load(cls, path: Optional[PathLike]) -> 'ScenarioSweep':
        if path is None:
            return cls(base={}, sweep={})
        try:
            payload = read_json(path)
        except (OSError, ValueError) as e:
            raise InvalidScenarioError(f'cannot read scenario file {path}: {e}')
        return cls.from_dict(payload)

    def scenarios(self) -> List[ScenarioConfig]:
        names = sorted(self.sweep)
        configs = []
        for values in itertools.product(*(self.sweep[name] for name in names)):
            configs.append(ScenarioConfig.from_dict({**self.base, **dict(zip(names, values))}))
        return configs

    def to_dict(self) -> Dict:
        return {'base': self.base, 'sweep': self.sweep, 'lateral_loss_rate': self.lateral_loss_rate}


class SimulationService:
    """Builds seeded synthetic datasets from a scenario sweep"""

    def __init__(self, predictor_config: Optional[PredictorConfig] = None, max_workers: int = 4):
        self.predictor_config = predictor_config or PredictorConfig.default()
        self.max_workers = max(1, max_workers)
        self.logger = logger

    def _plan(self, sweep: ScenarioSweep, n_trials: int) -> List[Tuple[ScenarioConfig, str, int]]:
        scenarios = sweep.scenarios()
        speeds = sorted({s.robot_speed for s in scenarios})
        plan = []
        for i in range(n_trials):
            participant, trial_index = divmod(i, TRIALS_PER_PARTICIPANT)
            # every participant keeps one robot speed for all of their trials
            speed = speeds[participant % len(speeds)]
            pool = [s for s in scenarios if s.robot_speed == speed]
            plan.append((pool[i % len(pool)], f'P{participant + 1:02d}', trial_index + 1))
        return plan

    def _simulate_one(self, index: int, scenario: ScenarioConfig, participant_id: str, trial_index: int,
                      seed_seq: np.random.SeedSequence, lateral_loss_rate: float):
        noise_seq, label_seq, loss_seq = seed_seq.spawn(3)
        config = replace(scenario, seed=int(noise_seq.generate_state(1)[0]))
        trial_id = f'sim-{index:04d}'
        trial, truth = generate_encounter(config, trial_id, participant_id, trial_index)
        score = composite_score(truth.as_features(trial_id), self.predictor_config)
        comfort = synthetic_comfort(score, np.random.default_rng(label_seq))
        lateral_valid = not (np.random.default_rng(loss_seq).random() < lateral_loss_rate)
        trial = replace(trial, reported_comfort=comfort, lateral_valid=lateral_valid)
        return trial, truth, score

    def simulate(self, sweep: ScenarioSweep, n_trials: int, seed: int) -> Tuple[EncounterDataset, pd.DataFrame]:
        """Generate n_trials encounters; returns the dataset and its ground-truth table"""
        if n_trials < 1:
            raise ConfigError(f'n_trials must be >= 1, got {n_trials}')
        plan = self._plan(sweep, n_trials)
        children = np.random.SeedSequence(seed).spawn(n_trials)
        self.logger.info(f"🚀 Simulating {n_trials} encounters from {len(sweep.scenarios())} scenario(s), seed {seed}")

        results = {}
        with ThreadPoolExecutor(max_workers=min(self.max_workers, n_trials)) as executor:
            future_to_index = {
                executor.submit(self._simulate_one, i, scenario, participant, trial_index, children[i],
                                sweep.lateral_loss_rate): i
                for i, (scenario, participant, trial_index) in enumerate(plan)
            }
            for future in as_completed(future_to_index):
                results[future_to_index[future]] = future.result()

        trials, truth_rows = [], []
        for i in range(n_trials):
            trial, truth, score = results[i]
            trials.append(trial)
            truth_rows.append({'trial_id': trial.trial_id, **asdict(truth), 'E': score})

        provenance = {
            'generator': f'{TOOL_NAME} {TOOL_VERSION}',
            'seed': seed,
            'n_trials': n_trials,
            'scenario': sweep.to_dict(),
            'labels': SYNTHETIC_LABEL,
            'label_rule': {'kind': 'logistic on E', 'midpoint': LABEL_MIDPOINT, 'scale': LABEL_SCALE,
                           'comfortable_levels': [4, 5], 'uncomfortable_levels': [1, 2, 3]},
        }
        dataset = EncounterDataset(trials=tuple(trials), provenance=provenance)
        truth_frame = pd.DataFrame(truth_rows).astype({'d_lat': object, 't_p': object, 'd_tp': object})
        self.logger.info(f"✅ Simulated {n_trials} encounters "
                         f"({sum(1 for t in trials if not t.lateral_valid)} with lateral loss)")
        return dataset, truth_frame

    def write(self, dataset: EncounterDataset, truth: pd.DataFrame, out_dir: PathLike) -> List[Path]:
        """trials-dir dataset plus labels.csv and ground_truth.csv at its root"""
        out_dir = Path(out_dir)
        write_dataset(dataset, out_dir, TRIALS_DIR)
        labels = pd.DataFrame([
            {'trial_id': t.trial_id, 'reported_comfort': t.reported_comfort, 'participant_id': t.participant_id,
             'trial_index': t.trial_index, 'speed_group': SpeedGroup(t.speed_group).value,
             'label_source': SYNTHETIC_LABEL}
            for t in dataset
        ])
        labels_path = write_csv(out_dir / 'labels.csv', labels)
        truth_path = write_csv(out_dir / 'ground_truth.csv', truth)
        return [out_dir / 'provenance.json', labels_path, truth_path]
