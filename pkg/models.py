import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np


class SpeedGroup(str, Enum):
    """Robot speed condition of a trial"""
    R14 = 'R14'
    R28 = 'R28'


# ---------------------------------------------------------------------------
# Encounter model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySample:
    """One timestamped planar state; velocity and heading are optional"""
    t: float
    x: float
    y: float
    vx: Optional[float] = None
    vy: Optional[float] = None
    heading: Optional[float] = None

    @property
    def has_velocity(self) -> bool:
        return self.vx is not None and self.vy is not None


@dataclass(frozen=True)
class Trajectory:
    """Ordered samples of one agent in a fixed world frame"""
    samples: Tuple[TrajectorySample, ...]
    frame_id: str = 'world'

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[TrajectorySample]:
        return iter(self.samples)

    @classmethod
    def from_arrays(cls, t, x, y, vx=None, vy=None, heading=None, frame_id: str = 'world') -> 'Trajectory':
        t = np.asarray(t, dtype=float)
        n = len(t)

        def column(values):
            if values is None:
                return [None] * n
            return [None if v is None or not math.isfinite(v) else float(v) for v in np.asarray(values, dtype=float)]

        xs, ys = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        vxs, vys, hs = column(vx), column(vy), column(heading)
        samples = tuple(
            TrajectorySample(float(t[i]), float(xs[i]), float(ys[i]), vxs[i], vys[i], hs[i])
            for i in range(n)
        )
        return cls(samples=samples, frame_id=frame_id)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=float)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.samples], dtype=float).reshape(-1, 2)

    @property
    def has_velocity(self) -> bool:
        return len(self.samples) > 0 and all(s.has_velocity for s in self.samples)

    @property
    def has_heading(self) -> bool:
        return len(self.samples) > 0 and all(s.heading is not None for s in self.samples)

    def velocities(self) -> Optional[np.ndarray]:
        """Velocity array, or None when any sample lacks velocity"""
        if not self.has_velocity:
            return None
        return np.array([(s.vx, s.vy) for s in self.samples], dtype=float).reshape(-1, 2)

    def headings(self) -> Optional[np.ndarray]:
        if not self.has_heading:
            return None
        return np.array([s.heading for s in self.samples], dtype=float)


@dataclass(frozen=True)
class TrialRecord:
    """One robot-pedestrian encounter plus its questionnaire answer"""
    trial_id: str
    participant_id: str
    trial_index: int
    speed_group: SpeedGroup
    robot: Trajectory
    pedestrian: Trajectory
    reported_comfort: Optional[int] = None
    lateral_valid: bool = True


@dataclass(frozen=True)
class EncounterDataset:
    trials: Tuple[TrialRecord, ...]
    provenance: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.trials)

    def get(self, trial_id: str) -> Optional[TrialRecord]:
        return next((t for t in self.trials if t.trial_id == trial_id), None)

    @property
    def trial_ids(self) -> List[str]:
        return [t.trial_id for t in self.trials]


@dataclass(frozen=True)
class Violation:
    """A failed TrialRecord invariant"""
    code: str
    message: str


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelativeState:
    t: float
    p_rel: Tuple[float, float]
    v_rel: Tuple[float, float]
    dist: float


@dataclass(frozen=True)
class RelativeSeries:
    """Pedestrian-minus-robot state on a common uniform time grid"""
    t: np.ndarray
    p_rel: np.ndarray
    v_rel: np.ndarray
    dist: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> RelativeState:
        return RelativeState(
            t=float(self.t[i]),
            p_rel=(float(self.p_rel[i, 0]), float(self.p_rel[i, 1])),
            v_rel=(float(self.v_rel[i, 0]), float(self.v_rel[i, 1])),
            dist=float(self.dist[i]),
        )

    def __iter__(self) -> Iterator[RelativeState]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_states(cls, states: Sequence[RelativeState]) -> 'RelativeSeries':
        p = np.array([s.p_rel for s in states], dtype=float).reshape(-1, 2)
        return cls(
            t=np.array([s.t for s in states], dtype=float),
            p_rel=p,
            v_rel=np.array([s.v_rel for s in states], dtype=float).reshape(-1, 2),
            dist=np.linalg.norm(p, axis=1),
        )


@dataclass(frozen=True)
class PttcSeries:
    """PTTC per sample; inf marks non-approaching samples, 0 marks collision samples"""
    t: np.ndarray
    pttc: np.ndarray
    collision: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.pttc)


FEATURE_NAMES = ('v', 'd_min', 'd_lat', 'rho', 't_p', 'd_tp')


@dataclass(frozen=True)
class KinematicFeatures:
    """The six encounter variables; None marks a missing value, explained in flags"""
    trial_id: str
    v: Optional[float]
    d_min: Optional[float]
    d_lat: Optional[float]
    rho: Optional[float]
    t_p: Optional[float]
    d_tp: Optional[float]
    flags: Dict[str, str] = field(default_factory=dict)

    def value(self, name: str) -> Optional[float]:
        return getattr(self, name)

    def to_dict(self) -> Dict[str, object]:
        return {'trial_id': self.trial_id, **{name: self.value(name) for name in FEATURE_NAMES},
                'flags': dict(sorted(self.flags.items()))}

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> 'KinematicFeatures':
        def number(name):
            value = payload.get(name)
            if value is None or value == '':
                return None
            value = float(value)
            return None if math.isnan(value) else value

        flags = payload.get('flags') or {}
        if isinstance(flags, str):
            flags = cls.parse_flags(flags)
        return cls(trial_id=str(payload.get('trial_id', '')), flags=dict(flags),
                   **{name: number(name) for name in FEATURE_NAMES})

    def flag_string(self) -> str:
        return ';'.join(f'{k}={v}' for k, v in sorted(self.flags.items()))

    @staticmethod
    def parse_flags(text: str) -> Dict[str, str]:
        flags = {}
        for item in (text or '').split(';'):
            if '=' in item:
                key, code = item.split('=', 1)
                flags[key.strip()] = code.strip()
        return flags


# ---------------------------------------------------------------------------
# Comfort predictors
# ---------------------------------------------------------------------------

class Predictor(str, Enum):
    MIN_DISTANCE = 'MinDistance'
    MIN_PTTC = 'MinPttc'
    COMPOSITE = 'Composite'


@dataclass(frozen=True)
class ComfortLabel:
    s: int
    s_e: int


@dataclass(frozen=True)
class Prediction:
    """Binary comfort prediction; value None means the predictor was not applicable"""
    predictor: Predictor
    value: Optional[int]
    score: Optional[int] = None
    flags: Tuple[str, ...] = ()

    @property
    def applicable(self) -> bool:
        return self.value is not None


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts n[pred][truth]; rows are predictor values, columns are S_E"""
    n: Tuple[Tuple[int, int], Tuple[int, int]]

    @classmethod
    def from_rows(cls, rows) -> 'ContingencyTable2x2':
        return cls(n=((int(rows[0][0]), int(rows[0][1])), (int(rows[1][0]), int(rows[1][1]))))

    @property
    def total(self) -> int:
        return sum(self.n[0]) + sum(self.n[1])

    def as_array(self) -> np.ndarray:
        return np.array(self.n, dtype=float)

    def transpose(self) -> 'ContingencyTable2x2':
        return ContingencyTable2x2(n=((self.n[0][0], self.n[1][0]), (self.n[0][1], self.n[1][1])))


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    yates: bool


@dataclass(frozen=True)
class OddsRatioResult:
    ratio: float
    haldane_corrected: bool


class MetricOrientation(str, Enum):
    STANDARD = 'standard'
    TRANSPOSED = 'transposed'

    @classmethod
    def _missing_(cls, value):
        # published-table reading
        if isinstance(value, str) and value.strip().lower() == 'paper':
            return cls.TRANSPOSED
        return None


@dataclass(frozen=True)
class ClassificationMetrics:
    """Classification metrics of a 2x2 table; None marks an undefined metric (zero denominator)"""
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    specificity: Optional[float]
    f1: Optional[float]
    orientation: MetricOrientation


@dataclass(frozen=True)
class DcorValue:
    dcor: float
    constant_input: bool = False


@dataclass(frozen=True)
class DcorResult:
    dcor: float
    p_value: float
    n_permutations: int
    seed: int
    constant_input: bool = False


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    p_value: Optional[float]
    n_points: int


@dataclass(frozen=True)
class BinSummary:
    """Boxplot statistics of reported comfort inside one bin"""
    label: str
    count: int
    mean: Optional[float]
    sd: Optional[float]
    median: Optional[float]
    q1: Optional[float]
    q3: Optional[float]
    whisker_low: Optional[float]
    whisker_high: Optional[float]
    n_outliers: int
