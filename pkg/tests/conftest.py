from dataclasses import replace

import numpy as np
import pytest

from models import EncounterDataset, KinematicFeatures, SpeedGroup, Trajectory, TrialRecord
from services.kinematics_service import KinematicsParams
from services.predictor_service import PredictorConfig
from services.synthgen_service import ScenarioConfig, generate_encounter


def make_trial(robot_xy, ped_xy, t=None, trial_id='t1', speed_group=SpeedGroup.R14, comfort=4,
               lateral_valid=True, trial_index=1, with_velocity=False):
    robot_xy, ped_xy = np.asarray(robot_xy, dtype=float), np.asarray(ped_xy, dtype=float)
    t = np.arange(len(robot_xy)) * 0.05 if t is None else np.asarray(t, dtype=float)
    extra_r, extra_p = {}, {}
    if with_velocity:
        vr, vp = np.gradient(robot_xy, t, axis=0), np.gradient(ped_xy, t, axis=0)
        extra_r = {'vx': vr[:, 0], 'vy': vr[:, 1]}
        extra_p = {'vx': vp[:, 0], 'vy': vp[:, 1]}
    return TrialRecord(
        trial_id=trial_id,
        participant_id='P01',
        trial_index=trial_index,
        speed_group=speed_group,
        robot=Trajectory.from_arrays(t, robot_xy[:, 0], robot_xy[:, 1], **extra_r),
        pedestrian=Trajectory.from_arrays(t, ped_xy[:, 0], ped_xy[:, 1], **extra_p),
        reported_comfort=comfort,
        lateral_valid=lateral_valid,
    )


def features(trial_id='f', v=1.4, d_min=1.2, d_lat=0.8, rho=1.0, t_p=1.2, d_tp=1.2, flags=None):
    return KinematicFeatures(trial_id=trial_id, v=v, d_min=d_min, d_lat=d_lat, rho=rho, t_p=t_p, d_tp=d_tp,
                             flags=flags or {})


@pytest.fixture
def predictor_config():
    return PredictorConfig.default()


@pytest.fixture
def fine_params():
    """Kinematics parameters matching the fine synthetic sampling used by the oracle tests"""
    return KinematicsParams(dt=0.005)


@pytest.fixture
def straight_pass():
    """Noise-free parallel pass at 0.9 m offset, R14"""
    trial, truth = generate_encounter(ScenarioConfig(lateral_offset=0.9), trial_id='pass-09')
    return trial, truth


@pytest.fixture
def small_dataset():
    trials = []
    for i, offset in enumerate([0.5, 0.9, 1.2]):
        trial, _ = generate_encounter(ScenarioConfig(lateral_offset=offset, seed=i), trial_id=f'sim-{i:04d}',
                                      participant_id='P01', trial_index=i + 1)
        trials.append(replace(trial, reported_comfort=3 + i % 3))
    return EncounterDataset(trials=tuple(trials), provenance={'source': 'fixture'})
