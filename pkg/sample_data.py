#!/usr/bin/env python3
"""
Sample data script that writes a small synthetic encounter dataset.
Run this script to get a dataset for trying the CLI and the API without human-trial data.
"""

import os
import shutil
import sys
from pathlib import Path

from settings import configure_logging, load_settings
from services.synthgen_service import ScenarioSweep, SimulationService

SAMPLE_DIR = Path(os.getenv('COMFORT_SAMPLE_DIR', 'sample_dataset'))
SAMPLE_TRIALS = 20

# Both speed groups, three pedestrian lanes, straight passes and two swerve radii
SAMPLE_SWEEP = {
    'base': {'noise_sigma': 0.01, 'dt': 0.05},
    'sweep': {
        'robot_speed': [1.4, 2.8],
        'lateral_offset': [0.5, 0.9, 1.2],
        'avoidance_radius': [0.0, 1.25, 2.5],
    },
    'lateral_loss_rate': 0.1,
}


def create_sample_dataset():
    """Create the sample dataset"""
    settings = load_settings()
    service = SimulationService(max_workers=settings.workers)
    sweep = ScenarioSweep.from_dict(SAMPLE_SWEEP)

    print(f"Creating sample dataset in {SAMPLE_DIR} ...")
    try:
        dataset, truth = service.simulate(sweep, SAMPLE_TRIALS, settings.seed)
        service.write(dataset, truth, SAMPLE_DIR)
    except Exception as e:
        print(f"✗ Error creating sample dataset: {str(e)}")
        return

    groups = sorted({t.speed_group.value for t in dataset})
    print(f"\nSample dataset created with {len(dataset)} trials ({', '.join(groups)})!")
    print("Comfort labels are synthetic (label_source = synthetic-label), not human answers.")
    print("\nTry the pipeline:")
    print(f"1. python cli.py --out out/features features {SAMPLE_DIR}")
    print(f"2. python cli.py --out out/eval evaluate out/features {SAMPLE_DIR}/labels.csv")


def clear_existing_data():
    """Remove a previously written sample dataset"""
    if SAMPLE_DIR.exists():
        shutil.rmtree(SAMPLE_DIR)
        print(f"✓ Cleared {SAMPLE_DIR}")
    else:
        print(f"✓ Nothing to clear at {SAMPLE_DIR}")


def main():
    """Main function to set up sample data"""
    configure_logging()
    if len(sys.argv) > 1 and sys.argv[1] == '--clear':
        print("Clearing existing data...")
        clear_existing_data()
        return

    create_sample_dataset()


if __name__ == '__main__':
    main()
