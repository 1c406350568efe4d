import os
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent
DEFAULT_PREDICTOR_CONFIG = PROJECT_ROOT / 'defaults' / 'predictor_config.json'

TOOL_NAME = 'hallway-comfort'
TOOL_VERSION = '0.4.0'

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


@dataclass(frozen=True)
class Settings:
    """Process-wide settings read from the environment"""
    log_level: str
    predictor_config: Path
    kinematics_params: Optional[Path]
    n_permutations: int
    seed: int
    workers: int


def load_settings() -> Settings:
    params_path = os.getenv('COMFORT_KINEMATICS_PARAMS')
    return Settings(
        log_level=os.getenv('COMFORT_LOG_LEVEL', 'INFO').upper(),
        predictor_config=Path(os.getenv('COMFORT_PREDICTOR_CONFIG', str(DEFAULT_PREDICTOR_CONFIG))),
        kinematics_params=Path(params_path) if params_path else None,
        n_permutations=int(os.getenv('COMFORT_PERMUTATIONS', '1000')),
        seed=int(os.getenv('COMFORT_SEED', '0')),
        workers=max(1, int(os.getenv('COMFORT_WORKERS', '4'))),
    )


def configure_logging(level: Optional[str] = None) -> None:
    """Configure logging with detailed format"""
    logging.basicConfig(
        level=getattr(logging, (level or load_settings().log_level), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT
    )
