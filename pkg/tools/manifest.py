import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

from settings import TOOL_NAME, TOOL_VERSION
from tools.io_utils import sha256_file, sha256_payload, write_json

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    """Provenance record written next to every command's outputs"""
    command: str
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    config_hashes: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    tool_version: str = f'{TOOL_NAME} {TOOL_VERSION}'
    python_version: str = field(default_factory=platform.python_version)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None

    @property
    def file_name(self) -> str:
        return manifest_name(self.command)

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = Path(path).as_posix()

    def add_config(self, name: str, payload) -> None:
        self.config_hashes[name] = sha256_payload(payload)

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs[path.name] = sha256_file(path)

    def to_dict(self) -> Dict:
        return {
            'command': self.command,
            'tool_version': self.tool_version,
            'python_version': self.python_version,
            'seed': self.seed,
            'inputs': dict(sorted(self.inputs.items())),
            'config_hashes': dict(sorted(self.config_hashes.items())),
            'outputs': dict(sorted(self.outputs.items())),
            'started_at': self.started_at,
            'finished_at': self.finished_at,
        }

    def write(self, out_dir) -> Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        path = write_json(Path(out_dir) / self.file_name, self.to_dict())
        logger.info(f"📝 Manifest written: {path}")
        return path


def manifest_name(command: str) -> str:
    return f'{command}.manifest.json'
