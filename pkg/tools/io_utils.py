"""
File helpers shared by the services and the CLI.

Outputs are written atomically (temp file in the target directory, then rename) so a
failing command never leaves a partial file behind, and JSON is emitted with a fixed
key order and shortest round-trip float formatting so identical inputs give identical bytes.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from errors import EmptyInputError, InputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars, enums, tuples and non-finite floats into plain JSON values"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return value.as_posix()
    return value


def dumps_stable(payload: Any) -> str:
    """Serialize to JSON text; callers control key order by building dicts in order"""
    return json.dumps(to_jsonable(payload), indent=2, ensure_ascii=False, allow_nan=False) + '\n'


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, dumps_stable(payload))


def read_json(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def read_json_input(path: PathLike, what: str, error=InputError) -> Any:
    """read_json for user-supplied files; unreadable or malformed JSON becomes an input error"""
    try:
        return read_json(path)
    except (OSError, ValueError) as e:
        raise error(f'cannot read {what} {path}: {e}')


def read_string_table(path: PathLike, what: str) -> pd.DataFrame:
    """CSV with every cell as a string; an empty or unparseable file is an input error"""
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f'{what} {path} is empty')
    except (pd.errors.ParserError, UnicodeDecodeError, OSError) as e:
        raise InputError(f'cannot parse {what} {path}: {e}')


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    """CSV text with empty cells for missing values and repr-formatted floats"""
    return frame.to_csv(index=False, na_rep='', lineterminator='\n')


def write_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame_to_csv_text(frame))


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_payload(payload: Any) -> str:
    return hashlib.sha256(dumps_stable(payload).encode('utf-8')).hexdigest()
