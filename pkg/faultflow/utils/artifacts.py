"""
Artifact files: JSON reports and CSV tables with provenance headers
"""
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import pandas as pd
from loguru import logger
from pydantic import BaseModel

from faultflow.models.report import Provenance

CSV_FLOAT_FORMAT = "%.12e"
HEADER_PREFIX = "# "

PathLike = Union[str, Path]


def write_json(path: PathLike, record: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path: PathLike, frame: pd.DataFrame, header: Optional[Dict[str, object]] = None) -> Path:
    """
    Write a table preceded by '# key: value' provenance lines

    Keys with a None value are omitted.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key, value in (header or {}).items():
            if value is not None:
                fh.write(f"{HEADER_PREFIX}{key}: {value}\n")
        frame.to_csv(fh, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def read_csv_header(path: PathLike) -> Dict[str, str]:
    header = {}
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(":")
            header[key.strip()] = value.strip()
    return header


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """
    Raises:
        FileNotFoundError: missing file
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"table not found: {path}")
    return pd.read_csv(path, comment="#"), read_csv_header(path)


def provenance_header(provenance: Provenance, **extra) -> Dict[str, object]:
    header = provenance.model_dump()
    header.update(extra)
    return header


def header_provenance(header: Dict[str, str]) -> Provenance:
    seed = header.get("seed")
    return Provenance(
        config_hash=header.get("config_hash"),
        scenario_hash=header.get("scenario_hash"),
        seed=int(seed) if seed not in (None, "") else None,
    )
