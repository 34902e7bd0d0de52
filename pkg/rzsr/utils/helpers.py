"""
Helper utility functions
"""
import csv
import json
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

from pydantic import BaseModel

from rzsr.core.error_handlers import CommonErrors

PathLike = Union[str, Path]


def ensure_dir(path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: PathLike, payload: Any) -> Path:
    """Write a pydantic model or plain structure as indented JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2, default=str)
    path.write_text(text + "\n")
    return path


def write_csv(path: PathLike, rows: Iterable[BaseModel], columns: Sequence[str]) -> Path:
    """Write model rows with a fixed column order"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump(mode="json"))
    return path


def read_csv(path: PathLike) -> List[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def list_images(directory: PathLike) -> List[Path]:
    """PNG files of a directory in filename order"""
    if not Path(directory).is_dir():
        raise CommonErrors.file_not_found(directory, "Image directory")
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
