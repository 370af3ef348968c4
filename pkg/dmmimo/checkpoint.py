"""
Checkpoint files: a flat list of named float64 arrays.

The first line is a JSON header:

    {"format": "dmmimo-arrays", "version": 1, "kind": "...", "meta": {...},
     "arrays": [{"name": "...", "shape": [...], "dtype": "<f8"}, ...]}

followed by one line per array (in header order) holding the base64 encoding
of its little-endian float64 bytes in C order. Files are plain text, diffable,
and reproduce parameters bit-exactly.
"""

import base64
import json
import os
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from dmmimo.constants import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from dmmimo.exceptions import CheckpointMissing, MalformedCheckpoint
from dmmimo.log import LOGGER

DTYPE = "<f8"


def save_arrays(
    path: Union[str, Path], kind: str, arrays: Dict[str, np.ndarray], meta: dict
) -> None:
    """Write arrays (in insertion order) and metadata to path."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": [
            {"name": name, "shape": list(np.shape(value)), "dtype": DTYPE}
            for name, value in arrays.items()
        ],
    }
    if os.path.exists(path):
        LOGGER.warning(f"Overwriting checkpoint {path}")
    with open(path, "w", encoding="utf8", newline="\n") as f:
        f.write(json.dumps(header, ensure_ascii=False) + "\n")
        for value in arrays.values():
            raw = np.ascontiguousarray(value, dtype=DTYPE).tobytes()
            f.write(base64.b64encode(raw).decode("ascii") + "\n")
    LOGGER.info(f"Wrote {kind} checkpoint to {path}")


def load_arrays(
    path: Union[str, Path], kind: Optional[str] = None
) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read a checkpoint written by save_arrays().

    Returns:
        (header, arrays): the parsed JSON header and the named arrays

    Raises:
        CheckpointMissing: if path does not exist
        MalformedCheckpoint: on a bad header, wrong kind or truncated data
    """
    if not os.path.isfile(path):
        raise CheckpointMissing(path)
    with open(path, encoding="utf8") as f:
        lines = f.read().splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as e:
        raise MalformedCheckpoint(f"{path} does not start with a JSON header") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise MalformedCheckpoint(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise MalformedCheckpoint(
            f"{path} has version {header.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    if kind is not None and header.get("kind") != kind:
        raise MalformedCheckpoint(
            f"{path} holds a {header.get('kind')} checkpoint, expected {kind}"
        )
    entries = header.get("arrays", [])
    if len(lines) - 1 != len(entries):
        raise MalformedCheckpoint(
            f"{path} declares {len(entries)} arrays but has {len(lines) - 1} data lines"
        )
    arrays = {}
    for entry, line in zip(entries, lines[1:]):
        buffer = base64.b64decode(line.encode("ascii"))
        values = np.frombuffer(buffer, dtype=DTYPE)
        shape = tuple(entry["shape"])
        if values.size != int(np.prod(shape)):
            raise MalformedCheckpoint(
                f"array {entry['name']} in {path} does not match its shape {shape}"
            )
        arrays[entry["name"]] = values.reshape(shape).astype(np.float64)
    return header, arrays
