"""JSON header + raw little-endian float64 blob, used for reducers and models.

``<stem>.json`` holds the metadata and an array table ``{name: {"shape", "offset"}}``
where ``offset`` counts float64 elements into ``<stem>.bin``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPE = np.dtype("<f8")


def save_bundle(directory: str | Path, stem: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table = {}
    offset = 0
    with open(directory / f"{stem}.bin", "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=_DTYPE)
            table[name] = {"shape": list(arr.shape), "offset": offset}
            fh.write(arr.tobytes())
            offset += arr.size
    header = {"meta": meta, "arrays": table, "dtype": "<f8"}
    with open(directory / f"{stem}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)


def load_bundle(directory: str | Path, stem: str) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    with open(directory / f"{stem}.json") as fh:
        header = json.load(fh)
    blob = np.fromfile(directory / f"{stem}.bin", dtype=_DTYPE)
    arrays = {}
    for name, entry in header["arrays"].items():
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[name] = blob[start : start + size].reshape(shape).astype(np.float64)
    return header["meta"], arrays
