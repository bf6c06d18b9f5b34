"""File helpers: atomic writes, raw+sidecar volumes, JSON documents."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def dumps_json(doc) -> str:
    """Serialize with sorted keys; infinities become the strings ``"inf"``/``"-inf"``."""
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc) -> None:
    atomic_write_text(path, dumps_json(doc))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_raw(path, array: np.ndarray, meta: dict) -> tuple[Path, Path]:
    """Write ``array`` as little-endian float32 plus a ``.json`` sidecar.

    Arrays are stored with the first axis varying fastest (Fortran order), so a
    volume indexed ``[ix, iy, iz]`` is written x-fastest.
    """
    path = Path(path)
    data = np.asarray(array, dtype="<f4").ravel(order="F").tobytes()
    atomic_write_bytes(path, data)
    side = dict(meta)
    side.update(shape=list(array.shape), dtype="float32", byte_order="little", order="first-axis-fastest")
    side_path = path.with_suffix(path.suffix + ".json")
    write_json(side_path, side)
    return path, side_path


def read_raw(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = read_json(path.with_suffix(path.suffix + ".json"))
    arr = np.fromfile(path, dtype="<f4").reshape(meta["shape"], order="F")
    return arr.astype(float), meta
