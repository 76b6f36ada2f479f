"""Array and JSON persistence.

Arrays are stored as a raw little-endian payload (``<stem>.bin``) next to a
JSON sidecar (``<stem>.json``) of the form::

    {"n": 64, "channels": 6, "dtype": "c128", "layout": "row-major",
     "shape": [6, 64, 64]}

Complex data is interleaved (re, im) float64 pairs; real data is float64.
``channels`` is the number of n x n images in the payload. ``shape`` is an
optional extension that restores leading axes (e.g. product iterates).
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

_DTYPES = {"c128": np.dtype("<c16"), "f64": np.dtype("<f8")}


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".bin", ".json") else p


def write_array(path, array) -> Path:
    """Write ``array`` (at least 2-D, square trailing axes) and return the stem."""
    a = np.asarray(array)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected trailing n x n axes, got shape {a.shape}")
    if np.iscomplexobj(a):
        tag = "c128"
    elif np.issubdtype(a.dtype, np.number) or a.dtype == bool:
        tag = "f64"
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    a = np.ascontiguousarray(a, dtype=_DTYPES[tag])
    stem = _stem(path)
    meta = {
        "n": int(a.shape[-1]),
        "channels": int(np.prod(a.shape[:-2], dtype=int)),
        "dtype": tag,
        "layout": "row-major",
        "shape": list(a.shape),
    }
    _atomic_write(stem.with_suffix(".bin"), a.tobytes(order="C"))
    _atomic_write(stem.with_suffix(".json"), json.dumps(meta).encode())
    return stem


def read_array(path) -> np.ndarray:
    stem = _stem(path)
    meta = json.loads(stem.with_suffix(".json").read_text())
    if meta.get("layout", "row-major") != "row-major":
        raise ValueError(f"unsupported layout {meta['layout']!r}")
    dtype = _DTYPES[meta["dtype"]]
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=dtype)
    n = int(meta["n"])
    shape = meta.get("shape")
    if shape is None:
        channels = int(meta.get("channels", 1))
        shape = [n, n] if channels == 1 else [channels, n, n]
    return raw.reshape(shape).copy()


def write_json(path, obj) -> Path:
    path = Path(path)
    _atomic_write(path, (json.dumps(obj, indent=2, allow_nan=True) + "\n").encode())
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    _atomic_write(path, text.encode())
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
