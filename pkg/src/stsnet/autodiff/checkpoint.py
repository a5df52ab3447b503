"""Save and load named arrays.

Two containers are supported, chosen by file suffix:

* ``.json``: ``{"format": "sts-checkpoint-v1", "tensors": {name: {"shape": [...], "values": [...]}}}``
  with row-major values written via ``repr`` (17 significant digits), so a
  round trip is exact.
* ``.npz``: numpy's zip archive, one array per name. Used by the CLI since
  the default model has millions of weights.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ParseError

FORMAT = "sts-checkpoint-v1"


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    arrays = {name: np.asarray(value, dtype=np.float64) for name, value in sorted(tensors.items())}
    if path.suffix == ".json":
        doc = {
            "format": FORMAT,
            "tensors": {
                name: {"shape": list(a.shape), "values": a.ravel().tolist()} for name, a in arrays.items()
            },
        }
        payload = json.dumps(doc).encode("utf-8")
        _atomic_write(path, lambda fh: fh.write(payload))
    else:
        _atomic_write(path, lambda fh: np.savez(fh, **arrays))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != FORMAT:
            raise ParseError(f"{path}: not an {FORMAT} checkpoint")
        out = {}
        for name, entry in doc["tensors"].items():
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise ParseError(f"{path}: tensor {name!r} has {values.size} values for shape {shape}")
            out[name] = values.reshape(shape)
        return out
    with np.load(path) as archive:
        return {name: archive[name].copy() for name in archive.files}
