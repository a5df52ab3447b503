"""The ``sts-v1`` JSON-lines dataset format.

Line 1 is a header object::

    {"format": "sts-v1", "m": 7, "l": 2, "T_native": 32,
     "parent": [null, 0, 0, 1, 1, 2, 2], "class_names": ["c0", ...]}

Every further line is one sequence ``{"label": int, "frames": [[[x, ...] * m] * n]}``.
Files are UTF-8 with LF line endings; floats are written with ``repr`` so
they read back bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff.checkpoint import _atomic_write
from .errors import InputError, ParseError
from .representation import SkeletonTopology, STSSequence

FORMAT = "sts-v1"


@dataclass
class DatasetHeader:
    topology: SkeletonTopology
    class_names: list[str]
    native_length: int | None = None

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "m": self.topology.m,
            "l": self.topology.coords,
            "T_native": self.native_length,
            "parent": list(self.topology.parent),
            "class_names": list(self.class_names),
        }


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_dataset(
    path: str | os.PathLike,
    sequences: Sequence[STSSequence],
    class_names: Sequence[str] | None = None,
    native_length: int | None = None,
) -> DatasetHeader:
    if not sequences:
        raise InputError("refusing to write an empty dataset")
    topology = sequences[0].topology
    if class_names is None:
        class_names = [f"class_{c}" for c in range(max(s.label for s in sequences) + 1)]
    header = DatasetHeader(topology, list(class_names), native_length)
    lines = [_dumps(header.to_dict())]
    for seq in sequences:
        if seq.topology != topology:
            raise InputError("all sequences in a dataset must share one topology")
        lines.append(_dumps({"label": int(seq.label), "frames": seq.frames.tolist()}))
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    _atomic_write(Path(path), lambda fh: fh.write(payload))
    return header


def _parse_header(text: str) -> DatasetHeader:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"header is not valid JSON: {exc.msg}", 1) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError(f"header must be a JSON object with format {FORMAT!r}", 1)
    unknown = set(doc) - {"format", "m", "l", "T_native", "parent", "class_names"}
    if unknown:
        raise ParseError(f"unknown header keys {sorted(unknown)}", 1)
    try:
        topology = SkeletonTopology(tuple(doc["parent"]), int(doc["l"]))
        m = int(doc["m"])
        names = [str(n) for n in doc["class_names"]]
    except KeyError as exc:
        raise ParseError(f"header lacks {exc.args[0]!r}", 1) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", 1) from None
    if topology.m != m:
        raise ParseError(f"header m={m} but parent array has {topology.m} entries", 1)
    native = doc.get("T_native")
    return DatasetHeader(topology, names, None if native is None else int(native))


def read_dataset(path: str | os.PathLike) -> tuple[DatasetHeader, list[STSSequence]]:
    """Parse a dataset file; errors name the offending line number (1-based)."""
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError("empty dataset file", 1)
        header = _parse_header(header_line)
        topo = header.topology
        n_classes = len(header.class_names)
        sequences = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                label = doc["label"]
                frames = np.asarray(doc["frames"], dtype=np.float64)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed sequence record: {exc}", lineno) from None
            if not isinstance(label, int) or isinstance(label, bool) or not 0 <= label < n_classes:
                raise ParseError(f"label {label!r} outside [0, {n_classes})", lineno)
            if frames.ndim != 3 or frames.shape[1:] != (topo.m, topo.coords):
                raise ParseError(f"frames shaped {frames.shape}, expected (n, {topo.m}, {topo.coords})", lineno)
            try:
                sequences.append(STSSequence(frames, label, topo))
            except InputError as exc:
                raise ParseError(str(exc), lineno) from None
    return header, sequences
