"""Binary checkpoint container: layout manifest + flat float64 values +
provenance metadata, behind a versioned magic header.

File layout: magic (8 bytes) | header length (uint64 LE) | JSON header |
values (float64 LE). The JSON header carries the layout entries and metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .zoo import LayoutEntry, ParamLayout

MAGIC = b"GNCKPT\x00\x01"


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    values: np.ndarray
    layout: ParamLayout
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.layout.total:
            raise CheckpointError(
                f"value length {self.values.size} != layout total {self.layout.total}"
            )


def _layout_to_json(layout: ParamLayout) -> list:
    return [[e.name, list(e.shape), e.offset] for e in layout.entries]


def _layout_from_json(items: list) -> ParamLayout:
    entries = tuple(LayoutEntry(name, tuple(shape), offset) for name, shape, offset in items)
    total = sum(e.size for e in entries)
    return ParamLayout(entries, total)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = json.dumps(
        {"layout": _layout_to_json(ckpt.layout), "meta": ckpt.meta}, sort_keys=True
    ).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(ckpt.values.astype("<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        layout = _layout_from_json(header["layout"])
        values = np.frombuffer(f.read(layout.total * 8), dtype="<f8").copy()
    return Checkpoint(values, layout, header.get("meta", {}))
