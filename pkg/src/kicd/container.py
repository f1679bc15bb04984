"""Append-only binary container for observational datasets.

Byte layout of one record (all integers little-endian)::

    offset  size  field
    0       4     magic b"KICD"
    4       4     uint32 format version (currently 1)
    8       4     uint32 header length H
    12      H     UTF-8 JSON header, keys sorted, separators (",", ":"):
                    {"dag": {"n", "edges"} | null, "mechanism": str,
                     "n": int, "prior": [[int]] | null, "s": int, "seed": int}
    12+H    4*S*n float32 payload, X in row-major order

Records are written back to back. The sidecar ``<path>.idx`` has one text
line per record, ``"<record_id> <byte_offset>\\n"``, with ids counting up
from 0 in write order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .graph import Dag
from .knowledge import KnowledgePrior

MAGIC = b"KICD"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclass(eq=False)
class Record:
    X: np.ndarray
    dag: Dag | None
    mechanism: str
    seed: int
    prior: KnowledgePrior | None = None

    @property
    def n(self) -> int:
        return self.X.shape[1]


def encode_record(rec: Record) -> bytes:
    X = np.ascontiguousarray(rec.X, dtype="<f4")
    s, n = X.shape
    header = {
        "dag": rec.dag.to_record() if rec.dag is not None else None,
        "mechanism": rec.mechanism,
        "n": n,
        "prior": rec.prior.r.tolist() if rec.prior is not None else None,
        "s": s,
        "seed": int(rec.seed),
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, VERSION, len(hdr)) + hdr + X.tobytes()


def decode_record(buf: bytes, offset: int = 0) -> tuple[Record, int]:
    """Decode the record at ``offset``; returns it with the offset just past it."""
    magic, version, hlen = _PREFIX.unpack_from(buf, offset)
    if magic != MAGIC or version != VERSION:
        raise InvalidInputError(f"bad record prefix at byte {offset}")
    start = offset + _PREFIX.size
    header = json.loads(buf[start:start + hlen])
    s, n = header["s"], header["n"]
    body = start + hlen
    X = np.frombuffer(buf, dtype="<f4", count=s * n, offset=body).reshape(s, n).astype(np.float64)
    dag = Dag.from_record(header["dag"]) if header["dag"] is not None else None
    prior = KnowledgePrior(np.array(header["prior"], dtype=np.int8)) if header["prior"] is not None else None
    return Record(X, dag, header["mechanism"], header["seed"], prior), body + 4 * s * n


def _index_path(path: Path) -> Path:
    return path.with_name(path.name + ".idx")


class DatasetWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.index = _index_path(self.path)
        self.path.touch()
        self.index.touch()
        self._count = sum(1 for _ in self.index.open())

    def append(self, rec: Record) -> int:
        data = encode_record(rec)
        with self.path.open("ab") as f:
            offset = f.seek(0, 2)
            f.write(data)
        rid = self._count
        with self.index.open("a") as f:
            f.write(f"{rid} {offset}\n")
        self._count += 1
        return rid

    def __len__(self):
        return self._count


class DatasetReader:
    def __init__(self, path):
        self.path = Path(path)
        self._buf = self.path.read_bytes()
        self.offsets = []
        for line in _index_path(self.path).read_text().splitlines():
            rid, off = line.split()
            if int(rid) != len(self.offsets):
                raise InvalidInputError(f"{self.path}: index ids out of order at {rid}")
            self.offsets.append(int(off))

    def __len__(self):
        return len(self.offsets)

    def __getitem__(self, rid: int) -> Record:
        return decode_record(self._buf, self.offsets[rid])[0]

    def __iter__(self):
        for rid in range(len(self)):
            yield self[rid]
