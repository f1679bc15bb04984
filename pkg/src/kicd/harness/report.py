"""Evaluation report: one record per sweep cell, schema-versioned JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidInputError

SCHEMA_VERSION = 1
CELL_FIELDS = ("mechanism", "n", "density", "prior_mode", "retention", "mean_shd", "mean_f1",
               "std_shd", "std_f1", "trials", "status")


def cell_id(c: dict) -> tuple:
    return (c["mechanism"], str(c["n"]), c["density"], c["prior_mode"], float(c["retention"]))


@dataclass
class EvalReport:
    cells: list[dict]
    seed: int
    sweep: dict
    notes: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[dict]:
        return [c for c in self.cells if c["status"] != "ok"]

    def cell(self, mechanism=None, prior_mode=None, retention=None, n=None, density=None) -> dict:
        hits = [
            c for c in self.cells
            if (mechanism is None or c["mechanism"] == mechanism)
            and (prior_mode is None or c["prior_mode"] == prior_mode)
            and (retention is None or c["retention"] == retention)
            and (n is None or str(c["n"]) == str(n))
            and (density is None or c["density"] == density)
        ]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} cells match")
        return hits[0]

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "seed": self.seed, "sweep": self.sweep,
                "notes": list(self.notes), "cells": sorted(self.cells, key=cell_id)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(list(d["cells"]), int(d["seed"]), dict(d["sweep"]), list(d.get("notes", [])))

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def merge_cells(*groups) -> list[dict]:
    """Order-independent merge of cell lists produced by separate workers."""
    seen: dict[tuple, dict] = {}
    for group in groups:
        for c in group:
            k = cell_id(c)
            if k in seen and seen[k] != c:
                raise InvalidInputError(f"conflicting results for cell {k}")
            seen[k] = c
    return [seen[k] for k in sorted(seen)]
