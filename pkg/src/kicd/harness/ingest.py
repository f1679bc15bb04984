"""External observational tables: CSV with a header row, one column per variable."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..container import DatasetWriter, Record
from ..errors import InvalidInputError
from ..graph import Dag
from ..knowledge import read_prior_file


def read_table(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise InvalidInputError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        X = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from None
    if X.ndim != 2 or X.shape[1] != len(header):
        raise InvalidInputError(f"{path}: every row must have {len(header)} values")
    if not np.isfinite(X).all():
        raise InvalidInputError(f"{path}: table contains non-finite values")
    return header, X


def read_truth_file(path) -> Dag:
    """Ground-truth adjacency in the prior text format (entries 0/1)."""
    r = read_prior_file(path).r
    if (r < 0).any():
        raise InvalidInputError(f"{path}: ground truth must be a 0/1 adjacency")
    return Dag(r.astype(np.uint8))


def ingest(table, out, prior=None, truth=None, seed: int = 0) -> Record:
    """Convert a table (plus optional prior / truth files) into one container record."""
    header, X = read_table(table)
    n = X.shape[1]
    pr = read_prior_file(prior) if prior is not None else None
    dag = read_truth_file(truth) if truth is not None else None
    for name, obj in (("prior", pr), ("truth", dag)):
        if obj is not None and obj.n != n:
            raise InvalidInputError(f"{name} has {obj.n} variables, table has {n}")
    rec = Record(X=X, dag=dag, mechanism="external:" + Path(table).name, seed=seed, prior=pr)
    DatasetWriter(out).append(rec)
    return rec
