from __future__ import annotations

import numpy as np

from ..datagen import ScmDataset
from ..graph import Dag, f1


def abs_correlation(X: np.ndarray) -> np.ndarray:
    """|Pearson correlation|; pairs involving a constant column count as 0."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    norm = np.sqrt((Xc ** 2).sum(axis=0))
    ok = norm > 0
    safe = np.where(ok, norm, 1.0)
    c = (Xc.T @ Xc) / np.outer(safe, safe)
    c[~ok, :] = 0.0
    c[:, ~ok] = 0.0
    return np.abs(c)


def null_baseline(dataset, threshold: float = 0.5) -> Dag:
    """Correlation-threshold comparator: i -> j iff |corr| > threshold and i comes first
    in ascending-variance order (ties broken by index)."""
    X = dataset.X if isinstance(dataset, ScmDataset) else np.asarray(dataset, dtype=np.float64)
    n = X.shape[1]
    c = abs_correlation(X)
    order = np.argsort(X.var(axis=0), kind="stable")
    pos = np.empty(n, dtype=int)
    pos[order] = np.arange(n)
    adj = (c > threshold) & (pos[:, None] < pos[None, :])
    np.fill_diagonal(adj, False)
    return Dag(adj.astype(np.uint8))


def tune_threshold(Xs, dags, grid=None) -> float:
    """Threshold with the best mean F1 on the given (training-domain) graphs; ties keep the smallest."""
    grid = np.round(np.arange(0.05, 0.95, 0.05), 2) if grid is None else grid
    best, best_f1 = float(grid[0]), -1.0
    for thr in grid:
        score = np.mean([f1(null_baseline(X, float(thr)), d) for X, d in zip(Xs, dags)])
        if score > best_f1 + 1e-12:
            best, best_f1 = float(thr), score
    return best
