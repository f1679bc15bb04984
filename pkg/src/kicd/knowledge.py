"""Coarse structural priors: encoding, uncertainty masking and max-variable padding.

A prior is an N x N matrix over {-1, 0, 1}: -1 unknown, 0 impossible,
1 "may cause" (row = cause, column = effect).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .graph import Dag, transitive_closure

UNKNOWN, IMPOSSIBLE, MAY_CAUSE = -1, 0, 1

# stands in for exact zeros at the model boundary so padded/impossible cells keep a gradient
SOFT_ZERO = 1e-10
SOFT_ZERO_THRESHOLD = 1e-9

REACHABILITY, GROUND_TRUTH = "reachability", "ground_truth"
WITH_POSITIVES, NEG_ONLY = "with_positives", "neg_only"

PRIOR_TYPE_PROBS: dict[tuple[str, str], float] = {
    (REACHABILITY, WITH_POSITIVES): 0.45,
    (REACHABILITY, NEG_ONLY): 0.45,
    (GROUND_TRUTH, WITH_POSITIVES): 0.05,
    (GROUND_TRUTH, NEG_ONLY): 0.05,
}

EXEMPT_RULES = frozenset({"diagonal", "anti_positive"})


@dataclass(frozen=True, eq=False)
class KnowledgePrior:
    r: np.ndarray
    source: str = REACHABILITY
    polarity: str = WITH_POSITIVES

    def __post_init__(self):
        r = np.asarray(self.r)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise InvalidInputError(f"prior must be square, got shape {r.shape}")
        if not np.isin(r, (UNKNOWN, IMPOSSIBLE, MAY_CAUSE)).all():
            raise InvalidInputError("prior entries must lie in {-1, 0, 1}")
        r = r.astype(np.int8)
        if np.any(np.diag(r) != 0):
            raise InvalidInputError("prior diagonal must be 0")
        pos = r == MAY_CAUSE
        if np.any(pos & (r.T != IMPOSSIBLE)):
            raise InvalidInputError("r[i, j] = 1 requires r[j, i] = 0")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, KnowledgePrior)
            and np.array_equal(self.r, other.r)
            and (self.source, self.polarity) == (other.source, other.polarity)
        )

    @classmethod
    def unknown(cls, n: int) -> "KnowledgePrior":
        """No knowledge at all: every off-diagonal cell unknown."""
        r = np.full((n, n), UNKNOWN, dtype=np.int8)
        np.fill_diagonal(r, 0)
        return cls(r)


@dataclass(frozen=True)
class MaskConfig:
    rho: float
    exempt: frozenset = field(default=EXEMPT_RULES)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidConfigError(f"preservation rate must lie in [0, 1], got {self.rho}")
        unknown_rules = set(self.exempt) - EXEMPT_RULES
        if unknown_rules:
            raise InvalidConfigError(f"unknown exemption rules: {sorted(unknown_rules)}")


@dataclass(frozen=True, eq=False)
class PaddedInstance:
    X_pad: np.ndarray
    prior_pad: np.ndarray
    n_effective: int


def encode_prior(dag: Dag, source: str = REACHABILITY) -> KnowledgePrior:
    """Full-knowledge prior: positives from the reachability closure (or direct edges)."""
    if source == REACHABILITY:
        pos = transitive_closure(dag).reach
    elif source == GROUND_TRUTH:
        pos = dag.adj
    else:
        raise InvalidConfigError(f"unknown prior source {source!r}")
    return KnowledgePrior(pos.astype(np.int8), source=source, polarity=WITH_POSITIVES)


def mask_prior(prior: KnowledgePrior, cfg: MaskConfig, seed) -> KnowledgePrior:
    """Hide entries as unknown, each kept with probability ``cfg.rho``.

    Positives are decided first; the mirrored cell of a surviving positive
    is exempt, as is the diagonal.
    """
    rng = np.random.default_rng(seed)
    r = prior.r.copy()
    n = prior.n
    keep = rng.random((n, n)) < cfg.rho

    pos = r == MAY_CAUSE
    exempt = np.zeros((n, n), dtype=bool)
    if "diagonal" in cfg.exempt:
        np.fill_diagonal(exempt, True)
    if "anti_positive" in cfg.exempt:
        exempt |= (pos & keep).T

    hide = ~keep & ~exempt
    np.fill_diagonal(hide, False)
    r[hide] = UNKNOWN
    return KnowledgePrior(r, source=prior.source, polarity=prior.polarity)


def to_neg_only(prior: KnowledgePrior) -> KnowledgePrior:
    r = prior.r.copy()
    r[r == MAY_CAUSE] = UNKNOWN
    return KnowledgePrior(r, source=prior.source, polarity=NEG_ONLY)


def sample_prior_type(seed) -> tuple[str, str]:
    rng = np.random.default_rng(seed)
    kinds = list(PRIOR_TYPE_PROBS)
    k = rng.choice(len(kinds), p=list(PRIOR_TYPE_PROBS.values()))
    return kinds[k]


def build_prior(dag: Dag, source: str, polarity: str, rho: float, seed) -> KnowledgePrior:
    """encode -> (neg-only) -> mask, the order used for both training and evaluation."""
    prior = encode_prior(dag, source)
    if polarity == NEG_ONLY:
        prior = to_neg_only(prior)
    elif polarity != WITH_POSITIVES:
        raise InvalidConfigError(f"unknown prior polarity {polarity!r}")
    return mask_prior(prior, MaskConfig(rho), seed)


def soften(r: np.ndarray) -> np.ndarray:
    """Numeric prior used by the model: off-diagonal zeros become SOFT_ZERO."""
    out = np.asarray(r, dtype=np.float64).copy()
    off = ~np.eye(out.shape[0], dtype=bool)
    out[(out == 0) & off] = SOFT_ZERO
    return out


def unsoften(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.where(np.abs(p) < SOFT_ZERO_THRESHOLD, 0, np.sign(p)).astype(np.int8)


def pad(X: np.ndarray, prior: KnowledgePrior, n_max: int) -> PaddedInstance:
    X = np.asarray(X)
    if X.ndim != 2:
        raise InvalidInputError(f"observations must be S x N, got shape {X.shape}")
    s, n = X.shape
    if n != prior.n:
        raise InvalidInputError(f"data has {n} variables but prior has {prior.n}")
    if n > n_max:
        raise InvalidConfigError(f"{n} variables exceed n_max={n_max}")
    X_pad = np.zeros((s, n_max), dtype=X.dtype if X.dtype.kind == "f" else np.float64)
    X_pad[:, :n] = X
    full = np.zeros((n_max, n_max), dtype=np.int8)
    full[:n, :n] = prior.r
    return PaddedInstance(X_pad=X_pad, prior_pad=soften(full), n_effective=n)


def read_prior_file(path) -> KnowledgePrior:
    """Text prior: first line is n, then n whitespace-separated rows (row = cause)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError(f"{path}: empty prior file")
    try:
        n = int(lines[0].strip())
        rows = [[int(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if len(rows) != n or any(len(row) != n for row in rows):
        raise InvalidInputError(f"{path}: expected {n} rows of {n} values")
    return KnowledgePrior(np.array(rows, dtype=np.int8).reshape(n, n))


def write_prior_file(prior: KnowledgePrior, path) -> None:
    body = "\n".join(" ".join(f"{v:d}" for v in row) for row in prior.r)
    Path(path).write_text(f"{prior.n}\n{body}\n")
