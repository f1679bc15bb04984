"""Retention sweeps: score a trained model over prior modes and retention levels."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from ..datagen import MechanismConfig, generate, standardize
from ..errors import InvalidConfigError
from ..graph import Dag, f1, sample_er_dag, shd
from ..inference import predict_dags
from ..knowledge import (
    GROUND_TRUTH,
    NEG_ONLY,
    REACHABILITY,
    WITH_POSITIVES,
    KnowledgePrior,
    build_prior,
    encode_prior,
)
from ..seeding import EVAL, derive_seed
from .baseline import null_baseline
from .report import EvalReport

log = logging.getLogger(__name__)

FULL, NEG, NONE, GT = "full_prior", "neg_only", "none", "ground_truth"
PRIOR_MODES = (FULL, NEG, NONE, GT)
BASELINE = "null_baseline"


def _key(s: str) -> int:
    return zlib.crc32(s.encode())


def _ret_key(rho: float) -> int:
    return int(round(rho * 1_000_000))


def parse_span(text, what: str) -> tuple[int, int]:
    """'7' -> (7, 7); '5-8' -> (5, 8)."""
    parts = str(text).split("-")
    try:
        lo, hi = int(parts[0]), int(parts[-1])
    except ValueError:
        raise InvalidConfigError(f"bad {what} {text!r}") from None
    if len(parts) > 2 or lo > hi or lo < 1:
        raise InvalidConfigError(f"bad {what} {text!r}")
    return lo, hi


def edge_range(density: str, n: int) -> tuple[int, int]:
    """'er2' -> exactly 2n edges; 'er1-3' -> [n, 3n]; both capped at n(n-1)/2."""
    if not density.startswith("er"):
        raise InvalidConfigError(f"density must look like 'er2' or 'er1-3', got {density!r}")
    lo, hi = parse_span(density[2:], "density")
    cap = n * (n - 1) // 2
    return min(lo * n, cap), min(hi * n, cap)


@dataclass(frozen=True)
class SweepSpec:
    retention_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    prior_modes: tuple[str, ...] = (FULL, NEG, GT)
    trials: int = 100
    test_mechanisms: tuple[str, ...] = ("linear-gamma(1,1)",)
    n_values: tuple[str, ...] = ("8",)  # a size or an inclusive range "5-8" cycled over trials
    densities: tuple[str, ...] = ("er1-3",)
    samples: int = 200
    paired: bool = False  # share test graphs (and masks) across modes and retention levels
    baseline_threshold: float | None = None  # add null-baseline cells when set

    def __post_init__(self):
        object.__setattr__(self, "retention_grid", tuple(float(r) for r in self.retention_grid))
        object.__setattr__(self, "n_values", tuple(str(v) for v in self.n_values))
        for name in ("prior_modes", "test_mechanisms", "densities"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.retention_grid or any(not 0.0 <= r <= 1.0 for r in self.retention_grid):
            raise InvalidConfigError("retention values must lie in [0, 1]")
        if self.trials < 1:
            raise InvalidConfigError("trials must be >= 1")
        bad = set(self.prior_modes) - set(PRIOR_MODES)
        if bad or not self.prior_modes:
            raise InvalidConfigError(f"prior modes must be a non-empty subset of {PRIOR_MODES}, got {sorted(bad)}")
        for tag in self.test_mechanisms:
            MechanismConfig.from_tag(tag)
        for v in self.n_values:
            parse_span(v, "n")
        for d in self.densities:
            edge_range(d, 2)
        if self.samples < 2:
            raise InvalidConfigError("samples must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfigError(f"unknown sweep fields {sorted(extra)}")
        return cls(**d)


@dataclass
class TestSet:
    Xs: list[np.ndarray]
    dags: list[Dag]
    seeds: list[int]  # one per trial, keys the prior masks


def make_test_set(mechanism: str, n_value: str, density: str, trials: int, samples: int,
                  seed: int, salt=()) -> TestSet:
    """Fresh evaluation graphs and standardized data, drawn from the evaluation seed domain."""
    mech = MechanismConfig.from_tag(mechanism)
    lo, hi = parse_span(n_value, "n")
    base = (seed, 11, _key(mechanism), _key(n_value), _key(density), *salt)
    Xs, dags, seeds = [], [], []
    for t in range(trials):
        n = lo + t % (hi - lo + 1)
        dag = sample_er_dag(n, edge_range(density, n), derive_seed(EVAL, *base, t, 0))
        ds = generate(dag, samples, mech, derive_seed(EVAL, *base, t, 1))
        Xs.append(standardize(ds.X))
        dags.append(dag)
        seeds.append(derive_seed(EVAL, *base, t, 2))
    return TestSet(Xs, dags, seeds)


def make_prior(dag: Dag, mode: str, retention: float, seed: int) -> KnowledgePrior:
    if mode == FULL:
        return build_prior(dag, REACHABILITY, WITH_POSITIVES, retention, seed)
    if mode == NEG:
        return build_prior(dag, REACHABILITY, NEG_ONLY, retention, seed)
    if mode == NONE:
        return KnowledgePrior.unknown(dag.n)
    if mode == GT:
        return encode_prior(dag, GROUND_TRUTH)
    raise InvalidConfigError(f"unknown prior mode {mode!r}")


def _summary(shds, f1s) -> dict:
    return {"mean_shd": float(np.mean(shds)), "std_shd": float(np.std(shds)),
            "mean_f1": float(np.mean(f1s)), "std_f1": float(np.std(f1s)), "trials": len(shds)}


def score_predictions(preds, truths) -> tuple[list[int], list[float]]:
    return [shd(p, t) for p, t in zip(preds, truths)], [f1(p, t) for p, t in zip(preds, truths)]


def score_model(model, test: TestSet, mode: str, retention: float) -> tuple[list[int], list[float]]:
    """Noise-free hard-permutation inference thresholded at the model's threshold."""
    priors = [make_prior(d, mode, retention, derive_seed(EVAL, s, _ret_key(retention)))
              for d, s in zip(test.dags, test.seeds)]
    return score_predictions(predict_dags(model, test.Xs, priors), test.dags)


def score_baseline(test: TestSet, threshold: float) -> tuple[list[int], list[float]]:
    return score_predictions([null_baseline(X, threshold) for X in test.Xs], test.dags)


def resolve_model(checkpoint):
    if isinstance(checkpoint, (str, bytes)) or hasattr(checkpoint, "__fspath__"):
        from ..training.checkpoint import load_model

        return load_model(checkpoint)
    return checkpoint


def run_retention_sweep(checkpoint, spec: SweepSpec, seed: int) -> EvalReport:
    """Score every (mechanism, n, density, prior mode, retention) cell.

    A cell that raises is recorded with status "failed" and its error; the
    other cells still run.
    """
    model = resolve_model(checkpoint)
    cells = []
    shared: dict[tuple, TestSet] = {}

    def test_set(mech, nv, dens, salt):
        key = (mech, nv, dens) if spec.paired else (mech, nv, dens, *salt)
        if key not in shared:
            shared[key] = make_test_set(mech, nv, dens, spec.trials, spec.samples, seed,
                                        () if spec.paired else salt)
        return shared[key]

    jobs = [(mech, nv, dens, mode, rho)
            for mech in spec.test_mechanisms for nv in spec.n_values for dens in spec.densities
            for mode in spec.prior_modes for rho in spec.retention_grid]
    if spec.baseline_threshold is not None:
        jobs += [(mech, nv, dens, BASELINE, 0.0)
                 for mech in spec.test_mechanisms for nv in spec.n_values for dens in spec.densities]
    for mech, nv, dens, mode, rho in jobs:
        cell = {"mechanism": mech, "n": nv, "density": dens, "prior_mode": mode, "retention": rho}
        try:
            test = test_set(mech, nv, dens, (_key(mode), _ret_key(rho)))
            if mode == BASELINE:
                s, f = score_baseline(test, spec.baseline_threshold)
            else:
                s, f = score_model(model, test, mode, rho)
            cell.update(_summary(s, f), status="ok")
        except Exception as exc:  # recorded in the report, surfaced by the caller
            log.error("cell %s failed: %s", cell, exc)
            cell.update(mean_shd=None, std_shd=None, mean_f1=None, std_f1=None, trials=0,
                        status="failed", error=f"{type(exc).__name__}: {exc}")
        cells.append(cell)
    report = EvalReport(cells, seed, spec.to_dict())
    report.notes.extend(gain_notes(report))
    return report


def gain_notes(report: EvalReport) -> list[str]:
    """Soft expectation: knowledge gains from negative-only priors are at most those of full priors."""
    notes = []
    ok = [c for c in report.cells if c["status"] == "ok"]
    groups = {(c["mechanism"], c["n"], c["density"]) for c in ok}
    for g in sorted(groups):
        def f1_at(mode, rho):
            for c in ok:
                if (c["mechanism"], c["n"], c["density"]) == g and c["prior_mode"] == mode and c["retention"] == rho:
                    return c["mean_f1"]
            return None

        base_full, base_neg = f1_at(FULL, 0.0), f1_at(NEG, 0.0)
        if base_full is None or base_neg is None:
            continue
        diffs = []
        for rho in sorted({c["retention"] for c in ok}):
            a, b = f1_at(FULL, rho), f1_at(NEG, rho)
            if a is not None and b is not None and rho > 0:
                diffs.append((b - base_neg) - (a - base_full))
        if diffs:
            verdict = "holds" if np.mean(diffs) <= 0 else "does not hold"
            notes.append(f"{'/'.join(g)}: neg_only gain minus full_prior gain averages "
                         f"{np.mean(diffs):+.4f} over retention > 0 (expectation <= 0 {verdict})")
    return notes
