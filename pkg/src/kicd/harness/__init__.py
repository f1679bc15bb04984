from .baseline import abs_correlation, null_baseline, tune_threshold
from .ingest import ingest, read_table, read_truth_file
from .report import SCHEMA_VERSION, EvalReport, merge_cells
from .sweep import (
    BASELINE,
    PRIOR_MODES,
    SweepSpec,
    TestSet,
    edge_range,
    make_prior,
    make_test_set,
    run_retention_sweep,
    score_baseline,
    score_model,
)

__all__ = [
    "abs_correlation", "null_baseline", "tune_threshold", "ingest", "read_table", "read_truth_file", "SCHEMA_VERSION",
    "EvalReport", "merge_cells", "BASELINE", "PRIOR_MODES", "SweepSpec", "TestSet", "edge_range",
    "make_prior", "make_test_set", "run_retention_sweep", "score_baseline", "score_model",
]
